#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "cleansplat/features.hpp"
#include "cleansplat/image.hpp"

namespace cleansplat {

struct TmrConfig {
  double coverage_refine = 0.7;  // CS_local threshold for spatial refinement
  double coverage_valid = 0.7;   // CS_local threshold for a frame to count in SR
  int memory = 10;               // N_m
  double merge_iou = 0.9;
  double sr_threshold = 0.08;
  int dilation = 5;  // N_e, applied when masks enter the photometric loss
  int max_prompt_points = 10;
  double match_iou = 0.5;  // detection to track association
  /// A propagated mask is kept when this fraction of it overlaps the mask it
  /// was prompted from. Unlike IoU this tolerates motion between frames.
  double propagation_overlap = 0.5;

  void validate() const;
};

/// Point-prompted segmentation of one frame. `source` is the mask the
/// prompts were drawn from; backends may ignore it.
class PromptableSegmenter {
 public:
  virtual ~PromptableSegmenter() = default;
  virtual BinaryMask segment(std::size_t frame, std::span<const Pixel> prompts,
                             const BinaryMask& source) const = 0;
};

/// Returns the prompting mask unchanged.
class IdentitySegmenter : public PromptableSegmenter {
 public:
  BinaryMask segment(std::size_t, std::span<const Pixel>, const BinaryMask& source) const override {
    return source;
  }
};

/// Ground-truth backend: the full instance mask of the id most prompts land
/// on. Background (id 0) never wins; "stuff" ids (walls, floors) are only
/// chosen when no prompt hits a countable object. Ties go to the lower id.
class OracleSegmenter : public PromptableSegmenter {
 public:
  OracleSegmenter(std::vector<IdMap> frames, std::set<std::uint16_t> stuff)
      : frames_(std::move(frames)), stuff_(std::move(stuff)) {}

  BinaryMask segment(std::size_t frame, std::span<const Pixel> prompts,
                     const BinaryMask& source) const override;

 private:
  std::vector<IdMap> frames_;
  std::set<std::uint16_t> stuff_;
};

/// Farthest-point sampling of min(k, |component|) distinct pixels, started
/// from the pixel nearest the component centroid (which is only emitted if
/// the component runs out of other pixels). `seed` breaks distance ties.
std::vector<Pixel> sample_prompts(const ComponentRegion& component, int k, std::uint64_t seed);

/// All set pixels of a mask as one prompt region.
ComponentRegion mask_region(const BinaryMask& mask);

/// |P ∩ M| / |M|; 0 for empty M.
double coverage(const BinaryMask& prompt_mask, const BinaryMask& segment);

struct RefinedMask {
  BinaryMask mask;
  double local_coverage = 0.0;
};

/// One segmenter call per connected component of `transient`, keeping
/// results with CS_local > coverage_refine.
std::vector<RefinedMask> spatial_refine(const BinaryMask& transient, std::size_t frame,
                                        const PromptableSegmenter& segmenter, const TmrConfig& cfg);

struct TrackedObject {
  std::uint32_t label = 0;
  std::map<std::size_t, BinaryMask> masks;
  std::map<std::size_t, double> local_coverage;
  std::map<std::size_t, bool> valid;
  std::size_t max_mask_size = 0;
  double stability_ratio = 0.0;

  std::size_t first_frame() const { return masks.begin()->first; }
  std::size_t last_frame() const { return masks.rbegin()->first; }
  void refresh_max_size();
};

/// Merges every pair of objects whose masks on `frame` have IoU above
/// merge_iou into the lower label. Returns the number of merges.
std::size_t merge_objects(std::vector<TrackedObject>& objects, std::size_t frame, const TmrConfig& cfg);

/// Forward, backward and final passes over frames 0..N-1 in capture order.
/// `detections[f]` are the spatially refined masks of frame f.
std::vector<TrackedObject> propagate(const std::vector<std::vector<BinaryMask>>& detections,
                                     const PromptableSegmenter& segmenter, const TmrConfig& cfg);

struct StabilityResult {
  double ratio = 0.0;
  std::vector<std::size_t> valid_frames;
};

/// SR = sum over valid frames of R_i * CS_global,i, divided by the valid
/// frame count. A frame is valid when |P_i ∩ M_i| / |M_i| > coverage_valid.
StabilityResult stability_ratio(const TrackedObject& object, const std::vector<BinaryMask>& prompts,
                                const std::vector<Image>& residuals, const TmrConfig& cfg);

/// Computes SR, coverage and validity for every object in place.
void score_objects(std::vector<TrackedObject>& objects, const std::vector<BinaryMask>& prompts,
                   const std::vector<Image>& residuals, const TmrConfig& cfg);

std::vector<TrackedObject> filter_objects(const std::vector<TrackedObject>& objects, const TmrConfig& cfg);

/// Per-frame union of the objects' masks; empty masks where nothing is kept.
std::vector<BinaryMask> final_masks(const std::vector<TrackedObject>& kept, std::size_t frame_count,
                                    int width, int height);

struct RefineResult {
  std::vector<TrackedObject> objects;  // scored, before filtering
  std::vector<std::uint32_t> kept_labels;
  std::vector<BinaryMask> masks;  // per frame, undilated
};

/// Spatial refinement, propagation, scoring and filtering in one call.
RefineResult refine_masks(const std::vector<BinaryMask>& transient_masks,
                          const std::vector<Image>& residuals, const PromptableSegmenter& segmenter,
                          const TmrConfig& cfg);

/// masks/<label>/<frame>.png plus `objects.txt` with one line per object:
/// label, SR, first frame, last frame, |M_max|.
void write_mask_tree(const std::filesystem::path& dir, const std::vector<TrackedObject>& objects);
/// Reads back the per-label masks of a tree written by write_mask_tree or an
/// external exporter. Coverage and SR fields are left empty.
std::vector<TrackedObject> read_mask_tree(const std::filesystem::path& dir);

/// One line per record: `<frame> <id> x,y x,y ...`.
struct PromptRecord {
  std::size_t frame = 0;
  std::uint32_t id = 0;
  std::vector<Pixel> points;
  bool operator==(const PromptRecord&) const = default;
};
void write_prompts_file(const std::filesystem::path& path, const std::vector<PromptRecord>& records);
std::vector<PromptRecord> read_prompts_file(const std::filesystem::path& path);

}  // namespace cleansplat
