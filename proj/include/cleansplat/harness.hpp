#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "cleansplat/features.hpp"
#include "cleansplat/gaussian.hpp"
#include "cleansplat/image.hpp"

namespace cleansplat {

enum class Archetype { Transient, SemiTransient, Slow, AdversarialStatic };

std::string archetype_name(Archetype a);
std::optional<Archetype> parse_archetype(const std::string& name);

/// Instance ids used by generated scenes.
namespace instance {
inline constexpr std::uint16_t kBackground = 0;
inline constexpr std::uint16_t kWall = 1;
inline constexpr std::uint16_t kFloor = 2;
inline constexpr std::uint16_t kBox = 3;
inline constexpr std::uint16_t kPoster = 4;
inline constexpr std::uint16_t kFirstMover = 10;
/// Feature class of a mover while it is visibly moving.
inline constexpr std::uint16_t kMovingClass = 100;
}  // namespace instance

struct SceneSpec {
  Archetype archetype = Archetype::Transient;
  int width = 128;
  int height = 96;
  int train_frames = 24;
  int test_frames = 6;
  int static_gaussians = 500;  // wall + floor + box
  int movers = 1;
  int mover_gaussians = 30;
  double mover_step = 0.1;  // world units per frame while moving
  int halt_frames = 8;      // semi_transient only
  int poster_init_stride = 4;  // adversarial_static: one init Gaussian per stride^2 poster Gaussians
  double init_position_noise = 0.02;
  double init_color_noise = 0.5;
  double init_opacity = 0.1;

  void validate() const;
  static SceneSpec preset(Archetype archetype);
};

/// A rigid Gaussian blob translated along a scripted per-frame path.
struct MoverScript {
  std::uint16_t instance = 0;
  GaussianCloud blob;  // means relative to the blob center
  std::vector<Eigen::Vector3d> positions;  // one per train frame
  std::vector<bool> halted;                // position equals the previous frame's

  GaussianCloud at_frame(std::size_t frame) const;
};

struct FrameRecord {
  Image image;
  Camera camera;
  std::optional<BinaryMask> gt_mask;
  std::optional<IdMap> ids;
};

/// Frames in capture order. Train frames come first; test frames are clean
/// static renders from extra poses.
struct FrameSequence {
  std::vector<FrameRecord> frames;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Everything the pipeline reads from a dataset directory.
struct Dataset {
  FrameSequence sequence;
  std::optional<SceneSemantics> semantics;
  std::set<std::uint16_t> stuff;
  GaussianCloud init;
  std::vector<std::uint16_t> init_labels;
  std::optional<GaussianCloud> gt_static;
};

struct SyntheticScene {
  SceneSpec spec;
  std::uint64_t seed = 0;
  Dataset data;
  std::vector<std::uint16_t> static_labels;  // per gt_static Gaussian
  std::vector<MoverScript> movers;
  /// Under-sampled static instance of adversarial_static scenes, else 0.
  std::uint16_t under_sampled_instance = 0;
};

SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed);

/// Pixels where the movers rendered alone have alpha > 0.5.
BinaryMask transient_mask(const std::vector<MoverScript>& movers, std::size_t frame, const Camera& camera);

/// Mover world displacement between frame-1 and frame, in pixels at the
/// mover's depth (motion relative to the static scene).
double mover_displacement_px(const MoverScript& mover, std::size_t frame, const Camera& camera);

struct ImageReport {
  std::vector<std::size_t> frames;
  std::vector<double> psnr;
  std::vector<double> ssim;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

/// Renders `cloud` from every test camera, quantized to 8 bits like the
/// stored frames, and scores it against the test images.
ImageReport evaluate(const GaussianCloud& cloud, const FrameSequence& sequence);

struct MaskReport {
  std::vector<std::size_t> frames;
  std::vector<double> iou;
  std::vector<double> precision;
  std::vector<double> recall;
  double mean_iou = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `predicted[i]` belongs to train frame sequence.train[i]. Precision is 1
/// for an empty prediction and recall is 1 for an empty ground truth.
MaskReport mask_eval(const std::vector<BinaryMask>& predicted, const FrameSequence& sequence);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// frames/<idx>.png, poses.txt, split.txt, optional gt_masks/<idx>.png and
/// idmaps/<idx>.bin (u16 LE), plus instances.txt, init.gsck, init_labels.txt
/// and gt_static.gsck when present.
void write_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& dir);

/// Scene-specific extras: scene.txt (archetype, seed) and movers.txt.
void write_scene(const std::filesystem::path& dir, const SyntheticScene& scene);

void write_id_map(const std::filesystem::path& path, const IdMap& ids);
IdMap read_id_map(const std::filesystem::path& path, int width, int height);

}  // namespace cleansplat
