#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cleansplat/features.hpp"
#include "cleansplat/harness.hpp"
#include "cleansplat/optimizer.hpp"
#include "cleansplat/tmp.hpp"
#include "cleansplat/tmr.hpp"

namespace cleansplat {

enum class MaskSource { Tmr, Tmp, None, GroundTruth };

std::string mask_source_name(MaskSource s);

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::filesystem::path data;    // dataset directory
  std::filesystem::path output;  // stage artifacts
  SceneSpec scene;               // used by `generate`
  std::string feature_backend = "oracle";  // oracle | file
  std::filesystem::path feature_dir;       // file backend
  // Generated frames are small, so the oracle uses a finer grid than the
  // extractor's native 14-pixel patches.
  OracleParams oracle{.patch_size = 8};
  std::string segmenter_backend = "oracle";  // oracle | identity
  TrainConfig train;
  TmpSchedule tmp;
  TmrConfig tmr;
  MaskSource finalize_masks = MaskSource::Tmr;

  void validate() const;
};

/// Config file problem, with the offending line when known (1-based, 0 = none).
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line) : std::runtime_error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// YAML config; keys absent from the file keep their defaults, unknown keys
/// are rejected. `source` names the text in error messages.
PipelineConfig parse_config(const std::string& text, const std::string& source = "config");
PipelineConfig load_config(const std::filesystem::path& path);
/// Canonical YAML of every effective setting; the config hash covers this.
std::string config_to_yaml(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

std::string sha256_hex(const std::string& bytes);
std::string file_sha256(const std::filesystem::path& path);

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An artifact another stage should have produced is absent.
class MissingStageError : public PipelineError {
 public:
  MissingStageError(const std::string& stage, const std::filesystem::path& artifact);
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

// ---- in-memory stages -------------------------------------------------------

std::vector<TrainFrame> train_frames(const Dataset& data);
std::unique_ptr<FeatureProvider> make_feature_provider(const Dataset& data, const PipelineConfig& cfg);
std::unique_ptr<PromptableSegmenter> make_segmenter(const Dataset& data, const PipelineConfig& cfg);

struct JointResult {
  GaussianCloud cloud;
  TmpModel tmp;
  int last_reset_iteration = -1;
  std::vector<BinaryMask> tmp_masks;  // per train frame, undilated
  std::vector<TrainLogRecord> log;
};

/// Joint Gaussian + TMP training up to cfg.train.propagation_iteration.
JointResult run_joint(const Dataset& data, const PipelineConfig& cfg, std::ostream* log = nullptr);

/// Channel-mean |I - render| per train frame.
std::vector<Image> train_residuals(const Dataset& data, const GaussianCloud& cloud);

RefineResult run_refine(const Dataset& data, const std::vector<BinaryMask>& tmp_masks,
                        const GaussianCloud& cloud, const PipelineConfig& cfg);

/// Fresh training from the dataset's initial cloud for cfg.train.total_iterations
/// with fixed per-train-frame masks (nullptr: unmasked).
TrainResult run_finalize(const Dataset& data, const std::vector<BinaryMask>* masks, const PipelineConfig& cfg,
                         std::ostream* log = nullptr);

/// Green tint over masked pixels.
Image mask_overlay(const Image& image, const BinaryMask& mask);
/// Residual magnitude mapped to a black-red-yellow-white ramp (saturating at 0.5).
Image residual_heatmap(const Image& residual);

// ---- on-disk stages ---------------------------------------------------------

/// Artifact layout under cfg.output.
struct StagePaths {
  std::filesystem::path root;
  std::filesystem::path manifest(const std::string& stage) const { return root / "manifests" / (stage + ".json"); }
  std::filesystem::path joint_cloud() const { return root / "train" / "cloud.gsck"; }
  std::filesystem::path tmp_model() const { return root / "train" / "tmp.ttmp"; }
  std::filesystem::path tmp_masks() const { return root / "train" / "tmp_masks"; }
  std::filesystem::path refine_dir() const { return root / "refine"; }
  std::filesystem::path refined_masks() const { return root / "refine" / "final_masks"; }
  std::filesystem::path final_cloud() const { return root / "finalize" / "cloud.gsck"; }
  std::filesystem::path report() const { return root / "report.json"; }
  std::filesystem::path overlay() const { return root / "overlay"; }
  std::filesystem::path residual() const { return root / "residual"; }
};

void stage_generate(const PipelineConfig& cfg);
void stage_train(const PipelineConfig& cfg);
void stage_refine(const PipelineConfig& cfg);
void stage_finalize(const PipelineConfig& cfg);
/// Scores `cloud` (default: the finalize output) and writes report.json.
void stage_eval(const PipelineConfig& cfg, const std::optional<std::filesystem::path>& cloud = std::nullopt);
void stage_export_viz(const PipelineConfig& cfg);

}  // namespace cleansplat
