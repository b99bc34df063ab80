#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "cleansplat/adam.hpp"
#include "cleansplat/features.hpp"
#include "cleansplat/gaussian.hpp"
#include "cleansplat/image.hpp"
#include "cleansplat/render.hpp"
#include "cleansplat/tmp.hpp"

namespace cleansplat {

struct LearningRates {
  double mean = 1.6e-3;
  double log_scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double color = 2e-2;

  /// Per-element rates in the GaussianCloud layout.
  std::vector<double> expand(std::size_t gaussians) const;
};

struct TrainConfig {
  int total_iterations = 30000;
  double lambda_ssim = 0.2;
  double lambda_l1 = 0.8;
  double lambda_depth = 0.05;
  int depth_loss_start = 500;
  int opacity_reset_interval = 3000;  // 0 disables resets
  int propagation_iteration = 7000;
  int dilation = 5;  // N_e for masks entering the loss
  double mask_threshold = 0.5;
  LearningRates learning_rates;
  std::uint64_t seed = 0;
  int checkpoint_interval = 5000;  // 0 disables
  std::filesystem::path checkpoint_dir;  // empty: no periodic checkpoints

  void validate() const;
};

struct MaskedLoss {
  double value = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;   // SSIM of the masked images (the loss term is 1 - ssim)
  double depth = 0.0;  // TV value before weighting
  double masked_fraction = 0.0;
  bool fully_masked = false;
  Image grad_color;
  Image grad_depth;
};

/// lambda_ssim (1 - SSIM(I.M', R.M')) + lambda_l1 |M'.(I - R)|_1 / (3 n_visible)
/// + lambda_depth TV(D), where M' is the complement of `mask` (already dilated).
/// An empty `mask` means nothing is masked.
MaskedLoss masked_loss(const Image& reference, const Image& render, const BinaryMask& mask,
                       const Image& depth, const TrainConfig& cfg, bool depth_active);

/// Sets every opacity to 0.01 and clears the optimizer moments of opacity.
void opacity_reset(GaussianCloud& cloud, Adam* adam = nullptr);

struct TrainFrame {
  std::size_t index = 0;  // dataset frame id, used for feature lookup
  Image image;
  Camera camera;
};

/// Live transient-mask prediction during training.
struct TmpLink {
  TmpTrainer* trainer = nullptr;
  const FeatureProvider* features = nullptr;
  /// Per-Gaussian instance labels for the rendered id map; without them (or
  /// with a provider that cannot see renders) the consistency term is off.
  const std::vector<std::uint16_t>* gaussian_labels = nullptr;
};

struct TrainLogRecord {
  int iteration = 0;
  std::size_t frame = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  double depth = 0.0;
  double psnr = 0.0;
  double masked_fraction = 0.0;
  bool tmp_step = false;
  double tmp_loss = 0.0;
};

void write_log_record(std::ostream& out, const TrainLogRecord& r);

struct TrainResult {
  GaussianCloud cloud;
  std::vector<TrainLogRecord> log;
  int last_reset_iteration = -1;
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam on the Gaussians for cfg.total_iterations, one uniformly sampled
/// frame per iteration. With `masks` (per frame, undilated) those masks are
/// used and the TMP is not trained; otherwise masks come from the live TMP.
TrainResult train(const std::vector<TrainFrame>& frames, GaussianCloud cloud, const TrainConfig& cfg,
                  const std::vector<BinaryMask>* masks, TmpLink tmp = {},
                  std::ostream* log_stream = nullptr);

/// Binarized TMP prediction for one frame, before N_e dilation.
BinaryMask tmp_binary_mask(const TmpModel& model, const FeatureMap& features, int width, int height,
                           double threshold = 0.5);

}  // namespace cleansplat
