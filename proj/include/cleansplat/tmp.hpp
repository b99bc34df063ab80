#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cleansplat/adam.hpp"
#include "cleansplat/features.hpp"
#include "cleansplat/image.hpp"

namespace cleansplat {

/// Logistic classifier over patch features: P = sigmoid(W f + b).
struct TmpModel {
  std::vector<double> weights;
  double bias = 0.0;
  bool use_bias = true;

  TmpModel() = default;
  explicit TmpModel(int dim, bool with_bias = true) : weights(dim, 0.0), use_bias(with_bias) {}
  int dim() const { return static_cast<int>(weights.size()); }
  bool operator==(const TmpModel&) const = default;
};

struct TmpSchedule {
  int start_iteration = 500;
  int pause_after_reset = 250;
  double learning_rate = 1e-3;
  double lambda_prior = 0.1;
  bool use_consistency = true;

  void validate() const;
};

/// Forward intermediates kept for the gradient.
struct TmpPrediction {
  int grid_w = 0;
  int grid_h = 0;
  std::vector<double> patch_probability;
  std::vector<double> dilated;
  std::vector<std::size_t> dilation_source;  // patch each dilated cell copied its max from
  ProbabilityMask mask;
};

/// Patch sigmoid, 8-neighborhood max at patch resolution, bilinear upsample.
TmpPrediction predict_mask_traced(const TmpModel& model, const FeatureMap& features, int width,
                                  int height);
ProbabilityMask predict_mask(const TmpModel& model, const FeatureMap& features, int width, int height);

struct TransientLoss {
  double value = 0.0;
  double rgb = 0.0;
  double reg = 0.0;
  double consistency = 0.0;
  std::vector<double> grad;  // dL/dP per pixel
};

/// mean((1-P) r) + lambda mean(P) + mean(P * P_hat), r = channel-mean |I - I_hat|.
/// `rendered_mask` is treated as a constant; pass nullptr to drop the last term.
TransientLoss transient_loss(const ProbabilityMask& mask, const ProbabilityMask* rendered_mask,
                             const Image& reference, const Image& render, double lambda_prior);

/// Minimizer over P in [0,1] of (1-P) r + lambda P.
inline double optimal_transient_probability(double residual, double lambda_prior) {
  return residual > lambda_prior ? 1.0 : 0.0;
}

BinaryMask binarize(const ProbabilityMask& mask, double threshold = 0.5);

struct TmpGradient {
  std::vector<double> weights;
  double bias = 0.0;
};

/// Pulls dL/dP back to the classifier parameters through upsampling,
/// patch dilation (max routing) and the sigmoid.
TmpGradient tmp_backward(const TmpModel& model, const FeatureMap& features,
                         const TmpPrediction& prediction, const std::vector<double>& grad_mask);

class TmpTrainer {
 public:
  TmpTrainer(TmpModel model, TmpSchedule schedule);

  bool active(int iteration, int last_reset_iteration) const;

  /// One Adam step on the reference-image mask; the rendered-image features
  /// only enter through the detached consistency term. nullopt when skipped.
  std::optional<TransientLoss> step(const FeatureMap& reference_features,
                                    const FeatureMap* rendered_features, const Image& reference,
                                    const Image& render, int iteration, int last_reset_iteration);

  const TmpModel& model() const { return model_; }
  const TmpSchedule& schedule() const { return schedule_; }

 private:
  TmpModel model_;
  TmpSchedule schedule_;
  Adam adam_;
};

class TmpCheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// "TTMP", u32 version (1), u32 dim, float32 weights, float32 bias.
void write_tmp_checkpoint(const std::filesystem::path& path, const TmpModel& model);
TmpModel read_tmp_checkpoint(const std::filesystem::path& path);

}  // namespace cleansplat
