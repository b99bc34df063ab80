#include "cleansplat/tmp.hpp"

#include <cmath>
#include <fstream>

#include "cleansplat/binio.hpp"
#include "cleansplat/gaussian.hpp"

namespace cleansplat {

namespace {
constexpr char kMagic[4] = {'T', 'T', 'M', 'P'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void TmpSchedule::validate() const {
  if (start_iteration < 0 || pause_after_reset < 0 || !(learning_rate >= 0.0)) {
    throw std::invalid_argument("TMP schedule values must be non-negative");
  }
  if (!(lambda_prior > 0.0 && lambda_prior < 1.0)) {
    throw std::invalid_argument("lambda_prior must lie in (0,1)");
  }
}

TmpPrediction predict_mask_traced(const TmpModel& model, const FeatureMap& features, int width,
                                  int height) {
  if (features.dim() != model.dim()) throw DimensionError("feature dim does not match TMP model");
  TmpPrediction pred;
  pred.grid_w = features.grid_w();
  pred.grid_h = features.grid_h();
  const std::size_t n = features.patch_count();
  pred.patch_probability.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = features.patch(i);
    double z = model.use_bias ? model.bias : 0.0;
    for (int k = 0; k < model.dim(); ++k) z += model.weights[k] * f[k];
    pred.patch_probability[i] = sigmoid(z);
  }
  pred.dilated.resize(n);
  pred.dilation_source.resize(n);
  const int gw = pred.grid_w;
  const int gh = pred.grid_h;
  for (int y = 0; y < gh; ++y) {
    for (int x = 0; x < gw; ++x) {
      std::size_t best = static_cast<std::size_t>(y) * gw + x;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= gw || ny >= gh) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * gw + nx;
          if (pred.patch_probability[j] > pred.patch_probability[best]) best = j;
        }
      }
      const std::size_t i = static_cast<std::size_t>(y) * gw + x;
      pred.dilation_source[i] = best;
      pred.dilated[i] = pred.patch_probability[best];
    }
  }
  pred.mask = upsample_bilinear(ProbabilityMask(gw, gh, pred.dilated), width, height);
  return pred;
}

ProbabilityMask predict_mask(const TmpModel& model, const FeatureMap& features, int width, int height) {
  return predict_mask_traced(model, features, width, height).mask;
}

TransientLoss transient_loss(const ProbabilityMask& mask, const ProbabilityMask* rendered_mask,
                             const Image& reference, const Image& render, double lambda_prior) {
  const Image residual = abs_residual(reference, render);
  if (mask.width() != reference.width() || mask.height() != reference.height()) {
    throw DimensionError("mask does not match image dimensions");
  }
  if (rendered_mask &&
      (rendered_mask->width() != mask.width() || rendered_mask->height() != mask.height())) {
    throw DimensionError("rendered mask does not match image dimensions");
  }
  const std::size_t n = mask.pixel_count();
  const double inv = 1.0 / static_cast<double>(n);
  TransientLoss out;
  out.grad.resize(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double prob = mask.values()[p];
    const double r = residual.data()[p];
    const double other = rendered_mask ? rendered_mask->values()[p] : 0.0;
    out.rgb += (1.0 - prob) * r;
    out.reg += prob;
    out.consistency += prob * other;
    out.grad[p] = (-r + lambda_prior + other) * inv;
  }
  out.rgb *= inv;
  out.reg *= inv;
  out.consistency *= inv;
  out.value = out.rgb + lambda_prior * out.reg + out.consistency;
  return out;
}

BinaryMask binarize(const ProbabilityMask& mask, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must be in (0,1)");
  BinaryMask out(mask.width(), mask.height());
  for (std::size_t p = 0; p < mask.pixel_count(); ++p) out.set(p, mask.values()[p] > threshold);
  return out;
}

TmpGradient tmp_backward(const TmpModel& model, const FeatureMap& features,
                         const TmpPrediction& prediction, const std::vector<double>& grad_mask) {
  const auto grad_dilated =
      upsample_bilinear_adjoint(grad_mask, prediction.mask.width(), prediction.mask.height(),
                                prediction.grid_w, prediction.grid_h);
  std::vector<double> grad_patch(grad_dilated.size(), 0.0);
  for (std::size_t i = 0; i < grad_dilated.size(); ++i) {
    grad_patch[prediction.dilation_source[i]] += grad_dilated[i];
  }
  TmpGradient g;
  g.weights.assign(model.dim(), 0.0);
  for (std::size_t i = 0; i < grad_patch.size(); ++i) {
    if (grad_patch[i] == 0.0) continue;
    const double p = prediction.patch_probability[i];
    const double gz = grad_patch[i] * p * (1.0 - p);
    const auto f = features.patch(i);
    for (int k = 0; k < model.dim(); ++k) g.weights[k] += gz * f[k];
    g.bias += gz;
  }
  if (!model.use_bias) g.bias = 0.0;
  return g;
}

TmpTrainer::TmpTrainer(TmpModel model, TmpSchedule schedule)
    : model_(std::move(model)),
      schedule_(schedule),
      adam_(std::vector<double>(model_.weights.size() + 1, schedule.learning_rate), {}) {
  schedule_.validate();
}

bool TmpTrainer::active(int iteration, int last_reset_iteration) const {
  if (iteration < schedule_.start_iteration) return false;
  if (last_reset_iteration >= 0 && iteration - last_reset_iteration < schedule_.pause_after_reset) {
    return false;
  }
  return true;
}

std::optional<TransientLoss> TmpTrainer::step(const FeatureMap& reference_features,
                                              const FeatureMap* rendered_features,
                                              const Image& reference, const Image& render,
                                              int iteration, int last_reset_iteration) {
  if (!active(iteration, last_reset_iteration)) return std::nullopt;
  const int w = reference.width();
  const int h = reference.height();
  const TmpPrediction pred = predict_mask_traced(model_, reference_features, w, h);
  std::optional<ProbabilityMask> rendered_mask;
  if (schedule_.use_consistency && rendered_features) {
    rendered_mask = predict_mask(model_, *rendered_features, w, h);
  }
  TransientLoss loss = transient_loss(pred.mask, rendered_mask ? &*rendered_mask : nullptr,
                                      reference, render, schedule_.lambda_prior);
  const TmpGradient g = tmp_backward(model_, reference_features, pred, loss.grad);
  std::vector<double> params = model_.weights;
  params.push_back(model_.bias);
  std::vector<double> grads = g.weights;
  grads.push_back(g.bias);
  adam_.step(params, grads);
  std::copy(params.begin(), params.end() - 1, model_.weights.begin());
  if (model_.use_bias) model_.bias = params.back();
  return loss;
}

void write_tmp_checkpoint(const std::filesystem::path& path, const TmpModel& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TmpCheckpointError("cannot write " + path.string());
  out.write(kMagic, 4);
  binio::put_u32(out, kVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(model.dim()));
  for (double w : model.weights) binio::put_f32(out, static_cast<float>(w));
  binio::put_f32(out, static_cast<float>(model.bias));
}

TmpModel read_tmp_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TmpCheckpointError("cannot open TMP checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kMagic)) {
    throw TmpCheckpointError("bad TMP checkpoint magic in " + path.string());
  }
  std::uint32_t version = 0, dim = 0;
  if (!binio::get_u32(in, version) || !binio::get_u32(in, dim)) {
    throw TmpCheckpointError("truncated TMP checkpoint " + path.string());
  }
  if (version != kVersion) throw TmpCheckpointError("unsupported TMP checkpoint version");
  TmpModel model(static_cast<int>(dim));
  for (double& w : model.weights) {
    float f = 0.0f;
    if (!binio::get_f32(in, f)) throw TmpCheckpointError("truncated TMP checkpoint " + path.string());
    w = f;
  }
  float b = 0.0f;
  if (!binio::get_f32(in, b)) throw TmpCheckpointError("truncated TMP checkpoint " + path.string());
  model.bias = b;
  return model;
}

}  // namespace cleansplat
