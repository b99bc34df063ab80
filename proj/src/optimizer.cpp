#include "cleansplat/optimizer.hpp"

#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

namespace cleansplat {

std::vector<double> LearningRates::expand(std::size_t gaussians) const {
  std::vector<double> lr(gaussians * GaussianCloud::kStride);
  for (std::size_t i = 0; i < gaussians; ++i) {
    double* g = lr.data() + i * GaussianCloud::kStride;
    for (int k = 0; k < 3; ++k) {
      g[GaussianCloud::kMean + k] = mean;
      g[GaussianCloud::kLogScale + k] = log_scale;
      g[GaussianCloud::kColor + k] = color;
    }
    for (int k = 0; k < 4; ++k) g[GaussianCloud::kRotation + k] = rotation;
    g[GaussianCloud::kOpacity] = opacity;
  }
  return lr;
}

void TrainConfig::validate() const {
  if (total_iterations < 0) throw std::invalid_argument("total_iterations must be >= 0");
  if (lambda_ssim < 0 || lambda_l1 < 0 || lambda_depth < 0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (depth_loss_start < 0 || opacity_reset_interval < 0 || propagation_iteration < 0 || dilation < 0 ||
      checkpoint_interval < 0) {
    throw std::invalid_argument("iteration counts must be non-negative");
  }
  if (!(mask_threshold > 0.0 && mask_threshold < 1.0)) {
    throw std::invalid_argument("mask_threshold must lie in (0,1)");
  }
}

MaskedLoss masked_loss(const Image& reference, const Image& render, const BinaryMask& mask,
                       const Image& depth, const TrainConfig& cfg, bool depth_active) {
  if (!reference.same_shape(render) || reference.channels() != 3) {
    throw DimensionError("reference and render must be matching 3-channel images");
  }
  const int w = reference.width();
  const int h = reference.height();
  const bool has_mask = mask.pixel_count() > 0;
  if (has_mask && (mask.width() != w || mask.height() != h)) throw DimensionError("mask dimension mismatch");
  const std::size_t npix = reference.pixel_count();
  const std::size_t masked = has_mask ? mask.count() : 0;
  const std::size_t visible = npix - masked;

  MaskedLoss out;
  out.grad_color = Image(w, h, 3);
  out.grad_depth = Image(w, h, 1);
  out.masked_fraction = npix ? static_cast<double>(masked) / static_cast<double>(npix) : 0.0;
  out.fully_masked = visible == 0;

  if (!out.fully_masked) {
    Image ref_m = reference;
    Image ren_m = render;
    if (masked) {
      for (std::size_t p = 0; p < npix; ++p) {
        if (!mask.test(p)) continue;
        for (int c = 0; c < 3; ++c) {
          ref_m.data()[p * 3 + c] = 0.0;
          ren_m.data()[p * 3 + c] = 0.0;
        }
      }
    }
    const double l1_norm = 1.0 / (3.0 * static_cast<double>(visible));
    for (std::size_t i = 0; i < ren_m.data().size(); ++i) {
      if (masked && mask.test(i / 3)) continue;
      const double d = ren_m.data()[i] - ref_m.data()[i];
      out.l1 += std::abs(d);
      out.grad_color.data()[i] = cfg.lambda_l1 * l1_norm * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
    }
    out.l1 *= l1_norm;
    const SsimGradient sg = ssim_with_gradient(ref_m, ren_m);
    out.ssim = sg.value;
    for (std::size_t i = 0; i < sg.grad.data().size(); ++i) {
      if (masked && mask.test(i / 3)) continue;
      out.grad_color.data()[i] -= cfg.lambda_ssim * sg.grad.data()[i];
    }
    out.value = cfg.lambda_l1 * out.l1 + cfg.lambda_ssim * (1.0 - out.ssim);
  }
  if (depth_active && cfg.lambda_depth > 0.0) {
    const TvLoss tv = depth_tv_loss(depth);
    out.depth = tv.value;
    out.value += cfg.lambda_depth * tv.value;
    for (std::size_t i = 0; i < tv.grad.data().size(); ++i) {
      out.grad_depth.data()[i] = cfg.lambda_depth * tv.grad.data()[i];
    }
  }
  return out;
}

void opacity_reset(GaussianCloud& cloud, Adam* adam) {
  const double value = logit(0.01);
  for (std::size_t i = 0; i < cloud.size(); ++i) cloud.opacity_logit(i) = value;
  if (adam) adam->zero_moments(GaussianCloud::kOpacity, GaussianCloud::kStride, 1);
}

void write_log_record(std::ostream& out, const TrainLogRecord& r) {
  out << "iteration=" << r.iteration << " frame=" << r.frame << " loss=" << r.loss << " l1=" << r.l1
      << " ssim=" << r.ssim << " depth_tv=" << r.depth << " psnr=" << r.psnr
      << " masked=" << r.masked_fraction;
  if (r.tmp_step) out << " tmp_loss=" << r.tmp_loss;
  out << '\n';
}

BinaryMask tmp_binary_mask(const TmpModel& model, const FeatureMap& features, int width, int height,
                           double threshold) {
  return binarize(predict_mask(model, features, width, height), threshold);
}

namespace {

IdMap to_id_map(const std::vector<std::uint16_t>& labels, int w, int h) { return IdMap{w, h, labels}; }

}  // namespace

TrainResult train(const std::vector<TrainFrame>& frames, GaussianCloud cloud, const TrainConfig& cfg,
                  const std::vector<BinaryMask>* masks, TmpLink tmp, std::ostream* log_stream) {
  cfg.validate();
  if (frames.empty()) throw std::invalid_argument("training needs at least one frame");
  if (masks && masks->size() != frames.size()) throw std::invalid_argument("one mask per training frame required");
  const bool tmp_training = !masks && tmp.trainer && tmp.features;

  TrainResult result;
  Adam adam(cfg.learning_rates.expand(cloud.size()), Adam::Options{0.9, 0.999, 1e-15});
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, frames.size() - 1);
  std::vector<std::optional<FeatureMap>> reference_features(frames.size());
  std::vector<std::optional<BinaryMask>> dilated_supplied(frames.size());
  bool warned_no_render_features = false;

  auto features_of = [&](std::size_t f) -> const FeatureMap& {
    if (!reference_features[f]) reference_features[f] = tmp.features->reference(frames[f].index, frames[f].image);
    return *reference_features[f];
  };

  for (int it = 1; it <= cfg.total_iterations; ++it) {
    const std::size_t f = pick(rng);
    const TrainFrame& frame = frames[f];
    const int w = frame.camera.width;
    const int h = frame.camera.height;
    const RenderOutput out = render(cloud, frame.camera, {true});

    BinaryMask mask(w, h);
    if (masks) {
      if (!dilated_supplied[f]) dilated_supplied[f] = dilate((*masks)[f], cfg.dilation);
      mask = *dilated_supplied[f];
    } else if (tmp_training) {
      mask = dilate(tmp_binary_mask(tmp.trainer->model(), features_of(f), w, h, cfg.mask_threshold),
                    cfg.dilation);
    }

    const bool depth_active = it > cfg.depth_loss_start;
    const MaskedLoss loss = masked_loss(frame.image, out.color, mask, out.depth, cfg, depth_active);
    if (!std::isfinite(loss.value)) {
      throw TrainError("non-finite loss at iteration " + std::to_string(it) + " (frame " +
                       std::to_string(frame.index) + ", l1=" + std::to_string(loss.l1) +
                       ", ssim=" + std::to_string(loss.ssim) + ", depth=" + std::to_string(loss.depth) + ")");
    }
    if (loss.fully_masked) spdlog::debug("iteration {}: frame {} fully masked", it, frame.index);

    const GaussianCloud grads = render_backward(out, loss.grad_color, loss.grad_depth);
    adam.step(cloud.params(), grads.params());
    cloud.normalize_rotations();

    TrainLogRecord rec;
    rec.iteration = it;
    rec.frame = frame.index;
    rec.loss = loss.value;
    rec.l1 = loss.l1;
    rec.ssim = loss.ssim;
    rec.depth = loss.depth;
    rec.psnr = psnr(frame.image, out.color);
    rec.masked_fraction = loss.masked_fraction;

    if (tmp_training) {
      std::optional<FeatureMap> rendered;
      if (tmp.trainer->schedule().use_consistency && tmp.trainer->active(it, result.last_reset_iteration)) {
        if (tmp.gaussian_labels) {
          const IdMap ids = to_id_map(render_labels(out, *tmp.gaussian_labels, 0), w, h);
          rendered = tmp.features->rendered(frame.index, out.color, &ids);
        } else {
          rendered = tmp.features->rendered(frame.index, out.color, nullptr);
        }
        if (!rendered && !warned_no_render_features) {
          spdlog::warn("feature provider cannot describe renders; consistency term disabled");
          warned_no_render_features = true;
        }
      }
      const auto tl = tmp.trainer->step(features_of(f), rendered ? &*rendered : nullptr, frame.image,
                                        out.color, it, result.last_reset_iteration);
      if (tl) {
        rec.tmp_step = true;
        rec.tmp_loss = tl->value;
      }
    }

    if (cfg.opacity_reset_interval > 0 && it % cfg.opacity_reset_interval == 0 && it < cfg.total_iterations) {
      opacity_reset(cloud, &adam);
      result.last_reset_iteration = it;
    }
    if (log_stream) write_log_record(*log_stream, rec);
    result.log.push_back(rec);
    if (cfg.checkpoint_interval > 0 && !cfg.checkpoint_dir.empty() && it % cfg.checkpoint_interval == 0) {
      write_checkpoint(cfg.checkpoint_dir / ("checkpoint_" + std::to_string(it) + ".bin"), cloud);
    }
  }
  result.cloud = std::move(cloud);
  return result;
}

}  // namespace cleansplat
