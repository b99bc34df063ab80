#include "cleansplat/render.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cleansplat {

namespace {

// Intermediates of the EWA projection, recomputed in the backward pass.
struct ProjectionTrace {
  Eigen::Vector3d cam_point;
  Eigen::Matrix<double, 2, 3> jacobian;
  Eigen::Matrix3d rotation;  // of the normalized quaternion
  Eigen::Vector3d scale;
  Eigen::Matrix3d cov3d;
  Eigen::Matrix2d cov_raw;
};

struct FlooredCov {
  Eigen::Matrix2d cov;
  bool floor_min = false;
  bool floor_max = false;
  double lambda_max = 0.0;
  double lambda_min = 0.0;
  Eigen::Vector2d u_max;  // eigenvector of lambda_max
};

FlooredCov floor_covariance(const Eigen::Matrix2d& s) {
  const double a = s(0, 0);
  const double b = 0.5 * (s(0, 1) + s(1, 0));
  const double c = s(1, 1);
  const double mid = 0.5 * (a + c);
  const double rad = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  FlooredCov out;
  out.lambda_max = mid + rad;
  out.lambda_min = mid - rad;
  Eigen::Matrix2d sym;
  sym << a, b, b, c;
  if (out.lambda_min >= kCovarianceFloor) {
    out.cov = sym;
    return out;
  }
  out.floor_min = true;
  if (out.lambda_max <= kCovarianceFloor) {
    out.floor_max = true;
    out.cov = kCovarianceFloor * Eigen::Matrix2d::Identity();
    return out;
  }
  Eigen::Vector2d u = (a >= c) ? Eigen::Vector2d(out.lambda_max - c, b)
                               : Eigen::Vector2d(b, out.lambda_max - a);
  u.normalize();
  out.u_max = u;
  out.cov = kCovarianceFloor * Eigen::Matrix2d::Identity() +
            (out.lambda_max - kCovarianceFloor) * u * u.transpose();
  return out;
}

// dL/dS_raw from dL/dS_floored (both symmetric, Frobenius pairing).
Eigen::Matrix2d floor_covariance_backward(const FlooredCov& f, const Eigen::Matrix2d& grad) {
  if (!f.floor_min) return grad;
  if (f.floor_max) return Eigen::Matrix2d::Zero();
  const Eigen::Vector2d& u = f.u_max;
  const Eigen::Vector2d v(-u.y(), u.x());
  const double c = (f.lambda_max - kCovarianceFloor) * u.dot(grad * v) /
                   (f.lambda_max - f.lambda_min);
  return u.dot(grad * u) * u * u.transpose() + c * (v * u.transpose() + u * v.transpose());
}

std::optional<Projected2DGaussian> project_traced(const GaussianCloud& cloud, std::size_t i,
                                                  const Camera& camera, ProjectionTrace* trace,
                                                  FlooredCov* floored_out) {
  const Eigen::Vector3d t = camera.to_camera(cloud.mean(i));
  if (t.z() <= kNearPlane) return std::nullopt;
  const double z = t.z();
  const double z2 = z * z;
  Eigen::Matrix<double, 2, 3> jac;
  jac << camera.fx / z, 0.0, -camera.fx * t.x() / z2, 0.0, camera.fy / z, -camera.fy * t.y() / z2;
  const Eigen::Matrix3d rot = cloud.rotation_matrix(i);
  const Eigen::Vector3d scale = cloud.scale(i);
  const Eigen::Matrix3d cov3d = rot * scale.array().square().matrix().asDiagonal() * rot.transpose();
  const Eigen::Matrix<double, 2, 3> m = jac * camera.rotation;
  const Eigen::Matrix2d cov_raw = m * cov3d * m.transpose();
  const FlooredCov floored = floor_covariance(cov_raw);

  Projected2DGaussian g;
  g.mean = {camera.fx * t.x() / z + camera.cx, camera.fy * t.y() / z + camera.cy};
  g.cov = floored.cov;
  const double det = g.cov(0, 0) * g.cov(1, 1) - g.cov(0, 1) * g.cov(1, 0);
  g.conic << g.cov(1, 1) / det, -g.cov(0, 1) / det, -g.cov(1, 0) / det, g.cov(0, 0) / det;
  g.depth = z;
  const double lmax = std::max(floored.lambda_max, kCovarianceFloor);
  g.radius = kCutoffSigma * std::sqrt(lmax);
  g.x_min = std::max(0, static_cast<int>(std::ceil(g.mean.x() - g.radius)));
  g.y_min = std::max(0, static_cast<int>(std::ceil(g.mean.y() - g.radius)));
  g.x_max = std::min(camera.width - 1, static_cast<int>(std::floor(g.mean.x() + g.radius)));
  g.y_max = std::min(camera.height - 1, static_cast<int>(std::floor(g.mean.y() + g.radius)));
  g.floor_active[0] = floored.floor_min;
  g.floor_active[1] = floored.floor_max;
  if (g.x_min > g.x_max || g.y_min > g.y_max) return std::nullopt;
  if (trace) *trace = {t, jac, rot, scale, cov3d, cov_raw};
  if (floored_out) *floored_out = floored;
  return g;
}

// dR/dq_k for the rotation matrix of a unit quaternion (w, x, y, z).
std::array<Eigen::Matrix3d, 4> rotation_partials(const Eigen::Vector4d& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Eigen::Matrix3d, 4> d;
  d[0] << 0, -z, y, z, 0, -x, -y, x, 0;
  d[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  d[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  d[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  for (auto& m : d) m *= 2.0;
  return d;
}

}  // namespace

std::optional<Projected2DGaussian> project_gaussian(const GaussianCloud& cloud, std::size_t index,
                                                    const Camera& camera) {
  return project_traced(cloud, index, camera, nullptr, nullptr);
}

RenderOutput render(const GaussianCloud& cloud, const Camera& camera,
                    const RenderOptions& options) {
  const int w = camera.width;
  const int h = camera.height;
  const std::size_t npix = static_cast<std::size_t>(w) * h;
  RenderOutput out;
  out.color = Image(w, h, 3);
  out.depth = Image(w, h, 1);
  out.alpha = Image(w, h, 1);

  std::vector<std::optional<Projected2DGaussian>> projected(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) projected[i] = project_gaussian(cloud, i, camera);
  for (std::uint32_t i = 0; i < cloud.size(); ++i) {
    if (projected[i]) out.order.push_back(i);
  }
  std::sort(out.order.begin(), out.order.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double da = projected[a]->depth;
    const double db = projected[b]->depth;
    return da != db ? da < db : a < b;
  });

  std::vector<double> transmittance(npix, 1.0);
  std::vector<std::uint8_t> done(npix, 0);
  std::vector<std::vector<Contribution>> lists;
  if (options.retain_contributors) lists.resize(npix);

  for (const std::uint32_t gi : out.order) {
    const Projected2DGaussian& g = *projected[gi];
    const double opacity = cloud.opacity(gi);
    const Eigen::Vector3d color = cloud.color(gi);
    for (int y = g.y_min; y <= g.y_max; ++y) {
      for (int x = g.x_min; x <= g.x_max; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        if (done[p]) continue;
        const double falloff = gaussian_falloff(g, x, y);
        if (falloff == 0.0) continue;
        const double a = opacity * falloff;
        const double t = transmittance[p];
        const double weight = t * a;
        for (int c = 0; c < 3; ++c) out.color.data()[p * 3 + c] += weight * color[c];
        out.depth.data()[p] += weight * g.depth;
        if (options.retain_contributors) lists[p].push_back({gi, a, t});
        transmittance[p] = t * (1.0 - a);
        if (transmittance[p] < kMinTransmittance) done[p] = 1;
      }
    }
  }
  for (std::size_t p = 0; p < npix; ++p) out.alpha.data()[p] = 1.0 - transmittance[p];

  if (options.retain_contributors) {
    out.has_contributors = true;
    out.offsets.resize(npix + 1, 0);
    for (std::size_t p = 0; p < npix; ++p) {
      out.offsets[p + 1] = out.offsets[p] + static_cast<std::uint32_t>(lists[p].size());
    }
    out.contributions.reserve(out.offsets.back());
    for (auto& l : lists) out.contributions.insert(out.contributions.end(), l.begin(), l.end());
    out.snapshot = {camera, cloud, std::move(projected)};
  }
  return out;
}

std::vector<std::uint16_t> render_labels(const RenderOutput& out,
                                         const std::vector<std::uint16_t>& gaussian_labels,
                                         std::uint16_t background) {
  if (!out.has_contributors) throw BackwardError("render_labels needs retained contributors");
  const std::size_t npix = out.offsets.size() - 1;
  std::vector<std::uint16_t> labels(npix, background);
  for (std::size_t p = 0; p < npix; ++p) {
    double best = 0.0;
    for (const Contribution& c : out.contributors(p)) {
      const double weight = c.transmittance * c.alpha;
      if (weight > best) {
        best = weight;
        labels[p] = c.gaussian < gaussian_labels.size() ? gaussian_labels[c.gaussian] : background;
      }
    }
  }
  return labels;
}

GaussianCloud render_backward(const RenderOutput& out, const Image& grad_color,
                              const Image& grad_depth) {
  if (!out.has_contributors) {
    throw BackwardError("render_backward requires a render with retained contributors");
  }
  const RenderSnapshot& snap = out.snapshot;
  const GaussianCloud& cloud = snap.cloud;
  const Camera& camera = snap.camera;
  const int w = camera.width;
  const std::size_t npix = out.offsets.size() - 1;
  const bool has_gc = !grad_color.empty();
  const bool has_gd = !grad_depth.empty();
  if (has_gc && (grad_color.channels() != 3 || grad_color.pixel_count() != npix)) {
    throw DimensionError("color gradient shape mismatch");
  }
  if (has_gd && (grad_depth.channels() != 1 || grad_depth.pixel_count() != npix)) {
    throw DimensionError("depth gradient shape mismatch");
  }

  const std::size_t n = cloud.size();
  std::vector<Eigen::Vector2d> g_mean2d(n, Eigen::Vector2d::Zero());
  std::vector<Eigen::Matrix2d> g_conic(n, Eigen::Matrix2d::Zero());
  std::vector<double> g_opacity(n, 0.0);
  std::vector<Eigen::Vector3d> g_color(n, Eigen::Vector3d::Zero());
  std::vector<double> g_depth(n, 0.0);
  std::vector<double> opacity(n);
  std::vector<Eigen::Vector3d> color(n);
  for (std::size_t i = 0; i < n; ++i) {
    opacity[i] = cloud.opacity(i);
    color[i] = cloud.color(i);
  }

  for (std::size_t p = 0; p < npix; ++p) {
    const auto list = out.contributors(p);
    if (list.empty()) continue;
    const Eigen::Vector3d gc = has_gc ? Eigen::Vector3d(grad_color.data()[p * 3],
                                                        grad_color.data()[p * 3 + 1],
                                                        grad_color.data()[p * 3 + 2])
                                      : Eigen::Vector3d::Zero();
    const double gd = has_gd ? grad_depth.data()[p] : 0.0;
    if (gc.isZero(0.0) && gd == 0.0) continue;
    const double px = static_cast<double>(p % w);
    const double py = static_cast<double>(p / w);
    // Color and depth composited behind the current contributor.
    Eigen::Vector3d behind_color = Eigen::Vector3d::Zero();
    double behind_depth = 0.0;
    for (std::size_t k = list.size(); k-- > 0;) {
      const Contribution& c = list[k];
      const std::size_t gi = c.gaussian;
      const Projected2DGaussian& g = *snap.projected[gi];
      const double weight = c.transmittance * c.alpha;
      g_color[gi] += weight * gc;
      g_depth[gi] += weight * gd;
      const double g_alpha = c.transmittance * ((color[gi] - behind_color).dot(gc) +
                                                (g.depth - behind_depth) * gd);
      behind_color = c.alpha * color[gi] + (1.0 - c.alpha) * behind_color;
      behind_depth = c.alpha * g.depth + (1.0 - c.alpha) * behind_depth;

      const double falloff = gaussian_falloff(g, px, py);
      g_opacity[gi] += g_alpha * falloff;
      const double g_power = g_alpha * opacity[gi] * falloff;
      const Eigen::Vector2d d(px - g.mean.x(), py - g.mean.y());
      g_mean2d[gi] += g_power * (g.conic * d);
      g_conic[gi] += (-0.5 * g_power) * (d * d.transpose());
    }
  }

  GaussianCloud grads(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!snap.projected[i]) continue;
    ProjectionTrace tr;
    FlooredCov floored;
    const auto g = project_traced(cloud, i, camera, &tr, &floored);
    const Eigen::Matrix2d& q = g->conic;

    const Eigen::Matrix2d g_cov = -q * g_conic[i] * q;
    const Eigen::Matrix2d g_cov_raw = floor_covariance_backward(floored, g_cov);

    const Eigen::Matrix<double, 2, 3> m = tr.jacobian * camera.rotation;
    const Eigen::Matrix3d g_cov3d = m.transpose() * g_cov_raw * m;
    const Eigen::Matrix<double, 2, 3> g_m = 2.0 * g_cov_raw * m * tr.cov3d;
    const Eigen::Matrix<double, 2, 3> g_jac = g_m * camera.rotation.transpose();

    const double x = tr.cam_point.x();
    const double y = tr.cam_point.y();
    const double z = tr.cam_point.z();
    const double z2 = z * z;
    const double z3 = z2 * z;
    const double fx = camera.fx;
    const double fy = camera.fy;
    Eigen::Vector3d g_t = Eigen::Vector3d::Zero();
    g_t.x() += g_jac(0, 2) * (-fx / z2);
    g_t.y() += g_jac(1, 2) * (-fy / z2);
    g_t.z() += g_jac(0, 0) * (-fx / z2) + g_jac(0, 2) * (2.0 * fx * x / z3) +
               g_jac(1, 1) * (-fy / z2) + g_jac(1, 2) * (2.0 * fy * y / z3);
    g_t.x() += g_mean2d[i].x() * fx / z;
    g_t.y() += g_mean2d[i].y() * fy / z;
    g_t.z() += -g_mean2d[i].x() * fx * x / z2 - g_mean2d[i].y() * fy * y / z2;
    g_t.z() += g_depth[i];
    grads.mean(i) = camera.rotation.transpose() * g_t;

    // cov3d = L L^T with L = R diag(s).
    const Eigen::Matrix3d l = tr.rotation * tr.scale.asDiagonal();
    const Eigen::Matrix3d g_l = 2.0 * g_cov3d * l;
    Eigen::Matrix3d g_rot;
    for (int k = 0; k < 3; ++k) {
      grads.log_scale(i)[k] = g_l.col(k).dot(tr.rotation.col(k)) * tr.scale[k];
      g_rot.col(k) = g_l.col(k) * tr.scale[k];
    }
    const Eigen::Vector4d raw_q = cloud.rotation(i);
    const double qn = raw_q.norm();
    const Eigen::Vector4d unit_q = raw_q / qn;
    const auto partials = rotation_partials(unit_q);
    Eigen::Vector4d g_unit;
    for (int k = 0; k < 4; ++k) g_unit[k] = (partials[k].array() * g_rot.array()).sum();
    grads.rotation(i) = (g_unit - unit_q * unit_q.dot(g_unit)) / qn;

    grads.opacity_logit(i) = g_opacity[i] * opacity[i] * (1.0 - opacity[i]);
    for (int k = 0; k < 3; ++k) {
      grads.color_logit(i)[k] = g_color[i][k] * color[i][k] * (1.0 - color[i][k]);
    }
  }
  return grads;
}

TvLoss depth_tv_loss(const Image& depth) {
  if (depth.channels() != 1) throw DimensionError("depth TV expects a 1-channel image");
  const int w = depth.width();
  const int h = depth.height();
  TvLoss out{0.0, Image(w, h, 1)};
  const std::size_t nx = static_cast<std::size_t>(std::max(0, w - 1)) * h;
  const std::size_t ny = static_cast<std::size_t>(w) * std::max(0, h - 1);
  auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  if (nx > 0) {
    double sum = 0.0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x + 1 < w; ++x) {
        const double d = depth.at(x + 1, y) - depth.at(x, y);
        sum += std::abs(d);
        const double g = sign(d) / static_cast<double>(nx);
        out.grad.at(x + 1, y) += g;
        out.grad.at(x, y) -= g;
      }
    }
    out.value += sum / static_cast<double>(nx);
  }
  if (ny > 0) {
    double sum = 0.0;
    for (int y = 0; y + 1 < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double d = depth.at(x, y + 1) - depth.at(x, y);
        sum += std::abs(d);
        const double g = sign(d) / static_cast<double>(ny);
        out.grad.at(x, y + 1) += g;
        out.grad.at(x, y) -= g;
      }
    }
    out.value += sum / static_cast<double>(ny);
  }
  return out;
}

namespace {

// Everything that can make the loss non-differentiable under a small
// parameter change: contributor identity/order per pixel, culling and
// covariance-floor state per Gaussian.
std::vector<std::uint32_t> contributor_structure(const RenderOutput& out) {
  std::vector<std::uint32_t> sig;
  sig.reserve(out.contributions.size() + out.offsets.size() + 2 * out.snapshot.projected.size());
  sig.insert(sig.end(), out.offsets.begin(), out.offsets.end());
  for (const auto& c : out.contributions) sig.push_back(c.gaussian);
  for (const auto& p : out.snapshot.projected) {
    sig.push_back(p ? 1u + (p->floor_active[0] ? 2u : 0u) + (p->floor_active[1] ? 4u : 0u) : 0u);
  }
  return sig;
}

}  // namespace

GradientCheckReport check_gradients(const GaussianCloud& cloud, const Camera& camera,
                                    const RenderLoss& loss, const GradientCheckOptions& options) {
  const RenderOptions retain{true};
  const RenderOutput base = render(cloud, camera, retain);
  const LossEvaluation eval = loss(base);
  const GaussianCloud analytic = render_backward(base, eval.grad_color, eval.grad_depth);
  const auto base_structure = contributor_structure(base);

  GradientCheckReport report;
  GaussianCloud probe = cloud;
  for (std::size_t j = 0; j < cloud.params().size(); ++j) {
    const double original = probe.params()[j];
    probe.params()[j] = original + options.epsilon;
    const RenderOutput plus = render(probe, camera, retain);
    probe.params()[j] = original - options.epsilon;
    const RenderOutput minus = render(probe, camera, retain);
    probe.params()[j] = original;
    if (contributor_structure(plus) != base_structure ||
        contributor_structure(minus) != base_structure) {
      ++report.non_smooth;
      continue;
    }
    const double numeric = (loss(plus).value - loss(minus).value) / (2.0 * options.epsilon);
    const double a = analytic.params()[j];
    const double scale = std::max(std::abs(a), std::abs(numeric));
    const double err = std::abs(a - numeric);
    ++report.checked;
    const double rel = scale > 0.0 ? err / scale : 0.0;
    if (err > options.relative_tolerance * scale + options.absolute_tolerance) ++report.failed;
    if (err > options.absolute_tolerance && rel > report.worst_relative_error) {
      report.worst_relative_error = rel;
      report.worst_parameter = j;
    }
  }
  return report;
}

}  // namespace cleansplat
