#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cleansplat/gaussian.hpp"
#include "cleansplat/image.hpp"

namespace cleansplat {

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovarianceFloor = 0.05;  // px^2, lower bound on 2D eigenvalues
inline constexpr double kCutoffSigma = 3.0;
inline constexpr double kMinTransmittance = 1e-4;

/// Screen-space footprint of one Gaussian.
struct Projected2DGaussian {
  Eigen::Vector2d mean;
  Eigen::Matrix2d cov;    // after eigenvalue flooring
  Eigen::Matrix2d conic;  // cov^-1
  double depth = 0.0;     // camera-space z of the mean
  double radius = 0.0;    // 3-sigma extent in pixels
  int x_min = 0, y_min = 0, x_max = -1, y_max = -1;  // inclusive pixel bounds
  bool floor_active[2] = {false, false};             // eigenvalue (min, max) was clamped
};

/// Culled (nullopt) when behind the near plane or the 3-sigma footprint
/// covers no pixel of the image.
std::optional<Projected2DGaussian> project_gaussian(const GaussianCloud& cloud, std::size_t index,
                                                    const Camera& camera);

/// exp(-1/2 d^T conic d), or 0 beyond the 3-sigma cutoff.
inline double gaussian_falloff(const Projected2DGaussian& g, double px, double py) {
  const double dx = px - g.mean.x();
  const double dy = py - g.mean.y();
  const double power = -0.5 * (g.conic(0, 0) * dx * dx + g.conic(1, 1) * dy * dy) -
                       g.conic(0, 1) * dx * dy;
  if (power < -0.5 * kCutoffSigma * kCutoffSigma) return 0.0;
  return std::exp(power);
}

struct Contribution {
  std::uint32_t gaussian = 0;
  double alpha = 0.0;          // opacity * falloff
  double transmittance = 0.0;  // T before this contributor
};

struct RenderOptions {
  bool retain_contributors = false;
};

/// Per-Gaussian state captured at render time so the backward pass does not
/// need the cloud.
struct RenderSnapshot {
  Camera camera;
  GaussianCloud cloud;
  std::vector<std::optional<Projected2DGaussian>> projected;
};

struct RenderOutput {
  Image color;  // 3 channels
  Image depth;  // 1 channel, camera z
  Image alpha;  // 1 channel, 1 - final transmittance
  /// Canonical compositing order (ascending depth, ties by index).
  std::vector<std::uint32_t> order;

  bool has_contributors = false;
  std::vector<std::uint32_t> offsets;  // CSR over pixels, size pixel_count + 1
  std::vector<Contribution> contributions;
  RenderSnapshot snapshot;

  std::span<const Contribution> contributors(std::size_t pixel) const {
    return {contributions.data() + offsets[pixel], offsets[pixel + 1] - offsets[pixel]};
  }
};

/// Depth-sorted alpha compositing of color, depth and alpha on a black background.
RenderOutput render(const GaussianCloud& cloud, const Camera& camera,
                    const RenderOptions& options = {});

/// Per-pixel label of the contributor with the largest compositing weight
/// T_i * alpha_i; `background` where nothing contributes.
std::vector<std::uint16_t> render_labels(const RenderOutput& out,
                                         const std::vector<std::uint16_t>& gaussian_labels,
                                         std::uint16_t background);

class BackwardError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Gradients of a scalar loss w.r.t. all cloud parameters, given dL/dcolor
/// (3 channels) and dL/ddepth (1 channel). Empty gradient images are treated
/// as zero. Gradient layout matches GaussianCloud.
GaussianCloud render_backward(const RenderOutput& out, const Image& grad_color,
                              const Image& grad_depth);

struct TvLoss {
  double value = 0.0;
  Image grad;
};

/// mean|D(x+1,y)-D(x,y)| + mean|D(x,y+1)-D(x,y)| with sign(0) = 0.
TvLoss depth_tv_loss(const Image& depth);

/// Scalar loss evaluated on a render: value plus upstream gradients.
struct LossEvaluation {
  double value = 0.0;
  Image grad_color;
  Image grad_depth;
};
using RenderLoss = std::function<LossEvaluation(const RenderOutput&)>;

struct GradientCheckOptions {
  double epsilon = 1e-4;
  double relative_tolerance = 1e-3;
  /// Absolute slack added to the relative bound; guards values near zero.
  double absolute_tolerance = 1e-6;
};

struct GradientCheckReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  /// Parameters whose +/- epsilon renders change the contributor structure
  /// (cutoff, culling, early stop, ordering or covariance floor crossing); the
  /// loss is not differentiable there and they are not compared.
  std::size_t non_smooth = 0;
  double worst_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  bool passed() const { return failed == 0; }
};

/// Central finite-difference check of render_backward on every parameter.
GradientCheckReport check_gradients(const GaussianCloud& cloud, const Camera& camera,
                                    const RenderLoss& loss,
                                    const GradientCheckOptions& options = {});

}  // namespace cleansplat
