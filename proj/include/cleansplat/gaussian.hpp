#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

namespace cleansplat {

/// Flat parameter storage for a set of anisotropic Gaussians. Each Gaussian
/// owns kStride consecutive values:
///   [0,3)   mean (world)
///   [3,6)   log-scale
///   [6,10)  rotation quaternion (w, x, y, z)
///   [10]    opacity logit (opacity = sigmoid)
///   [11,14) color logits (rgb = sigmoid)
/// The same layout is used for gradients.
class GaussianCloud {
 public:
  static constexpr std::size_t kStride = 14;
  static constexpr std::size_t kMean = 0;
  static constexpr std::size_t kLogScale = 3;
  static constexpr std::size_t kRotation = 6;
  static constexpr std::size_t kOpacity = 10;
  static constexpr std::size_t kColor = 11;

  GaussianCloud() = default;
  explicit GaussianCloud(std::size_t count) : params_(count * kStride, 0.0) {}

  std::size_t size() const { return params_.size() / kStride; }
  bool empty() const { return params_.empty(); }

  void add(const Eigen::Vector3d& mean, const Eigen::Vector3d& log_scale,
           const Eigen::Quaterniond& rotation, double opacity_logit,
           const Eigen::Vector3d& color_logit);

  Eigen::Map<Eigen::Vector3d> mean(std::size_t i) { return vec3(i, kMean); }
  Eigen::Map<const Eigen::Vector3d> mean(std::size_t i) const { return vec3(i, kMean); }
  Eigen::Map<Eigen::Vector3d> log_scale(std::size_t i) { return vec3(i, kLogScale); }
  Eigen::Map<const Eigen::Vector3d> log_scale(std::size_t i) const { return vec3(i, kLogScale); }
  Eigen::Map<Eigen::Vector4d> rotation(std::size_t i) {
    return Eigen::Map<Eigen::Vector4d>(&params_[i * kStride + kRotation]);
  }
  Eigen::Map<const Eigen::Vector4d> rotation(std::size_t i) const {
    return Eigen::Map<const Eigen::Vector4d>(&params_[i * kStride + kRotation]);
  }
  double& opacity_logit(std::size_t i) { return params_[i * kStride + kOpacity]; }
  double opacity_logit(std::size_t i) const { return params_[i * kStride + kOpacity]; }
  Eigen::Map<Eigen::Vector3d> color_logit(std::size_t i) { return vec3(i, kColor); }
  Eigen::Map<const Eigen::Vector3d> color_logit(std::size_t i) const { return vec3(i, kColor); }

  double opacity(std::size_t i) const;
  Eigen::Vector3d color(std::size_t i) const;
  Eigen::Vector3d scale(std::size_t i) const { return log_scale(i).array().exp(); }
  /// Rotation matrix of the normalized quaternion.
  Eigen::Matrix3d rotation_matrix(std::size_t i) const;
  /// R diag(scale^2) R^T.
  Eigen::Matrix3d covariance(std::size_t i) const;

  void normalize_rotations();

  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  /// Appends all Gaussians of `other`.
  void append(const GaussianCloud& other);

  bool operator==(const GaussianCloud&) const = default;

 private:
  Eigen::Map<Eigen::Vector3d> vec3(std::size_t i, std::size_t off) {
    return Eigen::Map<Eigen::Vector3d>(&params_[i * kStride + off]);
  }
  Eigen::Map<const Eigen::Vector3d> vec3(std::size_t i, std::size_t off) const {
    return Eigen::Map<const Eigen::Vector3d>(&params_[i * kStride + off]);
  }

  std::vector<double> params_;
};

/// Pinhole camera; `rotation`/`translation` map world points into camera
/// space (x right, y down, z forward). Pixel (x, y) samples image-plane
/// coordinate (x, y).
struct Camera {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
    return rotation * world + translation;
  }
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
  /// Throws if the rotation is not orthonormal or intrinsics are invalid.
  void validate() const;
};

double sigmoid(double x);
double logit(double p);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Little-endian checkpoint: "GSCK", u32 version (1), u32 count, then 14
/// float32 values per Gaussian in the parameter layout above.
void write_checkpoint(const std::filesystem::path& path, const GaussianCloud& cloud);
GaussianCloud read_checkpoint(const std::filesystem::path& path);

}  // namespace cleansplat
