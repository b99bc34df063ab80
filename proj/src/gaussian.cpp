#include "cleansplat/gaussian.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "cleansplat/binio.hpp"

namespace cleansplat {

namespace {
constexpr char kCheckpointMagic[4] = {'G', 'S', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

void GaussianCloud::add(const Eigen::Vector3d& mean, const Eigen::Vector3d& log_scale,
                        const Eigen::Quaterniond& rotation, double opacity_logit,
                        const Eigen::Vector3d& color_logit) {
  const Eigen::Quaterniond q = rotation.normalized();
  const double values[kStride] = {mean.x(),        mean.y(),        mean.z(),
                                  log_scale.x(),   log_scale.y(),   log_scale.z(),
                                  q.w(),           q.x(),           q.y(),
                                  q.z(),           opacity_logit,   color_logit.x(),
                                  color_logit.y(), color_logit.z()};
  params_.insert(params_.end(), std::begin(values), std::end(values));
}

double GaussianCloud::opacity(std::size_t i) const { return sigmoid(opacity_logit(i)); }

Eigen::Vector3d GaussianCloud::color(std::size_t i) const {
  const auto c = color_logit(i);
  return {sigmoid(c.x()), sigmoid(c.y()), sigmoid(c.z())};
}

Eigen::Matrix3d GaussianCloud::rotation_matrix(std::size_t i) const {
  const Eigen::Vector4d q = rotation(i).normalized();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

Eigen::Matrix3d GaussianCloud::covariance(std::size_t i) const {
  const Eigen::Matrix3d r = rotation_matrix(i);
  const Eigen::Vector3d s = scale(i);
  return r * s.array().square().matrix().asDiagonal() * r.transpose();
}

void GaussianCloud::normalize_rotations() {
  for (std::size_t i = 0; i < size(); ++i) {
    auto q = rotation(i);
    const double n = q.norm();
    if (n > 0.0) {
      q /= n;
    } else {
      q << 1.0, 0.0, 0.0, 0.0;
    }
  }
}

void GaussianCloud::append(const GaussianCloud& other) {
  params_.insert(params_.end(), other.params_.begin(), other.params_.end());
}

void Camera::validate() const {
  const double err = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).norm();
  if (err > 1e-6) throw std::invalid_argument("camera rotation is not orthonormal");
  if (!(fx > 0.0 && fy > 0.0)) throw std::invalid_argument("focal lengths must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("camera image size must be positive");
}

void write_checkpoint(const std::filesystem::path& path, const GaussianCloud& cloud) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(kCheckpointMagic, 4);
  binio::put_u32(out, kCheckpointVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  for (double v : cloud.params()) binio::put_f32(out, static_cast<float>(v));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

GaussianCloud read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw CheckpointError("bad checkpoint magic in " + path.string());
  }
  std::uint32_t version = 0;
  std::uint32_t count = 0;
  if (!binio::get_u32(in, version) || !binio::get_u32(in, count)) {
    throw CheckpointError("truncated checkpoint header in " + path.string());
  }
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  GaussianCloud cloud(count);
  for (double& v : cloud.params()) {
    float f = 0.0f;
    if (!binio::get_f32(in, f)) throw CheckpointError("truncated checkpoint " + path.string());
    v = f;
  }
  return cloud;
}

}  // namespace cleansplat
