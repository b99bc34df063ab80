#pragma once

// Random small scenes shared by the renderer tests and the acceptance suite.

#include <random>

#include "cleansplat/gaussian.hpp"
#include "cleansplat/image.hpp"

namespace fixtures {

inline cleansplat::Camera square_camera(int size) {
  cleansplat::Camera cam;
  cam.fx = cam.fy = static_cast<double>(size);
  cam.cx = cam.cy = 0.5 * (size - 1);
  cam.width = cam.height = size;
  return cam;
}

inline Eigen::Quaterniond random_rotation(std::mt19937& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized();
}

/// Gaussians in front of an identity camera, spread over the view.
inline cleansplat::GaussianCloud random_cloud(std::mt19937& rng, int count) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  cleansplat::GaussianCloud cloud;
  for (int i = 0; i < count; ++i) {
    const double z = 2.0 + 2.0 * u(rng);
    const Eigen::Vector3d mean((u(rng) - 0.5) * 0.7 * z, (u(rng) - 0.5) * 0.7 * z, z);
    const Eigen::Vector3d log_scale(std::log(0.06 + 0.2 * u(rng)), std::log(0.06 + 0.2 * u(rng)),
                                    std::log(0.06 + 0.2 * u(rng)));
    cloud.add(mean, log_scale, random_rotation(rng), -1.0 + 3.0 * u(rng),
              Eigen::Vector3d(n(rng), n(rng), n(rng)));
  }
  return cloud;
}

inline cleansplat::Image random_image(std::mt19937& rng, int w, int h, int c, double lo = 0.0,
                                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  cleansplat::Image img(w, h, c);
  for (double& v : img.data()) v = u(rng);
  return img;
}

}  // namespace fixtures
