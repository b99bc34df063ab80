#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cleansplat {

/// Adam with a learning rate per parameter element.
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() = default;
  Adam(std::vector<double> learning_rates, Options options);

  void step(std::span<double> params, std::span<const double> grads);
  /// Clears both moments of the selected elements.
  void zero_moments(std::size_t offset, std::size_t stride, std::size_t count);

  std::size_t steps() const { return steps_; }
  std::size_t size() const { return lr_.size(); }

 private:
  std::vector<double> lr_;
  Options options_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t steps_ = 0;
};

}  // namespace cleansplat
