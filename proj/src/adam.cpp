#include "cleansplat/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace cleansplat {

Adam::Adam(std::vector<double> learning_rates, Options options)
    : lr_(std::move(learning_rates)),
      options_(options),
      m_(lr_.size(), 0.0),
      v_(lr_.size(), 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != lr_.size() || grads.size() != lr_.size()) {
    throw std::invalid_argument("Adam parameter size mismatch");
  }
  ++steps_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= lr_[i] * m_hat / (std::sqrt(v_hat) + options_.epsilon);
  }
}

void Adam::zero_moments(std::size_t offset, std::size_t stride, std::size_t count) {
  for (std::size_t i = offset; i < m_.size(); i += stride) {
    for (std::size_t k = 0; k < count && i + k < m_.size(); ++k) {
      m_[i + k] = 0.0;
      v_[i + k] = 0.0;
    }
  }
}

}  // namespace cleansplat
