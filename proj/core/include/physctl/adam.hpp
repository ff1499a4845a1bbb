#pragma once

#include <cstdint>

#include "physctl/tensor.hpp"

namespace physctl {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::uint64_t step_count = 0;
  Tensor first_moment;
  Tensor second_moment;

  AdamState() = default;
  explicit AdamState(const Shape& shape) : first_moment(shape), second_moment(shape) {}
};

// Bias-corrected Adam update of `param` in place.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config);

}  // namespace physctl
