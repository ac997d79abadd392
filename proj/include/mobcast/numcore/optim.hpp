#pragma once

#include <cstdint>

#include "mobcast/numcore/params.hpp"

namespace mobcast::numcore {

// Bias-corrected Adam with fixed beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

  Gradients first_moment;
  Gradients second_moment;
  std::int64_t step = 0;
};

AdamState make_adam_state(const ParamStore& params);

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr);

// theta <- theta - lr * g on every trainable tensor.
void sgd_step(ParamStore& params, const Gradients& grads, double lr);

}  // namespace mobcast::numcore
