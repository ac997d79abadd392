#include "mobcast/numcore/optim.hpp"

#include <cmath>
#include <string>

#include "mobcast/errors.hpp"

namespace mobcast::numcore {

namespace {

void check_grads(const char* op, const ParamStore& params, const Gradients& grads) {
  if (grads.size() != params.size()) {
    throw DimensionError(std::string(op) + ": " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " tensors");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.entry(i).trainable) continue;
    if (!grads[i].same_shape(params.value(i))) {
      throw DimensionError(std::string(op) + ": gradient " + grads[i].shape_string() + " for '" +
                           params.entry(i).name + "' " + params.value(i).shape_string());
    }
  }
}

}  // namespace

AdamState make_adam_state(const ParamStore& params) {
  AdamState s;
  for (const auto& e : params.entries()) {
    s.first_moment.emplace_back(e.value.rows(), e.value.cols());
    s.second_moment.emplace_back(e.value.rows(), e.value.cols());
  }
  return s;
}

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ContractError("adam_step: lr must be positive");
  check_grads("adam_step", params, grads);
  if (state.first_moment.size() != params.size()) state = make_adam_state(params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::beta1, t);
  const double c2 = 1.0 - std::pow(AdamState::beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.entry(i).trainable) continue;
    auto p = params.value(i).data();
    auto g = grads[i].data();
    auto m = state.first_moment[i].data();
    auto v = state.second_moment[i].data();
    if (m.size() != p.size()) throw DimensionError("adam_step: moment shape mismatch for '" + params.entry(i).name + "'");
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = AdamState::beta1 * m[k] + (1.0 - AdamState::beta1) * g[k];
      v[k] = AdamState::beta2 * v[k] + (1.0 - AdamState::beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + AdamState::eps);
    }
  }
}

void sgd_step(ParamStore& params, const Gradients& grads, double lr) {
  if (!(lr >= 0.0)) throw ContractError("sgd_step: lr must be nonnegative");
  check_grads("sgd_step", params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.entry(i).trainable) continue;
    auto p = params.value(i).data();
    auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
}

}  // namespace mobcast::numcore
