#include "mobcast/numcore/layers.hpp"

#include <cmath>

#include "mobcast/errors.hpp"

namespace mobcast::numcore {

Matrix glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) throw ContractError("glorot_init: fan_in and fan_out must be >= 1");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (double& v : w.data()) v = rng.uniform(-bound, bound);
  return w;
}

RunningStats RunningStats::fresh(std::size_t cols) { return RunningStats{Matrix(1, cols, 0.0), Matrix(1, cols, 1.0)}; }

Var batchnorm_apply(Var x, Var gamma, Var beta, RunningStats& running, Mode mode) {
  if (mode == Mode::Eval) {
    return batchnorm_eval(x, gamma, beta, running.mean, running.variance, RunningStats::eps);
  }
  BatchStats batch;
  Var out = batchnorm_train(x, gamma, beta, RunningStats::eps, &batch);
  if (!running.mean.same_shape(batch.mean)) running = RunningStats::fresh(batch.mean.cols());
  const double n = static_cast<double>(x.rows());
  const double m = RunningStats::momentum;
  const double unbias = n > 1.0 ? n / (n - 1.0) : 1.0;
  for (std::size_t c = 0; c < batch.mean.cols(); ++c) {
    running.mean(0, c) = (1.0 - m) * running.mean(0, c) + m * batch.mean(0, c);
    running.variance(0, c) = (1.0 - m) * running.variance(0, c) + m * batch.variance(0, c) * unbias;
  }
  return out;
}

}  // namespace mobcast::numcore
