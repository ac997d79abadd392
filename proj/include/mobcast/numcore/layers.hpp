#pragma once

#include <cstddef>

#include "mobcast/numcore/matrix.hpp"
#include "mobcast/numcore/ops.hpp"
#include "mobcast/numcore/rng.hpp"

namespace mobcast::numcore {

// fan_in x fan_out matrix, entries uniform in +-sqrt(6 / (fan_in + fan_out)).
Matrix glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct RunningStats {
  static constexpr double momentum = 0.1;
  static constexpr double eps = 1e-5;

  Matrix mean;      // 1 x c, starts at 0
  Matrix variance;  // 1 x c, starts at 1

  static RunningStats fresh(std::size_t cols);
};

// Batch normalization over the rows of x. Train mode normalizes with the
// batch statistics and folds them into running (unbiased variance, momentum
// 0.1); eval mode uses running as-is.
Var batchnorm_apply(Var x, Var gamma, Var beta, RunningStats& running, Mode mode);

inline Var dropout_apply(Var x, double p, Rng& rng, Mode mode) { return dropout(x, p, rng, mode); }

}  // namespace mobcast::numcore
