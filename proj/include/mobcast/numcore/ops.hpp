#pragma once

#include <memory>
#include <span>
#include <vector>

#include "mobcast/numcore/matrix.hpp"
#include "mobcast/numcore/rng.hpp"
#include "mobcast/numcore/tape.hpp"

namespace mobcast::numcore {

enum class Mode { Train, Eval };

// Primitive differentiable operations. Each records one Tape node whose
// backward closure caches whatever partials it needs. Shape mismatches throw
// DimensionError naming the op and both shapes.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
// a + bias, with bias a 1 x cols(a) row broadcast over every row of a.
Var add_row(Var a, Var bias);
Var sub(Var a, Var b);
// Elementwise (Hadamard) product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
Var square(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
// rows x 1 column of row sums.
Var row_sum(Var a);
// 1x1 mean over every entry.
Var mean(Var a);

// Per-graph propagation over a vertically stacked batch: consecutive row
// groups of h, sized by each block, are multiplied by blocks[b]. Graphs may
// differ in size. The blocks are data and receive no gradient. Equivalent to
// blockdiag(blocks) * h.
Var block_matmul(std::span<const std::shared_ptr<const Matrix>> blocks, Var h);

// mean((pred - target)^2) over all entries.
Var mse(Var pred, Var target);

struct BatchStats {
  Matrix mean;      // 1 x c
  Matrix variance;  // 1 x c, biased (divides by rows)
};

// Train-mode batch normalization over rows: y = gamma * (x - mu) / sqrt(var + eps) + beta.
// gamma and beta are 1 x c. Batch statistics are written to *stats when non-null.
Var batchnorm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats = nullptr);
// Eval-mode batch normalization with fixed statistics (constants, no gradient).
Var batchnorm_eval(Var x, Var gamma, Var beta, const Matrix& mean, const Matrix& variance, double eps);

// Multiply by a 0/1 mask scaled by 1/(1-p). Identity in eval mode or when p == 0.
Var dropout(Var x, double p, Rng& rng, Mode mode);

}  // namespace mobcast::numcore
