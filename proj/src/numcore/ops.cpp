#include "mobcast/numcore/ops.hpp"

#include <cmath>
#include <string>

#include "eigen_view.hpp"
#include "mobcast/errors.hpp"

namespace mobcast::numcore {

using detail::view;

namespace {

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                       b.shape_string());
}

void require_same_shape(const char* op, Var a, Var b) {
  if (!a.value().same_shape(b.value())) shape_error(op, a.value(), b.value());
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <class F, class D>
Var unary(const char* op, Var a, F f, D dfdx) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = f(x.data()[i]);
  const std::size_t in = a.id();
  return a.tape()->record(op, std::move(y), {a}, [in, dfdx](Tape& t, std::size_t self) {
    if (!t.requires_grad(in)) return;
    const Matrix& x = t.value(in);
    const Matrix& y = t.value(self);
    const Matrix& g = t.grad_buffer(self);
    Matrix& gx = t.grad_buffer(in);
    for (std::size_t i = 0; i < x.size(); ++i) gx.data()[i] += g.data()[i] * dfdx(x.data()[i], y.data()[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Matrix out(av.rows(), bv.cols());
  view(out).noalias() = view(av) * view(bv);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("matmul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) view(t.grad_buffer(ia)).noalias() += view(g) * view(t.value(ib)).transpose();
    if (t.requires_grad(ib)) view(t.grad_buffer(ib)).noalias() += view(t.value(ia)).transpose() * view(g);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Matrix out = a.value();
  view(out) += view(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) view(t.grad_buffer(ia)) += view(g);
    if (t.requires_grad(ib)) view(t.grad_buffer(ib)) += view(g);
  });
}

Var add_row(Var a, Var bias) {
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) shape_error("add_row", av, bv);
  Matrix out = av;
  view(out).rowwise() += view(bv).row(0);
  const std::size_t ia = a.id(), ib = bias.id();
  return a.tape()->record("add_row", std::move(out), {a, bias}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) view(t.grad_buffer(ia)) += view(g);
    if (t.requires_grad(ib)) view(t.grad_buffer(ib)) += view(g).colwise().sum();
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  Matrix out = a.value();
  view(out) -= view(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("sub", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) view(t.grad_buffer(ia)) += view(g);
    if (t.requires_grad(ib)) view(t.grad_buffer(ib)) -= view(g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Matrix out = a.value();
  view(out).array() *= view(b.value()).array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_buffer(self);
    if (t.requires_grad(ia)) view(t.grad_buffer(ia)).array() += view(g).array() * view(t.value(ib)).array();
    if (t.requires_grad(ib)) view(t.grad_buffer(ib)).array() += view(g).array() * view(t.value(ia)).array();
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  view(out) *= s;
  const std::size_t ia = a.id();
  return a.tape()->record("scale", std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    if (t.requires_grad(ia)) view(t.grad_buffer(ia)) += s * view(t.grad_buffer(self));
  });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var square(Var a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    view(out).middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(p.cols())) =
        view(p.value());
    ids.push_back(p.id());
    offsets.push_back(offset);
    offset += p.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape()->record(
      "concat_cols", std::move(out), inputs, [ids, offsets](Tape& t, std::size_t self) {
        const Matrix& g = t.grad_buffer(self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (!t.requires_grad(ids[k])) continue;
          Matrix& gi = t.grad_buffer(ids[k]);
          view(gi) += view(g).middleCols(static_cast<Eigen::Index>(offsets[k]),
                                         static_cast<Eigen::Index>(gi.cols()));
        }
      });
}

Var row_sum(Var a) {
  Matrix out(a.rows(), 1);
  view(out) = view(a.value()).rowwise().sum();
  const std::size_t ia = a.id();
  return a.tape()->record("row_sum", std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const Matrix& g = t.grad_buffer(self);
    view(t.grad_buffer(ia)).colwise() += view(g).col(0);
  });
}

Var mean(Var a) {
  const Matrix& av = a.value();
  if (av.empty()) throw ContractError("mean: empty input");
  const double n = static_cast<double>(av.size());
  Matrix out(1, 1, av.sum() / n);
  const std::size_t ia = a.id();
  return a.tape()->record("mean", std::move(out), {a}, [ia, n](Tape& t, std::size_t self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.grad_buffer(self)(0, 0) / n;
    view(t.grad_buffer(ia)).array() += g;
  });
}

Var block_matmul(std::span<const std::shared_ptr<const Matrix>> blocks, Var h) {
  const Matrix& hv = h.value();
  std::size_t total = 0;
  for (const auto& b : blocks) {
    if (b->rows() != b->cols()) shape_error("block_matmul", *b, hv);
    total += b->rows();
  }
  if (total != hv.rows()) {
    throw DimensionError("block_matmul: blocks cover " + std::to_string(total) + " rows but h is " +
                         hv.shape_string());
  }
  Matrix out(hv.rows(), hv.cols());
  std::size_t r0 = 0;
  const auto hview = view(hv);
  auto oview = view(out);
  for (const auto& b : blocks) {
    const auto n = static_cast<Eigen::Index>(b->rows());
    const auto r = static_cast<Eigen::Index>(r0);
    oview.middleRows(r, n).noalias() = view(*b) * hview.middleRows(r, n);
    r0 += b->rows();
  }
  std::vector<std::shared_ptr<const Matrix>> held(blocks.begin(), blocks.end());
  const std::size_t ih = h.id();
  return h.tape()->record("block_matmul", std::move(out), {h},
                          [ih, held = std::move(held)](Tape& t, std::size_t self) {
                            if (!t.requires_grad(ih)) return;
                            const auto g = view(t.grad_buffer(self));
                            auto gh = view(t.grad_buffer(ih));
                            Eigen::Index r = 0;
                            for (const auto& b : held) {
                              const auto n = static_cast<Eigen::Index>(b->rows());
                              gh.middleRows(r, n).noalias() += view(*b).transpose() * g.middleRows(r, n);
                              r += n;
                            }
                          });
}

Var mse(Var pred, Var target) { return mean(square(sub(pred, target))); }

Var batchnorm_train(Var x, Var gamma, Var beta, double eps, BatchStats* stats) {
  const Matrix& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols) shape_error("batchnorm", xv, gamma.value());
  if (!gamma.value().same_shape(beta.value())) shape_error("batchnorm", gamma.value(), beta.value());
  if (rows < 2) {
    throw ContractError("batchnorm: train mode needs at least 2 rows, got " + std::to_string(rows));
  }
  const auto xe = view(xv);
  Matrix mu(1, cols), var(1, cols), inv(1, cols);
  view(mu) = xe.colwise().mean();
  Matrix xhat(rows, cols);
  view(xhat) = xe.rowwise() - view(mu).row(0);
  view(var) = view(xhat).array().square().colwise().mean().matrix();
  for (std::size_t c = 0; c < cols; ++c) inv(0, c) = 1.0 / std::sqrt(var(0, c) + eps);
  view(xhat).array().rowwise() *= view(inv).row(0).array();
  Matrix out(rows, cols);
  view(out) = (view(xhat).array().rowwise() * view(gamma.value()).row(0).array()).matrix();
  view(out).rowwise() += view(beta.value()).row(0);
  if (stats != nullptr) *stats = BatchStats{mu, var};

  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->record(
      "batchnorm_train", std::move(out), {x, gamma, beta},
      [ix, ig, ib, xhat = std::move(xhat), inv = std::move(inv)](Tape& t, std::size_t self) {
        const auto g = view(t.grad_buffer(self));
        const auto xh = view(xhat);
        if (t.requires_grad(ib)) view(t.grad_buffer(ib)) += g.colwise().sum();
        if (t.requires_grad(ig)) view(t.grad_buffer(ig)) += (g.array() * xh.array()).colwise().sum().matrix();
        if (t.requires_grad(ix)) {
          const double n = static_cast<double>(xh.rows());
          const auto sum_g = g.colwise().sum().eval();
          const auto sum_gx = (g.array() * xh.array()).colwise().sum().eval();
          const auto scale_row = (view(t.value(ig)).row(0).array() * view(inv).row(0).array() / n).eval();
          auto gx = view(t.grad_buffer(ix));
          for (Eigen::Index r = 0; r < xh.rows(); ++r) {
            gx.row(r).array() += scale_row * (n * g.row(r).array() - sum_g.array() - xh.row(r).array() * sum_gx);
          }
        }
      });
}

Var batchnorm_eval(Var x, Var gamma, Var beta, const Matrix& mean, const Matrix& variance, double eps) {
  const Matrix& xv = x.value();
  const std::size_t cols = xv.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols) shape_error("batchnorm", xv, gamma.value());
  if (!mean.same_shape(gamma.value()) || !variance.same_shape(gamma.value())) {
    shape_error("batchnorm", mean, variance);
  }
  // y = x * a + c with a = gamma / sqrt(var + eps), c = beta - mean * a.
  Matrix a(1, cols), c(1, cols);
  for (std::size_t k = 0; k < cols; ++k) {
    a(0, k) = gamma.value()(0, k) / std::sqrt(variance(0, k) + eps);
    c(0, k) = beta.value()(0, k) - mean(0, k) * a(0, k);
  }
  Matrix xhat(xv.rows(), cols);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t k = 0; k < cols; ++k) xhat(r, k) = (xv(r, k) - mean(0, k)) / std::sqrt(variance(0, k) + eps);
  Matrix out(xv.rows(), cols);
  view(out) = (view(xv).array().rowwise() * view(a).row(0).array()).matrix();
  view(out).rowwise() += view(c).row(0);
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape()->record(
      "batchnorm_eval", std::move(out), {x, gamma, beta},
      [ix, ig, ib, a = std::move(a), xhat = std::move(xhat)](Tape& t, std::size_t self) {
        const auto g = view(t.grad_buffer(self));
        if (t.requires_grad(ix)) view(t.grad_buffer(ix)) += (g.array().rowwise() * view(a).row(0).array()).matrix();
        if (t.requires_grad(ig)) view(t.grad_buffer(ig)) += (g.array() * view(xhat).array()).colwise().sum().matrix();
        if (t.requires_grad(ib)) view(t.grad_buffer(ib)) += g.colwise().sum();
      });
}

Var dropout(Var x, double p, Rng& rng, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: p must lie in [0, 1), got " + std::to_string(p));
  if (mode == Mode::Eval || p == 0.0) return x;
  const Matrix& xv = x.value();
  const double keep_scale = 1.0 / (1.0 - p);
  Matrix mask(xv.rows(), xv.cols());
  for (double& m : mask.data()) m = rng.uniform() < p ? 0.0 : keep_scale;
  Matrix out = xv;
  view(out).array() *= view(mask).array();
  const std::size_t ix = x.id();
  return x.tape()->record("dropout", std::move(out), {x}, [ix, mask = std::move(mask)](Tape& t, std::size_t self) {
    if (t.requires_grad(ix)) view(t.grad_buffer(ix)).array() += view(t.grad_buffer(self)).array() * view(mask).array();
  });
}

}  // namespace mobcast::numcore
