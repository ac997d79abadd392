#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "mobcast/numcore/matrix.hpp"

namespace mobcast::numcore {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid until Tape::reset().
class Var {
 public:
  Var() = default;

  std::size_t id() const noexcept { return id_; }
  Tape* tape() const noexcept { return tape_; }
  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) noexcept : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Linear record of primitive operations for reverse-mode differentiation.
// Insertion order is a topological order: every input precedes its consumers.
// Single writer; concurrent jobs each own their own Tape.
class Tape {
 public:
  // Called during backward() with the node's own id; must accumulate into the
  // gradients of whichever inputs require them.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable leaf (a parameter).
  Var leaf(Matrix value);
  // Leaf excluded from differentiation (data, masks, frozen statistics).
  Var constant(Matrix value);
  // Record an op output. Gradient flows only if some input requires it.
  Var record(const char* op, Matrix value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(const char* op, Matrix value, const std::vector<Var>& inputs, BackwardFn backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  // Gradient of the last backward() root w.r.t. node id. Nodes that received
  // no gradient report zeros of the node's shape.
  Matrix grad(std::size_t id) const;
  Matrix grad(Var v) const { return grad(v.id()); }
  // Mutable gradient buffer, zero-initialized on first access. For use inside BackwardFn.
  Matrix& grad_buffer(std::size_t id);

  // Reverse sweep from a 1x1 root. Throws ContractError for non-scalar roots.
  void backward(Var root);
  void reset() noexcept { nodes_.clear(); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    const char* op;
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  Var push(Node node);

  // deque keeps references returned by value() stable across push_back.
  std::deque<Node> nodes_;
};

}  // namespace mobcast::numcore
