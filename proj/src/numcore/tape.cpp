#include "mobcast/numcore/tape.hpp"

#include "mobcast/errors.hpp"

namespace mobcast::numcore {

const Matrix& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Matrix value) {
  return push(Node{"leaf", std::move(value), {}, {}, {}, true});
}

Var Tape::constant(Matrix value) {
  return push(Node{"constant", std::move(value), {}, {}, {}, false});
}

Var Tape::record(const char* op, Matrix value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(const char* op, Matrix value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node node{op, std::move(value), {}, {}, {}, false};
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (in.tape() != this) throw ContractError(std::string(op) + ": input belongs to a different tape");
    node.inputs.push_back(in.id());
    node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

Matrix Tape::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw ContractError("backward: root belongs to a different tape");
  const Matrix& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw ContractError("backward: root must be scalar, got " + rv.shape_string());
  }
  for (Node& n : nodes_) n.grad = Matrix();
  grad_buffer(root.id())(0, 0) = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
}

}  // namespace mobcast::numcore
