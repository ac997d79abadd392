#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobcast/numcore/matrix.hpp"
#include "mobcast/numcore/tape.hpp"

namespace mobcast::numcore {

struct NamedTensor {
  std::string name;
  Matrix value;
  // Buffers (e.g. batchnorm running statistics) are persisted but never differentiated.
  bool trainable = true;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Flat, ordered registry of every tensor a model owns. Each name appears once.
class ParamStore {
 public:
  std::size_t add(std::string name, Matrix value, bool trainable = true);

  std::size_t size() const noexcept { return entries_.size(); }
  const NamedTensor& entry(std::size_t i) const { return entries_.at(i); }
  Matrix& value(std::size_t i) { return entries_.at(i).value; }
  const Matrix& value(std::size_t i) const { return entries_.at(i).value; }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;
  const std::vector<NamedTensor>& entries() const noexcept { return entries_; }

  // Number of trainable scalars.
  std::size_t trainable_count() const;
  // Trainable values concatenated in registry order.
  std::vector<double> flatten() const;
  // Inverse of flatten(); throws DimensionError on length mismatch.
  void restore(std::span<const double> flat);
  // True when names, shapes and trainable flags agree.
  bool same_layout(const ParamStore& other) const;

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<NamedTensor> entries_;
};

// Gradients aligned with a ParamStore; buffers carry empty matrices.
using Gradients = std::vector<Matrix>;

// Places every tensor of a store on a tape: trainable ones as leaves, buffers as constants.
std::vector<Var> bind(Tape& tape, const ParamStore& store);
// Reads the gradient of each trainable leaf after Tape::backward().
Gradients collect_gradients(const Tape& tape, const ParamStore& store, std::span<const Var> bound);

double gradient_norm(const Gradients& grads);

}  // namespace mobcast::numcore
