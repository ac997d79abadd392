#include "mobcast/numcore/params.hpp"

#include <cmath>

#include "mobcast/errors.hpp"

namespace mobcast::numcore {

std::size_t ParamStore::add(std::string name, Matrix value, bool trainable) {
  if (find(name)) throw ContractError("ParamStore: duplicate tensor name '" + name + "'");
  entries_.push_back(NamedTensor{std::move(name), std::move(value), trainable});
  return entries_.size() - 1;
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  return std::nullopt;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  if (auto i = find(name)) return *i;
  throw ContractError("ParamStore: no tensor named '" + name + "'");
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.value.size();
  return n;
}

std::vector<double> ParamStore::flatten() const {
  std::vector<double> flat;
  flat.reserve(trainable_count());
  for (const auto& e : entries_)
    if (e.trainable) flat.insert(flat.end(), e.value.data().begin(), e.value.data().end());
  return flat;
}

void ParamStore::restore(std::span<const double> flat) {
  if (flat.size() != trainable_count()) {
    throw DimensionError("ParamStore::restore: expected " + std::to_string(trainable_count()) +
                         " values, got " + std::to_string(flat.size()));
  }
  std::size_t k = 0;
  for (auto& e : entries_) {
    if (!e.trainable) continue;
    for (double& v : e.value.data()) v = flat[k++];
  }
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.trainable != b.trainable || !a.value.same_shape(b.value)) return false;
  }
  return true;
}

std::vector<Var> bind(Tape& tape, const ParamStore& store) {
  std::vector<Var> vars;
  vars.reserve(store.size());
  for (const auto& e : store.entries()) vars.push_back(e.trainable ? tape.leaf(e.value) : tape.constant(e.value));
  return vars;
}

Gradients collect_gradients(const Tape& tape, const ParamStore& store, std::span<const Var> bound) {
  if (bound.size() != store.size()) throw ContractError("collect_gradients: binding does not match store");
  Gradients grads(store.size());
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store.entry(i).trainable) grads[i] = tape.grad(bound[i]);
  return grads;
}

double gradient_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& g : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace mobcast::numcore
