#include "mobcast/graphs.hpp"

#include <algorithm>
#include <string>

#include "mobcast/errors.hpp"

namespace mobcast::graphs {

Matrix normalize_incoming(const Matrix& raw) {
  if (raw.rows() != raw.cols()) throw DimensionError("normalize_incoming: matrix " + raw.shape_string() + " is not square");
  Matrix out(raw.rows(), raw.cols());
  for (std::size_t u = 0; u < raw.rows(); ++u) {
    double total = 0.0;
    for (double w : raw.row(u)) {
      if (!(w >= 0.0)) throw ContractError("normalize_incoming: negative or NaN weight");
      total += w;
    }
    if (total == 0.0) continue;
    for (std::size_t v = 0; v < raw.cols(); ++v) out(u, v) = raw(u, v) / total;
  }
  return out;
}

Matrix latent_message(const Matrix& adjacency, const Matrix& features) {
  if (adjacency.rows() != adjacency.cols() || adjacency.cols() != features.rows()) {
    throw DimensionError("latent_message: incompatible shapes " + adjacency.shape_string() + " and " +
                         features.shape_string());
  }
  Matrix z(adjacency.rows(), features.cols());
  for (std::size_t u = 0; u < adjacency.rows(); ++u)
    for (std::size_t v = 0; v < adjacency.cols(); ++v) {
      const double a = adjacency(u, v);
      if (a == 0.0) continue;
      for (std::size_t c = 0; c < features.cols(); ++c) z(u, c) += a * features(v, c);
    }
  return z;
}

PreparedDataset::PreparedDataset(dataio::CountryDataset dataset) : dataset_(std::move(dataset)) {
  dataset_.validate();
  graphs_.reserve(dataset_.n_days());
  for (const Matrix& m : dataset_.mobility) graphs_.push_back(std::make_shared<const Matrix>(normalize_incoming(m)));
}

DataView::DataView(const PreparedDataset& data, int visible_through) : data_(&data), visible_through_(visible_through) {}

void DataView::touch(int day) const {
  if (day < 1 || day > last_day()) {
    throw WindowError("day " + std::to_string(day) + " outside dataset days 1.." + std::to_string(last_day()));
  }
  if (day > visible_through_) {
    throw ProtocolViolation("read of day " + std::to_string(day) + " beyond visible horizon " +
                            std::to_string(visible_through_));
  }
  ++reads_;
  max_day_read_ = std::max(max_day_read_, day);
}

double DataView::cases(std::size_t region, int day) const {
  touch(day);
  return data_->dataset().cases(region, static_cast<std::size_t>(day - 1));
}

const AdjacencyPtr& DataView::graph(int day) const {
  touch(day);
  return data_->graph(static_cast<std::size_t>(day - 1));
}

FeatureWindow node_features(const DataView& view, int anchor, int length) {
  if (length < 1) throw ContractError("node_features: window length must be >= 1");
  if (anchor - length + 1 < 1 || anchor > view.last_day()) {
    throw WindowError("node_features: window of " + std::to_string(length) + " days ending at day " +
                      std::to_string(anchor) + " does not fit days 1.." + std::to_string(view.last_day()));
  }
  FeatureWindow w{anchor, length, Matrix(view.n_regions(), static_cast<std::size_t>(length))};
  for (std::size_t u = 0; u < view.n_regions(); ++u)
    for (int k = 0; k < length; ++k) w.values(u, static_cast<std::size_t>(k)) = view.cases(u, anchor - length + 1 + k);
  return w;
}

int first_anchor(const SampleSpec& spec) {
  return spec.variant == Variant::Static ? spec.window : spec.window + spec.steps - 1;
}

GraphSample make_sample(const DataView& view, const SampleSpec& spec, int anchor, bool with_target) {
  if (spec.horizon < 1) throw ContractError("make_sample: horizon must be >= 1");
  const int steps = spec.variant == Variant::Static ? 1 : spec.steps;
  if (steps < 1) throw ContractError("make_sample: sequence length must be >= 1");
  GraphSample s;
  s.anchor = anchor;
  s.horizon = spec.horizon;
  s.target_day = anchor + spec.horizon;
  for (int day = anchor - steps + 1; day <= anchor; ++day) {
    s.features.push_back(node_features(view, day, spec.window).values);
    s.graphs.push_back(view.graph(day));
  }
  if (with_target) {
    s.target = Matrix(view.n_regions(), 1);
    for (std::size_t u = 0; u < view.n_regions(); ++u) s.target(u, 0) = view.cases(u, s.target_day);
    s.has_target = true;
  }
  return s;
}

std::vector<GraphSample> assemble_samples(const DataView& view, const SampleSpec& spec, int last_target_day) {
  if (spec.horizon < 1) throw ContractError("assemble_samples: horizon must be >= 1");
  std::vector<GraphSample> out;
  const int last = std::min(last_target_day, view.last_day());
  for (int anchor = first_anchor(spec); anchor + spec.horizon <= last; ++anchor) {
    out.push_back(make_sample(view, spec, anchor, true));
  }
  return out;
}

GraphSample make_test_sample(const DataView& view, const SampleSpec& spec, int last_observed_day) {
  return make_sample(view, spec, last_observed_day, false);
}

}  // namespace mobcast::graphs
