#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <vector>

#include "mobcast/dataio.hpp"
#include "mobcast/numcore/matrix.hpp"

namespace mobcast::graphs {

using numcore::Matrix;
using AdjacencyPtr = std::shared_ptr<const Matrix>;

// Rescales each row (destination) of a raw mobility matrix so the incoming
// weights sum to 1. Rows without incoming movement stay zero.
Matrix normalize_incoming(const Matrix& raw);

// Z = A_norm * X: row u mixes the case windows of every region sending people into u.
Matrix latent_message(const Matrix& adjacency, const Matrix& features);

// A dataset with every day's normalized graph precomputed. Immutable.
class PreparedDataset {
 public:
  explicit PreparedDataset(dataio::CountryDataset dataset);

  const dataio::CountryDataset& dataset() const noexcept { return dataset_; }
  const AdjacencyPtr& graph(std::size_t day_index) const { return graphs_.at(day_index); }
  std::size_t n_regions() const noexcept { return dataset_.n_regions(); }
  std::size_t n_days() const noexcept { return dataset_.n_days(); }

 private:
  dataio::CountryDataset dataset_;
  std::vector<AdjacencyPtr> graphs_;
};

// Read access to a prepared dataset with an optional visibility horizon.
// Days are 1-based (day 1 = first dataset day). Reading a case value or a
// graph after `visible_through` throws ProtocolViolation; every read is traced.
class DataView {
 public:
  static constexpr int kUnbounded = std::numeric_limits<int>::max();

  explicit DataView(const PreparedDataset& data, int visible_through = kUnbounded);

  std::size_t n_regions() const noexcept { return data_->n_regions(); }
  // Last day present in the underlying dataset.
  int last_day() const noexcept { return static_cast<int>(data_->n_days()); }
  int visible_through() const noexcept { return visible_through_; }

  double cases(std::size_t region, int day) const;
  const AdjacencyPtr& graph(int day) const;

  int max_day_read() const noexcept { return max_day_read_; }
  std::size_t reads() const noexcept { return reads_; }

 private:
  void touch(int day) const;

  const PreparedDataset* data_;
  int visible_through_;
  mutable int max_day_read_ = 0;
  mutable std::size_t reads_ = 0;
};

struct FeatureWindow {
  int anchor = 0;
  int length = 0;
  // n x d, row u = (c_u(t-d+1), ..., c_u(t)), oldest first.
  Matrix values;
};

// Throws WindowError when the window starts before day 1 or ends past the data.
FeatureWindow node_features(const DataView& view, int anchor, int length);

enum class Variant { Static, Sequence };

// One instance: S daily (graph, feature window) pairs ending at `anchor` and
// the case vector of day anchor + horizon. Test samples carry no target.
struct GraphSample {
  std::vector<AdjacencyPtr> graphs;
  std::vector<Matrix> features;
  Matrix target;  // n x 1, empty when !has_target
  int anchor = 0;
  int horizon = 0;
  int target_day = 0;
  bool has_target = false;

  std::size_t n_regions() const { return features.front().rows(); }
  std::size_t window() const { return features.front().cols(); }
  std::size_t steps() const { return features.size(); }
};

struct SampleSpec {
  int window = 7;      // d
  int horizon = 1;     // j
  Variant variant = Variant::Static;
  int steps = 7;       // S, used by the sequence variant
};

// First anchor with a complete input: d for static samples, d + S - 1 for sequences.
int first_anchor(const SampleSpec& spec);

GraphSample make_sample(const DataView& view, const SampleSpec& spec, int anchor, bool with_target);

// Every sample whose anchor has a full input window and whose target day is
// <= last_target_day, ordered by target day. Empty when none fit.
std::vector<GraphSample> assemble_samples(const DataView& view, const SampleSpec& spec, int last_target_day);

// The single test input anchored at T, aimed at day T + horizon; no target is read.
GraphSample make_test_sample(const DataView& view, const SampleSpec& spec, int last_observed_day);

}  // namespace mobcast::graphs
