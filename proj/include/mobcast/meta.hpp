#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mobcast/graphs.hpp"
#include "mobcast/models.hpp"
#include "mobcast/train.hpp"

namespace mobcast::meta {

using models::Model;
using numcore::Matrix;
using numcore::ParamStore;

// One meta-learning task: train on every valid sample with target <= i, test
// on the single sample whose target is day i + j.
struct TaskSplit {
  int i = 0;
  int j = 0;
  std::vector<int> train_targets;
  int test_target = 0;
};

struct MetaConfig {
  double alpha = 1e-3;    // inner SGD step
  double alpha_m = 1e-3;  // outer step
  int dt = 14;            // horizons 1..dt
  int t_start = train::kProtocolStart;
  int t_max = 0;          // last i; 0 means the last day that still leaves a test target
  int meta_epochs = 1;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

void validate(const MetaConfig& config);

// Tasks ordered by (i, j). Tasks whose test day lies past the data or whose
// train set is empty are skipped. Throws EmptyTaskSetError when none remain.
std::vector<TaskSplit> enumerate_tasks(int n_days, const graphs::SampleSpec& spec, const MetaConfig& config);

// Gradient of some loss evaluated at the current scratch parameters.
using GradientFn = std::function<numcore::Gradients()>;

// First-order meta step for one task. `scratch` is reset to theta, takes one
// SGD step of size alpha per inner gradient (theta_t), then theta moves by
// -alpha_m / n_meta_train times the test gradient taken at theta_t. Buffers
// (running statistics) are carried from theta_t back into theta.
void first_order_meta_update(ParamStore& theta, ParamStore& scratch, std::span<const GradientFn> inner,
                             const GradientFn& test, double alpha, double alpha_m, std::size_t n_meta_train);

struct MetaTrainReport {
  std::size_t tasks = 0;
  std::size_t inner_steps = 0;
};

// Glorot-initialized theta, then one meta step per task for every country in
// the given order, repeated meta_epochs times.
Model maml_meta_train(std::span<const graphs::PreparedDataset* const> countries, const models::ModelConfig& model,
                      const MetaConfig& config, MetaTrainReport* report = nullptr);

struct CellForecast {
  train::Checkpoint checkpoint;
  Matrix prediction;  // n x 1 forecast for day T + j
};

// Standard trainer started from theta on the (T, j) split of `view`.
CellForecast fine_tune_cell(const Model& theta, const graphs::DataView& view, int last_day, int horizon,
                            const train::TrainConfig& config);

struct TaskError {
  int i = 0;
  int j = 0;
  double error = 0;  // mean absolute error over regions
};

struct FineTuneResult {
  std::vector<TaskError> tasks;
  std::vector<TaskError> skipped;  // error left at 0
  double mean_error = 0;
};

// Fine-tunes theta on every task of the target country and averages the test errors.
FineTuneResult fine_tune(const Model& theta, const graphs::PreparedDataset& target, const MetaConfig& meta,
                         const train::TrainConfig& config);

// Pooled training set for TL_BASE: every valid sample of each foreign country
// followed by the target's (T, j) training samples.
std::vector<graphs::GraphSample> pooled_training_set(std::span<const graphs::PreparedDataset* const> foreign,
                                                     const graphs::SampleSpec& spec,
                                                     const train::SplitSamples& target);

// One MPNN trained on the pooled set, validated on the target's validation split.
CellForecast tl_base_cell(std::span<const graphs::PreparedDataset* const> foreign, const graphs::DataView& view,
                          int last_day, int horizon, const Model& init, const train::TrainConfig& config);

}  // namespace mobcast::meta
