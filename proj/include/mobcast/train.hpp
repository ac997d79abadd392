#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <vector>

#include "mobcast/graphs.hpp"
#include "mobcast/models.hpp"
#include "mobcast/numcore/params.hpp"

namespace mobcast::train {

using models::Model;
using numcore::Matrix;

// Protocol start: the first forecast is issued after 14 observed days.
inline constexpr int kProtocolStart = 14;
inline constexpr int kValidationOffsets[] = {1, 3, 5, 7, 9};

// Target days (1-based) for one (T, j) cell.
struct SplitSpec {
  int last_day = 0;  // T
  int horizon = 0;   // j
  std::vector<int> train_targets;
  std::vector<int> validation_targets;
  int test_target = 0;  // T + j
};

// Valid targets are anchor + j with anchor >= first_anchor(spec). Validation
// takes T-1, T-3, ..., T-9 when valid; train keeps every other valid target <= T.
// Throws InsufficientDataError when no training target remains.
SplitSpec make_splits(const graphs::SampleSpec& spec, int last_day);

struct SplitSamples {
  std::vector<graphs::GraphSample> train;
  std::vector<graphs::GraphSample> validation;
  graphs::GraphSample test;  // no target attached
};

// Builds the samples of a split; every read stays within day T.
SplitSamples assemble_split(const graphs::DataView& view, const graphs::SampleSpec& spec, const SplitSpec& split);

struct TrainConfig {
  int max_epochs = 500;
  int patience = 50;
  int patience_start_epoch = 100;
  int batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

// Early stopping after `epoch` (1-based) given the epoch of the best validation score so far.
bool should_stop(int epoch, int best_epoch, const TrainConfig& config);

struct Checkpoint {
  Model model;                 // best parameters
  double validation_error = 0; // MAE of `model` on the validation set
  int best_epoch = 0;          // 0 = the initial parameters
  int epochs_run = 0;
};

// Mean over all entries of (pred - target)^2. Throws ContractError on empty input.
double mse_loss(const Matrix& pred, const Matrix& target);

// Mean absolute error of eval-mode predictions over every sample and region.
double mean_absolute_error(const Model& model, std::span<const graphs::GraphSample> samples);

struct BatchGradient {
  double loss = 0;
  numcore::Gradients grads;
};

// One train-mode forward/backward pass; updates the model's running statistics.
BatchGradient batch_gradient(Model& model, std::span<const graphs::GraphSample* const> batch, numcore::Rng& rng);

// Seeded shuffle of [0, count) split into consecutive batches (last one may be short).
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, numcore::Rng& rng);

// Adam over shuffled minibatches with MAE-based model selection. `log`, when
// given, receives one JSON object per epoch. NaN/inf loss throws
// TrainingDivergedError. max_epochs == 0 returns the initial model scored.
Checkpoint train_model(Model initial, std::span<const graphs::GraphSample> train,
                       std::span<const graphs::GraphSample> validation, const TrainConfig& config,
                       std::ostream* log = nullptr);

Matrix predict(const Checkpoint& checkpoint, const graphs::GraphSample& sample);

}  // namespace mobcast::train
