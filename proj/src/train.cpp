#include "mobcast/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mobcast/errors.hpp"
#include "mobcast/numcore/optim.hpp"
#include "mobcast/util/text.hpp"

namespace mobcast::train {

namespace nc = numcore;

SplitSpec make_splits(const graphs::SampleSpec& spec, int last_day) {
  if (last_day < kProtocolStart) {
    throw ContractError("make_splits: T = " + std::to_string(last_day) + " precedes the protocol start day " +
                        std::to_string(kProtocolStart));
  }
  if (spec.horizon < 1) throw ContractError("make_splits: horizon must be >= 1");
  SplitSpec split;
  split.last_day = last_day;
  split.horizon = spec.horizon;
  split.test_target = last_day + spec.horizon;

  const int first_target = graphs::first_anchor(spec) + spec.horizon;
  auto is_validation = [&](int target) {
    return std::ranges::any_of(kValidationOffsets, [&](int o) { return target == last_day - o; });
  };
  for (int target = first_target; target <= last_day; ++target) {
    (is_validation(target) ? split.validation_targets : split.train_targets).push_back(target);
  }
  if (split.train_targets.empty()) {
    throw InsufficientDataError("no training sample for T = " + std::to_string(last_day) + ", j = " +
                                std::to_string(spec.horizon) + " (first valid target is day " +
                                std::to_string(first_target) + ")");
  }
  return split;
}

SplitSamples assemble_split(const graphs::DataView& view, const graphs::SampleSpec& spec, const SplitSpec& split) {
  SplitSamples out;
  for (int target : split.train_targets) out.train.push_back(graphs::make_sample(view, spec, target - spec.horizon, true));
  for (int target : split.validation_targets) {
    out.validation.push_back(graphs::make_sample(view, spec, target - spec.horizon, true));
  }
  out.test = graphs::make_test_sample(view, spec, split.last_day);
  return out;
}

void validate(const TrainConfig& c) {
  if (c.max_epochs < 0 || c.patience < 1 || c.patience_start_epoch < 0 || c.batch_size < 1 || !(c.lr > 0.0)) {
    throw ConfigError("training config: epochs >= 0, patience >= 1, batch_size >= 1 and lr > 0 are required");
  }
}

bool should_stop(int epoch, int best_epoch, const TrainConfig& config) {
  if (epoch >= config.max_epochs) return true;
  return epoch - std::max(best_epoch, config.patience_start_epoch) >= config.patience;
}

double mse_loss(const Matrix& pred, const Matrix& target) {
  if (pred.data().empty()) throw ContractError("mse_loss: empty input");
  if (!pred.same_shape(target)) {
    throw DimensionError("mse_loss: " + pred.shape_string() + " vs " + target.shape_string());
  }
  double sum = 0;
  for (std::size_t i = 0; i < pred.data().size(); ++i) {
    const double e = pred.data()[i] - target.data()[i];
    sum += e * e;
  }
  return sum / static_cast<double>(pred.data().size());
}

double mean_absolute_error(const Model& model, std::span<const graphs::GraphSample> samples) {
  if (samples.empty()) throw ContractError("mean_absolute_error: no samples");
  double sum = 0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    const Matrix pred = model.predict(s);
    for (std::size_t u = 0; u < pred.rows(); ++u) sum += std::abs(pred(u, 0) - s.target(u, 0));
    count += pred.rows();
  }
  return sum / static_cast<double>(count);
}

BatchGradient batch_gradient(Model& model, std::span<const graphs::GraphSample* const> batch, nc::Rng& rng) {
  nc::Tape tape;
  const auto bound = nc::bind(tape, model.params());
  nc::Var pred = model.forward(tape, bound, batch, nc::Mode::Train, rng);
  nc::Var loss = nc::mse(pred, tape.constant(models::stack_targets(batch)));
  tape.backward(loss);
  return {loss.value()(0, 0), nc::collect_gradients(tape, model.params(), bound)};
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, int batch_size, nc::Rng& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(count, start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

namespace {

double parameter_norm(const nc::ParamStore& params) {
  double sum = 0;
  for (const auto& t : params.entries()) {
    for (double v : t.value.data()) sum += v * v;
  }
  return std::sqrt(sum);
}

[[noreturn]] void diverged(int epoch, std::size_t batch, double loss, const Model& model, double grad_norm) {
  std::ostringstream msg;
  msg << "training diverged at epoch " << epoch << ", batch " << batch << ": loss=" << loss
      << ", parameter norm=" << parameter_norm(model.params()) << ", gradient norm=" << grad_norm;
  throw TrainingDivergedError(msg.str());
}

}  // namespace

Checkpoint train_model(Model initial, std::span<const graphs::GraphSample> train,
                       std::span<const graphs::GraphSample> validation, const TrainConfig& config, std::ostream* log) {
  validate(config);
  if (train.empty()) throw InsufficientDataError("train_model: empty training set");
  if (validation.empty()) throw InsufficientDataError("train_model: empty validation set");

  nc::Rng rng(config.seed);
  Model model = std::move(initial);
  nc::AdamState adam = nc::make_adam_state(model.params());
  Checkpoint best{model, mean_absolute_error(model, validation), 0, 0};

  int epoch = 0;
  while (epoch < config.max_epochs) {
    ++epoch;
    double loss_sum = 0;
    const auto batches = make_batches(train.size(), config.batch_size, rng);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const graphs::GraphSample*> batch;
      for (std::size_t i : batches[b]) batch.push_back(&train[i]);
      BatchGradient g = batch_gradient(model, batch, rng);
      const double grad_norm = nc::gradient_norm(g.grads);
      if (!std::isfinite(g.loss) || !std::isfinite(grad_norm)) diverged(epoch, b, g.loss, model, grad_norm);
      nc::adam_step(model.params(), g.grads, adam, config.lr);
      loss_sum += g.loss * static_cast<double>(batch.size());
    }
    const double val = mean_absolute_error(model, validation);
    if (!std::isfinite(val)) diverged(epoch, batches.size(), val, model, 0.0);
    if (val < best.validation_error) best = Checkpoint{model, val, epoch, 0};
    if (log) {
      nlohmann::json line = {{"epoch", epoch},
                             {"train_loss", loss_sum / static_cast<double>(train.size())},
                             {"val_mae", val},
                             {"best_epoch", best.best_epoch}};
      *log << line.dump() << '\n';
    }
    if (should_stop(epoch, best.best_epoch, config)) break;
  }
  best.epochs_run = epoch;
  return best;
}

Matrix predict(const Checkpoint& checkpoint, const graphs::GraphSample& sample) {
  return checkpoint.model.predict(sample);
}

}  // namespace mobcast::train
