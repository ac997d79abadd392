#include "mobcast/meta.hpp"

#include <cmath>
#include <map>

#include "mobcast/errors.hpp"
#include "mobcast/numcore/optim.hpp"

namespace mobcast::meta {

namespace nc = numcore;

void validate(const MetaConfig& c) {
  if (!(c.alpha >= 0.0) || !(c.alpha_m >= 0.0)) throw ConfigError("meta config: step sizes must be >= 0");
  if (c.dt < 1 || c.t_start < 1 || c.t_max < 0 || c.meta_epochs < 0 || c.batch_size < 1) {
    throw ConfigError("meta config: dt, t_start and batch_size must be positive, t_max and meta_epochs >= 0");
  }
}

std::vector<TaskSplit> enumerate_tasks(int n_days, const graphs::SampleSpec& spec, const MetaConfig& config) {
  validate(config);
  const int t_max = config.t_max > 0 ? config.t_max : n_days - 1;
  std::vector<TaskSplit> tasks;
  for (int i = config.t_start; i <= t_max; ++i) {
    for (int j = 1; j <= config.dt; ++j) {
      if (i + j > n_days) continue;
      graphs::SampleSpec s = spec;
      s.horizon = j;
      const int first_target = graphs::first_anchor(s) + j;
      if (first_target > i) continue;
      TaskSplit t{i, j, {}, i + j};
      for (int target = first_target; target <= i; ++target) t.train_targets.push_back(target);
      tasks.push_back(std::move(t));
    }
  }
  if (tasks.empty()) {
    throw EmptyTaskSetError("no meta-learning task fits " + std::to_string(n_days) + " days with i in [" +
                            std::to_string(config.t_start) + ", " + std::to_string(t_max) + "] and dt = " +
                            std::to_string(config.dt));
  }
  return tasks;
}

void first_order_meta_update(ParamStore& theta, ParamStore& scratch, std::span<const GradientFn> inner,
                             const GradientFn& test, double alpha, double alpha_m, std::size_t n_meta_train) {
  if (n_meta_train == 0) throw ContractError("first_order_meta_update: no meta-train countries");
  if (!scratch.same_layout(theta)) throw ConfigError("first_order_meta_update: parameter layouts differ");
  scratch = theta;
  for (const GradientFn& grad : inner) nc::sgd_step(scratch, grad(), alpha);
  nc::sgd_step(theta, test(), alpha_m / static_cast<double>(n_meta_train));
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (!theta.entry(k).trainable) theta.value(k) = scratch.value(k);
  }
}

namespace {

nc::Gradients checked(train::BatchGradient g, const char* where, int i, int j) {
  if (!std::isfinite(g.loss) || !std::isfinite(nc::gradient_norm(g.grads))) {
    throw TrainingDivergedError(std::string("meta-training diverged in the ") + where + " step of task (i=" +
                                std::to_string(i) + ", j=" + std::to_string(j) + "), loss=" + std::to_string(g.loss));
  }
  return std::move(g.grads);
}

}  // namespace

Model maml_meta_train(std::span<const graphs::PreparedDataset* const> countries, const models::ModelConfig& model,
                      const MetaConfig& config, MetaTrainReport* report) {
  validate(config);
  if (countries.empty()) throw ContractError("maml_meta_train: no meta-train countries");

  nc::Rng init_rng(nc::Rng::derive(config.seed, {0}));
  Model theta = Model::create(model, init_rng);
  Model work = theta;
  nc::Rng rng(nc::Rng::derive(config.seed, {1}));
  MetaTrainReport counts;

  for (int epoch = 0; epoch < config.meta_epochs; ++epoch) {
    for (const graphs::PreparedDataset* country : countries) {
      const graphs::DataView view(*country);
      const auto tasks = enumerate_tasks(view.last_day(), model.sample_spec(1), config);
      std::map<int, std::vector<graphs::GraphSample>> by_horizon;  // every valid sample, by target day

      for (const TaskSplit& task : tasks) {
        const graphs::SampleSpec spec = model.sample_spec(task.j);
        auto [it, fresh] = by_horizon.try_emplace(task.j);
        if (fresh) it->second = graphs::assemble_samples(view, spec, view.last_day());
        const auto& samples = it->second;
        const int first_target = samples.front().target_day;
        const auto n_train = static_cast<std::size_t>(task.i - first_target + 1);
        const graphs::GraphSample& te = samples.at(static_cast<std::size_t>(task.test_target - first_target));

        std::vector<std::vector<const graphs::GraphSample*>> batches;
        for (const auto& idx : train::make_batches(n_train, config.batch_size, rng)) {
          auto& b = batches.emplace_back();
          for (std::size_t k : idx) b.push_back(&samples[k]);
        }
        std::vector<GradientFn> inner;
        for (const auto& b : batches) {
          inner.emplace_back([&, &b = b] { return checked(train::batch_gradient(work, b, rng), "inner", task.i, task.j); });
        }
        const graphs::GraphSample* te_batch[] = {&te};
        GradientFn test = [&] { return checked(train::batch_gradient(work, te_batch, rng), "outer", task.i, task.j); };

        first_order_meta_update(theta.params(), work.params(), inner, test, config.alpha, config.alpha_m,
                                countries.size());
        ++counts.tasks;
        counts.inner_steps += inner.size();
      }
    }
  }
  if (report) *report = counts;
  return theta;
}

CellForecast fine_tune_cell(const Model& theta, const graphs::DataView& view, int last_day, int horizon,
                            const train::TrainConfig& config) {
  const graphs::SampleSpec spec = theta.config().sample_spec(horizon);
  const train::SplitSamples samples = train::assemble_split(view, spec, train::make_splits(spec, last_day));
  train::Checkpoint ck = train::train_model(theta, samples.train, samples.validation, config);
  Matrix prediction = ck.model.predict(samples.test);
  return {std::move(ck), std::move(prediction)};
}

FineTuneResult fine_tune(const Model& theta, const graphs::PreparedDataset& target, const MetaConfig& meta,
                         const train::TrainConfig& config) {
  const graphs::DataView full(target);
  FineTuneResult result;
  double total = 0;
  for (const TaskSplit& task : enumerate_tasks(full.last_day(), theta.config().sample_spec(1), meta)) {
    train::TrainConfig cell = config;
    cell.seed = nc::Rng::derive(config.seed, {static_cast<std::uint64_t>(task.i), static_cast<std::uint64_t>(task.j)});
    const graphs::DataView guarded(target, task.i);
    try {
      const CellForecast f = fine_tune_cell(theta, guarded, task.i, task.j, cell);
      double err = 0;
      for (std::size_t u = 0; u < f.prediction.rows(); ++u) {
        err += std::abs(f.prediction(u, 0) - full.cases(u, task.test_target));
      }
      err /= static_cast<double>(f.prediction.rows());
      result.tasks.push_back({task.i, task.j, err});
      total += err;
    } catch (const InsufficientDataError&) {
      result.skipped.push_back({task.i, task.j, 0.0});
    }
  }
  if (result.tasks.empty()) throw EmptyTaskSetError("fine_tune: every target-country task lacked training data");
  result.mean_error = total / static_cast<double>(result.tasks.size());
  return result;
}

std::vector<graphs::GraphSample> pooled_training_set(std::span<const graphs::PreparedDataset* const> foreign,
                                                     const graphs::SampleSpec& spec,
                                                     const train::SplitSamples& target) {
  std::vector<graphs::GraphSample> pooled;
  for (const graphs::PreparedDataset* country : foreign) {
    const graphs::DataView view(*country);
    auto samples = graphs::assemble_samples(view, spec, view.last_day());
    pooled.insert(pooled.end(), std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.end()));
  }
  pooled.insert(pooled.end(), target.train.begin(), target.train.end());
  return pooled;
}

CellForecast tl_base_cell(std::span<const graphs::PreparedDataset* const> foreign, const graphs::DataView& view,
                          int last_day, int horizon, const Model& init, const train::TrainConfig& config) {
  const graphs::SampleSpec spec = init.config().sample_spec(horizon);
  const train::SplitSamples samples = train::assemble_split(view, spec, train::make_splits(spec, last_day));
  const auto pooled = pooled_training_set(foreign, spec, samples);
  train::Checkpoint ck = train::train_model(init, pooled, samples.validation, config);
  Matrix prediction = ck.model.predict(samples.test);
  return {std::move(ck), std::move(prediction)};
}

}  // namespace mobcast::meta
