#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "../support/tempdir.hpp"
#include "mobcast/errors.hpp"
#include "mobcast/numcore/optim.hpp"
#include "mobcast/train.hpp"

namespace mobcast::train {
namespace {

namespace nc = numcore;
using models::ModelConfig;
using models::ModelKind;

graphs::PreparedDataset small_country(std::uint64_t seed = 3) {
  dataio::SyntheticConfig sc;
  sc.n_regions = 6;
  sc.n_days = 40;
  sc.n_countries = 1;
  sc.noise_seed = seed;
  return graphs::PreparedDataset(dataio::generate_synthetic(sc).front());
}

ModelConfig tiny(ModelKind kind = ModelKind::Mpnn) {
  ModelConfig c;
  c.kind = kind;
  c.hidden = 8;
  c.lstm_hidden = 6;
  c.steps = 3;
  return c;
}

TEST(MseLoss, Examples) {
  EXPECT_EQ(mse_loss(Matrix::from_rows({{1}, {3}}), Matrix::from_rows({{1}, {3}})), 0.0);
  EXPECT_EQ(mse_loss(Matrix(2, 1, 0.0), Matrix::from_rows({{1}, {3}})), 5.0);
  EXPECT_EQ(mse_loss(Matrix(4, 1, 0.0), Matrix::from_rows({{1}, {3}, {1}, {3}})), 5.0);
  EXPECT_THROW(mse_loss(Matrix(0, 1), Matrix(0, 1)), ContractError);
  EXPECT_THROW(mse_loss(Matrix(2, 1), Matrix(3, 1)), DimensionError);
}

TEST(MakeSplits, WorkedExample) {
  graphs::SampleSpec spec;  // d = 7, j = 1
  SplitSpec s = make_splits(spec, 14);
  EXPECT_EQ(s.validation_targets, (std::vector<int>{9, 11, 13}));
  EXPECT_EQ(s.train_targets, (std::vector<int>{8, 10, 12, 14}));
  EXPECT_EQ(s.test_target, 15);
}

TEST(MakeSplits, SequenceVariantStartsLater) {
  graphs::SampleSpec spec;
  spec.variant = graphs::Variant::Sequence;
  spec.steps = 3;  // first anchor 9
  SplitSpec s = make_splits(spec, 14);
  EXPECT_EQ(s.validation_targets, (std::vector<int>{11, 13}));
  EXPECT_EQ(s.train_targets, (std::vector<int>{10, 12, 14}));
}

TEST(MakeSplits, RandomCellsAreDisjointAndOrdered) {
  nc::Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    graphs::SampleSpec spec;
    spec.horizon = 1 + static_cast<int>(rng.below(7));
    const int t = 14 + static_cast<int>(rng.below(60));
    SplitSpec s = make_splits(spec, t);
    std::set<int> train(s.train_targets.begin(), s.train_targets.end());
    for (int v : s.validation_targets) {
      EXPECT_FALSE(train.contains(v));
      EXPECT_LE(v, t);
      EXPECT_GE(v - spec.horizon, spec.window);
    }
    for (int v : s.train_targets) {
      EXPECT_LE(v, t);
      EXPECT_GE(v - spec.horizon, spec.window);
    }
    EXPECT_EQ(s.test_target, t + spec.horizon);
    EXPECT_EQ(train.size() + s.validation_targets.size(), static_cast<std::size_t>(t - spec.window - spec.horizon + 1));
  }
}

TEST(MakeSplits, Errors) {
  graphs::SampleSpec spec;
  EXPECT_THROW(make_splits(spec, 13), ContractError);
  spec.horizon = 8;  // first valid target 15 > T
  EXPECT_THROW(make_splits(spec, 14), InsufficientDataError);
}

TEST(AssembleSplit, ReadsNothingPastT) {
  auto data = small_country();
  graphs::SampleSpec spec;
  spec.horizon = 3;
  graphs::DataView view(data, 20);
  SplitSamples s = assemble_split(view, spec, make_splits(spec, 20));
  EXPECT_EQ(view.max_day_read(), 20);
  for (const auto& x : s.train) EXPECT_LE(x.target_day, 20);
  EXPECT_FALSE(s.test.has_target);
  EXPECT_EQ(s.test.target_day, 23);
}

int simulate(const std::vector<double>& val_by_epoch, const TrainConfig& c) {
  double best = 1e300;
  int best_epoch = 0;
  for (int e = 1;; ++e) {
    const double v = e <= static_cast<int>(val_by_epoch.size()) ? val_by_epoch[e - 1] : val_by_epoch.back();
    if (v < best) best = v, best_epoch = e;
    if (should_stop(e, best_epoch, c)) return e;
  }
}

TEST(EarlyStopping, CounterRule) {
  TrainConfig c;
  EXPECT_EQ(simulate({1.0}, c), 150);
  std::vector<double> improving;
  for (int e = 0; e < 600; ++e) improving.push_back(1000.0 - e);
  EXPECT_EQ(simulate(improving, c), 500);
  std::vector<double> late(120);
  for (int e = 0; e < 120; ++e) late[e] = 500.0 - e;
  EXPECT_EQ(simulate(late, c), 170);
  nc::Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> noisy(600);
    for (double& v : noisy) v = rng.uniform();
    const int stop = simulate(noisy, c);
    EXPECT_GE(stop, 150);
    EXPECT_LE(stop, 500);
  }
}

struct Fixture {
  graphs::PreparedDataset data = small_country();
  SplitSamples samples;
  ModelConfig config;

  explicit Fixture(ModelKind kind = ModelKind::Mpnn, int t = 30) : config(tiny(kind)) {
    graphs::SampleSpec spec = config.sample_spec(2);
    graphs::DataView view(data, t);
    samples = assemble_split(view, spec, make_splits(spec, t));
  }
  Model fresh(std::uint64_t seed = 1) const {
    nc::Rng rng(seed);
    return Model::create(config, rng);
  }
};

TEST(TrainModel, SameSeedSameCheckpoint) {
  Fixture f;
  TrainConfig c;
  c.max_epochs = 30;
  c.seed = 9;
  std::ostringstream log1, log2;
  Checkpoint a = train_model(f.fresh(), f.samples.train, f.samples.validation, c, &log1);
  Checkpoint b = train_model(f.fresh(), f.samples.train, f.samples.validation, c, &log2);
  EXPECT_EQ(a.model.params(), b.model.params());
  EXPECT_EQ(a.validation_error, b.validation_error);
  EXPECT_EQ(log1.str(), log2.str());
  const std::string text = log1.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), a.epochs_run);
  ASSERT_GT(a.best_epoch, 0);
  c.seed = 10;
  Checkpoint other = train_model(f.fresh(), f.samples.train, f.samples.validation, c);
  EXPECT_NE(other.model.params(), a.model.params());
}

TEST(TrainModel, ImprovesOnInitialization) {
  Fixture f;
  TrainConfig c;
  c.max_epochs = 60;
  Checkpoint ck = train_model(f.fresh(), f.samples.train, f.samples.validation, c);
  const double initial = mean_absolute_error(f.fresh(), f.samples.validation);
  EXPECT_LT(ck.validation_error, initial);
  EXPECT_GT(ck.best_epoch, 0);
}

TEST(TrainModel, ZeroEpochsReturnsInitialModel) {
  Fixture f;
  TrainConfig c;
  c.max_epochs = 0;
  Model init = f.fresh();
  Checkpoint ck = train_model(init, f.samples.train, f.samples.validation, c);
  EXPECT_EQ(ck.model.params(), init.params());
  EXPECT_EQ(ck.epochs_run, 0);
  EXPECT_EQ(ck.validation_error, mean_absolute_error(init, f.samples.validation));
}

TEST(TrainModel, CheckpointReproducesValidationError) {
  testing::TempDir dir("train_ckpt");
  for (auto kind : {ModelKind::Mpnn, ModelKind::MpnnLstm, ModelKind::Lstm}) {
    Fixture f(kind);
    TrainConfig c;
    c.max_epochs = 8;
    Checkpoint ck = train_model(f.fresh(), f.samples.train, f.samples.validation, c);
    models::save_model(dir / "best.bin", ck.model);
    Model back = models::load_model(dir / "best.bin");
    EXPECT_NEAR(mean_absolute_error(back, f.samples.validation), ck.validation_error, 1e-9);
    const Matrix before = predict(ck, f.samples.test);
    EXPECT_EQ(before, back.predict(f.samples.test));
    EXPECT_EQ(before, predict(ck, f.samples.test));
    for (double v : before.data()) EXPECT_GE(v, 0.0);
  }
}

TEST(TrainModel, NanLossAbortsWithDiagnostics) {
  Fixture f;
  f.samples.train[0].features[0](0, 0) = std::nan("");
  TrainConfig c;
  c.batch_size = 64;
  try {
    train_model(f.fresh(), f.samples.train, f.samples.validation, c);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergedError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("parameter norm"), std::string::npos) << msg;
  }
}

TEST(TrainModel, RejectsEmptySetsAndBadConfig) {
  Fixture f;
  TrainConfig c;
  EXPECT_THROW(train_model(f.fresh(), {}, f.samples.validation, c), InsufficientDataError);
  EXPECT_THROW(train_model(f.fresh(), f.samples.train, {}, c), InsufficientDataError);
  c.batch_size = 0;
  EXPECT_THROW(train_model(f.fresh(), f.samples.train, f.samples.validation, c), ConfigError);
}

TEST(TrainStep, SmallStepDescendsByGradientNormSquared) {
  Fixture f;
  f.config.dropout = 0.0;
  Model m = f.fresh();
  const graphs::GraphSample* batch[] = {&f.samples.train[2]};
  nc::Rng rng(0);
  BatchGradient g = batch_gradient(m, batch, rng);
  const double lr = 1e-6;
  const double norm = nc::gradient_norm(g.grads);
  nc::sgd_step(m.params(), g.grads, lr);
  const double after = batch_gradient(m, batch, rng).loss;
  const double predicted = lr * norm * norm;
  EXPECT_NEAR((g.loss - after) / predicted, 1.0, 0.1);
}

TEST(MakeBatches, CoversEveryIndexOnce) {
  nc::Rng rng(2);
  auto batches = make_batches(19, 8, rng);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 3u);
  std::set<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 19u);
}

}  // namespace
}  // namespace mobcast::train
