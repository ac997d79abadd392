#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mobcast/graphs.hpp"
#include "mobcast/numcore/ops.hpp"
#include "mobcast/numcore/params.hpp"
#include "mobcast/numcore/rng.hpp"
#include "mobcast/numcore/tape.hpp"

namespace mobcast::models {

using numcore::Matrix;
using numcore::Mode;
using numcore::ParamStore;
using numcore::Rng;
using numcore::Tape;
using numcore::Var;

enum class ModelKind { Mpnn, MpnnLstm, Lstm };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::Mpnn;
  int window = 7;       // d, input case window
  int layers = 2;       // K neighborhood aggregation layers
  int hidden = 64;      // aggregation and head width
  int lstm_hidden = 64;
  int steps = 7;        // S, days per MPNN+LSTM sample
  double dropout = 0.5;
  // MPNN+LSTM: feed every step's raw window to the head instead of only the last.
  bool concat_all_steps = false;
  // Batch normalization after each aggregation layer; off only in test setups.
  bool batchnorm = true;

  graphs::SampleSpec sample_spec(int horizon) const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Tape handles of one LSTM layer's gates, ordered input, forget, output, cell.
struct LstmGates {
  std::array<Var, 4> input_weight;      // in x h
  std::array<Var, 4> recurrent_weight;  // h x h
  std::array<Var, 4> bias;              // 1 x h
};

struct LstmState {
  Var h;
  Var c;
};

// i, f, o = sigmoid(x W + h U + b), g = tanh(...); c = f*c_prev + i*g; h = o*tanh(c).
LstmState lstm_cell(Var x, const LstmState& prev, const LstmGates& gates);

// A network and its parameter registry. Value type: copying clones the parameters.
class Model {
 public:
  // Glorot-uniform weights, zero biases, gamma = 1, beta = 0.
  static Model create(const ModelConfig& config, Rng& rng);
  // All-zero parameters (useful as a degenerate baseline and in tests).
  static Model zeros(const ModelConfig& config);
  // Adopts an existing registry; throws FormatError when its layout does not match the config.
  static Model from_params(const ModelConfig& config, ParamStore params);

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }

  // Predictions for a batch stacked sample by sample: (sum of regions) x 1.
  // `bound` must come from numcore::bind(tape, params()). Train mode folds
  // batch statistics into the running buffers held in params().
  Var forward(Tape& tape, std::span<const Var> bound, std::span<const graphs::GraphSample* const> batch, Mode mode,
              Rng& rng);

  // Stacked head input rows, exposed for shape checks: the skip-concatenated
  // aggregation output of one step (MPNN trunk).
  Var representation(Tape& tape, std::span<const Var> bound, std::span<const graphs::GraphSample* const> batch,
                     std::size_t step, Mode mode, Rng& rng);

  // Eval-mode prediction for one sample: n x 1, nonnegative.
  Matrix predict(const graphs::GraphSample& sample) const;

 private:
  Model(ModelConfig config, ParamStore params);

  // `running` receives train-mode batch statistics; null leaves buffers untouched.
  Var forward_impl(Tape& tape, std::span<const Var> bound, std::span<const graphs::GraphSample* const> batch,
                   Mode mode, Rng& rng, ParamStore* running) const;
  Var representation_impl(Tape& tape, std::span<const Var> bound, std::span<const graphs::GraphSample* const> batch,
                          std::size_t step, Mode mode, Rng& rng, ParamStore* running) const;
  Var head(std::span<const Var> bound, Var input) const;
  LstmGates gates(std::span<const Var> bound, std::size_t layer) const;
  Var run_lstm(Tape& tape, std::span<const Var> bound, std::vector<Var> inputs) const;

  ModelConfig config_;
  ParamStore params_;

  struct AggregationLayer {
    std::size_t weight, gamma, beta, running_mean, running_var;
  };
  struct LstmLayer {
    std::array<std::size_t, 4> input_weight, recurrent_weight, bias;
  };
  std::vector<AggregationLayer> aggregation_;
  std::vector<LstmLayer> lstm_;
  std::vector<std::pair<std::size_t, std::size_t>> head_;  // (weight, bias) per FC layer
};

// Single-graph conveniences matching the documented model signatures.
Matrix mpnn_forward(const Matrix& adjacency, const Matrix& features, Model& model, Mode mode, Rng& rng);
Matrix mpnn_lstm_forward(std::span<const Matrix> adjacency, std::span<const Matrix> features, Model& model, Mode mode,
                         Rng& rng);
// One region's last-week case sequence -> scalar forecast.
double baseline_lstm_forward(std::span<const double> week, const Model& model);

// Stacks the targets of a batch into a (sum of regions) x 1 column.
Matrix stack_targets(std::span<const graphs::GraphSample* const> batch);

// Checkpoint file: magic "MCKP", u32 format version, u32-length-prefixed
// JSON metadata, u32 tensor count, then per tensor: u32 name length, name
// bytes, u32 rows, u32 cols, u8 trainable, rows*cols IEEE-754 doubles.
// Every integer and double is little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_params(const std::filesystem::path& path, const ParamStore& params, const std::string& metadata_json);
ParamStore load_params(const std::filesystem::path& path, std::string* metadata_json = nullptr);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

// Params plus the model configuration (stored in metadata under "model").
void save_model(const std::filesystem::path& path, const Model& model, const std::string& extra_metadata_json = "{}");
Model load_model(const std::filesystem::path& path, std::string* metadata_json = nullptr);

}  // namespace mobcast::models
