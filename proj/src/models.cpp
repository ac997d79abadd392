#include "mobcast/models.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mobcast/errors.hpp"
#include "mobcast/numcore/layers.hpp"

namespace mobcast::models {

namespace nc = numcore;
using graphs::GraphSample;
using json = nlohmann::json;

namespace {

constexpr std::array<const char*, 4> kGateNames = {"i", "f", "o", "g"};

std::string lstm_name(std::size_t layer, const char* kind, std::size_t gate) {
  return "lstm" + std::to_string(layer + 1) + "." + kind + "_" + kGateNames[gate];
}

std::string mp_name(std::size_t layer, const std::string& what) { return "mp" + std::to_string(layer + 1) + "." + what; }

std::string fc_name(std::size_t layer, const std::string& what) {
  return "head.fc" + std::to_string(layer + 1) + "." + what;
}

std::size_t representation_width(const ModelConfig& c) {
  return static_cast<std::size_t>(c.window + c.layers * c.hidden);
}

void check_config(const ModelConfig& c) {
  if (c.window < 1 || c.layers < 0 || c.hidden < 1 || c.lstm_hidden < 1 || c.steps < 1) {
    throw ContractError("model config: window, hidden, lstm_hidden and steps must be positive, layers >= 0");
  }
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw ContractError("model config: dropout must lie in [0, 1)");
}

// Builds the registry in canonical order. With rng == nullptr every tensor is zero
// (running variances excepted, which start at one).
ParamStore build_layout(const ModelConfig& c, nc::Rng* rng) {
  check_config(c);
  ParamStore store;
  auto weight = [&](std::size_t in, std::size_t out) {
    return rng ? nc::glorot_init(in, out, *rng) : Matrix(in, out, 0.0);
  };
  auto add_lstm = [&](std::size_t layer, std::size_t in, std::size_t h) {
    for (std::size_t g = 0; g < 4; ++g) {
      store.add(lstm_name(layer, "W", g), weight(in, h));
      store.add(lstm_name(layer, "U", g), weight(h, h));
      store.add(lstm_name(layer, "b", g), Matrix(1, h, 0.0));
    }
  };
  auto add_fc = [&](std::size_t layer, std::size_t in, std::size_t out) {
    store.add(fc_name(layer, "weight"), weight(in, out));
    store.add(fc_name(layer, "bias"), Matrix(1, out, 0.0));
  };

  const auto d = static_cast<std::size_t>(c.window);
  const auto h = static_cast<std::size_t>(c.hidden);
  const auto lh = static_cast<std::size_t>(c.lstm_hidden);

  if (c.kind == ModelKind::Lstm) {
    add_lstm(0, 1, lh);
    add_lstm(1, lh, lh);
    add_fc(0, lh, 1);
    return store;
  }

  for (std::size_t k = 0; k < static_cast<std::size_t>(c.layers); ++k) {
    store.add(mp_name(k, "weight"), weight(k == 0 ? d : h, h));
    if (c.batchnorm) {
      store.add(mp_name(k, "bn.gamma"), Matrix(1, h, rng ? 1.0 : 0.0));
      store.add(mp_name(k, "bn.beta"), Matrix(1, h, 0.0));
      store.add(mp_name(k, "bn.running_mean"), Matrix(1, h, 0.0), false);
      store.add(mp_name(k, "bn.running_var"), Matrix(1, h, 1.0), false);
    }
  }
  std::size_t head_in = representation_width(c);
  if (c.kind == ModelKind::MpnnLstm) {
    add_lstm(0, representation_width(c), lh);
    add_lstm(1, lh, lh);
    head_in = lh + d * (c.concat_all_steps ? static_cast<std::size_t>(c.steps) : 1);
  }
  add_fc(0, head_in, h);
  add_fc(1, h, 1);
  // The output layer reads ReLU activations, so nonnegative weights keep the
  // final ReLU active at the start; with signed weights raw case counts often
  // push every node negative and the network never receives a gradient.
  for (double& v : store.value(store.index_of(fc_name(1, "weight"))).data()) v = std::abs(v);
  return store;
}

// Rows of every sample's step-`step` feature window, stacked in batch order.
Matrix stack_features(std::span<const GraphSample* const> batch, std::size_t step) {
  std::size_t rows = 0;
  for (const auto* s : batch) rows += s->features.at(step).rows();
  const std::size_t cols = batch.front()->features.at(step).cols();
  Matrix out(rows, cols);
  std::size_t r0 = 0;
  for (const auto* s : batch) {
    const Matrix& f = s->features[step];
    if (f.cols() != cols) throw DimensionError("stack_features: mixed window lengths " + f.shape_string());
    std::copy(f.data().begin(), f.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(r0 * cols));
    r0 += f.rows();
  }
  return out;
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Mpnn: return "mpnn";
    case ModelKind::MpnnLstm: return "mpnn_lstm";
    case ModelKind::Lstm: return "lstm";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "mpnn") return ModelKind::Mpnn;
  if (name == "mpnn_lstm") return ModelKind::MpnnLstm;
  if (name == "lstm") return ModelKind::Lstm;
  throw ConfigError("unknown model kind '" + name + "' (expected mpnn, mpnn_lstm or lstm)");
}

graphs::SampleSpec ModelConfig::sample_spec(int horizon) const {
  graphs::SampleSpec spec;
  spec.window = window;
  spec.horizon = horizon;
  spec.variant = kind == ModelKind::MpnnLstm ? graphs::Variant::Sequence : graphs::Variant::Static;
  spec.steps = kind == ModelKind::MpnnLstm ? steps : 1;
  return spec;
}

LstmState lstm_cell(Var x, const LstmState& prev, const LstmGates& gates) {
  std::array<Var, 4> act;
  for (std::size_t g = 0; g < 4; ++g) {
    Var pre = nc::add_row(nc::add(nc::matmul(x, gates.input_weight[g]), nc::matmul(prev.h, gates.recurrent_weight[g])),
                          gates.bias[g]);
    act[g] = g == 3 ? nc::tanh(pre) : nc::sigmoid(pre);
  }
  Var c = nc::add(nc::mul(act[1], prev.c), nc::mul(act[0], act[3]));
  Var h = nc::mul(act[2], nc::tanh(c));
  return {h, c};
}

Model::Model(ModelConfig config, ParamStore params) : config_(config), params_(std::move(params)) {
  const std::size_t n_lstm = config_.kind == ModelKind::Mpnn ? 0 : 2;
  if (config_.kind != ModelKind::Lstm) {
    for (std::size_t k = 0; k < static_cast<std::size_t>(config_.layers); ++k) {
      AggregationLayer layer{params_.index_of(mp_name(k, "weight")), 0, 0, 0, 0};
      if (config_.batchnorm) {
        layer.gamma = params_.index_of(mp_name(k, "bn.gamma"));
        layer.beta = params_.index_of(mp_name(k, "bn.beta"));
        layer.running_mean = params_.index_of(mp_name(k, "bn.running_mean"));
        layer.running_var = params_.index_of(mp_name(k, "bn.running_var"));
      }
      aggregation_.push_back(layer);
    }
  }
  for (std::size_t l = 0; l < n_lstm; ++l) {
    LstmLayer layer;
    for (std::size_t g = 0; g < 4; ++g) {
      layer.input_weight[g] = params_.index_of(lstm_name(l, "W", g));
      layer.recurrent_weight[g] = params_.index_of(lstm_name(l, "U", g));
      layer.bias[g] = params_.index_of(lstm_name(l, "b", g));
    }
    lstm_.push_back(layer);
  }
  const std::size_t n_fc = config_.kind == ModelKind::Lstm ? 1 : 2;
  for (std::size_t l = 0; l < n_fc; ++l) {
    head_.emplace_back(params_.index_of(fc_name(l, "weight")), params_.index_of(fc_name(l, "bias")));
  }
}

Model Model::create(const ModelConfig& config, Rng& rng) { return Model(config, build_layout(config, &rng)); }

Model Model::zeros(const ModelConfig& config) { return Model(config, build_layout(config, nullptr)); }

Model Model::from_params(const ModelConfig& config, ParamStore params) {
  ParamStore reference = build_layout(config, nullptr);
  if (!reference.same_layout(params)) {
    throw FormatError("parameter layout does not match a " + to_string(config.kind) + " model with this configuration");
  }
  return Model(config, std::move(params));
}

Var Model::head(std::span<const Var> bound, Var input) const {
  Var x = input;
  for (const auto& [w, b] : head_) x = nc::relu(nc::add_row(nc::matmul(x, bound[w]), bound[b]));
  return x;
}

LstmGates Model::gates(std::span<const Var> bound, std::size_t layer) const {
  LstmGates g;
  for (std::size_t k = 0; k < 4; ++k) {
    g.input_weight[k] = bound[lstm_[layer].input_weight[k]];
    g.recurrent_weight[k] = bound[lstm_[layer].recurrent_weight[k]];
    g.bias[k] = bound[lstm_[layer].bias[k]];
  }
  return g;
}

Var Model::run_lstm(Tape& tape, std::span<const Var> bound, std::vector<Var> inputs) const {
  const std::size_t rows = inputs.front().rows();
  const auto h = static_cast<std::size_t>(config_.lstm_hidden);
  for (std::size_t l = 0; l < lstm_.size(); ++l) {
    const LstmGates g = gates(bound, l);
    LstmState state{tape.constant(Matrix(rows, h, 0.0)), tape.constant(Matrix(rows, h, 0.0))};
    for (Var& x : inputs) {
      state = lstm_cell(x, state, g);
      x = state.h;
    }
  }
  return inputs.back();
}

Var Model::representation_impl(Tape& tape, std::span<const Var> bound, std::span<const GraphSample* const> batch,
                               std::size_t step, Mode mode, Rng& rng, ParamStore* running) const {
  std::vector<graphs::AdjacencyPtr> blocks;
  blocks.reserve(batch.size());
  for (const auto* s : batch) blocks.push_back(s->graphs.at(step));

  Var h = tape.constant(stack_features(batch, step));
  if (h.cols() != static_cast<std::size_t>(config_.window)) {
    throw ContractError("model expects a window of " + std::to_string(config_.window) + " days, got " +
                        std::to_string(h.cols()));
  }
  std::vector<Var> parts{h};
  for (const AggregationLayer& layer : aggregation_) {
    h = nc::relu(nc::matmul(nc::block_matmul(blocks, h), bound[layer.weight]));
    if (config_.batchnorm) {
      nc::RunningStats stats{params_.value(layer.running_mean), params_.value(layer.running_var)};
      h = nc::batchnorm_apply(h, bound[layer.gamma], bound[layer.beta], stats, mode);
      if (mode == Mode::Train && running) {
        running->value(layer.running_mean) = std::move(stats.mean);
        running->value(layer.running_var) = std::move(stats.variance);
      }
    }
    h = nc::dropout(h, config_.dropout, rng, mode);
    parts.push_back(h);
  }
  return nc::concat_cols(parts);
}

Var Model::forward_impl(Tape& tape, std::span<const Var> bound, std::span<const GraphSample* const> batch, Mode mode,
                        Rng& rng, ParamStore* running) const {
  if (batch.empty()) throw ContractError("forward: empty batch");
  if (bound.size() != params_.size()) throw ContractError("forward: bound parameters do not match the registry");

  switch (config_.kind) {
    case ModelKind::Mpnn:
      return head(bound, representation_impl(tape, bound, batch, batch.front()->steps() - 1, mode, rng, running));

    case ModelKind::MpnnLstm: {
      const std::size_t steps = batch.front()->steps();
      if (steps != static_cast<std::size_t>(config_.steps)) {
        throw ContractError("MPNN+LSTM expects " + std::to_string(config_.steps) + " daily steps, got " +
                            std::to_string(steps));
      }
      std::vector<Var> seq;
      for (std::size_t s = 0; s < steps; ++s) seq.push_back(representation_impl(tape, bound, batch, s, mode, rng, running));
      std::vector<Var> parts{run_lstm(tape, bound, std::move(seq))};
      const std::size_t first = config_.concat_all_steps ? 0 : steps - 1;
      for (std::size_t s = first; s < steps; ++s) parts.push_back(tape.constant(stack_features(batch, s)));
      return head(bound, nc::concat_cols(parts));
    }

    case ModelKind::Lstm: {
      const Matrix x = stack_features(batch, batch.front()->steps() - 1);
      if (x.cols() != static_cast<std::size_t>(config_.window)) {
        throw ContractError("LSTM expects a sequence of " + std::to_string(config_.window) + " days, got " +
                            std::to_string(x.cols()));
      }
      std::vector<Var> seq;
      for (std::size_t s = 0; s < x.cols(); ++s) {
        Matrix col(x.rows(), 1);
        for (std::size_t r = 0; r < x.rows(); ++r) col(r, 0) = x(r, s);
        seq.push_back(tape.constant(std::move(col)));
      }
      return head(bound, run_lstm(tape, bound, std::move(seq)));
    }
  }
  throw ContractError("forward: unknown model kind");
}

Var Model::forward(Tape& tape, std::span<const Var> bound, std::span<const GraphSample* const> batch, Mode mode,
                   Rng& rng) {
  return forward_impl(tape, bound, batch, mode, rng, &params_);
}

Var Model::representation(Tape& tape, std::span<const Var> bound, std::span<const GraphSample* const> batch,
                          std::size_t step, Mode mode, Rng& rng) {
  if (config_.kind == ModelKind::Lstm) throw ContractError("the LSTM baseline has no graph representation");
  return representation_impl(tape, bound, batch, step, mode, rng, &params_);
}

Matrix Model::predict(const GraphSample& sample) const {
  Tape tape;
  const auto bound = nc::bind(tape, params_);
  Rng unused(0);
  const GraphSample* batch[] = {&sample};
  return forward_impl(tape, bound, batch, Mode::Eval, unused, nullptr).value();
}

Matrix mpnn_forward(const Matrix& adjacency, const Matrix& features, Model& model, Mode mode, Rng& rng) {
  GraphSample sample;
  sample.graphs.push_back(std::make_shared<const Matrix>(adjacency));
  sample.features.push_back(features);
  Tape tape;
  const auto bound = nc::bind(tape, model.params());
  const GraphSample* batch[] = {&sample};
  return model.forward(tape, bound, batch, mode, rng).value();
}

Matrix mpnn_lstm_forward(std::span<const Matrix> adjacency, std::span<const Matrix> features, Model& model, Mode mode,
                         Rng& rng) {
  if (adjacency.size() != features.size()) throw DimensionError("mpnn_lstm_forward: one graph per feature window");
  GraphSample sample;
  for (const Matrix& a : adjacency) sample.graphs.push_back(std::make_shared<const Matrix>(a));
  sample.features.assign(features.begin(), features.end());
  Tape tape;
  const auto bound = nc::bind(tape, model.params());
  const GraphSample* batch[] = {&sample};
  return model.forward(tape, bound, batch, mode, rng).value();
}

double baseline_lstm_forward(std::span<const double> week, const Model& model) {
  GraphSample sample;
  sample.features.push_back(Matrix(1, week.size(), std::vector<double>(week.begin(), week.end())));
  return model.predict(sample)(0, 0);
}

Matrix stack_targets(std::span<const GraphSample* const> batch) {
  std::size_t rows = 0;
  for (const auto* s : batch) {
    if (!s->has_target) throw ContractError("stack_targets: sample without a target");
    rows += s->target.rows();
  }
  Matrix out(rows, 1);
  std::size_t r = 0;
  for (const auto* s : batch) {
    for (std::size_t i = 0; i < s->target.rows(); ++i) out(r++, 0) = s->target(i, 0);
  }
  return out;
}

// ---- checkpoint files ----

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  std::uint64_t uint(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string text(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint " + source_ + " is truncated");
  }

  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_params(const std::filesystem::path& path, const ParamStore& params, const std::string& metadata_json) {
  std::ostringstream out(std::ios::binary);
  out.write("MCKP", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(metadata_json.size()));
  out << metadata_json;
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params.entries()) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out << t.name;
    put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    out.put(t.trainable ? 1 : 0);
    for (double v : t.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary);
  if (!file) throw FormatError("cannot write checkpoint " + path.string());
  const std::string bytes = out.str();
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParamStore load_params(const std::filesystem::path& path, std::string* metadata_json) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw FormatError("checkpoint not found: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  Reader in(std::move(bytes), path.string());

  if (in.text(4) != "MCKP") throw FormatError("not a checkpoint file: " + path.string());
  const auto version = in.uint(4);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + " has format version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion));
  }
  std::string meta = in.text(in.uint(4));
  const auto count = in.uint(4);
  ParamStore store;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = in.text(in.uint(4));
    const auto rows = in.uint(4);
    const auto cols = in.uint(4);
    const bool trainable = in.uint(1) != 0;
    std::vector<double> values(rows * cols);
    for (double& v : values) v = std::bit_cast<double>(in.uint(8));
    store.add(std::move(name), Matrix(rows, cols, std::move(values)), trainable);
  }
  if (!in.done()) throw FormatError("checkpoint " + path.string() + " has trailing bytes");
  if (metadata_json) *metadata_json = std::move(meta);
  return store;
}

std::string config_to_json(const ModelConfig& c) {
  json j = {{"kind", to_string(c.kind)},
            {"window", c.window},
            {"layers", c.layers},
            {"hidden", c.hidden},
            {"lstm_hidden", c.lstm_hidden},
            {"steps", c.steps},
            {"dropout", c.dropout},
            {"concat_all_steps", c.concat_all_steps},
            {"batchnorm", c.batchnorm}};
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("model config must be a JSON object");
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") c.kind = model_kind_from_string(value.get<std::string>());
      else if (key == "window") c.window = value.get<int>();
      else if (key == "layers") c.layers = value.get<int>();
      else if (key == "hidden") c.hidden = value.get<int>();
      else if (key == "lstm_hidden") c.lstm_hidden = value.get<int>();
      else if (key == "steps") c.steps = value.get<int>();
      else if (key == "dropout") c.dropout = value.get<double>();
      else if (key == "concat_all_steps") c.concat_all_steps = value.get<bool>();
      else if (key == "batchnorm") c.batchnorm = value.get<bool>();
      else throw FormatError("unknown model config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("model config has a mistyped value: ") + e.what());
  }
  check_config(c);
  return c;
}

void save_model(const std::filesystem::path& path, const Model& model, const std::string& extra_metadata_json) {
  json meta = json::parse(extra_metadata_json);
  meta["model"] = json::parse(config_to_json(model.config()));
  save_params(path, model.params(), meta.dump());
}

Model load_model(const std::filesystem::path& path, std::string* metadata_json) {
  std::string meta_text;
  ParamStore params = load_params(path, &meta_text);
  json meta;
  try {
    meta = json::parse(meta_text);
  } catch (const json::exception&) {
    throw FormatError("checkpoint " + path.string() + " carries unreadable metadata");
  }
  if (!meta.contains("model")) throw FormatError("checkpoint " + path.string() + " does not describe its model");
  Model model = Model::from_params(config_from_json(meta["model"].dump()), std::move(params));
  if (metadata_json) *metadata_json = std::move(meta_text);
  return model;
}

}  // namespace mobcast::models
