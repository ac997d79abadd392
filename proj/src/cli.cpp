#include "mobcast/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mobcast/dataio.hpp"
#include "mobcast/errors.hpp"
#include "mobcast/util/text.hpp"

namespace mobcast::cli {

namespace fs = std::filesystem;
namespace nc = numcore;
using nlohmann::json;

namespace {

template <class T>
T get(const json& v, const std::string& where) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + where + "' has the wrong type");
  }
}

template <class F>
void each_key(const json& section, const std::string& where, F&& handle) {
  if (!section.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    if (!handle(key, value)) throw ConfigError("config: unknown key '" + where + (where.empty() ? "" : ".") + key + "'");
  }
}

struct ModelSpec {
  std::string name;
  std::string label;
  bool neural = false;
  models::ModelKind kind = models::ModelKind::Mpnn;
  baselines::BaselineKind baseline = baselines::BaselineKind::Avg;
};

const std::vector<ModelSpec>& model_specs() {
  using models::ModelKind;
  using baselines::BaselineKind;
  static const std::vector<ModelSpec> specs = {
      {"mpnn", "MPNN", true, ModelKind::Mpnn, {}},
      {"mpnn_lstm", "MPNN+LSTM", true, ModelKind::MpnnLstm, {}},
      {"lstm", "LSTM", true, ModelKind::Lstm, {}},
      {"mpnn_tl", "MPNN+TL", true, ModelKind::Mpnn, {}},
      {"tl_base", "TL_BASE", true, ModelKind::Mpnn, {}},
      {"avg", "AVG", false, {}, BaselineKind::Avg},
      {"avg_window", "AVG_WINDOW", false, {}, BaselineKind::AvgWindow},
      {"last_day", "LAST_DAY", false, {}, BaselineKind::LastDay},
      {"arima", "ARIMA", false, {}, BaselineKind::Ar},
  };
  return specs;
}

const ModelSpec& model_spec(const std::string& name) {
  for (const ModelSpec& s : model_specs())
    if (s.name == name) return s;
  throw ConfigError("unknown model '" + name + "'");
}

}  // namespace

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& s : model_specs()) out.push_back(s.name);
    return out;
  }();
  return names;
}

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  each_key(doc, "", [&](const std::string& key, const json& v) {
    if (key == "seed") c.seed = get<std::uint64_t>(v, key);
    else if (key == "model") c.model = get<std::string>(v, key);
    else if (key == "min_total_cases") c.min_total_cases = get<double>(v, key);
    else if (key == "model_config") {
      each_key(v, key, [&](const std::string& k, const json& x) {
        auto& m = c.model_config;
        const std::string w = key + "." + k;
        if (k == "window") m.window = get<int>(x, w);
        else if (k == "layers") m.layers = get<int>(x, w);
        else if (k == "hidden") m.hidden = get<int>(x, w);
        else if (k == "lstm_hidden") m.lstm_hidden = get<int>(x, w);
        else if (k == "steps") m.steps = get<int>(x, w);
        else if (k == "dropout") m.dropout = get<double>(x, w);
        else if (k == "concat_all_steps") m.concat_all_steps = get<bool>(x, w);
        else if (k == "batchnorm") m.batchnorm = get<bool>(x, w);
        else return false;
        return true;
      });
    } else if (key == "train") {
      each_key(v, key, [&](const std::string& k, const json& x) {
        auto& t = c.train;
        const std::string w = key + "." + k;
        if (k == "max_epochs") t.max_epochs = get<int>(x, w);
        else if (k == "patience") t.patience = get<int>(x, w);
        else if (k == "patience_start_epoch") t.patience_start_epoch = get<int>(x, w);
        else if (k == "batch_size") t.batch_size = get<int>(x, w);
        else if (k == "lr") t.lr = get<double>(x, w);
        else return false;
        return true;
      });
    } else if (key == "meta") {
      each_key(v, key, [&](const std::string& k, const json& x) {
        auto& m = c.meta;
        const std::string w = key + "." + k;
        if (k == "alpha") m.alpha = get<double>(x, w);
        else if (k == "alpha_m") m.alpha_m = get<double>(x, w);
        else if (k == "dt") m.dt = get<int>(x, w);
        else if (k == "t_start") m.t_start = get<int>(x, w);
        else if (k == "t_max") m.t_max = get<int>(x, w);
        else if (k == "meta_epochs") m.meta_epochs = get<int>(x, w);
        else if (k == "batch_size") m.batch_size = get<int>(x, w);
        else return false;
        return true;
      });
    } else if (key == "grid") {
      each_key(v, key, [&](const std::string& k, const json& x) {
        auto& g = c.grid;
        const std::string w = key + "." + k;
        if (k == "t_start") g.t_start = get<int>(x, w);
        else if (k == "t_end") g.t_end = get<int>(x, w);
        else if (k == "dt") g.dt = get<int>(x, w);
        else if (k == "t_step") g.t_step = get<int>(x, w);
        else return false;
        return true;
      });
    } else if (key == "baseline") {
      each_key(v, key, [&](const std::string& k, const json& x) {
        auto& b = c.baseline;
        const std::string w = key + "." + k;
        if (k == "window") b.window = get<int>(x, w);
        else if (k == "ar_order") b.ar_order = get<int>(x, w);
        else if (k == "ar_differencing") b.ar_differencing = get<int>(x, w);
        else return false;
        return true;
      });
    } else {
      return false;
    }
    return true;
  });
  model_spec(c.model);
  train::validate(c.train);
  meta::validate(c.meta);
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  const auto& m = c.model_config;
  json doc = {
      {"seed", c.seed},
      {"model", c.model},
      {"min_total_cases", c.min_total_cases},
      {"model_config",
       {{"window", m.window},
        {"layers", m.layers},
        {"hidden", m.hidden},
        {"lstm_hidden", m.lstm_hidden},
        {"steps", m.steps},
        {"dropout", m.dropout},
        {"concat_all_steps", m.concat_all_steps},
        {"batchnorm", m.batchnorm}}},
      {"train",
       {{"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"patience_start_epoch", c.train.patience_start_epoch},
        {"batch_size", c.train.batch_size},
        {"lr", c.train.lr}}},
      {"meta",
       {{"alpha", c.meta.alpha},
        {"alpha_m", c.meta.alpha_m},
        {"dt", c.meta.dt},
        {"t_start", c.meta.t_start},
        {"t_max", c.meta.t_max},
        {"meta_epochs", c.meta.meta_epochs},
        {"batch_size", c.meta.batch_size}}},
      {"grid", {{"t_start", c.grid.t_start}, {"t_end", c.grid.t_end}, {"dt", c.grid.dt}, {"t_step", c.grid.t_step}}},
      {"baseline",
       {{"window", c.baseline.window},
        {"ar_order", c.baseline.ar_order},
        {"ar_differencing", c.baseline.ar_differencing}}},
  };
  return doc.dump(2);
}

std::string config_hash(const RunConfig& c) { return util::fnv1a_hex(run_config_to_json(c)); }

namespace {

class Run {
 public:
  Run(std::string command, std::vector<std::string> args, std::ostream& out, std::ostream& err)
      : command_(std::move(command)), args_(std::move(args)), out_(out), err_(err) {}

  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }

  void start(const fs::path& dir, const RunConfig& config) {
    dir_ = dir;
    config_ = config;
    fs::create_directories(dir);
    write_manifest("incomplete");
  }
  void finish() { write_manifest("complete"); }
  void abandon() { write_manifest("incomplete"); }
  void note(const std::string& key, json value) { extra_[key] = std::move(value); }

 private:
  void write_manifest(const std::string& status) {
    json m = {{"tool", "mobcast"},
              {"version", kVersion},
              {"command", command_},
              {"args", args_},
              {"config", json::parse(run_config_to_json(config_))},
              {"config_hash", config_hash(config_)},
              {"seed", config_.seed},
              {"formats", {{"bundle", "1"}, {"checkpoint", models::kCheckpointVersion}}},
              {"status", status}};
    for (const auto& [k, v] : extra_.items()) m[k] = v;
    util::write_file(dir_ / "manifest.json", m.dump(2) + "\n");
  }

  std::string command_;
  std::vector<std::string> args_;
  std::ostream& out_;
  std::ostream& err_;
  fs::path dir_;
  RunConfig config_;
  json extra_ = json::object();
};

struct Common {
  std::string config_path;
  std::string data_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string model;
};

RunConfig load_config(const Common& common) {
  RunConfig c = common.config_path.empty() ? RunConfig{} : parse_run_config(util::read_file(common.config_path));
  if (common.seed_given) c.seed = common.seed;
  if (!common.model.empty()) c.model = common.model;
  model_spec(c.model);
  return c;
}

fs::path resolve(const std::string& path, const std::string& data_dir) {
  fs::path p(path);
  if (p.is_relative() && !data_dir.empty()) return fs::path(data_dir) / p;
  return p;
}

std::uint64_t country_seed(std::uint64_t seed, const std::string& country) {
  return nc::Rng::derive(seed, {std::stoull(util::fnv1a_hex(country), nullptr, 16)});
}

std::string cell_stem(int T, int j) { return "T" + std::to_string(T) + "_j" + std::to_string(j); }

fs::path report_dir_of(const fs::path& dir) {
  if (fs::exists(dir / "rows.csv")) return dir;
  return dir / "report";
}

std::vector<eval::Cell> requested_cells(int n_days, const RunConfig& c, int T, int j) {
  if (T > 0 || j > 0) {
    if (T <= 0 || j <= 0) throw ConfigError("give both --last-day and --horizon, or neither");
    return {{T, j}};
  }
  return eval::grid_cells(n_days, c.grid);
}

models::ModelConfig model_config_for(const RunConfig& c) {
  models::ModelConfig m = c.model_config;
  m.kind = model_spec(c.model).kind;
  return m;
}

void print_summary(std::ostream& out, const eval::ErrorReport& report) {
  for (const auto& [model, ranges] : eval::summarize(report.rows)) {
    out << model;
    for (const auto& [label, e] : ranges) out << "  " << label << ": " << util::format_double(e.error);
    out << "\n";
  }
  if (!report.skipped.empty()) out << report.skipped.size() << " cells skipped for lack of training data\n";
}

eval::Forecaster baseline_cells(const RunConfig& c, std::shared_ptr<std::atomic<std::size_t>> ridge) {
  const auto kind = model_spec(c.model).baseline;
  return [kind, cfg = c.baseline, ridge](const graphs::DataView& view, int T, int j, std::uint64_t) {
    auto f = baselines::baseline_forecast(kind, view, T, j, cfg);
    *ridge += f.ridge_fallbacks;
    return f.prediction;
  };
}

void flag_baseline(eval::ErrorReport& report, const RunConfig& c, std::size_t ridge) {
  if (c.model != "arima") return;
  report.flags["ARIMA"] = "AR(" + std::to_string(c.baseline.ar_order) + ") with differencing " +
                          std::to_string(c.baseline.ar_differencing) +
                          " fit by ordinary least squares; an approximation of ARIMA";
  report.flags["ARIMA.ridge_fallbacks"] = std::to_string(ridge);
}

int cmd_synth(Run& run, const Common& common, std::size_t regions, std::size_t days, std::size_t countries,
              const std::string& out_arg) {
  RunConfig c = load_config(common);
  dataio::SyntheticConfig sc;
  sc.n_regions = regions;
  sc.n_days = days;
  sc.n_countries = countries;
  sc.noise_seed = c.seed;
  const fs::path out = out_arg.empty() ? fs::path(common.data_dir) : fs::path(out_arg);
  if (out.empty()) throw ConfigError("synth: give --out or set MOBCAST_DATA_DIR");
  run.start(out, c);
  json names = json::array();
  for (const auto& ds : dataio::generate_synthetic(sc)) {
    dataio::save_bundle(ds, out / ds.country);
    names.push_back(ds.country);
    run.out() << "wrote " << (out / ds.country).string() << "\n";
  }
  run.note("synthetic", {{"regions", regions}, {"days", days}, {"countries", countries}, {"bundles", names}});
  run.finish();
  return 0;
}

int cmd_ingest(Run& run, const Common& common, const std::string& cases, const std::string& mobility,
               const std::string& regions_file, const std::string& mapping_file, const std::string& country,
               const std::string& out_arg) {
  const RunConfig c = load_config(common);
  const fs::path cases_path = resolve(cases, common.data_dir), mobility_path = resolve(mobility, common.data_dir);
  const dataio::RegionMapping mapping =
      mapping_file.empty() ? dataio::RegionMapping{} : dataio::load_region_mapping(resolve(mapping_file, common.data_dir));

  std::vector<std::string> regions;
  if (!regions_file.empty()) {
    std::istringstream in(util::read_file(resolve(regions_file, common.data_dir)));
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) regions.push_back(line);
    }
  } else {
    std::set<std::string> seen;
    for (const auto& row : util::read_csv(cases_path).rows) {
      if (row.size() < 2) continue;
      const auto it = mapping.find(row[1]);
      seen.insert(it == mapping.end() ? row[1] : it->second);
    }
    regions.assign(seen.begin(), seen.end());
  }

  dataio::RawCountryData raw;
  raw.country = country;
  raw.regions = regions;
  raw.mobility = dataio::load_mobility(mobility_path, regions, mapping);
  raw.cases = dataio::load_cases(cases_path, regions, {}, mapping);
  const dataio::CountryDataset ds = dataio::align_and_filter(raw, c.min_total_cases);

  const fs::path out = fs::path(out_arg);
  run.start(out, c);
  dataio::save_bundle(ds, out / "bundle");
  run.note("ingest", {{"regions_in", regions.size()},
                      {"regions_kept", ds.n_regions()},
                      {"days", ds.n_days()},
                      {"clamped_negative", raw.cases.clamped_negative},
                      {"missing_filled", raw.cases.missing_filled},
                      {"unknown_region_rows", raw.cases.unknown_region_rows}});
  run.out() << ds.country << ": " << ds.n_regions() << " of " << regions.size() << " regions, " << ds.n_days()
            << " days; clamped " << raw.cases.clamped_negative << ", filled " << raw.cases.missing_filled
            << ", unknown rows " << raw.cases.unknown_region_rows << "\n";
  run.finish();
  return 0;
}

int cmd_correlate(Run& run, const Common& common, const std::string& bundle, const std::string& out_arg,
                  int max_shift) {
  const RunConfig c = load_config(common);
  const dataio::CountryDataset ds = dataio::load_bundle(resolve(bundle, common.data_dir));
  run.start(out_arg, c);
  const auto rows = eval::correlation_table(ds, max_shift);
  eval::write_correlations(rows, fs::path(out_arg) / "correlations.csv");
  eval::write_case_stats(eval::case_stats(ds), fs::path(out_arg) / "case_stats.csv");
  std::size_t missing = 0;
  for (const auto& r : rows) missing += r.pearson ? 0 : 1;
  run.note("correlate", {{"country", ds.country}, {"max_shift", max_shift}, {"missing", missing}});
  run.out() << rows.size() << " correlations, " << missing << " undefined\n";
  run.finish();
  return 0;
}

int cmd_meta_train(Run& run, const Common& common, const std::vector<std::string>& bundles, const std::string& out_arg) {
  RunConfig c = load_config(common);
  c.model = "mpnn_tl";
  std::vector<graphs::PreparedDataset> data;
  json names = json::array();
  for (const auto& b : bundles) {
    data.emplace_back(dataio::load_bundle(resolve(b, common.data_dir)));
    names.push_back(data.back().dataset().country);
  }
  std::vector<const graphs::PreparedDataset*> ptrs;
  for (const auto& d : data) ptrs.push_back(&d);
  run.start(out_arg, c);
  meta::MetaConfig mc = c.meta;
  mc.seed = c.seed;
  meta::MetaTrainReport report;
  const models::Model theta = meta::maml_meta_train(ptrs, model_config_for(c), mc, &report);
  const json tag = {{"label", "MPNN+TL meta"}, {"meta_train_countries", names}, {"config_hash", config_hash(c)}};
  models::save_model(fs::path(out_arg) / "meta.ckpt", theta, tag.dump());
  run.note("meta_train", {{"countries", names}, {"tasks", report.tasks}, {"inner_steps", report.inner_steps}});
  run.out() << "meta-trained on " << report.tasks << " tasks (" << report.inner_steps << " inner steps)\n";
  run.finish();
  return 0;
}

int cmd_train(Run& run, const Common& common, const std::string& bundle, const std::string& out_arg, int T, int j,
              unsigned jobs, const std::string& meta_checkpoint, const std::vector<std::string>& foreign_bundles) {
  const RunConfig c = load_config(common);
  const ModelSpec& spec = model_spec(c.model);
  const graphs::PreparedDataset data(dataio::load_bundle(resolve(bundle, common.data_dir)));
  const std::string country = data.dataset().country;
  const auto cells = requested_cells(static_cast<int>(data.n_days()), c, T, j);
  const fs::path out(out_arg);
  run.start(out, c);

  eval::ErrorReport report;
  if (!spec.neural) {
    auto ridge = std::make_shared<std::atomic<std::size_t>>(0);
    report = eval::rolling_evaluate(data, spec.label, baseline_cells(c, ridge), c.grid, country_seed(c.seed, country),
                                    jobs, cells);
    flag_baseline(report, c, *ridge);
  } else {
    std::optional<models::Model> theta;
    if (c.model == "mpnn_tl") {
      if (meta_checkpoint.empty()) throw ConfigError("train --model mpnn_tl needs --meta-checkpoint");
      theta = models::load_model(resolve(meta_checkpoint, common.data_dir));
    }
    std::vector<graphs::PreparedDataset> foreign_data;
    for (const auto& b : foreign_bundles) foreign_data.emplace_back(dataio::load_bundle(resolve(b, common.data_dir)));
    std::vector<const graphs::PreparedDataset*> foreign;
    for (const auto& d : foreign_data) foreign.push_back(&d);
    if (c.model == "tl_base" && foreign.empty()) throw ConfigError("train --model tl_base needs --foreign bundles");

    const fs::path ckdir = out / "checkpoints";
    fs::create_directories(ckdir);
    const models::ModelConfig mc = model_config_for(c);
    const std::string hash = config_hash(c);
    eval::Forecaster cell = [&](const graphs::DataView& view, int t, int h, std::uint64_t seed) {
      train::TrainConfig tc = c.train;
      tc.seed = seed;
      nc::Rng rng(seed);
      try {
        meta::CellForecast f = c.model == "mpnn_tl" ? meta::fine_tune_cell(*theta, view, t, h, tc)
                               : c.model == "tl_base"
                                   ? meta::tl_base_cell(foreign, view, t, h, models::Model::create(mc, rng), tc)
                                   : meta::fine_tune_cell(models::Model::create(mc, rng), view, t, h, tc);
        const json tag = {{"label", spec.label},     {"country", country},
                          {"T", t},                  {"horizon", h},
                          {"config_hash", hash},     {"validation_error", f.checkpoint.validation_error},
                          {"best_epoch", f.checkpoint.best_epoch}, {"epochs_run", f.checkpoint.epochs_run}};
        models::save_model(ckdir / (cell_stem(t, h) + ".ckpt"), f.checkpoint.model, tag.dump());
        return f.prediction;
      } catch (const InsufficientDataError& e) {
        util::write_file(ckdir / (cell_stem(t, h) + ".skipped"), std::string(e.what()) + "\n");
        throw;
      }
    };
    report = eval::rolling_evaluate(data, spec.label, cell, c.grid, country_seed(c.seed, country), jobs, cells);
  }
  eval::emit_report(report, out / "report");
  run.note("cells", {{"requested", cells.size()}, {"skipped", report.skipped.size()}});
  print_summary(run.out(), report);
  run.finish();
  return 0;
}

int cmd_evaluate(Run& run, const Common& common, const std::string& bundle, const std::string& checkpoints,
                 const std::string& out_arg, int T, int j, unsigned jobs) {
  const RunConfig c = load_config(common);
  const graphs::PreparedDataset data(dataio::load_bundle(resolve(bundle, common.data_dir)));
  const std::string country = data.dataset().country;
  const auto cells = requested_cells(static_cast<int>(data.n_days()), c, T, j);
  const fs::path out(out_arg);

  eval::ErrorReport report;
  if (checkpoints.empty()) {
    const ModelSpec& spec = model_spec(c.model);
    if (spec.neural) throw ConfigError("evaluate: neural models need --checkpoints (train them first)");
    run.start(out, c);
    auto ridge = std::make_shared<std::atomic<std::size_t>>(0);
    report = eval::rolling_evaluate(data, spec.label, baseline_cells(c, ridge), c.grid, country_seed(c.seed, country),
                                    jobs, cells);
    flag_baseline(report, c, *ridge);
  } else {
    fs::path ckdir = resolve(checkpoints, common.data_dir);
    if (fs::is_directory(ckdir / "checkpoints")) ckdir /= "checkpoints";
    std::vector<std::string> missing;
    for (const auto& cell : cells) {
      const std::string stem = cell_stem(cell.T, cell.j);
      if (!fs::exists(ckdir / (stem + ".ckpt")) && !fs::exists(ckdir / (stem + ".skipped"))) {
        missing.push_back("(T=" + std::to_string(cell.T) + ", j=" + std::to_string(cell.j) + ")");
      }
    }
    run.start(out, c);
    if (!missing.empty()) {
      run.err() << "evaluate: no checkpoint in " << ckdir.string() << " for cell";
      for (const auto& m : missing) run.err() << " " << m;
      run.err() << "\n";
      run.note("missing_cells", missing);
      run.abandon();
      return 1;
    }
    std::string label;
    {
      // Label of the first real checkpoint; all cells of one training run share it.
      for (const auto& cell : cells) {
        const fs::path p = ckdir / (cell_stem(cell.T, cell.j) + ".ckpt");
        if (!fs::exists(p)) continue;
        std::string meta_text;
        models::load_params(p, &meta_text);
        label = json::parse(meta_text).value("label", "checkpoint");
        break;
      }
    }
    eval::Forecaster from_disk = [&](const graphs::DataView& view, int t, int h, std::uint64_t) {
      const fs::path p = ckdir / (cell_stem(t, h) + ".ckpt");
      if (!fs::exists(p)) throw InsufficientDataError(util::read_file(ckdir / (cell_stem(t, h) + ".skipped")));
      const models::Model m = models::load_model(p);
      return m.predict(graphs::make_test_sample(view, m.config().sample_spec(h), t));
    };
    report = eval::rolling_evaluate(data, label.empty() ? "checkpoint" : label, from_disk, c.grid, 0, jobs, cells);
  }
  eval::emit_report(report, out);
  run.note("cells", {{"requested", cells.size()}, {"skipped", report.skipped.size()}});
  print_summary(run.out(), report);
  run.finish();
  return 0;
}

eval::ErrorReport load_report(const fs::path& dir) {
  eval::ErrorReport r;
  const fs::path d = report_dir_of(dir);
  if (!fs::exists(d / "rows.csv")) throw FormatError(dir.string() + ": no rows.csv");
  r.rows = eval::load_rows(d / "rows.csv");
  if (fs::exists(d / "skipped.csv")) {
    for (const auto& f : util::read_csv(d / "skipped.csv").rows) {
      if (f.size() != 5) throw FormatError((d / "skipped.csv").string() + ": expected 5 fields");
      r.skipped.push_back({f[0], f[1], static_cast<int>(util::parse_int(f[2])), static_cast<int>(util::parse_int(f[3])), f[4]});
    }
  }
  if (fs::exists(d / "flags.json")) {
    const json flags = json::parse(util::read_file(d / "flags.json"));
    for (const auto& [k, v] : flags.items()) r.flags[k] = v.get<std::string>();
  }
  return r;
}

int cmd_report(Run& run, const Common& common, const std::vector<std::string>& inputs, const std::string& out_arg) {
  const RunConfig c = load_config(common);
  eval::ErrorReport merged;
  for (const auto& in : inputs) merged.merge(load_report(resolve(in, common.data_dir)));
  run.start(out_arg, c);
  eval::emit_report(merged, out_arg);
  run.note("inputs", inputs);
  print_summary(run.out(), merged);
  run.finish();
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mobility-graph epidemic forecasting"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common common;
  if (const char* env = std::getenv("MOBCAST_DATA_DIR")) common.data_dir = env;
  auto add_common = [&](CLI::App* sub, bool with_model) {
    sub->add_option("--config", common.config_path, "JSON run configuration");
    sub->add_option("--data-dir", common.data_dir, "Base for relative input paths (default $MOBCAST_DATA_DIR)");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { common.seed = s, common.seed_given = true; }, "Global seed");
    if (with_model) {
      sub->add_option("--model", common.model, "Model name")->check(CLI::IsMember(model_names()));
    }
  };

  std::size_t regions = 30, days = 90, countries = 4;
  std::string out_dir, bundle, cases, mobility, regions_file, mapping, country, checkpoints, meta_ckpt;
  std::vector<std::string> bundles, foreign, inputs;
  int T = 0, j = 0, max_shift = 14;
  unsigned jobs = 1;

  auto* synth = app.add_subcommand("synth", "Write synthetic country bundles");
  add_common(synth, false);
  synth->add_option("--regions", regions)->check(CLI::PositiveNumber);
  synth->add_option("--days", days)->check(CLI::PositiveNumber);
  synth->add_option("--countries", countries)->check(CLI::PositiveNumber);
  synth->add_option("--out", out_dir, "Output directory (default $MOBCAST_DATA_DIR)");

  auto* ingest = app.add_subcommand("ingest", "Raw case and mobility CSVs to a bundle");
  add_common(ingest, false);
  ingest->add_option("--cases", cases)->required();
  ingest->add_option("--mobility", mobility)->required();
  ingest->add_option("--regions", regions_file, "One region id per line (default: regions in the cases file)");
  ingest->add_option("--mapping", mapping, "source_name,region_id CSV");
  ingest->add_option("--country", country)->required();
  ingest->add_option("--out", out_dir)->required();

  auto* correlate = app.add_subcommand("correlate", "Mobility/case shift correlations of one bundle");
  add_common(correlate, false);
  correlate->add_option("--bundle", bundle)->required();
  correlate->add_option("--out", out_dir)->required();
  correlate->add_option("--max-shift", max_shift)->check(CLI::Range(1, 60));

  auto add_cells = [&](CLI::App* sub) {
    sub->add_option("-T,--last-day", T, "Single cell: last observed day")->check(CLI::PositiveNumber);
    sub->add_option("-j,--horizon", j, "Single cell: days ahead")->check(CLI::PositiveNumber);
    sub->add_option("--jobs", jobs, "Parallel grid cells")->check(CLI::PositiveNumber);
  };

  auto* train_cmd = app.add_subcommand("train", "Train one model per grid cell and report its errors");
  add_common(train_cmd, true);
  train_cmd->add_option("--bundle", bundle)->required();
  train_cmd->add_option("--out", out_dir)->required();
  train_cmd->add_option("--meta-checkpoint", meta_ckpt, "Initialization for mpnn_tl");
  train_cmd->add_option("--foreign", foreign, "Other countries' bundles for tl_base");
  add_cells(train_cmd);

  auto* meta_cmd = app.add_subcommand("meta-train", "Meta-learn an MPNN initialization");
  add_common(meta_cmd, false);
  meta_cmd->add_option("--bundle", bundles, "Meta-train bundles, in order")->required();
  meta_cmd->add_option("--out", out_dir)->required();

  auto* evaluate = app.add_subcommand("evaluate", "Errors of saved checkpoints or a baseline");
  add_common(evaluate, true);
  evaluate->add_option("--bundle", bundle)->required();
  evaluate->add_option("--checkpoints", checkpoints, "Directory written by train");
  evaluate->add_option("--out", out_dir)->required();
  add_cells(evaluate);

  auto* report = app.add_subcommand("report", "Merge report directories");
  add_common(report, false);
  report->add_option("--in", inputs)->required();
  report->add_option("--out", out_dir)->required();

  std::vector<std::string> argv_store = {"mobcast"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  Run run(sub->get_name(), args, out, err);
  try {
    if (sub == synth) return cmd_synth(run, common, regions, days, countries, out_dir);
    if (sub == ingest) return cmd_ingest(run, common, cases, mobility, regions_file, mapping, country, out_dir);
    if (sub == correlate) return cmd_correlate(run, common, bundle, out_dir, max_shift);
    if (sub == train_cmd) return cmd_train(run, common, bundle, out_dir, T, j, jobs, meta_ckpt, foreign);
    if (sub == meta_cmd) return cmd_meta_train(run, common, bundles, out_dir);
    if (sub == evaluate) return cmd_evaluate(run, common, bundle, checkpoints, out_dir, T, j, jobs);
    if (sub == report) return cmd_report(run, common, inputs, out_dir);
  } catch (const ConfigError& e) {
    err << sub->get_name() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << sub->get_name() << ": " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace mobcast::cli
