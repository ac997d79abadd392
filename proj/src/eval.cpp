#include "mobcast/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include "json.hpp"
#include <set>
#include <thread>
#include <tuple>

#include "mobcast/errors.hpp"
#include "mobcast/util/text.hpp"

namespace mobcast::eval {

namespace fs = std::filesystem;
namespace nc = numcore;
using nlohmann::json;

void ErrorReport::merge(ErrorReport other) {
  rows.insert(rows.end(), std::make_move_iterator(other.rows.begin()), std::make_move_iterator(other.rows.end()));
  skipped.insert(skipped.end(), other.skipped.begin(), other.skipped.end());
  traces.insert(traces.end(), other.traces.begin(), other.traces.end());
  flags.merge(other.flags);
}

std::vector<Cell> grid_cells(int n_days, const ProtocolGrid& grid) {
  if (grid.dt < 1 || grid.t_step < 1 || grid.t_start < 1) throw ConfigError("protocol grid: dt, t_step, t_start must be >= 1");
  const int t_end = grid.t_end > 0 ? std::min(grid.t_end, n_days - 1) : n_days - 1;
  std::vector<Cell> cells;
  for (int t = grid.t_start; t <= t_end; t += grid.t_step)
    for (int j = 1; j <= grid.dt && t + j <= n_days; ++j) cells.push_back({t, j});
  return cells;
}

namespace {

struct CellResult {
  std::optional<Matrix> prediction;
  std::string skip_reason;
  int max_day_read = 0;
};

}  // namespace

ErrorReport rolling_evaluate(const graphs::PreparedDataset& data, const std::string& model, const Forecaster& forecaster,
                             const ProtocolGrid& grid, std::uint64_t seed, unsigned jobs, std::span<const Cell> cells) {
  const int n_days = static_cast<int>(data.n_days());
  const std::vector<Cell> all = cells.empty() ? grid_cells(n_days, grid) : std::vector<Cell>(cells.begin(), cells.end());
  for (const Cell& c : all) {
    if (c.T < 1 || c.j < 1 || c.T + c.j > n_days) {
      throw ContractError("rolling_evaluate: cell (T=" + std::to_string(c.T) + ", j=" + std::to_string(c.j) +
                          ") lies outside the data");
    }
  }

  std::vector<CellResult> results(all.size());
  std::vector<std::exception_ptr> errors(all.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < all.size(); k = next++) {
      const Cell c = all[k];
      const graphs::DataView view(data, c.T);
      try {
        const std::uint64_t cell_seed =
            nc::Rng::derive(seed, {static_cast<std::uint64_t>(c.T), static_cast<std::uint64_t>(c.j)});
        results[k].prediction = forecaster(view, c.T, c.j, cell_seed);
      } catch (const InsufficientDataError& e) {
        results[k].skip_reason = e.what();
      } catch (...) {
        errors[k] = std::current_exception();
      }
      results[k].max_day_read = view.max_day_read();
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(all.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const dataio::CountryDataset& ds = data.dataset();
  const graphs::DataView truth(data);
  ErrorReport report;
  for (std::size_t k = 0; k < all.size(); ++k) {
    const Cell c = all[k];
    report.traces.push_back({c.T, c.j, results[k].max_day_read});
    if (!results[k].prediction) {
      report.skipped.push_back({ds.country, model, c.T, c.j, results[k].skip_reason});
      continue;
    }
    const Matrix& p = *results[k].prediction;
    if (p.rows() != ds.n_regions() || p.cols() != 1) {
      throw DimensionError("rolling_evaluate: forecaster returned " + std::to_string(p.rows()) + "x" +
                           std::to_string(p.cols()) + " for " + std::to_string(ds.n_regions()) + " regions");
    }
    for (std::size_t u = 0; u < ds.n_regions(); ++u) {
      const double y = truth.cases(u, c.T + c.j);
      report.rows.push_back({ds.country, model, c.T, c.j, ds.regions[u], p(u, 0), y, std::abs(p(u, 0) - y)});
    }
  }
  return report;
}

Forecaster baseline_forecaster(baselines::BaselineKind kind, const baselines::BaselineConfig& config) {
  return [kind, config](const graphs::DataView& view, int T, int j, std::uint64_t) {
    return baselines::baseline_forecast(kind, view, T, j, config).prediction;
  };
}

Forecaster model_forecaster(const models::ModelConfig& model, const train::TrainConfig& config) {
  return [model, config](const graphs::DataView& view, int T, int j, std::uint64_t seed) {
    nc::Rng rng(seed);
    train::TrainConfig cell = config;
    cell.seed = seed;
    return meta::fine_tune_cell(models::Model::create(model, rng), view, T, j, cell).prediction;
  };
}

Forecaster transfer_forecaster(models::Model theta, const train::TrainConfig& config) {
  return [theta = std::move(theta), config](const graphs::DataView& view, int T, int j, std::uint64_t seed) {
    train::TrainConfig cell = config;
    cell.seed = seed;
    return meta::fine_tune_cell(theta, view, T, j, cell).prediction;
  };
}

Forecaster tl_base_forecaster(std::vector<const graphs::PreparedDataset*> foreign, const models::ModelConfig& model,
                              const train::TrainConfig& config) {
  return [foreign = std::move(foreign), model, config](const graphs::DataView& view, int T, int j, std::uint64_t seed) {
    nc::Rng rng(seed);
    train::TrainConfig cell = config;
    cell.seed = seed;
    return meta::tl_base_cell(foreign, view, T, j, models::Model::create(model, rng), cell).prediction;
  };
}

double error_metric(std::span<const ReportRow> rows) {
  if (rows.empty()) throw ContractError("error_metric: no rows");
  double sum = 0;
  for (const ReportRow& r : rows) sum += std::abs(r.prediction - r.actual);
  return sum / static_cast<double>(rows.size());
}

std::map<std::string, std::map<std::string, RangeError>> summarize(std::span<const ReportRow> rows,
                                                                   std::span<const HorizonRange> ranges) {
  std::map<std::string, std::map<std::string, RangeError>> out;
  std::map<std::pair<std::string, std::string>, std::set<std::tuple<std::string, int, int>>> cells;
  for (const ReportRow& r : rows) {
    for (const HorizonRange& range : ranges) {
      if (r.horizon < range.first || r.horizon > range.last) continue;
      RangeError& e = out[r.model][range.label()];
      e.error += std::abs(r.prediction - r.actual);
      ++e.rows;
      cells[{r.model, range.label()}].insert({r.country, r.T, r.horizon});
    }
  }
  for (auto& [model, by_range] : out) {
    for (auto& [label, e] : by_range) {
      e.error /= static_cast<double>(e.rows);
      e.cells = cells[{model, label}].size();
    }
  }
  return out;
}

RelativeError relative_error(std::span<const ReportRow> rows, int window) {
  if (window < 1) throw ContractError("relative_error: window must be >= 1");
  RelativeError out;
  std::map<std::string, std::size_t> region_index;
  // (region, T) -> horizon -> (prediction, actual)
  std::map<std::pair<std::size_t, int>, std::map<int, std::pair<double, double>>> by_anchor;
  for (const ReportRow& r : rows) {
    auto [it, fresh] = region_index.try_emplace(r.region, out.regions.size());
    if (fresh) out.regions.push_back(r.region);
    by_anchor[{it->second, r.T}][r.horizon] = {r.prediction, r.actual};
  }
  std::vector<double> sums(out.regions.size(), 0.0);
  std::vector<std::size_t> counts(out.regions.size(), 0);
  double pooled = 0;
  for (const auto& [key, horizons] : by_anchor) {
    double p = 0, y = 0;
    bool complete = true;
    for (int i = 1; i <= window && complete; ++i) {
      const auto it = horizons.find(i);
      if (it == horizons.end()) complete = false;
      else {
        p += it->second.first;
        y += it->second.second;
      }
    }
    if (!complete) continue;
    if (y == 0.0) {
      ++out.skipped;
      continue;
    }
    const double term = std::abs(p - y) / y;
    sums[key.first] += term;
    ++counts[key.first];
    pooled += term;
    ++out.terms;
  }
  if (out.terms == 0) {
    throw UndefinedResultError("relative_error: no window with a nonzero actual sum (" + std::to_string(out.skipped) +
                               " skipped)");
  }
  out.pooled = pooled / static_cast<double>(out.terms);
  for (std::size_t u = 0; u < sums.size(); ++u) {
    out.per_region.push_back(counts[u] ? std::optional(sums[u] / static_cast<double>(counts[u])) : std::nullopt);
  }
  return out;
}

Matrix mobility_totals(const dataio::CountryDataset& dataset) {
  const std::size_t n = dataset.n_regions();
  Matrix out(n, dataset.n_days());
  for (std::size_t t = 0; t < dataset.n_days(); ++t) {
    const Matrix& m = dataset.mobility[t];
    for (std::size_t u = 0; u < n; ++u) {
      double total = -m(u, u);
      for (std::size_t v = 0; v < n; ++v) total += m(u, v) + m(v, u);
      out(u, t) = total;
    }
  }
  return out;
}

std::optional<double> pearson_shift_correlation(std::span<const double> mobility, std::span<const double> cases,
                                                int shift) {
  if (shift < 0) throw ContractError("pearson_shift_correlation: negative shift");
  const std::size_t len = std::min(mobility.size(), cases.size());
  const auto s = static_cast<std::size_t>(shift);
  if (len < s + 2) throw ContractError("pearson_shift_correlation: series too short for shift " + std::to_string(shift));
  const std::size_t m = len - s;
  const auto x = mobility.first(m);
  const auto y = cases.subspan(s, m);
  double mx = 0, my = 0;
  for (std::size_t k = 0; k < m; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(m);
  my /= static_cast<double>(m);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < m; ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<CorrelationRow> correlation_table(const dataio::CountryDataset& dataset, int max_shift) {
  const Matrix totals = mobility_totals(dataset);
  std::vector<CorrelationRow> out;
  for (std::size_t u = 0; u < dataset.n_regions(); ++u) {
    const auto m = totals.row(u);
    const auto c = dataset.cases.row(u);
    for (int s = 1; s <= max_shift && static_cast<std::size_t>(s) + 2 <= dataset.n_days(); ++s) {
      out.push_back({dataset.regions[u], s, pearson_shift_correlation(m, c, s)});
    }
  }
  return out;
}

std::vector<DayStats> case_stats(const dataio::CountryDataset& dataset) {
  const std::size_t n = dataset.n_regions();
  std::vector<DayStats> out;
  for (std::size_t t = 0; t < dataset.n_days(); ++t) {
    DayStats d;
    d.date = dataset.dates[t];
    for (std::size_t u = 0; u < n; ++u) d.mean += dataset.cases(u, t);
    d.mean /= static_cast<double>(n);
    for (std::size_t u = 0; u < n; ++u) {
      const double c = dataset.cases(u, t);
      d.stddev += (c - d.mean) * (c - d.mean);
      if (t > 0) d.max_diff = std::max(d.max_diff, std::abs(c - dataset.cases(u, t - 1)));
    }
    d.stddev = std::sqrt(d.stddev / static_cast<double>(n));
    out.push_back(d);
  }
  return out;
}

namespace {

std::string fmt(double v) { return util::format_double(v); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_correlations(const std::vector<CorrelationRow>& rows, const fs::path& path) {
  std::string corr = "region,shift,pearson\n";
  for (const CorrelationRow& c : rows)
    corr += csv_field(c.region) + ',' + std::to_string(c.shift) + ',' + (c.pearson ? fmt(*c.pearson) : "") + '\n';
  util::write_file(path, corr);
}

void write_case_stats(const std::vector<DayStats>& stats, const fs::path& path) {
  std::string out = "date,mean,std,max_diff\n";
  for (const DayStats& d : stats) out += d.date + ',' + fmt(d.mean) + ',' + fmt(d.stddev) + ',' + fmt(d.max_diff) + '\n';
  util::write_file(path, out);
}

void emit_report(const ErrorReport& report, const fs::path& dir, const ReportExtras& extras) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IngestionError(dir.string() + ": cannot create report directory: " + ec.message());

  std::string rows = "country,model,T,horizon,region,prediction,actual,abs_error\n";
  for (const ReportRow& r : report.rows) {
    rows += csv_field(r.country) + ',' + csv_field(r.model) + ',' + std::to_string(r.T) + ',' +
            std::to_string(r.horizon) + ',' + csv_field(r.region) + ',' + fmt(r.prediction) + ',' + fmt(r.actual) +
            ',' + fmt(r.abs_error) + '\n';
  }
  util::write_file(dir / "rows.csv", rows);

  json summary = json::object();
  for (const auto& [model, by_range] : summarize(report.rows))
    for (const auto& [label, e] : by_range) summary[model][label] = e.error;
  util::write_file(dir / "summary.json", summary.dump(2) + "\n");

  std::string per_horizon = "model,horizon,error,cells\n";
  std::vector<HorizonRange> single;
  for (int j = 1; j <= 14; ++j) single.push_back({j, j});
  for (const ReportRow& r : report.rows)
    if (r.horizon > 14 && std::none_of(single.begin(), single.end(), [&](auto& h) { return h.first == r.horizon; }))
      single.push_back({r.horizon, r.horizon});
  for (const auto& [model, by_range] : summarize(report.rows, single)) {
    std::vector<std::pair<int, RangeError>> ordered;
    for (const auto& [label, e] : by_range) ordered.emplace_back(std::stoi(label), e);
    std::sort(ordered.begin(), ordered.end(), [](auto& a, auto& b) { return a.first < b.first; });
    for (const auto& [j, e] : ordered)
      per_horizon += csv_field(model) + ',' + std::to_string(j) + ',' + fmt(e.error) + ',' + std::to_string(e.cells) + '\n';
  }
  util::write_file(dir / "per_horizon.csv", per_horizon);

  std::string skipped = "country,model,T,horizon,reason\n";
  for (const SkippedCell& s : report.skipped) {
    skipped += csv_field(s.country) + ',' + csv_field(s.model) + ',' + std::to_string(s.T) + ',' +
               std::to_string(s.horizon) + ',' + csv_field(s.reason) + '\n';
  }
  util::write_file(dir / "skipped.csv", skipped);

  json flags = json::object();
  for (const auto& [k, v] : report.flags) flags[k] = v;
  util::write_file(dir / "flags.json", flags.dump(2) + "\n");

  write_correlations(extras.correlations, dir / "correlations.csv");
  write_case_stats(extras.case_stats, dir / "case_stats.csv");
}

std::vector<ReportRow> load_rows(const fs::path& rows_csv) {
  const util::CsvFile csv = util::read_csv(rows_csv);
  const std::vector<std::string> expected = {"country", "model", "T", "horizon", "region", "prediction", "actual", "abs_error"};
  if (csv.header != expected) throw FormatError(rows_csv.string() + ": unexpected header");
  std::vector<ReportRow> out;
  for (std::size_t k = 0; k < csv.rows.size(); ++k) {
    const auto& f = csv.rows[k];
    if (f.size() != expected.size()) {
      throw FormatError(rows_csv.string() + ":" + std::to_string(csv.line_numbers[k]) + ": expected 8 fields");
    }
    out.push_back({f[0], f[1], static_cast<int>(util::parse_int(f[2])), static_cast<int>(util::parse_int(f[3])), f[4],
                   util::parse_double(f[5]), util::parse_double(f[6]), util::parse_double(f[7])});
  }
  return out;
}

}  // namespace mobcast::eval
