#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobcast/baselines.hpp"
#include "mobcast/graphs.hpp"
#include "mobcast/meta.hpp"
#include "mobcast/train.hpp"

namespace mobcast::eval {

using numcore::Matrix;

struct ProtocolGrid {
  int t_start = train::kProtocolStart;
  int t_end = 0;  // last T; 0 means T_total - 1
  int dt = 14;
  int t_step = 1;
};

struct Cell {
  int T = 0;
  int j = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Every (T, j) with T + j <= n_days, ordered by T then j.
std::vector<Cell> grid_cells(int n_days, const ProtocolGrid& grid);

// Forecast of day T + j for every region. The view is guarded at T.
using Forecaster = std::function<Matrix(const graphs::DataView& view, int T, int j, std::uint64_t seed)>;

struct ReportRow {
  std::string country;
  std::string model;
  int T = 0;
  int horizon = 0;
  std::string region;
  double prediction = 0;
  double actual = 0;
  double abs_error = 0;
};

struct SkippedCell {
  std::string country;
  std::string model;
  int T = 0;
  int horizon = 0;
  std::string reason;
};

struct CellTrace {
  int T = 0;
  int horizon = 0;
  int max_day_read = 0;
};

struct ErrorReport {
  std::vector<ReportRow> rows;
  std::vector<SkippedCell> skipped;
  std::vector<CellTrace> traces;
  // Free-form flags carried into the emitted report (e.g. approximations in use).
  std::map<std::string, std::string> flags;

  void merge(ErrorReport other);
};

// One independent forecast per cell, seeded with derive(seed, {T, j}).
// Cells run on up to `jobs` threads; the result does not depend on `jobs`.
ErrorReport rolling_evaluate(const graphs::PreparedDataset& data, const std::string& model, const Forecaster& forecaster,
                             const ProtocolGrid& grid, std::uint64_t seed, unsigned jobs = 1,
                             std::span<const Cell> cells = {});

Forecaster baseline_forecaster(baselines::BaselineKind kind, const baselines::BaselineConfig& config = {});
// Fresh Glorot model per cell, trained with the standard trainer.
Forecaster model_forecaster(const models::ModelConfig& model, const train::TrainConfig& config);
// Fine-tunes a copy of theta per cell.
Forecaster transfer_forecaster(models::Model theta, const train::TrainConfig& config);
Forecaster tl_base_forecaster(std::vector<const graphs::PreparedDataset*> foreign, const models::ModelConfig& model,
                              const train::TrainConfig& config);

// Mean |prediction - actual|. Throws ContractError when empty.
double error_metric(std::span<const ReportRow> rows);

struct HorizonRange {
  int first = 1;
  int last = 14;
  std::string label() const { return std::to_string(first) + "-" + std::to_string(last); }
};

inline const std::vector<HorizonRange> kTableRanges = {{1, 3}, {1, 7}, {1, 14}};

struct RangeError {
  double error = 0;
  std::size_t cells = 0;
  std::size_t rows = 0;
};

// model -> range label -> mean error over the rows whose horizon lies in the range.
// Ranges without rows are omitted.
std::map<std::string, std::map<std::string, RangeError>> summarize(std::span<const ReportRow> rows,
                                                                   std::span<const HorizonRange> ranges = kTableRanges);

struct RelativeError {
  std::vector<std::optional<double>> per_region;  // indexed like `regions`
  std::vector<std::string> regions;
  double pooled = 0;
  std::size_t terms = 0;
  std::size_t skipped = 0;
};

// Relative error of w-day sums, anchored at every T whose horizons 1..w are all present.
// Rows must come from one country and one model.
RelativeError relative_error(std::span<const ReportRow> rows, int window = 5);

// Daily in + out movement per region: row sum + column sum - diagonal. n x days.
Matrix mobility_totals(const dataio::CountryDataset& dataset);

// Pearson correlation of m[0 .. T-s-1] with c[s .. T-1], T = min(|m|, |c|).
// Returns nullopt when either window has zero variance.
std::optional<double> pearson_shift_correlation(std::span<const double> mobility, std::span<const double> cases,
                                                int shift);

struct CorrelationRow {
  std::string region;
  int shift = 0;
  std::optional<double> pearson;
};

std::vector<CorrelationRow> correlation_table(const dataio::CountryDataset& dataset, int max_shift = 14);

struct DayStats {
  std::string date;
  double mean = 0;
  double stddev = 0;    // population standard deviation over regions
  double max_diff = 0;  // largest |c_u(t) - c_u(t-1)| over regions, 0 on day 1
};

std::vector<DayStats> case_stats(const dataio::CountryDataset& dataset);

void write_correlations(const std::vector<CorrelationRow>& rows, const std::filesystem::path& path);
void write_case_stats(const std::vector<DayStats>& stats, const std::filesystem::path& path);

struct ReportExtras {
  std::vector<CorrelationRow> correlations;
  std::vector<DayStats> case_stats;
};

// Writes rows.csv, summary.json, per_horizon.csv, skipped.csv, flags.json,
// correlations.csv and case_stats.csv into dir.
void emit_report(const ErrorReport& report, const std::filesystem::path& dir, const ReportExtras& extras = {});

// Rows back from an emitted rows.csv.
std::vector<ReportRow> load_rows(const std::filesystem::path& rows_csv);

}  // namespace mobcast::eval
