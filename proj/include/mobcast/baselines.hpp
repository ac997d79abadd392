#pragma once

#include <span>
#include <string>
#include <vector>

#include "mobcast/graphs.hpp"

namespace mobcast::baselines {

// Mean of every value; throws ContractError on an empty series.
double avg_predict(std::span<const double> series);
// Mean of the last min(window, length) values.
double avg_window_predict(std::span<const double> series, int window = 7);
double last_day_predict(std::span<const double> series);

struct ArModel {
  std::vector<double> lags;  // phi_1 .. phi_p, phi_1 multiplies the most recent value
  double intercept = 0.0;
  int differencing = 0;
  // Set when the least-squares design was rank deficient and ridge (1e-6) was used instead.
  bool ridge_fallback = false;
};

inline constexpr double kRidgeLambda = 1e-6;

// OLS fit of z_t on (z_{t-1}, ..., z_{t-p}, 1), where z is the series
// differenced `differencing` (0 or 1) times. Needs p + 2 values after differencing.
ArModel ar_fit(std::span<const double> series, int order = 7, int differencing = 1);

// Recursive forecast `horizon` steps past the end of `series`, undifferenced and clamped at 0.
double ar_predict(const ArModel& model, std::span<const double> series, int horizon);

enum class BaselineKind { Avg, AvgWindow, LastDay, Ar };

std::string to_string(BaselineKind kind);

struct BaselineConfig {
  int window = 7;
  int ar_order = 7;
  int ar_differencing = 1;
};

struct BaselineForecast {
  numcore::Matrix prediction;   // n x 1
  std::size_t ridge_fallbacks = 0;  // regions whose AR fit needed ridge
};

// Region u's cases on days 1..last_day read through the (guarded) view.
std::vector<double> region_series(const graphs::DataView& view, std::size_t region, int last_day);

// Forecast of day last_day + horizon for every region using only days 1..last_day.
BaselineForecast baseline_forecast(BaselineKind kind, const graphs::DataView& view, int last_day, int horizon,
                                   const BaselineConfig& config = {});

}  // namespace mobcast::baselines
