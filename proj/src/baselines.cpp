#include "mobcast/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>

#include "mobcast/errors.hpp"

namespace mobcast::baselines {

namespace {

void require_nonempty(std::span<const double> series, const char* who) {
  if (series.empty()) throw ContractError(std::string(who) + ": empty series");
}

std::vector<double> difference(std::span<const double> series, int times) {
  std::vector<double> z(series.begin(), series.end());
  for (int k = 0; k < times; ++k) {
    for (std::size_t t = z.size(); t-- > 1;) z[t] -= z[t - 1];
    if (!z.empty()) z.erase(z.begin());
  }
  return z;
}

}  // namespace

double avg_predict(std::span<const double> series) {
  require_nonempty(series, "avg_predict");
  return std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(series.size());
}

double avg_window_predict(std::span<const double> series, int window) {
  require_nonempty(series, "avg_window_predict");
  if (window < 1) throw ContractError("avg_window_predict: window must be >= 1");
  const std::size_t w = std::min(series.size(), static_cast<std::size_t>(window));
  return avg_predict(series.last(w));
}

double last_day_predict(std::span<const double> series) {
  require_nonempty(series, "last_day_predict");
  return series.back();
}

ArModel ar_fit(std::span<const double> series, int order, int differencing) {
  if (order < 0) throw ContractError("ar_fit: order must be >= 0");
  if (differencing != 0 && differencing != 1) throw ContractError("ar_fit: differencing must be 0 or 1");
  const std::vector<double> z = difference(series, differencing);
  const auto p = static_cast<std::size_t>(order);
  if (z.size() < p + 2) {
    throw ContractError("ar_fit: " + std::to_string(z.size()) + " values after differencing, need at least " +
                        std::to_string(p + 2));
  }

  const auto rows = static_cast<Eigen::Index>(z.size() - p);
  const auto cols = static_cast<Eigen::Index>(p + 1);
  Eigen::MatrixXd x(rows, cols);
  Eigen::VectorXd y(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const std::size_t t = p + static_cast<std::size_t>(r);
    y(r) = z[t];
    for (std::size_t k = 1; k <= p; ++k) x(r, static_cast<Eigen::Index>(k - 1)) = z[t - k];
    x(r, cols - 1) = 1.0;
  }

  ArModel model;
  model.differencing = differencing;
  Eigen::VectorXd beta;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() == cols) {
    beta = qr.solve(y);
  } else {
    const Eigen::MatrixXd gram = x.transpose() * x + kRidgeLambda * Eigen::MatrixXd::Identity(cols, cols);
    beta = gram.ldlt().solve(x.transpose() * y);
    model.ridge_fallback = true;
  }
  model.lags.assign(beta.data(), beta.data() + p);
  model.intercept = beta(cols - 1);
  return model;
}

double ar_predict(const ArModel& model, std::span<const double> series, int horizon) {
  if (horizon < 1) throw ContractError("ar_predict: horizon must be >= 1");
  std::vector<double> z = difference(series, model.differencing);
  const std::size_t p = model.lags.size();
  if (z.size() < p) throw ContractError("ar_predict: series shorter than the model order");
  double level = model.differencing == 1 ? series.back() : 0.0;
  double next = 0.0;
  for (int step = 0; step < horizon; ++step) {
    next = model.intercept;
    for (std::size_t k = 1; k <= p; ++k) next += model.lags[k - 1] * z[z.size() - k];
    z.push_back(next);
    if (model.differencing == 1) level += next;
  }
  return std::max(0.0, model.differencing == 1 ? level : next);
}

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::Avg: return "AVG";
    case BaselineKind::AvgWindow: return "AVG_WINDOW";
    case BaselineKind::LastDay: return "LAST_DAY";
    case BaselineKind::Ar: return "ARIMA";
  }
  return "unknown";
}

std::vector<double> region_series(const graphs::DataView& view, std::size_t region, int last_day) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(std::max(last_day, 0)));
  for (int t = 1; t <= last_day; ++t) out.push_back(view.cases(region, t));
  return out;
}

BaselineForecast baseline_forecast(BaselineKind kind, const graphs::DataView& view, int last_day, int horizon,
                                   const BaselineConfig& config) {
  BaselineForecast out{numcore::Matrix(view.n_regions(), 1), 0};
  for (std::size_t u = 0; u < view.n_regions(); ++u) {
    const std::vector<double> s = region_series(view, u, last_day);
    double v = 0.0;
    switch (kind) {
      case BaselineKind::Avg: v = avg_predict(s); break;
      case BaselineKind::AvgWindow: v = avg_window_predict(s, config.window); break;
      case BaselineKind::LastDay: v = last_day_predict(s); break;
      case BaselineKind::Ar: {
        const ArModel m = ar_fit(s, config.ar_order, config.ar_differencing);
        out.ridge_fallbacks += m.ridge_fallback ? 1 : 0;
        v = ar_predict(m, s, horizon);
        break;
      }
    }
    out.prediction(u, 0) = v;
  }
  return out;
}

}  // namespace mobcast::baselines
