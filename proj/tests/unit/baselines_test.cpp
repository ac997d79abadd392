#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mobcast/baselines.hpp"
#include "mobcast/errors.hpp"
#include "mobcast/numcore/rng.hpp"

namespace mobcast::baselines {
namespace {

using Series = std::vector<double>;

// Independent AR oracle: normal equations by Gauss-Jordan with partial pivoting.
std::vector<double> brute_ols(const Series& s, int p, int diff) {
  Series z = s;
  if (diff == 1) {
    Series d;
    for (std::size_t t = 1; t < s.size(); ++t) d.push_back(s[t] - s[t - 1]);
    z = d;
  }
  const int k = p + 1;
  std::vector<std::vector<double>> a(k, std::vector<double>(k + 1, 0.0));
  for (std::size_t t = p; t < z.size(); ++t) {
    std::vector<double> row;
    for (int l = 1; l <= p; ++l) row.push_back(z[t - l]);
    row.push_back(1.0);
    for (int r = 0; r < k; ++r) {
      for (int c = 0; c < k; ++c) a[r][c] += row[r] * row[c];
      a[r][k] += row[r] * z[t];
    }
  }
  for (int c = 0; c < k; ++c) {
    int piv = c;
    for (int r = c + 1; r < k; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (int r = 0; r < k; ++r) {
      if (r == c) continue;
      const double f = a[r][c] / a[c][c];
      for (int q = c; q <= k; ++q) a[r][q] -= f * a[c][q];
    }
  }
  std::vector<double> beta(k);
  for (int r = 0; r < k; ++r) beta[r] = a[r][k] / a[r][r];
  return beta;
}

Series random_series(numcore::Rng& rng, std::size_t len) {
  Series s(len);
  for (double& v : s) v = std::floor(rng.uniform(0, 200));
  return s;
}

TEST(Avg, Examples) {
  EXPECT_EQ(avg_predict(Series{3, 5, 7}), 5.0);
  EXPECT_EQ(avg_predict(Series{0, 0, 0}), 0.0);
  EXPECT_EQ(avg_predict(Series{4.5, 4.5, 4.5, 4.5}), 4.5);
  EXPECT_THROW(avg_predict(Series{}), ContractError);
}

TEST(AvgWindow, Examples) {
  EXPECT_EQ(avg_window_predict(Series{1, 2, 3, 4}, 2), 3.5);
  EXPECT_EQ(avg_window_predict(Series{1, 2, 3, 4}, 9), avg_predict(Series{1, 2, 3, 4}));
  EXPECT_EQ(avg_window_predict(Series{1, 9, 4}, 1), last_day_predict(Series{1, 9, 4}));
}

TEST(LastDay, Examples) {
  EXPECT_EQ(last_day_predict(Series{1, 9, 4}), 4.0);
  EXPECT_EQ(last_day_predict(Series{7}), 7.0);
  EXPECT_EQ(last_day_predict(Series{5, 5, 1, 9, 4}), 4.0);
  EXPECT_THROW(last_day_predict(Series{}), ContractError);
}

TEST(SimpleBaselines, MatchBruteForce) {
  numcore::Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const Series s = random_series(rng, 1 + rng.below(60));
    const int d = 1 + static_cast<int>(rng.below(12));
    double all = 0.0;
    for (double v : s) all += v;
    double win = 0.0;
    int count = 0;
    for (std::size_t t = s.size(); t-- > 0 && count < d; ++count) win += s[t];
    EXPECT_EQ(avg_predict(s), all / static_cast<double>(s.size()));
    EXPECT_EQ(avg_window_predict(s, d), win / count);
    EXPECT_EQ(last_day_predict(s), s[s.size() - 1]);
    EXPECT_GE(avg_window_predict(s, d), 0.0);
  }
}

TEST(Ar, RecoversExactAr1) {
  Series s{10.0};
  for (int t = 1; t < 30; ++t) s.push_back(0.5 * s.back() + 1.0);
  const ArModel m = ar_fit(s, 1, 0);
  ASSERT_EQ(m.lags.size(), 1u);
  EXPECT_NEAR(m.lags[0], 0.5, 1e-8);
  EXPECT_NEAR(m.intercept, 1.0, 1e-8);
  EXPECT_FALSE(m.ridge_fallback);
  EXPECT_NEAR(ar_predict(m, s, 1), 0.5 * s.back() + 1.0, 1e-6);
}

TEST(Ar, ConstantSeriesForecastsLastValue) {
  const Series s(20, 42.0);
  const ArModel m = ar_fit(s, 7, 1);
  EXPECT_TRUE(m.ridge_fallback);
  for (int j = 1; j <= 14; ++j) EXPECT_NEAR(ar_predict(m, s, j), 42.0, 1e-9);
}

TEST(Ar, PredictEdgeCases) {
  const Series s{3, 1, 4, 1, 5};
  EXPECT_EQ(ar_predict(ArModel{{0.0, 0.0}, 0.0, 0, false}, s, 3), 0.0);
  EXPECT_EQ(ar_predict(ArModel{{0.0}, -5.0, 0, false}, s, 1), 0.0);
  EXPECT_THROW(ar_fit(Series{1, 2, 3}, 2, 0), ContractError);
  EXPECT_THROW(ar_fit(Series{1, 2, 3, 4}, 2, 1), ContractError);
}

TEST(Ar, MatchesBruteForceAndResidualsAreOrthogonal) {
  numcore::Rng rng(8);
  for (int trial = 0; trial < 1000; ++trial) {
    const int p = 1 + static_cast<int>(rng.below(7));
    const int diff = static_cast<int>(rng.below(2));
    const Series s = random_series(rng, static_cast<std::size_t>(p + diff) + 10 + rng.below(50));
    const ArModel m = ar_fit(s, p, diff);
    ASSERT_FALSE(m.ridge_fallback);
    const auto beta = brute_ols(s, p, diff);
    double scale = 1.0;
    for (double b : beta) scale = std::max(scale, std::abs(b));
    for (int l = 0; l < p; ++l) EXPECT_NEAR(m.lags[l], beta[l], 1e-8 * scale);
    EXPECT_NEAR(m.intercept, beta[p], 1e-8 * scale);

    // Normal-equation identity: X^T r = 0.
    Series z = s;
    if (diff == 1) {
      z.clear();
      for (std::size_t t = 1; t < s.size(); ++t) z.push_back(s[t] - s[t - 1]);
    }
    std::vector<double> xtr(p + 1, 0.0);
    double norm = 0.0;
    for (std::size_t t = p; t < z.size(); ++t) {
      double fit = m.intercept;
      for (int l = 1; l <= p; ++l) fit += m.lags[l - 1] * z[t - l];
      const double r = z[t] - fit;
      for (int l = 1; l <= p; ++l) xtr[l - 1] += z[t - l] * r;
      xtr[p] += r;
      norm += z[t] * z[t];
    }
    for (double v : xtr) EXPECT_LT(std::abs(v), 1e-8 * std::max(1.0, norm));

    for (int j = 1; j <= 14; ++j) EXPECT_GE(ar_predict(m, s, j), 0.0);
  }
}

TEST(Ar, MultiStepIsRecursive) {
  const Series s{1, 2, 4, 3, 5, 6};
  const ArModel m{{0.5, -0.25}, 1.0, 0, false};
  double a = 6, b = 5;
  for (int j = 1; j <= 5; ++j) {
    const double next = 1.0 + 0.5 * a - 0.25 * b;
    b = a;
    a = next;
    EXPECT_DOUBLE_EQ(ar_predict(m, s, j), std::max(0.0, next));
  }
  const ArModel d{{0.5}, 0.0, 1, false};
  // Differences ..., 1; next diffs 0.5, 0.25 -> levels 6.5, 6.75.
  EXPECT_DOUBLE_EQ(ar_predict(d, s, 2), 6.75);
}

}  // namespace
}  // namespace mobcast::baselines
