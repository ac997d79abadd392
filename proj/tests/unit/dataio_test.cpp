#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "../support/tempdir.hpp"
#include "mobcast/dataio.hpp"
#include "mobcast/errors.hpp"
#include "mobcast/numcore/rng.hpp"
#include "mobcast/util/text.hpp"

namespace mobcast::dataio {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

const std::vector<std::string> kRegions{"a", "b", "c"};

TEST(LoadMobility, SumsThreeRecordingsPerDay) {
  TempDir dir("mob");
  util::write_file(dir / "m.csv",
                   "date,time_of_day,origin,destination,count\n"
                   "2020-03-01,0,a,b,10\n"
                   "2020-03-01,1,a,b,5\n"
                   "2020-03-01,2,a,b,0\n"
                   "2020-03-01,1,a,a,7\n");
  const auto table = load_mobility(dir / "m.csv", kRegions);
  ASSERT_EQ(table.dates, std::vector<std::string>{"2020-03-01"});
  const Matrix& m = table.matrices[0];
  EXPECT_EQ(m(1, 0), 15.0);  // row = destination b, column = origin a
  EXPECT_EQ(m(2, 0), 0.0);   // absent a->c
  EXPECT_EQ(m(0, 0), 7.0);   // self-loop
}

TEST(LoadMobility, PreAggregatedVariantAndMapping) {
  TempDir dir("mob");
  util::write_file(dir / "m.csv", "date,origin,destination,count\n2020-03-02,Alpha,b,4\n");
  const auto table = load_mobility(dir / "m.csv", kRegions, RegionMapping{{"Alpha", "a"}});
  EXPECT_EQ(table.matrices[0](1, 0), 4.0);
}

TEST(LoadMobility, UnknownRegionAndNegativeCountAreIngestionErrors) {
  TempDir dir("mob");
  util::write_file(dir / "u.csv", "date,time_of_day,origin,destination,count\n2020-03-01,0,a,zz,1\n");
  try {
    load_mobility(dir / "u.csv", kRegions);
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("zz"), std::string::npos);
  }
  util::write_file(dir / "n.csv", "date,time_of_day,origin,destination,count\n2020-03-01,0,a,b,-1\n");
  EXPECT_THROW(load_mobility(dir / "n.csv", kRegions), IngestionError);
  util::write_file(dir / "t.csv", "date,time_of_day,origin,destination,count\n2020-03-01,3,a,b,1\n");
  EXPECT_THROW(load_mobility(dir / "t.csv", kRegions), IngestionError);
}

// The aggregated entry is the exact sum of the raw recordings.
TEST(LoadMobility, AggregationIsExactForIntegerCounts) {
  numcore::Rng rng(3);
  std::vector<RawMobilityRecord> records;
  Matrix expected(3, 3);
  for (std::size_t o = 0; o < 3; ++o) {
    for (std::size_t d = 0; d < 3; ++d) {
      for (int tod = 0; tod < 3; ++tod) {
        if (rng.uniform() < 0.3) continue;
        const double c = static_cast<double>(rng.below(1000000));
        records.push_back({"2020-04-01", static_cast<TimeOfDay>(tod), kRegions[o], kRegions[d], c});
        expected(d, o) += c;
      }
    }
  }
  const auto table = aggregate_mobility(records, kRegions);
  EXPECT_EQ(table.matrices[0], expected);
}

TEST(LoadCases, ClampsNegativesAndFillsMissing) {
  TempDir dir("cases");
  util::write_file(dir / "c.csv",
                   "date,region,new_cases\n"
                   "2020-03-01,a,12\n"
                   "2020-03-02,a,-3\n"
                   "2020-03-03,b,1\n");
  const auto table = load_cases(dir / "c.csv", {"a", "b"});
  ASSERT_EQ(table.dates.size(), 3u);
  EXPECT_EQ(table.cases(0, 0), 12.0);
  EXPECT_EQ(table.cases(0, 1), 0.0);
  EXPECT_EQ(table.cases(0, 2), 0.0);
  EXPECT_EQ(table.clamped_negative, 1u);
  // (a, d3), (b, d1), (b, d2) are absent.
  EXPECT_EQ(table.missing_filled, 3u);
}

TEST(LoadCases, UnparseableDateReportsLine) {
  TempDir dir("cases");
  util::write_file(dir / "c.csv", "date,region,new_cases\n2020-03-01,a,1\n03/02/2020,a,2\n");
  try {
    load_cases(dir / "c.csv", {"a"});
    FAIL();
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

RawCountryData raw_fixture(std::vector<double> totals) {
  RawCountryData raw;
  raw.country = "x";
  for (std::size_t u = 0; u < totals.size(); ++u) raw.regions.push_back("r" + std::to_string(u));
  const std::size_t n = totals.size();
  raw.cases.dates = date_range("2020-03-03", 5);  // days 3..7
  raw.cases.cases = Matrix(n, 5);
  for (std::size_t u = 0; u < n; ++u) raw.cases.cases(u, 4) = totals[u];
  raw.mobility.dates = date_range("2020-03-05", 4);  // days 5..8
  for (int k = 0; k < 4; ++k) {
    Matrix m(n, n);
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t v = 0; v < n; ++v) m(u, v) = static_cast<double>(10 * u + v);
    raw.mobility.matrices.push_back(m);
  }
  return raw;
}

TEST(AlignAndFilter, ThresholdIsStrictlyLess) {
  const auto ds = align_and_filter(raw_fixture({9, 10, 50}), 10);
  EXPECT_EQ(ds.regions, (std::vector<std::string>{"r1", "r2"}));
  ASSERT_EQ(ds.mobility[0].rows(), 2u);
  // Rows/columns of the dropped region are gone: entry (r2 <- r1) was 21.
  EXPECT_EQ(ds.mobility[0](1, 0), 21.0);
  EXPECT_EQ(ds.mobility[0](0, 1), 12.0);
}

TEST(AlignAndFilter, DatesAreTheIntersection) {
  const auto ds = align_and_filter(raw_fixture({10, 10}), 10);
  EXPECT_EQ(ds.dates.front(), "2020-03-05");
  EXPECT_EQ(ds.dates.back(), "2020-03-07");
  EXPECT_EQ(ds.n_days(), 3u);
  ds.validate();
}

TEST(AlignAndFilter, EmptyResultIsError) {
  EXPECT_THROW(align_and_filter(raw_fixture({1, 2}), 10), EmptyDatasetError);
}

TEST(AlignAndFilter, SurvivorsMeetThresholdAndShapesAgree) {
  numcore::Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> totals;
    for (int u = 0; u < 8; ++u) totals.push_back(static_cast<double>(rng.below(25)));
    totals.push_back(30);
    const auto ds = align_and_filter(raw_fixture(totals), 10);
    for (std::size_t u = 0; u < ds.n_regions(); ++u) {
      double total = 0;
      for (double v : ds.cases.row(u)) total += v;
      EXPECT_GE(total, 10.0);
    }
    for (const auto& m : ds.mobility) {
      EXPECT_EQ(m.rows(), ds.n_regions());
      EXPECT_EQ(m.cols(), ds.n_regions());
    }
  }
}

TEST(Synthetic, NoTransmissionWithoutRateOrMobility) {
  SyntheticConfig cfg;
  cfg.n_regions = 5;
  cfg.n_days = 20;
  cfg.n_countries = 1;
  cfg.base_rate = 0.0;
  cfg.off_diagonal_density = 0.0;
  cfg.lead_in_days = 0;
  const auto out = generate_synthetic_detailed(cfg);
  const auto& sc = out[0];
  EXPECT_EQ(sc.latent(sc.seed_region, 0), cfg.initial_infected);
  for (std::size_t u = 0; u < 5; ++u) {
    if (u == sc.seed_region) continue;
    for (std::size_t t = 1; t < 20; ++t) EXPECT_EQ(sc.dataset.cases(u, t), 0.0);
  }
}

TEST(Synthetic, NoiselessObservationIsRoundedLatent) {
  SyntheticConfig cfg;
  cfg.n_regions = 6;
  cfg.n_days = 30;
  cfg.n_countries = 2;
  cfg.underreporting = 1.0;
  cfg.observation_noise = false;
  for (const auto& sc : generate_synthetic_detailed(cfg)) {
    for (std::size_t i = 0; i < sc.latent.size(); ++i)
      EXPECT_EQ(sc.dataset.cases.data()[i], std::round(sc.latent.data()[i]));
  }
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticConfig cfg;
  cfg.n_regions = 8;
  cfg.n_days = 25;
  EXPECT_EQ(generate_synthetic(cfg), generate_synthetic(cfg));
  SyntheticConfig other = cfg;
  other.noise_seed = 2;
  EXPECT_NE(generate_synthetic(cfg), generate_synthetic(other));
}

TEST(Synthetic, LatentTotalNondecreasingWhenRateAtLeastOne) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticConfig cfg;
    cfg.noise_seed = seed;
    cfg.base_rate = 1.0 + 0.02 * static_cast<double>(seed - 1);
    for (const auto& sc : generate_synthetic_detailed(cfg)) {
      double prev = 0.0;
      for (std::size_t t = 0; t < sc.latent.cols(); ++t) {
        double total = 0.0;
        for (std::size_t u = 0; u < sc.latent.rows(); ++u) total += sc.latent(u, t);
        EXPECT_GE(total, prev * (1.0 - 1e-12));
        prev = total;
      }
    }
  }
}

TEST(Synthetic, OutbreaksAreAsynchronous) {
  SyntheticConfig cfg;
  const auto out = generate_synthetic_detailed(cfg);
  ASSERT_EQ(out.size(), 4u);
  for (std::size_t k = 1; k < out.size(); ++k) EXPECT_GT(out[k].outbreak_start, out[k - 1].outbreak_start);
  for (const auto& sc : out) sc.dataset.validate();
}

TEST(Synthetic, LeadInPutsEveryCountryMidOutbreak) {
  SyntheticConfig cfg;
  for (const auto& sc : generate_synthetic_detailed(cfg)) {
    EXPECT_LT(sc.outbreak_start, 0);
    double first_day = 0.0;
    for (std::size_t u = 0; u < sc.dataset.n_regions(); ++u) first_day += sc.dataset.cases(u, 0);
    EXPECT_GT(first_day, 0.0) << sc.dataset.country;
  }
}

TEST(Bundle, RoundTripIsLossless) {
  SyntheticConfig cfg;
  cfg.n_regions = 5;
  cfg.n_days = 12;
  cfg.n_countries = 1;
  auto ds = generate_synthetic(cfg)[0];
  ds.cases(0, 0) = 0.1 + 0.2;  // not representable in short decimal
  ds.mobility[3](1, 2) = 1.0 / 3.0;
  TempDir dir("bundle");
  save_bundle(ds, dir.path());
  EXPECT_EQ(load_bundle(dir.path()), ds);
}

TEST(Bundle, MissingManifestIsFormatError) {
  TempDir dir("bundle");
  EXPECT_THROW(load_bundle(dir.path()), FormatError);
}

TEST(Bundle, RegionCountMismatchIsFormatError) {
  SyntheticConfig cfg;
  cfg.n_regions = 4;
  cfg.n_days = 3;
  cfg.n_countries = 1;
  const auto ds = generate_synthetic(cfg)[0];
  TempDir dir("bundle");
  save_bundle(ds, dir.path());
  // Drop the last row of one mobility matrix.
  const auto p = dir.path() / "mobility" / (ds.dates[1] + ".csv");
  std::string text = util::read_file(p);
  text.erase(text.rfind('\n', text.size() - 2) + 1);
  util::write_file(p, text);
  EXPECT_THROW(load_bundle(dir.path()), FormatError);

  TempDir dir2("bundle");
  save_bundle(ds, dir2.path());
  std::string manifest = util::read_file(dir2 / "manifest.json");
  manifest.replace(manifest.find("\"n\": 4"), 6, "\"n\": 5");
  util::write_file(dir2 / "manifest.json", manifest);
  EXPECT_THROW(load_bundle(dir2.path()), FormatError);
}

TEST(Dates, ParseAndFormat) {
  EXPECT_EQ(format_iso_date(parse_iso_date("2020-02-29")), "2020-02-29");
  EXPECT_EQ(parse_iso_date("2020-03-01") - parse_iso_date("2020-02-28"), 2);
  EXPECT_THROW(parse_iso_date("2020-02-30"), IngestionError);
  EXPECT_THROW(parse_iso_date("2020/02/01"), IngestionError);
}

}  // namespace
}  // namespace mobcast::dataio
