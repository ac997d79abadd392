#include <gtest/gtest.h>

#include <cstdlib>
#include <map>
#include <sstream>

#include "../support/tempdir.hpp"
#include "json.hpp"
#include "mobcast/cli.hpp"
#include "mobcast/dataio.hpp"
#include "mobcast/errors.hpp"
#include "mobcast/util/text.hpp"

namespace mobcast::cli {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Result {
  int status = 0;
  std::string out, err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = run(args, out, err);
  return {status, out.str(), err.str()};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = util::read_file(e.path());
  return files;
}

const std::string kSmallConfig =
    R"({"train": {"max_epochs": 15}, "grid": {"t_end": 18, "dt": 2}, "model_config": {"hidden": 6}})";

class CliRun : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(cli({"synth", "--regions", "5", "--days", "30", "--countries", "2", "--seed", "4", "--out",
                   (dir / "data").string()})
                  .status,
              0);
    util::write_file(dir / "cfg.json", kSmallConfig);
  }
  std::string bundle(int k = 0) const { return (dir / "data" / ("synthetic_" + std::to_string(k))).string(); }
  std::string cfg() const { return (dir / "cfg.json").string(); }

  TempDir dir{"cli"};
};

TEST(RunConfig, DefaultsRoundTripAndRejectUnknownKeys) {
  const RunConfig d;
  EXPECT_EQ(d.train.batch_size, 8);
  EXPECT_EQ(d.train.max_epochs, 500);
  EXPECT_EQ(d.grid.dt, 14);
  const RunConfig back = parse_run_config(run_config_to_json(d));
  EXPECT_EQ(run_config_to_json(back), run_config_to_json(d));
  EXPECT_EQ(config_hash(back), config_hash(d));
  EXPECT_THROW(parse_run_config(R"({"trian": {}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"epochs": 3}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"lr": "fast"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": "prophet"})"), ConfigError);
  EXPECT_NE(config_hash(parse_run_config(R"({"seed": 2})")), config_hash(d));
}

TEST(Usage, BadFlagsExitNonzero) {
  EXPECT_NE(cli({}).status, 0);
  EXPECT_NE(cli({"train", "--bundle", "x"}).status, 0);
  EXPECT_NE(cli({"train", "--bundle", "x", "--out", "y", "--model", "prophet"}).status, 0);
  EXPECT_EQ(cli({"--help"}).status, 0);
}

TEST_F(CliRun, SynthIsByteIdentical) {
  ASSERT_EQ(cli({"synth", "--regions", "5", "--days", "30", "--countries", "2", "--seed", "4", "--out",
                 (dir / "again").string()})
                .status,
            0);
  // Bundles match exactly; the run manifests differ only in the --out argument they record.
  auto a = snapshot(dir / "data"), b = snapshot(dir / "again");
  a.erase("manifest.json");
  b.erase("manifest.json");
  EXPECT_TRUE(a == b);
  EXPECT_GT(a.size(), 60u);
  const Result other = cli({"synth", "--regions", "5", "--days", "30", "--countries", "2", "--seed", "5", "--out",
                            (dir / "other").string()});
  EXPECT_EQ(other.status, 0);
  EXPECT_TRUE(snapshot(dir / "data") != snapshot(dir / "other"));
}

TEST_F(CliRun, LastDayReportMatchesBaselines) {
  const Result r = cli({"train", "--bundle", bundle(), "--model", "last_day", "--config", cfg(), "--out",
                        (dir / "ld").string()});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto summary = nlohmann::json::parse(util::read_file(dir / "ld" / "report" / "summary.json"));
  const dataio::CountryDataset ds = dataio::load_bundle(bundle());
  double sum = 0;
  int count = 0;
  for (int T = 14; T <= 18; ++T) {
    for (int j = 1; j <= 2; ++j) {
      for (std::size_t u = 0; u < ds.n_regions(); ++u) {
        sum += std::abs(ds.cases(u, static_cast<std::size_t>(T - 1)) - ds.cases(u, static_cast<std::size_t>(T + j - 1)));
        ++count;
      }
    }
  }
  EXPECT_NEAR(summary["LAST_DAY"]["1-3"].get<double>(), sum / count, 1e-9);
  const auto manifest = nlohmann::json::parse(util::read_file(dir / "ld" / "manifest.json"));
  EXPECT_EQ(manifest["status"], "complete");
  RunConfig expected = parse_run_config(kSmallConfig);
  expected.model = "last_day";
  EXPECT_EQ(manifest["config_hash"], config_hash(expected));
}

TEST_F(CliRun, TrainIsDeterministicAcrossRunsAndJobs) {
  const auto train = [&](const std::string& out, const std::string& jobs) {
    return cli({"train", "--bundle", bundle(), "--model", "mpnn", "--config", cfg(), "--seed", "3", "--jobs", jobs,
                "--out", (dir / out).string()});
  };
  ASSERT_EQ(train("a", "1").status, 0);
  ASSERT_EQ(train("b", "1").status, 0);
  ASSERT_EQ(train("c", "3").status, 0);
  auto a = snapshot(dir / "a"), b = snapshot(dir / "b"), c = snapshot(dir / "c");
  EXPECT_EQ(a.erase("manifest.json") + b.erase("manifest.json") + c.erase("manifest.json"), 3u);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(a == c);
  EXPECT_TRUE(a.contains("checkpoints/T14_j1.ckpt"));

  const Result ev = cli({"evaluate", "--bundle", bundle(), "--checkpoints", (dir / "a").string(), "--config", cfg(),
                         "--out", (dir / "ev").string()});
  ASSERT_EQ(ev.status, 0) << ev.err;
  EXPECT_EQ(util::read_file(dir / "ev" / "rows.csv"), a.at("report/rows.csv"));
}

TEST_F(CliRun, EvaluateNamesMissingCell) {
  ASSERT_EQ(cli({"train", "--bundle", bundle(), "--model", "mpnn", "--config", cfg(), "--out", (dir / "a").string()})
                .status,
            0);
  fs::remove(dir / "a" / "checkpoints" / "T16_j2.ckpt");
  const Result r = cli({"evaluate", "--bundle", bundle(), "--checkpoints", (dir / "a").string(), "--config", cfg(),
                        "--out", (dir / "ev").string()});
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("(T=16, j=2)"), std::string::npos) << r.err;
  EXPECT_EQ(nlohmann::json::parse(util::read_file(dir / "ev" / "manifest.json"))["status"], "incomplete");
}

TEST_F(CliRun, MetaTrainTransferAndReportMerge) {
  ASSERT_EQ(cli({"meta-train", "--bundle", bundle(1), "--config", cfg(), "--out", (dir / "meta").string()}).status, 0);
  std::string meta;
  models::load_model(dir / "meta" / "meta.ckpt", &meta);
  EXPECT_EQ(nlohmann::json::parse(meta)["meta_train_countries"], nlohmann::json::array({"synthetic_1"}));
  const Result tl = cli({"train", "--bundle", bundle(), "--model", "mpnn_tl", "--meta-checkpoint",
                         (dir / "meta" / "meta.ckpt").string(), "--config", cfg(), "-T", "16", "-j", "1", "--out",
                         (dir / "tl").string()});
  ASSERT_EQ(tl.status, 0) << tl.err;
  EXPECT_NE(cli({"train", "--bundle", bundle(), "--model", "mpnn_tl", "--config", cfg(), "--out",
                 (dir / "x").string()})
                .status,
            0);
  ASSERT_EQ(cli({"train", "--bundle", bundle(), "--model", "avg", "--config", cfg(), "--out", (dir / "avg").string()})
                .status,
            0);
  const Result merged =
      cli({"report", "--in", (dir / "tl").string(), "--in", (dir / "avg").string(), "--out", (dir / "m").string()});
  ASSERT_EQ(merged.status, 0) << merged.err;
  const auto summary = nlohmann::json::parse(util::read_file(dir / "m" / "summary.json"));
  EXPECT_TRUE(summary.contains("MPNN+TL"));
  EXPECT_TRUE(summary.contains("AVG"));
}

TEST_F(CliRun, DataDirResolvesRelativeBundles) {
  ::setenv("MOBCAST_DATA_DIR", (dir / "data").c_str(), 1);
  const Result r = cli({"correlate", "--bundle", "synthetic_0", "--out", (dir / "corr").string()});
  ::unsetenv("MOBCAST_DATA_DIR");
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "corr" / "correlations.csv"));
  EXPECT_TRUE(fs::exists(dir / "corr" / "case_stats.csv"));
}

TEST(Ingest, RawFilesToBundle) {
  TempDir dir("ingest");
  util::write_file(dir / "cases.csv",
                   "date,region,new_cases\n2020-03-01,a,5\n2020-03-01,b,9\n2020-03-02,a,-2\n2020-03-02,b,30\n"
                   "2020-03-03,a,11\n2020-03-03,c,1\n");
  util::write_file(dir / "mobility.csv",
                   "date,time_of_day,origin,destination,count\n2020-03-02,0,a,b,10\n2020-03-02,1,a,b,5\n"
                   "2020-03-03,2,b,a,4\n2020-03-01,0,a,a,1\n");
  const Result r = cli({"ingest", "--cases", (dir / "cases.csv").string(), "--mobility", (dir / "mobility.csv").string(),
                        "--country", "toy", "--out", (dir / "out").string()});
  ASSERT_EQ(r.status, 0) << r.err;
  const dataio::CountryDataset ds = dataio::load_bundle(dir / "out" / "bundle");
  EXPECT_EQ(ds.regions, (std::vector<std::string>{"a", "b"}));  // c has 1 case in total
  EXPECT_EQ(ds.n_days(), 3u);
  EXPECT_EQ(ds.mobility[1](1, 0), 15.0);
  EXPECT_EQ(ds.cases(0, 1), 0.0);
  const auto manifest = nlohmann::json::parse(util::read_file(dir / "out" / "manifest.json"));
  EXPECT_EQ(manifest["ingest"]["clamped_negative"], 1);
}

}  // namespace
}  // namespace mobcast::cli
