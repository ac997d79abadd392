#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mobcast/baselines.hpp"
#include "mobcast/eval.hpp"
#include "mobcast/meta.hpp"
#include "mobcast/models.hpp"
#include "mobcast/train.hpp"

namespace mobcast::cli {

inline constexpr const char* kVersion = "0.1.0";

// Everything a run depends on besides its input paths. Serialized as JSON;
// unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string model = "mpnn";
  models::ModelConfig model_config;  // kind follows `model`
  train::TrainConfig train;
  meta::MetaConfig meta;
  eval::ProtocolGrid grid;
  baselines::BaselineConfig baseline;
  double min_total_cases = 10.0;
};

RunConfig parse_run_config(const std::string& json_text);
// Canonical JSON (sorted keys, every field present).
std::string run_config_to_json(const RunConfig& config);
// FNV-1a of the canonical JSON.
std::string config_hash(const RunConfig& config);

// Model names accepted by `--model`.
const std::vector<std::string>& model_names();

// Runs one command line (without the program name). Returns the exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mobcast::cli
