#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mobcast/numcore/matrix.hpp"

namespace mobcast::dataio {

using numcore::Matrix;

// Facebook exports carry three snapshots per day.
enum class TimeOfDay : int { Midnight = 0, Morning = 1, Afternoon = 2 };

struct RawMobilityRecord {
  std::string date;  // ISO-8601
  TimeOfDay time_of_day = TimeOfDay::Midnight;
  std::string origin;
  std::string destination;
  double count = 0.0;
};

struct CaseRecord {
  std::string date;
  std::string region;
  std::int64_t new_cases = 0;
};

// One country, aligned over regions and days.
//   cases(u, t)       new cases of region u on day index t
//   mobility[t](u, v) people moving from v into u on day t (row = destination)
struct CountryDataset {
  std::string country;
  std::vector<std::string> regions;
  std::vector<std::string> dates;
  Matrix cases;
  std::vector<Matrix> mobility;

  std::size_t n_regions() const noexcept { return regions.size(); }
  std::size_t n_days() const noexcept { return dates.size(); }
  // Throws FormatError if any structural invariant is broken.
  void validate() const;

  friend bool operator==(const CountryDataset&, const CountryDataset&) = default;
};

// source_name -> region_id, replacing heuristic name reconciliation.
using RegionMapping = std::map<std::string, std::string>;

struct MobilityTable {
  std::vector<std::string> dates;  // sorted ascending
  std::vector<Matrix> matrices;    // aligned with dates, row = destination
};

struct CaseTable {
  std::vector<std::string> dates;
  Matrix cases;  // regions x dates
  std::size_t clamped_negative = 0;
  std::size_t missing_filled = 0;
  std::size_t unknown_region_rows = 0;
};

// Everything load_* produced for one country, before alignment.
struct RawCountryData {
  std::string country;
  std::vector<std::string> regions;
  MobilityTable mobility;
  CaseTable cases;
};

// ISO date helpers. parse_iso_date throws IngestionError on malformed input.
std::int64_t parse_iso_date(const std::string& text);
std::string format_iso_date(std::int64_t day_number);
std::vector<std::string> date_range(const std::string& first, std::size_t count);

RegionMapping load_region_mapping(const std::filesystem::path& path);

// Reads `date,time_of_day,origin,destination,count` (or the pre-aggregated
// `date,origin,destination,count`) and sums same-day recordings per
// (origin, destination). Names pass through `mapping` when present.
MobilityTable load_mobility(const std::filesystem::path& path, const std::vector<std::string>& regions,
                            const RegionMapping& mapping = {});
MobilityTable aggregate_mobility(const std::vector<RawMobilityRecord>& records,
                                 const std::vector<std::string>& regions);

// Reads `date,region,new_cases`. Negative values clamp to 0, absent
// (region, day) pairs become 0; both are counted. When `dates` is empty the
// contiguous span of the file's dates is used.
CaseTable load_cases(const std::filesystem::path& path, const std::vector<std::string>& regions,
                     const std::vector<std::string>& dates = {}, const RegionMapping& mapping = {});
CaseTable tabulate_cases(const std::vector<CaseRecord>& records, const std::vector<std::string>& regions,
                         const std::vector<std::string>& dates = {});

// Restricts to the days where both mobility and cases exist and drops regions
// whose total cases fall below min_total_cases (strictly less is dropped).
CountryDataset align_and_filter(const RawCountryData& raw, double min_total_cases = 10.0);
// Region filter only, for an already aligned dataset.
CountryDataset filter_regions(const CountryDataset& dataset, double min_total_cases = 10.0);

struct SyntheticConfig {
  std::size_t n_regions = 30;
  std::size_t n_days = 90;
  std::size_t n_countries = 4;
  // Daily reproduction factor shared by every country.
  double base_rate = 0.95;
  // Diagonal movement relative to the off-diagonal scale.
  double self_loop_strength = 8.0;
  double underreporting = 0.6;
  std::uint64_t noise_seed = 1;

  double off_diagonal_density = 0.3;
  // Days between consecutive countries' outbreak starts.
  std::size_t outbreak_shift = 3;
  // Days simulated before the first recorded day. Country k is seeded on
  // simulated day k * outbreak_shift, so with a long enough lead-in every
  // country already has cases when its record begins.
  std::size_t lead_in_days = 14;
  double initial_infected = 200.0;
  // Nonnegative multiplicative jitter on latent growth; 0 disables it.
  double latent_noise = 0.2;
  // Poisson observation noise; false gives round(underreporting * latent).
  bool observation_noise = true;
  // Daily relative jitter of the mobility matrices.
  double mobility_jitter = 0.2;
};

struct SyntheticCountry {
  CountryDataset dataset;
  Matrix latent;  // regions x recorded days
  std::size_t seed_region = 0;
  // Seeding day relative to the first recorded day; negative when it precedes the record.
  std::int64_t outbreak_start = 0;
};

// Mobility-driven linear diffusion:
//   I(t+1)_u = base_rate * sum_v P_t[v->u] * I(t)_v * (1 + latent_noise * U(0,1))
// where P_t[v->u] is the share of v's outgoing movement that lands in u.
std::vector<SyntheticCountry> generate_synthetic_detailed(const SyntheticConfig& config);
std::vector<CountryDataset> generate_synthetic(const SyntheticConfig& config);

inline constexpr const char* kBundleFormatVersion = "1";

// Directory layout: manifest.json, cases.csv, mobility/<ISO-date>.csv.
void save_bundle(const CountryDataset& dataset, const std::filesystem::path& dir);
CountryDataset load_bundle(const std::filesystem::path& dir);

}  // namespace mobcast::dataio
