#include "mobcast/dataio.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>
#include <unordered_map>

#include "json.hpp"

#include "mobcast/errors.hpp"
#include "mobcast/numcore/rng.hpp"
#include "mobcast/util/text.hpp"

namespace mobcast::dataio {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::unordered_map<std::string, std::size_t> index_regions(const std::vector<std::string>& regions) {
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (!idx.emplace(regions[i], i).second) throw IngestionError("duplicate region id '" + regions[i] + "'");
  }
  return idx;
}

const std::string& mapped(const RegionMapping& mapping, const std::string& name) {
  if (auto it = mapping.find(name); it != mapping.end()) return it->second;
  return name;
}

std::size_t column(const util::CsvFile& csv, const std::string& name, const fs::path& path) {
  const auto it = std::find(csv.header.begin(), csv.header.end(), name);
  if (it == csv.header.end()) throw IngestionError(path.string() + ": missing column '" + name + "'");
  return static_cast<std::size_t>(it - csv.header.begin());
}

std::vector<std::string> contiguous_dates(const std::set<std::int64_t>& days) {
  if (days.empty()) return {};
  std::vector<std::string> out;
  for (std::int64_t d = *days.begin(); d <= *days.rbegin(); ++d) out.push_back(format_iso_date(d));
  return out;
}

}  // namespace

std::int64_t parse_iso_date(const std::string& text) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (text.size() != 10 || std::sscanf(text.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3 || text[4] != '-' ||
      text[7] != '-') {
    throw IngestionError("malformed ISO-8601 date '" + text + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
  if (!ymd.ok()) throw IngestionError("invalid calendar date '" + text + "'");
  return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

std::string format_iso_date(std::int64_t day_number) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day_number}}};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

std::vector<std::string> date_range(const std::string& first, std::size_t count) {
  const std::int64_t start = parse_iso_date(first);
  std::vector<std::string> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(format_iso_date(start + static_cast<std::int64_t>(i)));
  return out;
}

void CountryDataset::validate() const {
  const std::size_t n = regions.size();
  const std::size_t t = dates.size();
  if (cases.rows() != n || cases.cols() != t) {
    throw FormatError("dataset '" + country + "': case matrix " + cases.shape_string() + " for " +
                      std::to_string(n) + " regions and " + std::to_string(t) + " days");
  }
  if (mobility.size() != t) {
    throw FormatError("dataset '" + country + "': " + std::to_string(mobility.size()) + " mobility matrices for " +
                      std::to_string(t) + " days");
  }
  for (std::size_t k = 0; k < t; ++k) {
    if (mobility[k].rows() != n || mobility[k].cols() != n) {
      throw FormatError("dataset '" + country + "': mobility on " + dates[k] + " is " + mobility[k].shape_string());
    }
    for (double v : mobility[k].data())
      if (!(v >= 0.0) || !std::isfinite(v)) throw FormatError("dataset '" + country + "': negative or non-finite mobility");
  }
  for (std::size_t k = 1; k < t; ++k) {
    if (parse_iso_date(dates[k]) != parse_iso_date(dates[k - 1]) + 1) {
      throw FormatError("dataset '" + country + "': dates not contiguous at " + dates[k]);
    }
  }
}

RegionMapping load_region_mapping(const fs::path& path) {
  const auto csv = util::read_csv(path);
  const std::size_t src = column(csv, "source_name", path);
  const std::size_t dst = column(csv, "region_id", path);
  RegionMapping mapping;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    if (row.size() != csv.header.size()) {
      throw IngestionError(path.string() + ":" + std::to_string(csv.line_numbers[r]) + ": wrong field count");
    }
    mapping[row[src]] = row[dst];
  }
  return mapping;
}

MobilityTable aggregate_mobility(const std::vector<RawMobilityRecord>& records, const std::vector<std::string>& regions) {
  const auto idx = index_regions(regions);
  const std::size_t n = regions.size();
  std::map<std::int64_t, Matrix> by_day;
  std::set<std::tuple<std::int64_t, int, std::size_t, std::size_t>> seen;
  for (const auto& rec : records) {
    const auto o = idx.find(rec.origin);
    if (o == idx.end()) throw IngestionError("unknown region id '" + rec.origin + "'");
    const auto d = idx.find(rec.destination);
    if (d == idx.end()) throw IngestionError("unknown region id '" + rec.destination + "'");
    if (!(rec.count >= 0.0) || !std::isfinite(rec.count)) {
      throw IngestionError("negative count for " + rec.origin + "->" + rec.destination + " on " + rec.date);
    }
    const std::int64_t day = parse_iso_date(rec.date);
    if (!seen.emplace(day, static_cast<int>(rec.time_of_day), o->second, d->second).second) {
      throw IngestionError("duplicate recording for " + rec.origin + "->" + rec.destination + " on " + rec.date);
    }
    auto [it, inserted] = by_day.try_emplace(day, n, n);
    it->second(d->second, o->second) += rec.count;
  }
  MobilityTable table;
  for (auto& [day, m] : by_day) {
    table.dates.push_back(format_iso_date(day));
    table.matrices.push_back(std::move(m));
  }
  return table;
}

MobilityTable load_mobility(const fs::path& path, const std::vector<std::string>& regions, const RegionMapping& mapping) {
  const auto csv = util::read_csv(path);
  const std::size_t c_date = column(csv, "date", path);
  const auto tod_it = std::find(csv.header.begin(), csv.header.end(), "time_of_day");
  const bool has_tod = tod_it != csv.header.end();
  const std::size_t c_tod = has_tod ? static_cast<std::size_t>(tod_it - csv.header.begin()) : 0;
  const std::size_t c_org = column(csv, "origin", path);
  const std::size_t c_dst = column(csv, "destination", path);
  const std::size_t c_cnt = column(csv, "count", path);

  std::vector<RawMobilityRecord> records;
  records.reserve(csv.rows.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = path.string() + ":" + std::to_string(csv.line_numbers[r]) + ": ";
    if (row.size() != csv.header.size()) throw IngestionError(where + "wrong field count");
    RawMobilityRecord rec;
    rec.date = row[c_date];
    try {
      parse_iso_date(rec.date);
      rec.count = util::parse_double(row[c_cnt]);
      if (has_tod) {
        const long long tod = util::parse_int(row[c_tod]);
        if (tod < 0 || tod > 2) throw IngestionError("time_of_day must be 0, 1 or 2");
        rec.time_of_day = static_cast<TimeOfDay>(tod);
      }
    } catch (const std::exception& e) {
      throw IngestionError(where + e.what());
    }
    rec.origin = mapped(mapping, row[c_org]);
    rec.destination = mapped(mapping, row[c_dst]);
    records.push_back(std::move(rec));
  }
  try {
    return aggregate_mobility(records, regions);
  } catch (const IngestionError& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
}

CaseTable tabulate_cases(const std::vector<CaseRecord>& records, const std::vector<std::string>& regions,
                         const std::vector<std::string>& dates) {
  const auto idx = index_regions(regions);
  CaseTable table;
  if (dates.empty()) {
    std::set<std::int64_t> days;
    for (const auto& rec : records) days.insert(parse_iso_date(rec.date));
    table.dates = contiguous_dates(days);
  } else {
    table.dates = dates;
  }
  std::unordered_map<std::int64_t, std::size_t> day_idx;
  for (std::size_t k = 0; k < table.dates.size(); ++k) day_idx.emplace(parse_iso_date(table.dates[k]), k);

  const std::size_t n = regions.size(), t = table.dates.size();
  table.cases = Matrix(n, t);
  std::vector<char> present(n * t, 0);
  for (const auto& rec : records) {
    const auto r = idx.find(rec.region);
    if (r == idx.end()) {
      ++table.unknown_region_rows;
      continue;
    }
    const auto d = day_idx.find(parse_iso_date(rec.date));
    if (d == day_idx.end()) continue;
    std::int64_t v = rec.new_cases;
    if (v < 0) {
      ++table.clamped_negative;
      v = 0;
    }
    table.cases(r->second, d->second) += static_cast<double>(v);
    present[r->second * t + d->second] = 1;
  }
  table.missing_filled = static_cast<std::size_t>(std::count(present.begin(), present.end(), 0));
  return table;
}

CaseTable load_cases(const fs::path& path, const std::vector<std::string>& regions, const std::vector<std::string>& dates,
                     const RegionMapping& mapping) {
  const auto csv = util::read_csv(path);
  const std::size_t c_date = column(csv, "date", path);
  const std::size_t c_reg = column(csv, "region", path);
  const std::size_t c_val = column(csv, "new_cases", path);
  std::vector<CaseRecord> records;
  records.reserve(csv.rows.size());
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const std::string where = path.string() + ":" + std::to_string(csv.line_numbers[r]) + ": ";
    if (row.size() != csv.header.size()) throw IngestionError(where + "wrong field count");
    CaseRecord rec;
    try {
      parse_iso_date(row[c_date]);
      const double v = util::parse_double(row[c_val]);
      if (v != std::floor(v)) throw IngestionError("new_cases must be an integer");
      rec.new_cases = static_cast<std::int64_t>(v);
    } catch (const std::exception& e) {
      throw IngestionError(where + e.what());
    }
    rec.date = row[c_date];
    rec.region = mapped(mapping, row[c_reg]);
    records.push_back(std::move(rec));
  }
  return tabulate_cases(records, regions, dates);
}

CountryDataset filter_regions(const CountryDataset& dataset, double min_total_cases) {
  std::vector<std::size_t> keep;
  for (std::size_t u = 0; u < dataset.n_regions(); ++u) {
    double total = 0.0;
    for (double v : dataset.cases.row(u)) total += v;
    if (!(total < min_total_cases)) keep.push_back(u);
  }
  if (keep.empty()) {
    throw EmptyDatasetError("dataset '" + dataset.country + "': no region has at least " +
                            util::format_double(min_total_cases) + " total cases");
  }
  CountryDataset out;
  out.country = dataset.country;
  out.dates = dataset.dates;
  const std::size_t n = keep.size(), t = dataset.n_days();
  out.cases = Matrix(n, t);
  for (std::size_t i = 0; i < n; ++i) {
    out.regions.push_back(dataset.regions[keep[i]]);
    for (std::size_t k = 0; k < t; ++k) out.cases(i, k) = dataset.cases(keep[i], k);
  }
  for (const Matrix& m : dataset.mobility) {
    Matrix sub(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) sub(i, j) = m(keep[i], keep[j]);
    out.mobility.push_back(std::move(sub));
  }
  return out;
}

CountryDataset align_and_filter(const RawCountryData& raw, double min_total_cases) {
  const auto& mob = raw.mobility;
  const auto& cas = raw.cases;
  if (mob.dates.empty() || cas.dates.empty()) throw EmptyDatasetError("dataset '" + raw.country + "': no dates");
  const std::int64_t start = std::max(parse_iso_date(mob.dates.front()), parse_iso_date(cas.dates.front()));
  const std::int64_t end = std::min(parse_iso_date(mob.dates.back()), parse_iso_date(cas.dates.back()));
  if (end < start) throw EmptyDatasetError("dataset '" + raw.country + "': mobility and cases do not overlap");

  std::unordered_map<std::int64_t, std::size_t> mob_idx, case_idx;
  for (std::size_t k = 0; k < mob.dates.size(); ++k) mob_idx.emplace(parse_iso_date(mob.dates[k]), k);
  for (std::size_t k = 0; k < cas.dates.size(); ++k) case_idx.emplace(parse_iso_date(cas.dates[k]), k);

  CountryDataset ds;
  ds.country = raw.country;
  ds.regions = raw.regions;
  const std::size_t n = raw.regions.size();
  const auto t = static_cast<std::size_t>(end - start + 1);
  ds.cases = Matrix(n, t);
  for (std::int64_t day = start; day <= end; ++day) {
    const auto k = static_cast<std::size_t>(day - start);
    const auto m = mob_idx.find(day);
    if (m == mob_idx.end()) {
      throw IngestionError("dataset '" + raw.country + "': mobility missing for " + format_iso_date(day));
    }
    ds.dates.push_back(format_iso_date(day));
    ds.mobility.push_back(mob.matrices[m->second]);
    if (const auto c = case_idx.find(day); c != case_idx.end()) {
      for (std::size_t u = 0; u < n; ++u) ds.cases(u, k) = cas.cases(u, c->second);
    }
  }
  ds.validate();
  return filter_regions(ds, min_total_cases);
}

std::vector<SyntheticCountry> generate_synthetic_detailed(const SyntheticConfig& config) {
  if (config.n_regions < 1 || config.n_days < 1 || config.n_countries < 1) {
    throw ContractError("synthetic: counts must be >= 1");
  }
  if (config.underreporting < 0.0 || config.underreporting > 1.0 || config.off_diagonal_density < 0.0 ||
      config.off_diagonal_density > 1.0) {
    throw ContractError("synthetic: probabilities must lie in [0, 1]");
  }
  if (config.base_rate < 0.0 || config.latent_noise < 0.0 || config.mobility_jitter < 0.0 ||
      config.mobility_jitter >= 1.0) {
    throw ContractError("synthetic: rates must be nonnegative and mobility_jitter < 1");
  }
  const std::size_t n = config.n_regions, days = config.n_days;
  const std::vector<std::string> dates = date_range("2020-02-24", days);
  constexpr double kScale = 1000.0;

  std::vector<SyntheticCountry> out;
  for (std::size_t k = 0; k < config.n_countries; ++k) {
    numcore::Rng rng(numcore::Rng::derive(config.noise_seed, {k}));
    SyntheticCountry sc;
    CountryDataset& ds = sc.dataset;
    ds.country = "synthetic_" + std::to_string(k);
    for (std::size_t u = 0; u < n; ++u) ds.regions.push_back("R" + std::to_string(u));
    ds.dates = dates;

    // Base movement, row = destination, column = origin.
    std::vector<double> population(n);
    for (double& p : population) p = rng.uniform(0.5, 1.5);
    Matrix base(n, n);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = 0; v < n; ++v) {
        if (u == v) {
          base(u, v) = config.self_loop_strength * kScale * population[v];
        } else if (rng.uniform() < config.off_diagonal_density) {
          base(u, v) = kScale * population[u] * population[v] * rng.uniform();
        }
      }
    }
    const std::size_t lead = config.lead_in_days;
    const std::size_t sim_days = lead + days;
    std::vector<Matrix> movement;
    for (std::size_t t = 0; t < sim_days; ++t) {
      Matrix m(n, n);
      const std::size_t weekday = (t + 7 - lead % 7) % 7;  // recorded day 0 is a Monday
      const double weekly = (weekday == 5 || weekday == 6) ? 0.8 : 1.0;
      for (std::size_t i = 0; i < base.size(); ++i) {
        const double b = base.data()[i];
        m.data()[i] = b == 0.0 ? 0.0 : std::round(b * weekly * (1.0 + config.mobility_jitter * rng.uniform(-1.0, 1.0)));
      }
      movement.push_back(std::move(m));
    }

    const std::size_t seed_day = std::min(sim_days - 1, k * config.outbreak_shift);
    sc.outbreak_start = static_cast<std::int64_t>(seed_day) - static_cast<std::int64_t>(lead);
    sc.seed_region = static_cast<std::size_t>(rng.below(n));
    Matrix latent(n, sim_days);
    latent(sc.seed_region, seed_day) = config.initial_infected;
    for (std::size_t t = seed_day; t + 1 < sim_days; ++t) {
      const Matrix& m = movement[t];
      std::vector<double> outflow(n, 0.0);
      for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v) outflow[v] += m(u, v);
      for (std::size_t u = 0; u < n; ++u) {
        double spread = 0.0;
        for (std::size_t v = 0; v < n; ++v)
          if (outflow[v] > 0.0) spread += m(u, v) / outflow[v] * latent(v, t);
        double next = config.base_rate * spread;
        if (config.latent_noise > 0.0) next *= 1.0 + config.latent_noise * rng.uniform();
        latent(u, t + 1) = next;
      }
    }
    ds.mobility.assign(std::make_move_iterator(movement.begin() + static_cast<std::ptrdiff_t>(lead)),
                       std::make_move_iterator(movement.end()));
    sc.latent = Matrix(n, days);
    for (std::size_t u = 0; u < n; ++u)
      for (std::size_t t = 0; t < days; ++t) sc.latent(u, t) = latent(u, lead + t);

    ds.cases = Matrix(n, days);
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t t = 0; t < days; ++t) {
        const double expected = config.underreporting * sc.latent(u, t);
        ds.cases(u, t) = config.observation_noise ? static_cast<double>(rng.poisson(expected)) : std::round(expected);
      }
    }
    out.push_back(std::move(sc));
  }
  return out;
}

std::vector<CountryDataset> generate_synthetic(const SyntheticConfig& config) {
  std::vector<CountryDataset> out;
  for (auto& sc : generate_synthetic_detailed(config)) out.push_back(std::move(sc.dataset));
  return out;
}

void save_bundle(const CountryDataset& dataset, const fs::path& dir) {
  dataset.validate();
  fs::create_directories(dir / "mobility");
  json manifest;
  manifest["format_version"] = kBundleFormatVersion;
  manifest["country"] = dataset.country;
  manifest["n"] = dataset.n_regions();
  manifest["T_total"] = dataset.n_days();
  manifest["dates"] = dataset.dates;
  manifest["regions"] = dataset.regions;
  util::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

  std::string cases = "date,region,new_cases\n";
  for (std::size_t t = 0; t < dataset.n_days(); ++t)
    for (std::size_t u = 0; u < dataset.n_regions(); ++u)
      cases += dataset.dates[t] + "," + dataset.regions[u] + "," + util::format_double(dataset.cases(u, t)) + "\n";
  util::write_file(dir / "cases.csv", cases);

  for (std::size_t t = 0; t < dataset.n_days(); ++t) {
    const Matrix& m = dataset.mobility[t];
    std::string body;
    for (std::size_t u = 0; u < m.rows(); ++u) {
      for (std::size_t v = 0; v < m.cols(); ++v) {
        if (v) body += ',';
        body += util::format_double(m(u, v));
      }
      body += '\n';
    }
    util::write_file(dir / "mobility" / (dataset.dates[t] + ".csv"), body);
  }
}

CountryDataset load_bundle(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw FormatError(dir.string() + ": missing manifest.json");
  json manifest;
  try {
    manifest = json::parse(util::read_file(manifest_path));
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  CountryDataset ds;
  std::size_t n = 0, t = 0;
  try {
    const std::string version = manifest.at("format_version").get<std::string>();
    if (version != kBundleFormatVersion) {
      throw FormatError(manifest_path.string() + ": unsupported format_version '" + version + "'");
    }
    ds.country = manifest.at("country").get<std::string>();
    n = manifest.at("n").get<std::size_t>();
    t = manifest.at("T_total").get<std::size_t>();
    ds.dates = manifest.at("dates").get<std::vector<std::string>>();
    ds.regions = manifest.at("regions").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  if (ds.regions.size() != n || ds.dates.size() != t) {
    throw FormatError(manifest_path.string() + ": region/date counts disagree with n/T_total");
  }

  const auto csv = util::read_csv(dir / "cases.csv");
  if (csv.header != std::vector<std::string>{"date", "region", "new_cases"}) {
    throw FormatError((dir / "cases.csv").string() + ": unexpected header");
  }
  const auto ridx = index_regions(ds.regions);
  std::unordered_map<std::string, std::size_t> didx;
  for (std::size_t k = 0; k < t; ++k) didx.emplace(ds.dates[k], k);
  ds.cases = Matrix(n, t);
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    const auto u = row.size() == 3 ? ridx.find(row[1]) : ridx.end();
    const auto d = row.size() == 3 ? didx.find(row[0]) : didx.end();
    if (u == ridx.end() || d == didx.end()) {
      throw FormatError((dir / "cases.csv").string() + ":" + std::to_string(csv.line_numbers[r]) +
                        ": row does not match manifest");
    }
    try {
      ds.cases(u->second, d->second) = util::parse_double(row[2]);
    } catch (const std::exception& e) {
      throw FormatError((dir / "cases.csv").string() + ":" + std::to_string(csv.line_numbers[r]) + ": " + e.what());
    }
  }

  for (std::size_t k = 0; k < t; ++k) {
    const fs::path p = dir / "mobility" / (ds.dates[k] + ".csv");
    const std::string text = util::read_file(p);
    Matrix m(n, n);
    std::size_t row = 0, pos = 0;
    while (pos < text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::string_view line(text.data() + pos, eol - pos);
      pos = eol + 1;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty()) continue;
      const auto fields = util::split_csv_line(line);
      if (row >= n || fields.size() != n) {
        throw FormatError(p.string() + ": expected a " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
      }
      for (std::size_t v = 0; v < n; ++v) {
        try {
          m(row, v) = util::parse_double(fields[v]);
        } catch (const std::exception& e) {
          throw FormatError(p.string() + ": " + e.what());
        }
      }
      ++row;
    }
    if (row != n) throw FormatError(p.string() + ": expected " + std::to_string(n) + " rows, got " + std::to_string(row));
    ds.mobility.push_back(std::move(m));
  }
  ds.validate();
  return ds;
}

}  // namespace mobcast::dataio
