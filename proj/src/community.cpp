#include "ilb/community.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <unordered_map>
#include <utility>

#include "ilb/csv.hpp"
#include "ilb/error.hpp"

namespace ilb {

namespace {

constexpr std::array<const char*, 12> kHouseholdColumns{
    "id", "neighborhood_id", "county", "baseline_rate", "elasticity", "median_income",
    "unemployment_pct", "act_score", "college_pct", "avg_temperature", "precipitation",
    "dwelling_size"};

Timestamp default_start() {
  using namespace std::chrono;
  return sys_seconds{sys_days{year{2014} / September / 1}};
}

std::string padded(const char* prefix, int value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

void check_spec(const CommunitySpec& spec) {
  require(spec.counties >= 1 && spec.neighborhoods_per_county >= 1 &&
              spec.households_per_neighborhood >= 1,
          ErrorKind::InvalidSpec, "community size parameters must all be >= 1");
  require(spec.days >= 1, ErrorKind::InvalidSpec, "load history must cover at least one day");
}

struct RegionProfile {
  SocioEconomicProfile profile;
  double baseline_rate = 0.16;
};

RegionProfile draw_county(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RegionProfile county;
  auto& p = county.profile;
  p.median_income = 40000.0 + 70000.0 * u(rng);
  p.unemployment_pct = 3.0 + 7.0 * u(rng);
  p.act_score = 17.0 + 8.0 * u(rng);
  p.college_pct = 40.0 + 35.0 * u(rng);
  p.avg_temperature = 45.0 + 35.0 * u(rng);
  p.precipitation = 0.5 + 4.5 * u(rng);
  p.dwelling_size = 1800.0;
  county.baseline_rate = 0.12 + 0.10 * u(rng);
  return county;
}

SocioEconomicProfile clamp_profile(SocioEconomicProfile p) {
  p.median_income = std::max(p.median_income, 5000.0);
  p.unemployment_pct = std::clamp(p.unemployment_pct, 0.0, 100.0);
  p.act_score = std::clamp(p.act_score, 1.0, 36.0);
  p.college_pct = std::clamp(p.college_pct, 0.0, 100.0);
  p.precipitation = std::max(p.precipitation, 0.0);
  p.dwelling_size = std::clamp(p.dwelling_size, 400.0, 8000.0);
  return p;
}

SocioEconomicProfile jitter(const SocioEconomicProfile& base, double scale, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  SocioEconomicProfile p = base;
  p.median_income *= std::exp(0.1 * scale * n(rng));
  p.unemployment_pct += 0.5 * scale * n(rng);
  p.act_score += 0.6 * scale * n(rng);
  p.college_pct += 2.5 * scale * n(rng);
  p.avg_temperature += 0.8 * scale * n(rng);
  p.precipitation += 0.15 * scale * n(rng);
  return clamp_profile(p);
}

// Daily two-harmonic shape with a morning and a larger evening peak, scaled
// by dwelling size and income, with day-level and hour-level Gaussian noise.
LoadSeries synthesize_load(const SocioEconomicProfile& profile, int days, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);
  const double scale = 1.25 * std::pow(profile.dwelling_size / 1800.0, 0.6) *
                       std::pow(profile.median_income / 60000.0, 0.25);
  const double evening_peak = 19.0 + 0.8 * n(rng);
  const double morning_peak = 7.0 + 0.6 * n(rng);
  const double evening_amp = 0.25 + 0.15 * u(rng);
  const double morning_amp = 0.15 + 0.15 * u(rng);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  LoadSeries load;
  load.start = default_start();
  load.values.resize(static_cast<std::size_t>(days) * kHoursPerDay);
  for (int d = 0; d < days; ++d) {
    const double day_factor = std::max(0.5, 1.0 + 0.06 * n(rng));
    for (int h = 0; h < kHoursPerDay; ++h) {
      const double shape = 1.0 + evening_amp * std::cos(two_pi * (h - evening_peak) / 24.0) +
                           morning_amp * std::cos(2.0 * two_pi * (h - morning_peak) / 24.0);
      const double noisy = scale * day_factor * shape + 0.12 * scale * n(rng);
      load.values[static_cast<std::size_t>(d) * kHoursPerDay + h] = std::max(0.0, noisy);
    }
  }
  return load;
}

}  // namespace

void SocioEconomicProfile::validate() const {
  auto pct = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 100.0; };
  require(pct(unemployment_pct) && pct(college_pct), ErrorKind::Validation,
          "percent fields must lie in [0,100]");
  require(std::isfinite(act_score) && act_score >= 1.0 && act_score <= 36.0,
          ErrorKind::Validation, "act_score must lie in [1,36]");
  require(std::isfinite(dwelling_size) && dwelling_size > 0.0, ErrorKind::Validation,
          "dwelling_size must be positive");
  require(std::isfinite(median_income) && std::isfinite(avg_temperature) &&
              std::isfinite(precipitation),
          ErrorKind::Validation, "profile fields must be finite");
}

double LoadSeries::day_total(std::size_t day) const {
  const auto first = values.begin() + static_cast<std::ptrdiff_t>(day * kHoursPerDay);
  return std::accumulate(first, first + kHoursPerDay, 0.0);
}

void LoadSeries::validate() const {
  require(!values.empty() && values.size() % kHoursPerDay == 0, ErrorKind::Validation,
          "load series length must be a positive multiple of 24");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(std::isfinite(values[i]) && values[i] >= 0.0)) {
      fail(ErrorKind::Validation, "load value at hour " + std::to_string(i) + " must be finite and >= 0");
    }
  }
}

void Household::validate() const {
  require(elasticity < 0.0, ErrorKind::Validation, "household " + id + ": elasticity must be < 0");
  require(baseline_rate > 0.0, ErrorKind::Validation,
          "household " + id + ": baseline_rate must be > 0");
  load.validate();
  profile.validate();
}

std::size_t Community::index_of(const std::string& household_id) const {
  for (std::size_t i = 0; i < households.size(); ++i) {
    if (households[i].id == household_id) return i;
  }
  fail(ErrorKind::ReferentialIntegrity, "unknown household '" + household_id + "'");
}

std::size_t Community::neighborhood_of(std::size_t household) const {
  const auto& nid = households.at(household).neighborhood_id;
  for (std::size_t k = 0; k < neighborhoods.size(); ++k) {
    if (neighborhoods[k].id == nid) return k;
  }
  fail(ErrorKind::ReferentialIntegrity, "unresolved neighborhood '" + nid + "'");
}

void Community::validate() const {
  require(!households.empty(), ErrorKind::Validation, "community has no households");
  std::vector<int> seen(households.size(), 0);
  std::size_t covered = 0;
  for (const auto& nb : neighborhoods) {
    for (auto member : nb.members) {
      require(member < households.size(), ErrorKind::ReferentialIntegrity,
              "neighborhood " + nb.id + " references a missing household");
      require(seen[member] == 0, ErrorKind::Validation,
              "household " + households[member].id + " belongs to two neighborhoods");
      require(households[member].neighborhood_id == nb.id, ErrorKind::ReferentialIntegrity,
              "household " + households[member].id + " listed under neighborhood " + nb.id);
      seen[member] = 1;
      ++covered;
    }
  }
  require(covered == households.size(), ErrorKind::Validation,
          "neighborhoods do not cover every household");
  const std::size_t days = households.front().load.days();
  for (const auto& h : households) {
    h.validate();
    require(h.load.days() == days, ErrorKind::Validation,
            "household " + h.id + " load length differs from the rest of the community");
  }
}

double clamp_elasticity(double draw) {
  // Clamped to the nearest representable values strictly inside the interval.
  if (!(draw < kElasticityCeiling)) return std::nextafter(kElasticityCeiling, kElasticityFloor);
  if (!(draw > kElasticityFloor)) return std::nextafter(kElasticityFloor, 0.0);
  return draw;
}

double sample_elasticity(Rng& rng, double mean, double std) {
  require(mean < 0.0, ErrorKind::InvalidSpec, "elasticity mean must be negative");
  require(std >= 0.0, ErrorKind::InvalidSpec, "elasticity std must be non-negative");
  if (std == 0.0) return clamp_elasticity(mean);
  std::normal_distribution<double> dist(mean, std);
  return clamp_elasticity(dist(rng));
}

Community generate_community(const CommunitySpec& spec, std::uint64_t seed) {
  check_spec(spec);
  Rng rng(seed);
  Community community;
  for (int c = 0; c < spec.counties; ++c) {
    const auto county_profile = draw_county(rng);
    County county{padded("C", c + 1, 2), {}};
    for (int k = 0; k < spec.neighborhoods_per_county; ++k) {
      Neighborhood nb{county.id + "-" + padded("N", k + 1, 2), county.id, {}};
      const auto nb_profile = jitter(county_profile.profile, 1.0, rng);
      for (int u = 0; u < spec.households_per_neighborhood; ++u) {
        Household h;
        h.id = nb.id + "-" + padded("H", u + 1, 3);
        h.neighborhood_id = nb.id;
        h.county = county.id;
        h.baseline_rate = county_profile.baseline_rate;
        h.profile = jitter(nb_profile, 0.5, rng);
        h.profile.median_income *= std::exp(0.2 * std::normal_distribution<double>()(rng));
        h.profile.dwelling_size =
            std::clamp(1800.0 * std::exp(0.3 * std::normal_distribution<double>()(rng)), 400.0,
                       8000.0);
        h.elasticity = sample_elasticity(rng, spec.elasticity_mean, spec.elasticity_std);
        h.load = synthesize_load(h.profile, spec.days, rng);
        nb.members.push_back(community.households.size());
        community.households.push_back(std::move(h));
      }
      county.neighborhoods.push_back(nb.id);
      community.neighborhoods.push_back(std::move(nb));
    }
    community.counties.push_back(std::move(county));
  }
  community.validate();
  return community;
}

PlantedCommunity generate_planted_community(const PlantedSpec& spec, std::uint64_t seed) {
  check_spec(spec.base);
  require(spec.flexible_share > 0.0 && spec.flexible_share < 1.0, ErrorKind::InvalidSpec,
          "flexible_share must lie in (0,1)");
  require(spec.profile_separation >= 0.0, ErrorKind::InvalidSpec,
          "profile_separation must be non-negative");
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);

  // Per-feature spread and the direction in which the flexible regime sits.
  struct Axis {
    double midpoint, spread, flexible_sign;
  };
  const Axis income{75000.0, 9000.0, -1.0};
  const Axis unemployment{6.0, 1.0, +1.0};
  const Axis act{21.5, 1.0, -1.0};
  const Axis college{57.0, 4.0, -1.0};
  const Axis dwelling{2000.0, 220.0, -1.0};
  const double half = 0.5 * spec.profile_separation;
  auto draw = [&](const Axis& a, bool flexible) {
    const double sign = flexible ? a.flexible_sign : -a.flexible_sign;
    return a.midpoint + sign * half * a.spread + a.spread * n(rng);
  };

  PlantedCommunity out;
  auto& community = out.community;
  for (int c = 0; c < spec.base.counties; ++c) {
    const auto county_profile = draw_county(rng);
    County county{padded("C", c + 1, 2), {}};
    for (int k = 0; k < spec.base.neighborhoods_per_county; ++k) {
      Neighborhood nb{county.id + "-" + padded("N", k + 1, 2), county.id, {}};
      const int size = spec.base.households_per_neighborhood;
      int flexible = static_cast<int>(std::lround(spec.flexible_share * size));
      if (size >= 2) flexible = std::clamp(flexible, 1, size - 1);
      std::vector<int> regimes(size, 1);
      std::fill(regimes.begin(), regimes.begin() + flexible, 0);
      std::shuffle(regimes.begin(), regimes.end(), rng);
      for (int u = 0; u < size; ++u) {
        const bool is_flexible = regimes[u] == 0;
        Household h;
        h.id = nb.id + "-" + padded("H", u + 1, 3);
        h.neighborhood_id = nb.id;
        h.county = county.id;
        h.baseline_rate = county_profile.baseline_rate;
        auto& p = h.profile;
        p = county_profile.profile;
        p.median_income = std::max(draw(income, is_flexible), 5000.0);
        p.unemployment_pct = draw(unemployment, is_flexible);
        p.act_score = draw(act, is_flexible);
        p.college_pct = draw(college, is_flexible);
        p.dwelling_size = draw(dwelling, is_flexible);
        p.avg_temperature += 0.5 * n(rng);
        p.precipitation += 0.1 * n(rng);
        p = clamp_profile(p);
        h.elasticity =
            is_flexible
                ? sample_elasticity(rng, spec.flexible_elasticity_mean, spec.flexible_elasticity_std)
                : sample_elasticity(rng, spec.inflexible_elasticity_mean,
                                    spec.inflexible_elasticity_std);
        h.load = synthesize_load(h.profile, spec.base.days, rng);
        nb.members.push_back(community.households.size());
        community.households.push_back(std::move(h));
        out.regime.push_back(regimes[u]);
      }
      county.neighborhoods.push_back(nb.id);
      community.neighborhoods.push_back(std::move(nb));
    }
    community.counties.push_back(std::move(county));
  }
  community.validate();
  return out;
}

std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%04d-%02u-%02uT%02d:%02d:%02dZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()), static_cast<int>(hms.seconds().count()));
  return buffer;
}

Timestamp parse_timestamp(const std::string& text) {
  using namespace std::chrono;
  int y = 0, mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
  char tail[8] = {0};
  const int matched =
      std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%7s", &y, &mo, &d, &hh, &mm, &ss, tail);
  const bool tail_ok = matched == 6 || (matched == 7 && std::string(tail) == "Z");
  require(tail_ok, ErrorKind::Validation, "bad ISO-8601 timestamp '" + text + "'");
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  require(ymd.ok() && hh >= 0 && hh < 24 && mm >= 0 && mm < 60 && ss >= 0 && ss < 60,
          ErrorKind::Validation, "bad ISO-8601 timestamp '" + text + "'");
  return sys_days{ymd} + hours{hh} + minutes{mm} + seconds{ss};
}

Community load_community(const std::filesystem::path& households_csv,
                         const std::filesystem::path& loads_csv) {
  const auto hh_table = csv::read(households_csv);
  std::array<std::size_t, kHouseholdColumns.size()> col{};
  for (std::size_t i = 0; i < kHouseholdColumns.size(); ++i) {
    col[i] = hh_table.column(kHouseholdColumns[i]);
  }

  Community community;
  std::map<std::string, std::size_t> by_id;
  std::map<std::string, std::size_t> nb_index;
  std::map<std::string, std::size_t> county_index;
  for (std::size_t r = 0; r < hh_table.rows.size(); ++r) {
    const auto& row = hh_table.rows[r];
    const auto line = hh_table.line_numbers[r];
    auto num = [&](std::size_t c) { return csv::parse_number(row[col[c]], kHouseholdColumns[c], line); };
    Household h;
    h.id = row[col[0]];
    h.neighborhood_id = row[col[1]];
    h.county = row[col[2]];
    h.baseline_rate = num(3);
    h.elasticity = num(4);
    h.profile = {num(5), num(6), num(7), num(8), num(9), num(10), num(11)};
    require(!h.id.empty(), ErrorKind::Validation,
            "households.csv line " + std::to_string(line) + ": empty id");
    require(by_id.emplace(h.id, community.households.size()).second, ErrorKind::Validation,
            "households.csv line " + std::to_string(line) + ": duplicate id " + h.id);

    auto [nb_it, nb_new] = nb_index.emplace(h.neighborhood_id, community.neighborhoods.size());
    if (nb_new) {
      community.neighborhoods.push_back({h.neighborhood_id, h.county, {}});
      auto [c_it, c_new] = county_index.emplace(h.county, community.counties.size());
      if (c_new) community.counties.push_back({h.county, {}});
      community.counties[c_it->second].neighborhoods.push_back(h.neighborhood_id);
    }
    require(community.neighborhoods[nb_it->second].county == h.county, ErrorKind::Validation,
            "households.csv line " + std::to_string(line) + ": neighborhood " +
                h.neighborhood_id + " spans two counties");
    community.neighborhoods[nb_it->second].members.push_back(community.households.size());
    community.households.push_back(std::move(h));
  }

  const auto load_table = csv::read(loads_csv);
  const auto id_col = load_table.column("id");
  const auto ts_col = load_table.column("timestamp_iso8601");
  const auto kwh_col = load_table.column("kwh");
  std::vector<std::vector<std::pair<Timestamp, double>>> samples(community.households.size());
  for (std::size_t r = 0; r < load_table.rows.size(); ++r) {
    const auto& row = load_table.rows[r];
    const auto line = load_table.line_numbers[r];
    const auto it = by_id.find(row[id_col]);
    if (it == by_id.end()) {
      fail(ErrorKind::ReferentialIntegrity,
           "loads.csv line " + std::to_string(line) + ": unknown household " + row[id_col]);
    }
    const double kwh = csv::parse_number(row[kwh_col], "kwh", line);
    if (!(std::isfinite(kwh) && kwh >= 0.0)) {
      fail(ErrorKind::Validation, "loads.csv line " + std::to_string(line) +
                                      ": kwh must be finite and >= 0, got " + row[kwh_col]);
    }
    samples[it->second].emplace_back(parse_timestamp(row[ts_col]), kwh);
  }

  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& hh = community.households[i];
    auto& rows = samples[i];
    require(!rows.empty(), ErrorKind::ReferentialIntegrity,
            "household " + hh.id + " has no rows in loads.csv");
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    hh.load.start = rows.front().first;
    require(hh.load.start.time_since_epoch().count() % 3600 == 0, ErrorKind::Validation,
            "household " + hh.id + ": load must start on an hour boundary");
    hh.load.values.reserve(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      if (rows[k].first != hh.load.start + std::chrono::hours(k)) {
        fail(ErrorKind::Validation, "household " + hh.id +
                                        ": load rows are not contiguous hours at " +
                                        format_timestamp(rows[k].first));
      }
      hh.load.values.push_back(rows[k].second);
    }
  }
  community.validate();
  return community;
}

void save_community(const Community& community, const std::filesystem::path& households_csv,
                    const std::filesystem::path& loads_csv) {
  using csv::format_number;
  {
    csv::Writer out(households_csv);
    out.row({kHouseholdColumns.begin(), kHouseholdColumns.end()});
    for (const auto& h : community.households) {
      const auto& p = h.profile;
      out.row({h.id, h.neighborhood_id, h.county, format_number(h.baseline_rate),
               format_number(h.elasticity), format_number(p.median_income),
               format_number(p.unemployment_pct), format_number(p.act_score),
               format_number(p.college_pct), format_number(p.avg_temperature),
               format_number(p.precipitation), format_number(p.dwelling_size)});
    }
  }
  csv::Writer out(loads_csv);
  out.row({"id", "timestamp_iso8601", "kwh"});
  for (const auto& h : community.households) {
    for (std::size_t k = 0; k < h.load.values.size(); ++k) {
      out.row({h.id, format_timestamp(h.load.start + std::chrono::hours(k)),
               format_number(h.load.values[k])});
    }
  }
}

Eigen::MatrixXd raw_features(const Community& community) {
  Eigen::MatrixXd raw(static_cast<Eigen::Index>(community.size()),
                      static_cast<Eigen::Index>(kFeatureColumns.size()));
  for (std::size_t i = 0; i < community.size(); ++i) {
    const auto& p = community.households[i].profile;
    raw.row(static_cast<Eigen::Index>(i)) << p.median_income, p.unemployment_pct, p.act_score,
        p.college_pct, p.avg_temperature, p.precipitation, p.dwelling_size;
  }
  return raw;
}

Eigen::MatrixXd zscore_columns(const Eigen::MatrixXd& raw) {
  require(raw.rows() >= 2, ErrorKind::InsufficientPopulation,
          "z-normalization needs at least two households");
  Eigen::MatrixXd out(raw.rows(), raw.cols());
  const double denom = static_cast<double>(raw.rows() - 1);
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const double mean = raw.col(c).mean();
    const Eigen::VectorXd centered = raw.col(c).array() - mean;
    const double sd = std::sqrt(centered.squaredNorm() / denom);
    if (sd == 0.0 || !std::isfinite(sd)) {
      out.col(c).setZero();
    } else {
      out.col(c) = centered / sd;
    }
  }
  return out;
}

Eigen::MatrixXd normalize_features(const Community& community) {
  return zscore_columns(raw_features(community));
}

void ScenarioConfig::validate() const {
  require(cycle_days >= 1, ErrorKind::InvalidSpec, "cycle_days must be >= 1");
  require(emergency_day_count >= 0 && emergency_day_count <= cycle_days, ErrorKind::InvalidSpec,
          "emergency_day_count must lie in [0, cycle_days]");
  for (std::size_t k = 0; k < emergency_days.size(); ++k) {
    require(emergency_days[k] >= 0 && emergency_days[k] < cycle_days, ErrorKind::InvalidSpec,
            "emergency day outside the billing cycle");
    require(k == 0 || emergency_days[k] > emergency_days[k - 1], ErrorKind::InvalidSpec,
            "emergency days must be strictly increasing");
  }
  require(target_reduction_pct > 0.0 && target_reduction_pct < 100.0, ErrorKind::InvalidSpec,
          "target_reduction_pct must lie in (0,100)");
  require(default_incentive >= 0.0, ErrorKind::InvalidSpec, "default_incentive must be >= 0");
  require(elasticity_mean < 0.0, ErrorKind::InvalidSpec, "elasticity_mean must be < 0");
  require(elasticity_std >= 0.0, ErrorKind::InvalidSpec, "elasticity_std must be >= 0");
  const double total = split_ratios[0] + split_ratios[1] + split_ratios[2];
  require(split_ratios[0] > 0.0 && split_ratios[1] > 0.0 && split_ratios[2] > 0.0 &&
              std::abs(total - 1.0) < 1e-9,
          ErrorKind::InvalidSpec, "split ratios must be positive and sum to 1");
}

std::vector<int> emergency_schedule(const ScenarioConfig& config, Rng& rng) {
  const int count = config.emergency_day_count;
  require(count >= 0 && count <= config.cycle_days, ErrorKind::InvalidSpec,
          "requested " + std::to_string(count) + " emergency days in a " +
              std::to_string(config.cycle_days) + "-day cycle");
  std::vector<int> days(config.cycle_days);
  std::iota(days.begin(), days.end(), 0);
  // Partial Fisher-Yates: the first `count` slots are a uniform sample.
  for (int k = 0; k < count; ++k) {
    std::uniform_int_distribution<int> pick(k, config.cycle_days - 1);
    std::swap(days[k], days[pick(rng)]);
  }
  days.resize(count);
  std::sort(days.begin(), days.end());
  return days;
}

}  // namespace ilb
