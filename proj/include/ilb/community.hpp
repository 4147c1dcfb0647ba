#pragma once

#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace ilb {

using Rng = std::mt19937_64;
using Timestamp = std::chrono::sys_seconds;

inline constexpr int kHoursPerDay = 24;

struct SocioEconomicProfile {
  double median_income = 60000.0;   // dollars per year
  double unemployment_pct = 5.0;
  double act_score = 21.0;
  double college_pct = 55.0;
  double avg_temperature = 60.0;    // degrees F
  double precipitation = 3.0;       // inches per month
  double dwelling_size = 1800.0;    // square feet, synthetic

  void validate() const;
};

// Hourly kWh, starting at an hour boundary. Always whole days.
struct LoadSeries {
  Timestamp start{};
  std::vector<double> values;

  std::size_t days() const { return values.size() / kHoursPerDay; }
  double day_total(std::size_t day) const;
  double hour(std::size_t day, int h) const { return values[day * kHoursPerDay + h]; }

  void validate() const;
};

struct Household {
  std::string id;
  std::string neighborhood_id;
  std::string county;
  LoadSeries load;
  double elasticity = -0.25;
  double baseline_rate = 0.16;  // $/kWh
  SocioEconomicProfile profile;

  void validate() const;
};

struct Neighborhood {
  std::string id;
  std::string county;
  std::vector<std::size_t> members;  // indices into Community::households
};

struct County {
  std::string id;
  std::vector<std::string> neighborhoods;
};

struct Community {
  std::vector<Household> households;
  std::vector<Neighborhood> neighborhoods;
  std::vector<County> counties;

  std::size_t size() const { return households.size(); }
  std::size_t index_of(const std::string& household_id) const;
  std::size_t neighborhood_of(std::size_t household) const;

  // Partition and per-household invariants; throws on the first violation.
  void validate() const;
};

struct CommunitySpec {
  int counties = 1;
  int neighborhoods_per_county = 1;
  int households_per_neighborhood = 1;
  int days = 30;
  double elasticity_mean = -0.25;
  double elasticity_std = 0.1;
};

// Two-regime benchmark: a flexible regime (elastic, cheap to recruit) and an
// inflexible regime, with socio-economic profiles drawn from separate
// clusters. Every neighborhood mixes both regimes.
struct PlantedSpec {
  CommunitySpec base{5, 1, 50, 30, -0.25, 0.1};
  double flexible_share = 0.5;
  double flexible_elasticity_mean = -0.45;
  double flexible_elasticity_std = 0.08;
  double inflexible_elasticity_mean = -0.03;
  double inflexible_elasticity_std = 0.01;
  // Distance between regime profile centers in within-regime standard
  // deviations; smaller values make the regimes overlap.
  double profile_separation = 2.0;
};

struct PlantedCommunity {
  Community community;
  std::vector<int> regime;  // 0 = flexible, 1 = inflexible
};

struct ScenarioConfig {
  int cycle_days = 30;
  std::vector<int> emergency_days;  // D'; sampled when empty
  int emergency_day_count = 3;
  double target_reduction_pct = 10.0;
  double default_incentive = 100.0;
  double elasticity_mean = -0.25;
  double elasticity_std = 0.1;
  std::uint64_t rng_seed = 1;
  std::array<double, 3> split_ratios{0.7, 0.2, 0.1};

  void validate() const;
};

Community generate_community(const CommunitySpec& spec, std::uint64_t seed);
PlantedCommunity generate_planted_community(const PlantedSpec& spec, std::uint64_t seed);

// Gaussian draw clamped into (-5.0, -0.01).
double sample_elasticity(Rng& rng, double mean, double std);
inline constexpr double kElasticityFloor = -5.0;
inline constexpr double kElasticityCeiling = -0.01;
double clamp_elasticity(double draw);

Community load_community(const std::filesystem::path& households_csv,
                         const std::filesystem::path& loads_csv);
void save_community(const Community& community, const std::filesystem::path& households_csv,
                    const std::filesystem::path& loads_csv);

// Column order of normalize_features / raw_features.
inline constexpr std::array<const char*, 7> kFeatureColumns{
    "median_income", "unemployment_pct", "act_score", "college_pct",
    "avg_temperature", "precipitation", "dwelling_size"};

Eigen::MatrixXd raw_features(const Community& community);
// Column-wise z-score with sample standard deviation; constant columns map to 0.
Eigen::MatrixXd zscore_columns(const Eigen::MatrixXd& raw);
Eigen::MatrixXd normalize_features(const Community& community);

std::vector<int> emergency_schedule(const ScenarioConfig& config, Rng& rng);

std::string format_timestamp(Timestamp t);
Timestamp parse_timestamp(const std::string& text);

}  // namespace ilb
