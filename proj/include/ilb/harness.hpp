#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ilb/community.hpp"
#include "ilb/metrics.hpp"
#include "ilb/patternnet.hpp"
#include "ilb/selector.hpp"
#include "ilb/tariff.hpp"

namespace ilb {

inline constexpr const char* kVersion = "1.0.0";

// Everything one end-to-end program run needs. Loaded from and saved to JSON.
struct PipelineConfig {
  ScenarioConfig scenario;
  CommunitySpec community{5, 1, 50, 30, -0.25, 0.1};
  // When both are set the community is read from these files instead.
  std::string households_csv;
  std::string loads_csv;
  double participation_pct = 25.0;
  // Red-line shortfall per emergency day, as a percent of that day's total
  // community demand.
  double shortfall_pct = 2.5;
  PatternConfig pattern{24, 16, 4, 7, 32};
  int window_stride = 12;
  TrainHyper training;
  double query_fraction = 0.05;
  ClassifierHyper classifier;

  void validate() const;
};

PipelineConfig pipeline_config_from_json(const std::string& text);
std::string to_json(const PipelineConfig& config);

// Community of the configured run, with elasticities drawn from the scenario
// distribution when generated.
Community build_community(const PipelineConfig& config, std::uint64_t seed);
std::vector<int> scenario_emergency_days(const PipelineConfig& config, std::uint64_t seed);

struct HouseholdOutcome {
  std::string id;
  double elasticity = 0.0;
  double cycle_kwh = 0.0;
  double emergency_kwh = 0.0;  // load on emergency days before any reduction
  double min_incentive = 0.0;
  int true_label = 0;
  int predicted_label = 0;
  double accept_probability = 0.0;
  bool offered = false;
  bool accepted = false;
  double incentive = 0.0;       // paid; 0 unless accepted
  double reduction_kwh = 0.0;   // removed on emergency days; 0 unless accepted
};

struct ShortfallDay {
  int day = 0;
  double shortfall_kwh = 0.0;
  double reduction_kwh = 0.0;
  bool met = false;
};

struct ScenarioRun {
  ProgramReport report;
  std::vector<int> emergency_days;
  std::vector<HouseholdOutcome> households;
  std::vector<ShortfallDay> shortfall;
  SelectionResult selection;
  TrainHistory history;
  SimilarityMatrix similarity;
};

// Ranking used when capping participation: accept probability descending,
// ties by household id.
std::vector<std::size_t> rank_by_score(const SelectionResult& selection);

// generate/ingest -> train forecaster -> A_est -> selection -> offers to the
// highest-scoring predicted accepters (capped at participation_pct) ->
// settlement -> report.
ScenarioRun run_scenario(const PipelineConfig& config);

// Settles offers at `incentive` to the given households and summarizes.
ScenarioRun settle(const Community& community, std::span<const std::size_t> offered,
                   double incentive, const OfferTerms& terms, double shortfall_pct);

// Files written by `run`: report.csv, households.csv, shortfall.csv,
// selection.csv, training.csv, similarity.csv and manifest.json.
std::vector<std::filesystem::path> write_run_outputs(const ScenarioRun& run,
                                                     const PipelineConfig& config,
                                                     const std::filesystem::path& directory);

struct NoiseSpec {
  PlantedSpec planted{};
  double kernel_temperature = 0.5;
  double incentive = 10.0;
  std::vector<double> levels{0.0, 25.0, 50.0, 75.0};
  int seeds = 20;
  std::uint64_t seed = 1;
  double target_reduction_pct = 10.0;
  int cycle_days = 30;
  int emergency_day_count = 3;
  double query_fraction = 0.05;
  ClassifierHyper classifier;
  std::string output;

  void validate() const;
};

struct SweepSpec {
  std::string variable;  // incentive | reduction_pct | participation_pct | noise_level
  std::vector<double> values;
  int repetitions = 1;
  std::string output;
  std::uint64_t seed = 1;
  // Fixed incentive for the reduction sweep; incentive ladder for the
  // participation (rate hike) sweep.
  double incentive = 100.0;
  std::vector<double> incentives{100.0, 150.0, 200.0};
  PipelineConfig config;
  // Settings of the noise study when variable == noise_level; values and
  // repetitions replace its levels and seed count.
  NoiseSpec noise;

  void validate() const;
};

SweepSpec sweep_spec_from_json(const std::string& text);

struct SweepTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  // Per-household raw outcomes for independent recomputation of the metrics.
  std::vector<std::string> raw_header;
  std::vector<std::vector<std::string>> raw_rows;

  std::vector<double> column(const std::string& name) const;
};

SweepTable sweep_incentive(const SweepSpec& spec);
SweepTable sweep_reduction(const SweepSpec& spec);
SweepTable sweep_rate_hike(const SweepSpec& spec);

NoiseSpec noise_spec_from_json(const std::string& text);
std::string to_json(const NoiseSpec& spec);
std::string to_json(const SweepSpec& spec);

SweepTable noise_experiment(const NoiseSpec& spec);

// Dispatches on spec.variable.
SweepTable run_sweep(const SweepSpec& spec);

std::vector<std::filesystem::path> write_table(const SweepTable& table,
                                               const std::filesystem::path& output);

struct RunManifest {
  std::string config_json;
  std::vector<std::uint64_t> seeds;
  std::vector<std::pair<std::string, std::string>> outputs;  // file name, sha256 hex
};

std::string sha256_file(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const RunManifest& manifest);

// Spearman rank correlation with average ranks for ties; NaN entries are
// dropped pairwise.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace ilb
