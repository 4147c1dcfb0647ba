#include "ilb/harness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ilb/csv.hpp"
#include "ilb/error.hpp"
#include "json.hpp"

namespace ilb {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Independent stream seeds derived from one base seed (splitmix64 finalizer).
std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t {
  kCommunityStream = 1,
  kCalendarStream,
  kModelStream,
  kSelectionStream,
  kNoiseStream,
  kRepetitionStream,
};

// Reads known keys into fields and rejects anything else, so a typo in a
// config file fails loudly instead of silently using a default.
class Reader {
 public:
  Reader(const json& object, std::string where) : object_(object), where_(std::move(where)) {
    require(object_.is_object(), ErrorKind::InvalidSpec, where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!object_.contains(key)) return;
    try {
      object_.at(key).get_to(field);
    } catch (const json::exception& e) {
      fail(ErrorKind::InvalidSpec, where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return object_.contains(key) ? &object_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : object_.items()) {
      require(seen_.count(key) > 0, ErrorKind::InvalidSpec,
              where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const json& object_;
  std::string where_;
  std::set<std::string> seen_;
};

json parse(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidSpec, std::string("malformed JSON: ") + e.what());
  }
}

void read_scenario(const json& j, ScenarioConfig& s) {
  Reader r(j, "scenario");
  r.get("cycle_days", s.cycle_days);
  r.get("emergency_days", s.emergency_days);
  r.get("emergency_day_count", s.emergency_day_count);
  r.get("target_reduction_pct", s.target_reduction_pct);
  r.get("default_incentive", s.default_incentive);
  r.get("elasticity_mean", s.elasticity_mean);
  r.get("elasticity_std", s.elasticity_std);
  r.get("rng_seed", s.rng_seed);
  r.get("split_ratios", s.split_ratios);
  r.finish();
}

json write_scenario(const ScenarioConfig& s) {
  return {{"cycle_days", s.cycle_days},
          {"emergency_days", s.emergency_days},
          {"emergency_day_count", s.emergency_day_count},
          {"target_reduction_pct", s.target_reduction_pct},
          {"default_incentive", s.default_incentive},
          {"elasticity_mean", s.elasticity_mean},
          {"elasticity_std", s.elasticity_std},
          {"rng_seed", s.rng_seed},
          {"split_ratios", s.split_ratios}};
}

void read_community(const json& j, CommunitySpec& c, const char* where) {
  Reader r(j, where);
  r.get("counties", c.counties);
  r.get("neighborhoods_per_county", c.neighborhoods_per_county);
  r.get("households_per_neighborhood", c.households_per_neighborhood);
  r.get("days", c.days);
  r.finish();
}

json write_community(const CommunitySpec& c) {
  return {{"counties", c.counties},
          {"neighborhoods_per_county", c.neighborhoods_per_county},
          {"households_per_neighborhood", c.households_per_neighborhood},
          {"days", c.days}};
}

void read_pattern(const json& j, PatternConfig& p) {
  Reader r(j, "pattern");
  r.get("window", p.window);
  r.get("embedding", p.embedding);
  r.get("heads", p.heads);
  r.get("socio_features", p.socio_features);
  r.get("gcn_hidden", p.gcn_hidden);
  r.finish();
}

json write_pattern(const PatternConfig& p) {
  return {{"window", p.window}, {"embedding", p.embedding}, {"heads", p.heads}, {"socio_features", p.socio_features},
          {"gcn_hidden", p.gcn_hidden}};
}

void read_training(const json& j, TrainHyper& t) {
  Reader r(j, "training");
  r.get("learning_rate", t.learning_rate);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("decay", t.decay);
  r.get("epsilon", t.epsilon);
  r.get("seed", t.seed);
  r.finish();
}

json write_training(const TrainHyper& t) {
  return {{"learning_rate", t.learning_rate}, {"epochs", t.epochs}, {"batch_size", t.batch_size},
          {"decay", t.decay},                 {"epsilon", t.epsilon}, {"seed", t.seed}};
}

void read_classifier(const json& j, ClassifierHyper& c) {
  Reader r(j, "classifier");
  r.get("hidden", c.hidden);
  r.get("learning_rate", c.learning_rate);
  r.get("epochs", c.epochs);
  r.get("decay", c.decay);
  r.get("epsilon", c.epsilon);
  r.get("seed", c.seed);
  r.finish();
}

json write_classifier(const ClassifierHyper& c) {
  return {{"hidden", c.hidden}, {"learning_rate", c.learning_rate}, {"epochs", c.epochs},
          {"decay", c.decay},   {"epsilon", c.epsilon},             {"seed", c.seed}};
}

void read_pipeline(const json& j, PipelineConfig& c) {
  Reader r(j, "config");
  if (const auto* s = r.child("scenario")) read_scenario(*s, c.scenario);
  if (const auto* s = r.child("community")) read_community(*s, c.community, "community");
  r.get("households_csv", c.households_csv);
  r.get("loads_csv", c.loads_csv);
  r.get("participation_pct", c.participation_pct);
  r.get("shortfall_pct", c.shortfall_pct);
  if (const auto* s = r.child("pattern")) read_pattern(*s, c.pattern);
  r.get("window_stride", c.window_stride);
  if (const auto* s = r.child("training")) read_training(*s, c.training);
  r.get("query_fraction", c.query_fraction);
  if (const auto* s = r.child("classifier")) read_classifier(*s, c.classifier);
  r.finish();
}

json write_pipeline(const PipelineConfig& c) {
  return {{"scenario", write_scenario(c.scenario)},
          {"community", write_community(c.community)},
          {"households_csv", c.households_csv},
          {"loads_csv", c.loads_csv},
          {"participation_pct", c.participation_pct},
          {"shortfall_pct", c.shortfall_pct},
          {"pattern", write_pattern(c.pattern)},
          {"window_stride", c.window_stride},
          {"training", write_training(c.training)},
          {"query_fraction", c.query_fraction},
          {"classifier", write_classifier(c.classifier)}};
}

void read_planted(const json& j, PlantedSpec& p) {
  Reader r(j, "planted");
  if (const auto* s = r.child("community")) read_community(*s, p.base, "planted.community");
  r.get("flexible_share", p.flexible_share);
  r.get("flexible_elasticity_mean", p.flexible_elasticity_mean);
  r.get("flexible_elasticity_std", p.flexible_elasticity_std);
  r.get("inflexible_elasticity_mean", p.inflexible_elasticity_mean);
  r.get("inflexible_elasticity_std", p.inflexible_elasticity_std);
  r.get("profile_separation", p.profile_separation);
  r.finish();
}

json write_planted(const PlantedSpec& p) {
  return {{"community", write_community(p.base)},
          {"flexible_share", p.flexible_share},
          {"flexible_elasticity_mean", p.flexible_elasticity_mean},
          {"flexible_elasticity_std", p.flexible_elasticity_std},
          {"inflexible_elasticity_mean", p.inflexible_elasticity_mean},
          {"inflexible_elasticity_std", p.inflexible_elasticity_std},
          {"profile_separation", p.profile_separation}};
}

void read_noise(const json& j, NoiseSpec& n) {
  Reader r(j, "noise");
  if (const auto* s = r.child("planted")) read_planted(*s, n.planted);
  r.get("kernel_temperature", n.kernel_temperature);
  r.get("incentive", n.incentive);
  r.get("levels", n.levels);
  r.get("seeds", n.seeds);
  r.get("seed", n.seed);
  r.get("target_reduction_pct", n.target_reduction_pct);
  r.get("cycle_days", n.cycle_days);
  r.get("emergency_day_count", n.emergency_day_count);
  r.get("query_fraction", n.query_fraction);
  if (const auto* s = r.child("classifier")) read_classifier(*s, n.classifier);
  r.get("output", n.output);
  r.finish();
}

json write_noise(const NoiseSpec& n) {
  return {{"planted", write_planted(n.planted)},
          {"kernel_temperature", n.kernel_temperature},
          {"incentive", n.incentive},
          {"levels", n.levels},
          {"seeds", n.seeds},
          {"seed", n.seed},
          {"target_reduction_pct", n.target_reduction_pct},
          {"cycle_days", n.cycle_days},
          {"emergency_day_count", n.emergency_day_count},
          {"query_fraction", n.query_fraction},
          {"classifier", write_classifier(n.classifier)},
          {"output", n.output}};
}

OfferTerms terms_of(const PipelineConfig& config, std::span<const int> days, double reduction_pct) {
  return {reduction_pct, {days.begin(), days.end()}, config.scenario.cycle_days};
}

std::vector<int> truth_labels(const Community& community, double incentive,
                              const OfferTerms& terms) {
  std::vector<int> truth;
  truth.reserve(community.size());
  for (const auto& h : community.households) {
    truth.push_back(accept_offer(h, make_offer(h, incentive, terms)).accepted ? 1 : 0);
  }
  return truth;
}

// Runs one pipeline stage, prefixing any library error with the stage name.
template <typename F>
auto staged(const char* stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const Error& e) {
    fail(e.kind(), std::string(stage) + ": " + e.message());
  }
}

struct Framework {
  SelectionResult selection;
  TrainHistory history;
  SimilarityMatrix similarity;
};

// Forecaster training, A_est extraction and the selection pipeline.
Framework run_framework(const PipelineConfig& config, const Community& community,
                        std::span<const int> truth, std::uint64_t seed) {
  DatasetOptions options;
  options.window = config.pattern.window;
  options.stride = config.window_stride;
  options.split_ratios = config.scenario.split_ratios;
  const auto data = staged("dataset", [&] { return build_dataset(community, options); });
  Framework out;
  auto trained = staged("patternnet", [&] {
    return train(PatternModel::initialize(config.pattern, derive(seed, kModelStream)), data,
                 config.training);
  });
  out.history = std::move(trained.history);
  out.similarity = staged("patternnet", [&] { return final_similarity(trained.model, data); });
  SelectionOptions selection;
  selection.query_fraction = config.query_fraction;
  selection.seed = derive(seed, kSelectionStream);
  selection.classifier = config.classifier;
  out.selection = staged("selector", [&] {
    return run_selection(community, out.similarity, truth, selection);
  });
  return out;
}

std::size_t participant_cap(double participation_pct, std::size_t n) {
  return static_cast<std::size_t>(
      std::floor(participation_pct / 100.0 * static_cast<double>(n) + 1e-9));
}

std::vector<std::string> raw_fields(std::uint64_t seed, int selection, double value,
                                    double incentive, const HouseholdOutcome& h) {
  return {std::to_string(seed),
          std::to_string(selection),
          csv::format_number(value),
          csv::format_number(incentive),
          h.id,
          h.offered ? "1" : "0",
          h.accepted ? "1" : "0",
          csv::format_number(h.min_incentive),
          csv::format_number(h.incentive),
          csv::format_number(h.reduction_kwh),
          csv::format_number(h.cycle_kwh),
          csv::format_number(h.emergency_kwh)};
}

const std::vector<std::string> kRawHeader{
    "seed",          "selection",     "value",      "incentive",     "household_id",
    "offered",       "accepted",      "min_incentive", "incentive_paid", "reduction_kwh",
    "cycle_kwh",     "emergency_kwh"};

std::vector<std::size_t> top_consumers(const Community& community, int cycle_days) {
  std::vector<double> kwh;
  for (const auto& h : community.households) kwh.push_back(cycle_consumption(h.load, cycle_days));
  std::vector<std::size_t> order(community.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (kwh[a] != kwh[b]) return kwh[a] > kwh[b];
    return community.households[a].id < community.households[b].id;
  });
  return order;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

void PipelineConfig::validate() const {
  scenario.validate();
  require(participation_pct >= 0.0 && participation_pct <= 100.0, ErrorKind::InvalidSpec,
          "participation_pct must lie in [0,100]");
  require(shortfall_pct >= 0.0 && shortfall_pct <= 100.0, ErrorKind::InvalidSpec,
          "shortfall_pct must lie in [0,100]");
  require(window_stride >= 1, ErrorKind::InvalidSpec, "window_stride must be >= 1");
  require(query_fraction > 0.0 && query_fraction <= 1.0, ErrorKind::InvalidSpec,
          "query_fraction must lie in (0,1]");
  require(households_csv.empty() == loads_csv.empty(), ErrorKind::InvalidSpec,
          "households_csv and loads_csv must be given together");
}

PipelineConfig pipeline_config_from_json(const std::string& text) {
  PipelineConfig config;
  read_pipeline(parse(text), config);
  config.validate();
  return config;
}

std::string to_json(const PipelineConfig& config) { return write_pipeline(config).dump(2); }

Community build_community(const PipelineConfig& config, std::uint64_t seed) {
  Community community;
  if (!config.households_csv.empty()) {
    community = load_community(config.households_csv, config.loads_csv);
  } else {
    CommunitySpec spec = config.community;
    spec.elasticity_mean = config.scenario.elasticity_mean;
    spec.elasticity_std = config.scenario.elasticity_std;
    community = generate_community(spec, derive(seed, kCommunityStream));
  }
  for (const auto& h : community.households) {
    require(h.load.days() >= static_cast<std::size_t>(config.scenario.cycle_days),
            ErrorKind::Coverage,
            "household " + h.id + " load does not cover the " +
                std::to_string(config.scenario.cycle_days) + "-day billing cycle");
  }
  return community;
}

std::vector<int> scenario_emergency_days(const PipelineConfig& config, std::uint64_t seed) {
  if (!config.scenario.emergency_days.empty()) return config.scenario.emergency_days;
  Rng rng(derive(seed, kCalendarStream));
  return emergency_schedule(config.scenario, rng);
}

std::vector<std::size_t> rank_by_score(const SelectionResult& selection) {
  std::vector<std::size_t> order(selection.ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto& p = selection.accept_probability;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ia = static_cast<Eigen::Index>(a);
    const auto ib = static_cast<Eigen::Index>(b);
    if (p(ia) != p(ib)) return p(ia) > p(ib);
    return selection.ids[a] < selection.ids[b];
  });
  return order;
}

ScenarioRun settle(const Community& community, std::span<const std::size_t> offered,
                   double incentive, const OfferTerms& terms, double shortfall_pct) {
  ScenarioRun run;
  run.emergency_days = terms.emergency_days;
  const std::size_t n = community.size();
  std::vector<bool> is_offered(n, false);
  for (auto u : offered) {
    require(u < n, ErrorKind::ReferentialIntegrity, "offered index outside the community");
    is_offered[u] = true;
  }

  run.households.resize(n);
  std::vector<OfferOutcome> outcomes;
  std::vector<std::size_t> participants;
  std::vector<std::size_t> nonparticipants;
  std::vector<double> paid;
  std::vector<double> reductions;
  for (std::size_t u = 0; u < n; ++u) {
    const auto& h = community.households[u];
    auto& row = run.households[u];
    row.id = h.id;
    row.elasticity = h.elasticity;
    row.cycle_kwh = cycle_consumption(h.load, terms.cycle_days);
    for (int d : terms.emergency_days) row.emergency_kwh += h.load.day_total(d);
    row.min_incentive = min_incentive(h, terms);
    row.offered = is_offered[u];
    if (row.offered) {
      outcomes.push_back(accept_offer(h, make_offer(h, incentive, terms)));
      row.accepted = outcomes.back().accepted;
    }
    if (row.accepted) {
      row.incentive = incentive;
      for (int d : terms.emergency_days) {
        row.reduction_kwh += day_reduction(h, d, terms.target_reduction_pct);
      }
      participants.push_back(u);
      paid.push_back(row.incentive);
      reductions.push_back(row.reduction_kwh);
    } else {
      nonparticipants.push_back(u);
    }
  }

  auto& report = run.report;
  report.offered = outcomes.size();
  report.accepted = participants.size();
  report.acceptance_rate_pct = outcomes.empty() ? 0.0 : acceptance_rate(outcomes);
  report.incentive_total = std::accumulate(paid.begin(), paid.end(), 0.0);
  const double reduced = std::accumulate(reductions.begin(), reductions.end(), 0.0);
  report.responsiveness_cost = reduced > 0.0 ? responsiveness_cost(paid, reductions) : 0.0;
  report.total_reduction_pct =
      total_demand_reduction(community, participants, terms.target_reduction_pct,
                             terms.emergency_days);
  double nonparticipant_kwh = 0.0;
  for (auto u : nonparticipants) nonparticipant_kwh += run.households[u].cycle_kwh;
  report.r_extra = participants.empty() ? 0.0
                   : nonparticipant_kwh > 0.0
                       ? rate_hike(community, participants, nonparticipants, paid, terms.cycle_days)
                       : kNaN;

  for (int d : terms.emergency_days) {
    ShortfallDay day{d, 0.0, 0.0, false};
    for (const auto& h : community.households) day.shortfall_kwh += h.load.day_total(d);
    day.shortfall_kwh *= shortfall_pct / 100.0;
    for (auto u : participants) {
      day.reduction_kwh += day_reduction(community.households[u], d, terms.target_reduction_pct);
    }
    day.met = day.reduction_kwh >=
              day.shortfall_kwh - kCoverageTolerance * std::max(1.0, day.shortfall_kwh);
    report.shortfall_met.push_back(day.met);
    run.shortfall.push_back(day);
  }
  return run;
}

ScenarioRun run_scenario(const PipelineConfig& config) {
  config.validate();
  const auto seed = config.scenario.rng_seed;
  const auto community = staged("community", [&] { return build_community(config, seed); });
  const auto days = staged("community", [&] { return scenario_emergency_days(config, seed); });
  const auto terms = terms_of(config, days, config.scenario.target_reduction_pct);
  const auto truth = staged("tariff", [&] {
    return truth_labels(community, config.scenario.default_incentive, terms);
  });

  auto framework = run_framework(config, community, truth, seed);
  const std::size_t cap = participant_cap(config.participation_pct, community.size());
  std::vector<std::size_t> offered;
  for (auto u : rank_by_score(framework.selection)) {
    if (offered.size() >= cap) break;
    if (framework.selection.predicted[u] == 1) offered.push_back(u);
  }
  std::sort(offered.begin(), offered.end());

  auto run = staged("settlement", [&] {
    return settle(community, offered, config.scenario.default_incentive, terms,
                  config.shortfall_pct);
  });
  for (std::size_t u = 0; u < community.size(); ++u) {
    run.households[u].true_label = truth[u];
    run.households[u].predicted_label = framework.selection.predicted[u];
    run.households[u].accept_probability =
        framework.selection.accept_probability(static_cast<Eigen::Index>(u));
  }
  run.selection = std::move(framework.selection);
  run.history = std::move(framework.history);
  run.similarity = std::move(framework.similarity);
  return run;
}

std::vector<std::filesystem::path> write_run_outputs(const ScenarioRun& run,
                                                     const PipelineConfig& config,
                                                     const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  using csv::format_number;
  std::vector<std::filesystem::path> files;
  {
    const auto path = directory / "report.csv";
    csv::Writer out(path);
    const auto& r = run.report;
    out.row({"offered", "accepted", "acceptance_rate_pct", "responsiveness_cost",
             "total_reduction_pct", "incentive_total", "r_extra"});
    out.row({std::to_string(r.offered), std::to_string(r.accepted),
             format_number(r.acceptance_rate_pct), format_number(r.responsiveness_cost),
             format_number(r.total_reduction_pct), format_number(r.incentive_total),
             format_number(r.r_extra)});
    files.push_back(path);
  }
  {
    const auto path = directory / "households.csv";
    csv::Writer out(path);
    out.row({"household_id", "elasticity", "cycle_kwh", "emergency_kwh", "min_incentive",
             "true_label", "predicted_label", "accept_probability", "offered", "accepted",
             "incentive", "reduction_kwh"});
    for (const auto& h : run.households) {
      out.row({h.id, format_number(h.elasticity), format_number(h.cycle_kwh),
               format_number(h.emergency_kwh), format_number(h.min_incentive),
               std::to_string(h.true_label), std::to_string(h.predicted_label),
               format_number(h.accept_probability), h.offered ? "1" : "0",
               h.accepted ? "1" : "0", format_number(h.incentive), format_number(h.reduction_kwh)});
    }
    files.push_back(path);
  }
  {
    const auto path = directory / "shortfall.csv";
    csv::Writer out(path);
    out.row({"day", "shortfall_kwh", "reduction_kwh", "met"});
    for (const auto& d : run.shortfall) {
      out.row({std::to_string(d.day), format_number(d.shortfall_kwh),
               format_number(d.reduction_kwh), d.met ? "1" : "0"});
    }
    files.push_back(path);
  }
  {
    const auto path = directory / "selection.csv";
    write_selection_csv(path, run.selection);
    files.push_back(path);
  }
  {
    const auto path = directory / "training.csv";
    csv::Writer out(path);
    out.row({"epoch", "train_mse", "validation_mse"});
    for (std::size_t e = 0; e < run.history.train_mse.size(); ++e) {
      out.row({std::to_string(e), format_number(run.history.train_mse[e]),
               format_number(run.history.validation_mse[e])});
    }
    files.push_back(path);
  }
  {
    const auto path = directory / "similarity.csv";
    write_similarity_csv(path, run.selection.ids, run.similarity);
    files.push_back(path);
  }
  RunManifest manifest;
  manifest.config_json = to_json(config);
  manifest.seeds = {config.scenario.rng_seed, config.training.seed, config.classifier.seed};
  for (const auto& f : files) manifest.outputs.emplace_back(f.filename().string(), sha256_file(f));
  const auto manifest_path = directory / "manifest.json";
  write_manifest(manifest_path, manifest);
  files.push_back(manifest_path);
  return files;
}

void NoiseSpec::validate() const {
  require(!levels.empty(), ErrorKind::InvalidSpec, "noise levels must be non-empty");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    require(levels[k] >= 0.0 && (k == 0 || levels[k] > levels[k - 1]), ErrorKind::InvalidSpec,
            "noise levels must be non-negative and strictly increasing");
  }
  require(seeds >= 1, ErrorKind::InvalidSpec, "noise study needs at least one seed");
  require(kernel_temperature > 0.0, ErrorKind::InvalidSpec, "kernel_temperature must be > 0");
  require(incentive >= 0.0, ErrorKind::InvalidSpec, "incentive must be >= 0");
  require(query_fraction > 0.0 && query_fraction <= 1.0, ErrorKind::InvalidSpec,
          "query_fraction must lie in (0,1]");
  require(planted.base.days >= cycle_days, ErrorKind::InvalidSpec,
          "planted load history shorter than the billing cycle");
}

NoiseSpec noise_spec_from_json(const std::string& text) {
  NoiseSpec spec;
  read_noise(parse(text), spec);
  spec.validate();
  return spec;
}

void SweepSpec::validate() const {
  static const std::set<std::string> kVariables{"incentive", "reduction_pct", "participation_pct",
                                                "noise_level"};
  require(kVariables.count(variable) > 0, ErrorKind::InvalidSpec,
          "unknown sweep variable '" + variable + "'");
  require(!values.empty(), ErrorKind::InvalidSpec, "sweep ladder must be non-empty");
  for (std::size_t k = 1; k < values.size(); ++k) {
    require(values[k] > values[k - 1], ErrorKind::InvalidSpec,
            "sweep ladder must be strictly increasing");
  }
  require(repetitions >= 1, ErrorKind::InvalidSpec, "repetitions must be >= 1");
  if (variable == "participation_pct") {
    require(!incentives.empty(), ErrorKind::InvalidSpec, "incentive ladder must be non-empty");
    for (std::size_t k = 1; k < incentives.size(); ++k) {
      require(incentives[k] > incentives[k - 1], ErrorKind::InvalidSpec,
              "incentive ladder must be strictly increasing");
    }
  }
  if (variable != "noise_level") config.validate();
}

SweepSpec sweep_spec_from_json(const std::string& text) {
  const json doc = parse(text);
  SweepSpec spec;
  Reader r(doc, "sweep");
  r.get("variable", spec.variable);
  r.get("values", spec.values);
  r.get("repetitions", spec.repetitions);
  r.get("output", spec.output);
  r.get("seed", spec.seed);
  r.get("incentive", spec.incentive);
  r.get("incentives", spec.incentives);
  if (const auto* c = r.child("config")) read_pipeline(*c, spec.config);
  if (const auto* c = r.child("noise")) read_noise(*c, spec.noise);
  r.finish();
  spec.validate();
  return spec;
}

std::vector<double> SweepTable::column(const std::string& name) const {
  const auto it = std::find(header.begin(), header.end(), name);
  require(it != header.end(), ErrorKind::Validation, "table has no column '" + name + "'");
  const auto j = static_cast<std::size_t>(it - header.begin());
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& row : rows) out.push_back(row[j]);
  return out;
}

SweepTable sweep_incentive(const SweepSpec& spec) {
  require(spec.variable == "incentive", ErrorKind::InvalidSpec, "not an incentive sweep");
  spec.validate();
  SweepTable table;
  table.header = {"seed", "incentive", "offered", "accepted", "acceptance_rate_pct",
                  "responsiveness_cost", "total_reduction_pct", "incentive_total"};
  table.raw_header = kRawHeader;
  for (int rep = 0; rep < spec.repetitions; ++rep) {
    const auto seed = derive(spec.seed, kRepetitionStream + static_cast<std::uint64_t>(rep));
    const auto community = build_community(spec.config, seed);
    const auto days = scenario_emergency_days(spec.config, seed);
    const auto terms = terms_of(spec.config, days, spec.config.scenario.target_reduction_pct);
    std::vector<std::size_t> everyone(community.size());
    std::iota(everyone.begin(), everyone.end(), std::size_t{0});
    for (double incentive : spec.values) {
      const auto run = settle(community, everyone, incentive, terms, spec.config.shortfall_pct);
      const auto& r = run.report;
      table.rows.push_back({static_cast<double>(rep), incentive, static_cast<double>(r.offered),
                            static_cast<double>(r.accepted), r.acceptance_rate_pct,
                            r.responsiveness_cost, r.total_reduction_pct, r.incentive_total});
      for (const auto& h : run.households) {
        table.raw_rows.push_back(raw_fields(static_cast<std::uint64_t>(rep), 0, incentive,
                                            incentive, h));
      }
    }
  }
  return table;
}

SweepTable sweep_reduction(const SweepSpec& spec) {
  require(spec.variable == "reduction_pct", ErrorKind::InvalidSpec, "not a reduction sweep");
  spec.validate();
  for (double v : spec.values) {
    require(v >= 0.0 && v < 100.0, ErrorKind::InvalidSpec, "reduction ladder must lie in [0,100)");
  }
  const auto& config = spec.config;
  SweepTable table;
  table.header = {"seed", "selection", "participant_reduction_pct", "offered", "accepted",
                  "total_reduction_pct", "responsiveness_cost", "incentive", "redline_pct"};
  table.raw_header = kRawHeader;
  for (int rep = 0; rep < spec.repetitions; ++rep) {
    const auto seed = derive(spec.seed, kRepetitionStream + static_cast<std::uint64_t>(rep));
    const auto community = build_community(config, seed);
    const auto days = scenario_emergency_days(config, seed);
    const auto terms = terms_of(config, days, config.scenario.target_reduction_pct);
    const auto truth = truth_labels(community, config.scenario.default_incentive, terms);
    const auto framework = run_framework(config, community, truth, seed);
    const std::size_t cap = participant_cap(config.participation_pct, community.size());

    // 0: the framework's highest-scoring quarter; 1: the largest consumers.
    std::array<std::vector<std::size_t>, 2> selections{rank_by_score(framework.selection),
                                                       top_consumers(community, terms.cycle_days)};
    for (int s = 0; s < 2; ++s) {
      auto chosen = selections[s];
      chosen.resize(std::min(cap, chosen.size()));
      std::sort(chosen.begin(), chosen.end());
      for (double pct : spec.values) {
        if (pct == 0.0) {
          table.rows.push_back({static_cast<double>(rep), static_cast<double>(s), 0.0,
                                static_cast<double>(chosen.size()), kNaN, 0.0, kNaN,
                                spec.incentive, config.shortfall_pct});
          continue;
        }
        const auto run = settle(community, chosen, spec.incentive, terms_of(config, days, pct),
                                config.shortfall_pct);
        const auto& r = run.report;
        table.rows.push_back({static_cast<double>(rep), static_cast<double>(s), pct,
                              static_cast<double>(r.offered), static_cast<double>(r.accepted),
                              r.total_reduction_pct, r.responsiveness_cost, spec.incentive,
                              config.shortfall_pct});
        for (const auto& h : run.households) {
          table.raw_rows.push_back(
              raw_fields(static_cast<std::uint64_t>(rep), s, pct, spec.incentive, h));
        }
      }
    }
  }
  return table;
}

SweepTable sweep_rate_hike(const SweepSpec& spec) {
  require(spec.variable == "participation_pct", ErrorKind::InvalidSpec, "not a rate-hike sweep");
  spec.validate();
  for (double v : spec.values) {
    require(v >= 0.0 && v <= 100.0, ErrorKind::InvalidSpec,
            "participation ladder must lie in [0,100]");
  }
  const auto& config = spec.config;
  SweepTable table;
  table.header = {"seed", "participation_pct", "incentive", "offered", "accepted",
                  "incentive_total", "nonparticipant_kwh", "r_extra"};
  table.raw_header = kRawHeader;
  for (int rep = 0; rep < spec.repetitions; ++rep) {
    const auto seed = derive(spec.seed, kRepetitionStream + static_cast<std::uint64_t>(rep));
    const auto community = build_community(config, seed);
    const auto days = scenario_emergency_days(config, seed);
    const auto terms = terms_of(config, days, config.scenario.target_reduction_pct);
    const auto truth = truth_labels(community, config.scenario.default_incentive, terms);
    const auto ranking = rank_by_score(run_framework(config, community, truth, seed).selection);
    for (double pct : spec.values) {
      std::vector<std::size_t> chosen(ranking.begin(),
                                      ranking.begin() + static_cast<std::ptrdiff_t>(
                                                            participant_cap(pct, community.size())));
      std::sort(chosen.begin(), chosen.end());
      for (double incentive : spec.incentives) {
        const auto run = settle(community, chosen, incentive, terms, config.shortfall_pct);
        double nonparticipant_kwh = 0.0;
        for (const auto& h : run.households) {
          if (!h.accepted) nonparticipant_kwh += h.cycle_kwh;
        }
        const auto& r = run.report;
        table.rows.push_back({static_cast<double>(rep), pct, incentive,
                              static_cast<double>(r.offered), static_cast<double>(r.accepted),
                              r.incentive_total, nonparticipant_kwh, r.r_extra});
        for (const auto& h : run.households) {
          table.raw_rows.push_back(raw_fields(static_cast<std::uint64_t>(rep), 0, pct, incentive, h));
        }
      }
    }
  }
  return table;
}

SweepTable noise_experiment(const NoiseSpec& spec) {
  spec.validate();
  const auto levels = spec.levels.size();
  std::vector<std::vector<double>> accuracy(levels);
  SweepTable table;
  table.header = {"noise_level_pct", "mean_accuracy", "std_accuracy", "seeds"};
  table.raw_header = {"seed", "noise_level_pct", "accuracy_pct", "queried", "unanimous"};
  ScenarioConfig calendar;
  calendar.cycle_days = spec.cycle_days;
  calendar.emergency_day_count = spec.emergency_day_count;
  for (int s = 0; s < spec.seeds; ++s) {
    const auto seed = derive(spec.seed, kRepetitionStream + static_cast<std::uint64_t>(s));
    const auto planted = generate_planted_community(spec.planted, derive(seed, kCommunityStream));
    const auto& community = planted.community;
    Rng calendar_rng(derive(seed, kCalendarStream));
    const OfferTerms terms{spec.target_reduction_pct, emergency_schedule(calendar, calendar_rng),
                           spec.cycle_days};
    const auto truth = truth_labels(community, spec.incentive, terms);
    const auto clean = kernel_similarity(normalize_features(community), spec.kernel_temperature);
    SelectionOptions options;
    options.query_fraction = spec.query_fraction;
    options.seed = derive(seed, kSelectionStream);
    options.classifier = spec.classifier;
    for (std::size_t l = 0; l < levels; ++l) {
      // The same noise seed at every level: higher levels scale the same draws.
      const auto noisy = inject_noise(clean, spec.levels[l], derive(seed, kNoiseStream));
      const auto result = run_selection(community, noisy, truth, options);
      accuracy[l].push_back(result.accuracy_pct);
      table.raw_rows.push_back({std::to_string(s), csv::format_number(spec.levels[l]),
                                csv::format_number(result.accuracy_pct),
                                std::to_string(result.queried.size()),
                                result.unanimous ? "1" : "0"});
    }
  }
  for (std::size_t l = 0; l < levels; ++l) {
    const auto& a = accuracy[l];
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    double var = 0.0;
    for (double v : a) var += (v - mean) * (v - mean);
    const double sd = a.size() > 1 ? std::sqrt(var / static_cast<double>(a.size() - 1)) : 0.0;
    table.rows.push_back({spec.levels[l], mean, sd, static_cast<double>(a.size())});
  }
  return table;
}

SweepTable run_sweep(const SweepSpec& spec) {
  spec.validate();
  if (spec.variable == "incentive") return sweep_incentive(spec);
  if (spec.variable == "reduction_pct") return sweep_reduction(spec);
  if (spec.variable == "participation_pct") return sweep_rate_hike(spec);
  NoiseSpec noise = spec.noise;
  noise.levels = spec.values;
  noise.seeds = spec.repetitions;
  noise.seed = spec.seed;
  return noise_experiment(noise);
}

std::vector<std::filesystem::path> write_table(const SweepTable& table,
                                               const std::filesystem::path& output) {
  if (output.has_parent_path()) std::filesystem::create_directories(output.parent_path());
  {
    csv::Writer out(output);
    out.row(table.header);
    std::vector<std::string> fields(table.header.size());
    for (const auto& row : table.rows) {
      for (std::size_t j = 0; j < row.size(); ++j) fields[j] = csv::format_number(row[j]);
      out.row(fields);
    }
  }
  auto raw = output;
  raw.replace_filename(output.stem().string() + "_raw.csv");
  {
    csv::Writer out(raw);
    out.row(table.raw_header);
    for (const auto& row : table.raw_rows) out.row(row);
  }
  return {output, raw};
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  require(ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) == 1, ErrorKind::Io,
          "SHA-256 initialization failed");
  std::array<char, 1 << 16> buffer{};
  while (in) {
    in.read(buffer.data(), buffer.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  EVP_DigestFinal_ex(ctx.get(), digest.data(), &length);
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

void write_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
  json doc;
  doc["tool"] = "ilb";
  doc["version"] = kVersion;
  doc["modules"] = {{"community", kVersion}, {"tariff", kVersion},   {"metrics", kVersion},
                    {"patternnet", kVersion}, {"selector", kVersion}, {"harness", kVersion}};
  doc["config"] = manifest.config_json.empty() ? json::object() : json::parse(manifest.config_json);
  doc["seeds"] = manifest.seeds;
  json outputs = json::array();
  for (const auto& [name, digest] : manifest.outputs) {
    outputs.push_back({{"file", name}, {"sha256", digest}});
  }
  doc["outputs"] = std::move(outputs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::string to_json(const SweepSpec& spec) {
  return json{{"variable", spec.variable},     {"values", spec.values},
              {"repetitions", spec.repetitions}, {"output", spec.output},
              {"seed", spec.seed},             {"incentive", spec.incentive},
              {"incentives", spec.incentives}, {"config", write_pipeline(spec.config)},
              {"noise", write_noise(spec.noise)}}
      .dump(2);
}

std::string to_json(const NoiseSpec& spec) { return write_noise(spec).dump(2); }

double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorKind::Shape, "spearman inputs differ in length");
  std::vector<double> a;
  std::vector<double> b;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::isnan(x[i]) || std::isnan(y[i])) continue;
    a.push_back(x[i]);
    b.push_back(y[i]);
  }
  require(a.size() >= 2, ErrorKind::UndefinedMetric, "spearman needs at least two pairs");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  require(saa > 0.0 && sbb > 0.0, ErrorKind::UndefinedMetric,
          "spearman of a constant sequence is undefined");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace ilb
