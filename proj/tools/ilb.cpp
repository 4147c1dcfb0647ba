// ilb: command-line front end for the demand-response simulator.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ilb/csv.hpp"
#include "ilb/error.hpp"
#include "ilb/harness.hpp"

namespace fs = std::filesystem;
using namespace ilb;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

PipelineConfig load_config(const std::string& path, std::optional<std::uint64_t> seed) {
  PipelineConfig config = path.empty() ? PipelineConfig{} : pipeline_config_from_json(slurp(path));
  if (seed) config.scenario.rng_seed = *seed;
  config.validate();
  return config;
}

void finish(const fs::path& manifest_path, const std::string& config_json,
            std::vector<std::uint64_t> seeds, const std::vector<fs::path>& files) {
  RunManifest manifest;
  manifest.config_json = config_json;
  manifest.seeds = std::move(seeds);
  for (const auto& f : files) manifest.outputs.emplace_back(f.filename().string(), sha256_file(f));
  write_manifest(manifest_path, manifest);
  for (const auto& f : files) std::cout << f.string() << '\n';
  std::cout << manifest_path.string() << '\n';
}

void print_report(const ProgramReport& r) {
  std::cout << "offered " << r.offered << ", accepted " << r.accepted << " ("
            << r.acceptance_rate_pct << "%)\n"
            << "incentives $" << r.incentive_total << ", responsiveness $" << r.responsiveness_cost
            << "/kWh, total reduction " << r.total_reduction_pct << "%, r_extra "
            << r.r_extra << " $/kWh\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incentive-driven load balancing simulator"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string table_out;

  auto* generate = app.add_subcommand("generate", "Generate a synthetic community");
  generate->add_option("--config", config_path, "Scenario config (JSON)");
  generate->add_option("--seed", seed, "Override scenario.rng_seed");
  generate->add_option("--out", out, "Output directory")->default_val("community");

  auto* train_cmd = app.add_subcommand("train", "Train the forecaster and export A_est");
  train_cmd->add_option("--config", config_path, "Scenario config (JSON)");
  train_cmd->add_option("--seed", seed, "Override scenario.rng_seed");
  train_cmd->add_option("--out", out, "Output directory")->default_val("train");

  std::string similarity_path;
  auto* select = app.add_subcommand("select", "Run household selection on a similarity matrix");
  select->add_option("--config", config_path, "Scenario config (JSON)");
  select->add_option("--seed", seed, "Override scenario.rng_seed");
  select->add_option("--similarity", similarity_path, "A_est CSV written by train")->required();
  select->add_option("--out", out, "Output directory")->default_val("select");

  auto* run = app.add_subcommand("run", "Run the full program scenario");
  run->add_option("--config", config_path, "Scenario config (JSON)");
  run->add_option("--seed", seed, "Override scenario.rng_seed");
  run->add_option("--out", out, "Output directory")->default_val("run");

  std::string spec_path;
  auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep");
  sweep->add_option("--spec", spec_path, "Sweep spec (JSON)")->required();
  sweep->add_option("--out", table_out, "Output CSV (overrides the spec)");

  auto* noise = app.add_subcommand("noise", "Selection accuracy under similarity noise");
  noise->add_option("--spec", spec_path, "Noise study spec (JSON)");
  noise->add_option("--out", table_out, "Output CSV (overrides the spec)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) {
      const auto config = load_config(config_path, seed);
      const auto community = build_community(config, config.scenario.rng_seed);
      const fs::path dir(out);
      fs::create_directories(dir);
      save_community(community, dir / "households.csv", dir / "loads.csv");
      finish(dir / "manifest.json", to_json(config), {config.scenario.rng_seed},
             {dir / "households.csv", dir / "loads.csv"});
    } else if (*train_cmd) {
      const auto config = load_config(config_path, seed);
      const auto community = build_community(config, config.scenario.rng_seed);
      DatasetOptions options{config.pattern.window, config.window_stride,
                             config.scenario.split_ratios};
      const auto data = build_dataset(community, options);
      auto model = PatternModel::initialize(config.pattern, config.training.seed);
      auto trained = train(std::move(model), data, config.training);
      const auto similarity = final_similarity(trained.model, data);
      const fs::path dir(out);
      fs::create_directories(dir);
      save_checkpoint(dir / "checkpoint.json",
                      {trained.model, config.training, config.training.seed, data.mean, data.scale});
      {
        csv::Writer csv(dir / "training.csv");
        csv.row({"epoch", "train_mse", "validation_mse"});
        const auto& h = trained.history;
        for (std::size_t e = 0; e < h.train_mse.size(); ++e) {
          csv.row({std::to_string(e), csv::format_number(h.train_mse[e]),
                   csv::format_number(h.validation_mse[e])});
        }
      }
      std::vector<std::string> ids;
      for (const auto& h : community.households) ids.push_back(h.id);
      write_similarity_csv(dir / "similarity.csv", ids, similarity);
      const auto& h = trained.history;
      std::cout << "validation MSE " << h.validation_mse.front() << " -> " << h.validation_mse.back()
                << '\n';
      finish(dir / "manifest.json", to_json(config),
             {config.scenario.rng_seed, config.training.seed},
             {dir / "checkpoint.json", dir / "training.csv", dir / "similarity.csv"});
    } else if (*select) {
      const auto config = load_config(config_path, seed);
      const auto community = build_community(config, config.scenario.rng_seed);
      std::vector<std::string> ids;
      const auto similarity = read_similarity_csv(similarity_path, &ids);
      for (std::size_t u = 0; u < community.size(); ++u) {
        require(u < ids.size() && ids[u] == community.households[u].id,
                ErrorKind::ReferentialIntegrity,
                "similarity matrix ids do not match the community household order");
      }
      const auto days = scenario_emergency_days(config, config.scenario.rng_seed);
      const OfferTerms terms{config.scenario.target_reduction_pct, days, config.scenario.cycle_days};
      std::vector<int> truth;
      for (const auto& h : community.households) {
        const auto offer = make_offer(h, config.scenario.default_incentive, terms);
        truth.push_back(accept_offer(h, offer).accepted ? 1 : 0);
      }
      SelectionOptions options{config.query_fraction, config.scenario.rng_seed, config.classifier};
      const auto result = run_selection(community, similarity, truth, options);
      const fs::path dir(out);
      fs::create_directories(dir);
      write_selection_csv(dir / "selection.csv", result);
      std::cout << "queried " << result.queried.size() << ", accuracy " << result.accuracy_pct
                << "%\n";
      finish(dir / "manifest.json", to_json(config),
             {config.scenario.rng_seed, config.classifier.seed}, {dir / "selection.csv"});
    } else if (*run) {
      const auto config = load_config(config_path, seed);
      const auto result = run_scenario(config);
      print_report(result.report);
      for (const auto& f : write_run_outputs(result, config, out)) std::cout << f.string() << '\n';
    } else if (*sweep) {
      auto spec = sweep_spec_from_json(slurp(spec_path));
      if (!table_out.empty()) spec.output = table_out;
      require(!spec.output.empty(), ErrorKind::InvalidSpec, "sweep output path missing");
      const fs::path output(spec.output);
      const auto files = write_table(run_sweep(spec), output);
      finish(output.parent_path() / (output.stem().string() + "_manifest.json"), to_json(spec),
             {spec.seed}, files);
    } else if (*noise) {
      auto spec = spec_path.empty() ? NoiseSpec{} : noise_spec_from_json(slurp(spec_path));
      if (!table_out.empty()) spec.output = table_out;
      if (spec.output.empty()) spec.output = "noise.csv";
      const auto table = noise_experiment(spec);
      for (const auto& row : table.rows) {
        std::cout << "noise " << row[0] << "%: accuracy " << row[1] << " +/- " << row[2] << '\n';
      }
      const fs::path output(spec.output);
      const auto files = write_table(table, output);
      finish(output.parent_path() / (output.stem().string() + "_manifest.json"), to_json(spec),
             {spec.seed}, files);
    }
  } catch (const Error& e) {
    std::cerr << "ilb: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ilb: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
