#include "doctest.h"

#include <fstream>
#include <map>

#include "ilb/csv.hpp"
#include "ilb/error.hpp"
#include "ilb/harness.hpp"
#include "support.hpp"

using namespace ilb;

namespace {

PipelineConfig light_config() {
  PipelineConfig c;
  c.community = {2, 2, 10, 30, -0.25, 0.1};
  c.training.epochs = 1;
  c.scenario.rng_seed = 3;
  return c;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorKind kind_of(const auto& body) {
  try {
    body();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an ilb::Error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("config JSON round trip and strictness") {
  auto c = light_config();
  c.participation_pct = 30.0;
  c.scenario.emergency_days = {2, 9, 17};
  const auto back = pipeline_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.scenario.emergency_days == c.scenario.emergency_days);
  CHECK(kind_of([] { (void)pipeline_config_from_json(R"({"participation": 5})"); }) ==
        ErrorKind::InvalidSpec);
  CHECK(kind_of([] { (void)pipeline_config_from_json(R"({"scenario": {"seed": 5}})"); }) ==
        ErrorKind::InvalidSpec);
  CHECK(kind_of([] { (void)pipeline_config_from_json(R"({"participation_pct": 150})"); }) ==
        ErrorKind::InvalidSpec);
  CHECK(kind_of([] { (void)pipeline_config_from_json("{not json"); }) == ErrorKind::InvalidSpec);
}

TEST_CASE("sweep spec validation") {
  const std::string base = R"({"variable": "incentive", "values": [0, 50, 100], "repetitions": 2})";
  const auto spec = sweep_spec_from_json(base);
  CHECK(spec.values.size() == 3);
  CHECK(spec.repetitions == 2);
  CHECK(sweep_spec_from_json(to_json(spec)).values == spec.values);
  CHECK(kind_of([] { (void)sweep_spec_from_json(R"({"variable": "incentive", "values": []})"); }) ==
        ErrorKind::InvalidSpec);
  CHECK(kind_of([] {
          (void)sweep_spec_from_json(R"({"variable": "incentive", "values": [5, 5]})");
        }) == ErrorKind::InvalidSpec);
  CHECK(kind_of([] {
          (void)sweep_spec_from_json(R"({"variable": "incentive", "values": [1], "repetitions": 0})");
        }) == ErrorKind::InvalidSpec);
  CHECK(kind_of([] { (void)sweep_spec_from_json(R"({"variable": "price", "values": [1]})"); }) ==
        ErrorKind::InvalidSpec);
}

TEST_CASE("settlement recomputed from households") {
  const auto c = light_config();
  const auto community = build_community(c, 3);
  const OfferTerms terms{10.0, {4, 11, 25}, 30};
  std::vector<std::size_t> offered{0, 3, 5, 8, 13, 21, 34};
  const auto run = settle(community, offered, 6.0, terms, 2.5);
  double paid = 0.0, cut = 0.0, rest = 0.0, emergency_all = 0.0;
  std::size_t accepted = 0;
  for (std::size_t u = 0; u < community.size(); ++u) {
    const auto& h = run.households[u];
    const bool was_offered = std::find(offered.begin(), offered.end(), u) != offered.end();
    CHECK(h.offered == was_offered);
    CHECK(h.accepted == (was_offered && h.min_incentive <= 6.0 * (1 + 1e-12)));
    for (int d : terms.emergency_days) {
      emergency_all += community.households[u].load.day_total(static_cast<std::size_t>(d));
    }
    if (h.accepted) {
      ++accepted;
      paid += 6.0;
      cut += 0.1 * h.emergency_kwh;
    } else {
      rest += h.cycle_kwh;
    }
  }
  CHECK(run.report.offered == offered.size());
  CHECK(run.report.accepted == accepted);
  CHECK(run.report.incentive_total == doctest::Approx(paid));
  if (accepted > 0) {
    CHECK(run.report.responsiveness_cost == doctest::Approx(paid / cut));
    CHECK(run.report.r_extra == doctest::Approx(paid / rest));
  }
  CHECK(run.report.total_reduction_pct == doctest::Approx(100.0 * cut / emergency_all));
  CHECK(run.shortfall.size() == 3);

  const auto nobody = settle(community, {}, 100.0, terms, 2.5);
  CHECK(nobody.report.incentive_total == 0.0);
  CHECK(nobody.report.total_reduction_pct == 0.0);
  CHECK(nobody.report.acceptance_rate_pct == 0.0);
  CHECK(nobody.report.r_extra == 0.0);
}

TEST_CASE("zero participation gives an empty program") {
  auto c = light_config();
  c.participation_pct = 0.0;
  const auto run = run_scenario(c);
  CHECK(run.report.offered == 0);
  CHECK(run.report.incentive_total == 0.0);
  CHECK(run.report.total_reduction_pct == 0.0);
}

TEST_CASE("scenario run is deterministic and writes every output") {
  const auto c = light_config();
  const auto a = run_scenario(c);
  const auto b = run_scenario(c);
  CHECK(a.report.incentive_total == b.report.incentive_total);
  CHECK(a.report.offered <= static_cast<std::size_t>(0.25 * 40));
  for (std::size_t u = 0; u < a.households.size(); ++u) {
    if (a.households[u].offered) CHECK(a.households[u].predicted_label == 1);
    if (a.selection.is_queried(u)) CHECK(a.households[u].predicted_label == a.households[u].true_label);
  }
  const auto dir = test::scratch_dir("scenario");
  const auto files = write_run_outputs(a, c, dir / "a");
  write_run_outputs(b, c, dir / "b");
  CHECK(files.size() == 7);
  for (const auto& f : files) {
    CHECK(read_file(f) == read_file(dir / "b" / f.filename()));
  }
  const auto manifest = read_file(dir / "a" / "manifest.json");
  for (const auto& f : files) {
    if (f.filename() == "manifest.json") continue;
    CHECK(manifest.find(sha256_file(f)) != std::string::npos);
  }
}

TEST_CASE("stage errors name the failing stage") {
  auto c = light_config();
  c.community.days = 2;  // too short for the 30-day billing cycle
  try {
    (void)run_scenario(c);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Coverage);
    CHECK(std::string(e.what()).find("community") != std::string::npos);
  }
}

TEST_CASE("incentive sweep") {
  SweepSpec spec;
  spec.variable = "incentive";
  spec.values = {0.0, 2.0, 4.0, 8.0, 16.0};
  spec.repetitions = 2;
  spec.config = light_config();
  const auto table = sweep_incentive(spec);
  CHECK(table.rows.size() == 10);
  const auto rate = table.column("acceptance_rate_pct");
  const auto seed = table.column("seed");
  for (std::size_t r = 1; r < rate.size(); ++r) {
    if (seed[r] == seed[r - 1]) CHECK(rate[r] >= rate[r - 1]);
  }
  CHECK(rate[0] == 0.0);

  // Recompute every row's metrics from the raw per-household records.
  std::map<std::pair<std::string, std::string>, std::array<double, 4>> sums;  // paid, cut, accepted, offered
  for (const auto& raw : table.raw_rows) {
    auto& s = sums[{raw[0], raw[2]}];
    s[0] += std::stod(raw[8]);
    s[1] += std::stod(raw[9]);
    s[2] += raw[6] == "1";
    s[3] += raw[5] == "1";
  }
  for (const auto& row : table.rows) {
    const auto& s = sums.at({csv::format_number(row[0]), csv::format_number(row[1])});
    CHECK(row[4] == doctest::Approx(100.0 * s[2] / s[3]));
    CHECK(row[7] == doctest::Approx(s[0]));
    if (s[1] > 0.0) CHECK(row[5] == doctest::Approx(s[0] / s[1]));
  }
}

TEST_CASE("reduction and rate-hike sweeps") {
  SweepSpec spec;
  spec.variable = "reduction_pct";
  spec.values = {0.0, 10.0, 30.0, 50.0};
  spec.incentive = 100.0;
  spec.config = light_config();
  const auto red = sweep_reduction(spec);
  CHECK(red.rows.size() == 8);
  CHECK(red.rows[0][red.rows[0].size() - 1] == spec.config.shortfall_pct);
  const auto total = red.column("total_reduction_pct");
  CHECK(total[0] == 0.0);

  spec.variable = "participation_pct";
  spec.values = {0.0, 25.0, 50.0};
  spec.incentives = {100.0, 200.0};
  const auto hike = sweep_rate_hike(spec);
  CHECK(hike.rows.size() == 6);
  const auto r = hike.column("r_extra");
  const auto paid = hike.column("incentive_total");
  const auto rest = hike.column("nonparticipant_kwh");
  CHECK(r[0] == 0.0);
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (paid[k] > 0.0) CHECK(r[k] == doctest::Approx(paid[k] / rest[k]).epsilon(1e-12));
  }
}

TEST_CASE("noise study plumbing") {
  NoiseSpec spec;
  spec.planted.base = {2, 2, 15, 30, -0.25, 0.1};
  spec.seeds = 2;
  spec.levels = {0.0, 50.0};
  const auto table = noise_experiment(spec);
  CHECK(table.rows.size() == 2);
  CHECK(table.raw_rows.size() == 4);
  CHECK(table.rows[0][3] == 2.0);
  spec.levels = {50.0, 0.0};
  CHECK(kind_of([&] { (void)noise_experiment(spec); }) == ErrorKind::InvalidSpec);
  CHECK(noise_spec_from_json(to_json(NoiseSpec{})).levels == NoiseSpec{}.levels);
}

TEST_CASE("table writer emits the raw companion file") {
  SweepTable t;
  t.header = {"x", "y"};
  t.rows = {{1.0, 0.5}, {2.0, std::numeric_limits<double>::quiet_NaN()}};
  t.raw_header = {"a"};
  t.raw_rows = {{"q"}};
  const auto dir = test::scratch_dir("table");
  const auto files = write_table(t, dir / "out.csv");
  CHECK(files.size() == 2);
  CHECK(read_file(dir / "out.csv") == "x,y\n1,0.5\n2,\n");
  CHECK(read_file(dir / "out_raw.csv") == "a\nq\n");
}

TEST_CASE("sha256 and spearman") {
  const auto dir = test::scratch_dir("sha");
  {
    std::ofstream out(dir / "abc.txt", std::ios::binary);
    out << "abc";
  }
  CHECK(sha256_file(dir / "abc.txt") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, std::vector<double>{2, 4, 6, 8, 10}) == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Ties get average ranks: ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
  CHECK(spearman(std::vector<double>{1, 2, 2, 3}, std::vector<double>{1, 2, 3, 4}) ==
        doctest::Approx(4.5 / std::sqrt(4.5 * 5.0)));
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 1}, std::vector<double>{1, 2}), Error);
}
