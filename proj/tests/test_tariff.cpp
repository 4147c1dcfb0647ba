#include "doctest.h"

#include <cmath>
#include <random>

#include "ilb/error.hpp"
#include "ilb/tariff.hpp"
#include "support.hpp"

using namespace ilb;
using ilb::test::flat_household;
using ilb::test::random_household;

namespace {

// Bill computed hour by hour, independent of the library's day totals.
double hourly_bill(const Household& h, const std::vector<int>& emergency, double reduction_pct,
                   double emergency_rate_value, int cycle_days) {
  double bill = 0.0;
  for (int d = 0; d < cycle_days; ++d) {
    const bool hit = std::find(emergency.begin(), emergency.end(), d) != emergency.end();
    for (int t = 0; t < kHoursPerDay; ++t) {
      const double x = h.load.hour(static_cast<std::size_t>(d), t);
      bill += hit ? x * (1.0 - reduction_pct / 100.0) * emergency_rate_value
                  : x * h.baseline_rate;
    }
  }
  return bill;
}

}  // namespace

TEST_CASE("price change follows the elasticity definition") {
  CHECK(price_change_pct(5.0, -0.5) == 10.0);
  CHECK(price_change_pct(10.0, -0.25) == doctest::Approx(40.0).epsilon(1e-15));
  CHECK(price_change_pct(10.0, -1.0) == 10.0);
  CHECK_THROWS_AS(price_change_pct(10.0, 0.0), Error);
  CHECK_THROWS_AS(price_change_pct(10.0, 0.3), Error);
  // Elasticity is quantity change over price change.
  CHECK(-5.0 / price_change_pct(5.0, -0.5) == -0.5);
}

TEST_CASE("emergency rate scales the baseline") {
  CHECK(emergency_rate(0.16, 10.0, -0.25) == doctest::Approx(0.224).epsilon(1e-14));
  CHECK(emergency_rate(0.10, 5.0, -0.5) == doctest::Approx(0.11).epsilon(1e-14));
  CHECK(emergency_rate(0.2, 1e-12, -0.3) == doctest::Approx(0.2).epsilon(1e-12));
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> e(-4.9, -0.011);
  std::uniform_real_distribution<double> i(0.01, 99.0);
  for (int k = 0; k < 1000; ++k) CHECK(emergency_rate(0.16, i(rng), e(rng)) >= 0.16);
}

TEST_CASE("baseline cost") {
  CHECK(baseline_cost(flat_household("a", 30.0, 30), 30) == doctest::Approx(144.0).epsilon(1e-13));
  CHECK(baseline_cost(flat_household("b", 0.0, 30), 30) == 0.0);
  CHECK(baseline_cost(flat_household("c", 24.0, 1, -0.25, 0.1), 1) ==
        doctest::Approx(2.4).epsilon(1e-13));
  const auto err = [] { (void)baseline_cost(flat_household("d", 30.0, 29), 30); };
  CHECK_THROWS_AS(err(), Error);
  try {
    err();
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Coverage);
  }
}

TEST_CASE("ilb cost on the worked household") {
  const auto h = flat_household("a", 30.0, 30);
  const OfferTerms terms{10.0, {3, 10, 20}, 30};
  const auto offer = make_offer(h, 0.0, terms);
  const auto reduced = apply_reduction(h.load, terms.emergency_days, 10.0);
  CHECK(ilb_cost(h, offer, reduced) == doctest::Approx(147.744).epsilon(1e-12));
  CHECK(ilb_cost(h, make_offer(h, 3.744, terms), reduced) == doctest::Approx(144.0).epsilon(1e-12));

  const OfferTerms none{10.0, {}, 30};
  CHECK(ilb_cost(h, make_offer(h, 0.0, none), h.load) == doctest::Approx(baseline_cost(h, 30)));

  auto tampered = reduced;
  tampered.values[0] *= 0.5;  // day 0 is not an emergency day
  try {
    (void)ilb_cost(h, offer, tampered);
    FAIL("expected a contract violation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ContractViolation);
  }
}

TEST_CASE("apply_reduction touches emergency days only") {
  std::mt19937_64 rng(9);
  const auto h = random_household(rng, "r", 30);
  const std::vector<int> days{0, 7, 29};
  CHECK(apply_reduction(h.load, days, 0.0).values == h.load.values);
  const auto full = apply_reduction(h.load, days, 100.0);
  for (int d : days) CHECK(full.day_total(static_cast<std::size_t>(d)) == 0.0);
  const auto cut = apply_reduction(h.load, days, 37.0);
  for (std::size_t d = 0; d < 30; ++d) {
    const bool hit = std::find(days.begin(), days.end(), static_cast<int>(d)) != days.end();
    for (int t = 0; t < kHoursPerDay; ++t) {
      if (hit) {
        CHECK(cut.hour(d, t) == doctest::Approx(h.load.hour(d, t) * 0.63).epsilon(1e-14));
      } else {
        CHECK(cut.hour(d, t) == h.load.hour(d, t));  // bitwise
      }
    }
  }
  CHECK(apply_reduction(flat_household("f", 30.0, 1).load, std::vector<int>{0}, 10.0).day_total(0) ==
        doctest::Approx(27.0).epsilon(1e-13));
}

TEST_CASE("minimum incentive") {
  const auto h = flat_household("a", 30.0, 30);
  CHECK(min_incentive(h, {10.0, {3, 10, 20}, 30}) == doctest::Approx(3.744).epsilon(1e-12));
  CHECK(min_incentive(h, {1e-9, {3, 10, 20}, 30}) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(min_incentive(flat_household("z", 0.0, 30), {10.0, {3, 10, 20}, 30}) == 0.0);
  // Elastic households gain from the program: the clamp keeps the incentive at zero.
  CHECK(min_incentive(flat_household("e", 30.0, 30, -4.0), {10.0, {1}, 30}) == 0.0);
}

TEST_CASE("acceptance oracle") {
  const auto h = flat_household("a", 30.0, 30);
  const OfferTerms terms{10.0, {3, 10, 20}, 30};
  const double m = min_incentive(h, terms);
  const auto at = accept_offer(h, make_offer(h, m, terms));
  CHECK(at.accepted);
  CHECK(std::abs(at.cost_ilb - at.cost_baseline) / at.cost_baseline < 1e-9);
  CHECK_FALSE(accept_offer(h, make_offer(h, m - 0.01, terms)).accepted);
  CHECK(accept_offer(h, make_offer(h, 100.0, terms)).accepted);
  CHECK(at.min_incentive == doctest::Approx(m));
}

TEST_CASE("property: equality point, monotonicity and outcome consistency") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> pct(1.0, 60.0);
  std::uniform_real_distribution<double> pay(0.0, 50.0);
  for (int k = 0; k < 300; ++k) {
    const auto h = random_household(rng, "p" + std::to_string(k), 30);
    std::vector<int> days{static_cast<int>(rng() % 30)};
    const OfferTerms terms{pct(rng), days, 30};
    const double m = min_incentive(h, terms);
    const double re = emergency_rate(h.baseline_rate, terms.target_reduction_pct, h.elasticity);
    const double bill = hourly_bill(h, days, terms.target_reduction_pct, re, 30);
    const double base = hourly_bill(h, {}, 0.0, 0.0, 30);
    CHECK(m == doctest::Approx(std::max(0.0, bill - base)).epsilon(1e-9));
    if (m > 0.0) {
      const auto o = accept_offer(h, make_offer(h, m, terms));
      CHECK(o.accepted);
      CHECK(std::abs(o.cost_ilb - o.cost_baseline) / o.cost_baseline < 1e-9);
    }
    const double a = pay(rng);
    const double b = a + pay(rng);
    const auto oa = accept_offer(h, make_offer(h, a, terms));
    const auto ob = accept_offer(h, make_offer(h, b, terms));
    if (oa.accepted) CHECK(ob.accepted);
    CHECK(oa.accepted == (oa.cost_ilb <= oa.cost_baseline * (1.0 + kCostTieTolerance)));
  }
}

TEST_CASE("rate hike") {
  CHECK(rate_hike(400.0, 10000.0) == doctest::Approx(0.04).epsilon(1e-15));
  CHECK(rate_hike(400.0, 20000.0) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(rate_hike(0.0, 10.0) == 0.0);
  try {
    (void)rate_hike(1.0, 0.0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegeneratePopulation);
  }
}

TEST_CASE("property: revenue neutrality") {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 50; ++k) {
    std::vector<Household> hs;
    for (int u = 0; u < 12; ++u) hs.push_back(random_household(rng, "h" + std::to_string(u), 30));
    const auto c = ilb::test::single_neighborhood(std::move(hs));
    std::vector<std::size_t> in, out;
    std::vector<double> pay;
    for (std::size_t u = 0; u < c.size(); ++u) {
      if (rng() % 3 == 0) {
        in.push_back(u);
        pay.push_back(static_cast<double>(rng() % 20000) / 100.0);
      } else {
        out.push_back(u);
      }
    }
    if (out.empty()) continue;
    const double r = rate_hike(c, in, out, pay, 30);
    double collected = 0.0;
    for (auto u : out) {
      for (double x : c.households[u].load.values) collected += x * r;
    }
    double total = 0.0;
    for (double p : pay) total += p;
    if (total > 0.0) {
      CHECK(std::abs(collected - total) / total < 1e-9);
    } else {
      CHECK(r == 0.0);
    }
  }
}
