#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>

#include "ilb/community.hpp"
#include "ilb/metrics.hpp"
#include "ilb/tariff.hpp"

namespace ilb::test {

// Household with the same hourly load every hour.
inline Household flat_household(const std::string& id, double kwh_per_day, int days,
                                double elasticity = -0.25, double rate = 0.16) {
  Household h;
  h.id = id;
  h.neighborhood_id = "N1";
  h.county = "C1";
  h.elasticity = elasticity;
  h.baseline_rate = rate;
  h.load.values.assign(static_cast<std::size_t>(days) * kHoursPerDay, kwh_per_day / kHoursPerDay);
  return h;
}

// Household with an irregular positive load, elasticity and rate.
inline Household random_household(Rng& rng, const std::string& id, int days) {
  std::uniform_real_distribution<double> kwh(0.0, 3.0);
  std::uniform_real_distribution<double> e(-2.0, -0.02);
  std::uniform_real_distribution<double> r(0.05, 0.40);
  Household h;
  h.id = id;
  h.neighborhood_id = "N1";
  h.county = "C1";
  h.elasticity = e(rng);
  h.baseline_rate = r(rng);
  h.load.values.resize(static_cast<std::size_t>(days) * kHoursPerDay);
  for (auto& v : h.load.values) v = kwh(rng);
  return h;
}

// Wraps households into a one-neighborhood community.
inline Community single_neighborhood(std::vector<Household> households) {
  Community c;
  c.counties.push_back({"C1", {"N1"}});
  Neighborhood n{"N1", "C1", {}};
  for (std::size_t u = 0; u < households.size(); ++u) {
    households[u].neighborhood_id = "N1";
    households[u].county = "C1";
    n.members.push_back(u);
  }
  c.households = std::move(households);
  c.neighborhoods.push_back(std::move(n));
  return c;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ilb_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Cheapest feasible subset by enumeration; +inf when nothing is feasible.
inline double brute_force_optimum(const Community& c, const std::vector<double>& shortfall,
                                  const OfferTerms& terms) {
  const std::size_t n = c.size();
  std::vector<double> price(n);
  for (std::size_t u = 0; u < n; ++u) price[u] = min_incentive(c.households[u], terms);
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    double cost = 0.0;
    bool ok = true;
    for (std::size_t k = 0; k < shortfall.size() && ok; ++k) {
      double cut = 0.0;
      for (std::size_t u = 0; u < n; ++u) {
        if (mask & (1u << u)) {
          cut += c.households[u].load.day_total(static_cast<std::size_t>(terms.emergency_days[k])) *
                 terms.target_reduction_pct / 100.0;
        }
      }
      ok = cut >= shortfall[k] * (1.0 - 1e-9);
    }
    if (!ok) continue;
    for (std::size_t u = 0; u < n; ++u) {
      if (mask & (1u << u)) cost += price[u];
    }
    best = std::min(best, cost);
  }
  return best;
}

struct AllocatorInstance {
  Community community;
  OfferTerms terms;
  std::vector<double> shortfall;
};

// 2 to 12 random households over 10 days with shortfalls between 5% and 90%
// of what everyone together could cut.
inline AllocatorInstance random_allocator_instance(Rng& rng) {
  const int n = 2 + static_cast<int>(rng() % 11);
  std::vector<Household> hs;
  for (int u = 0; u < n; ++u) hs.push_back(random_household(rng, "h" + std::to_string(u), 10));
  AllocatorInstance inst{single_neighborhood(std::move(hs)), {20.0, {1, 4, 8}, 10}, {}};
  std::uniform_real_distribution<double> share(0.05, 0.9);
  for (int d : inst.terms.emergency_days) {
    double capacity = 0.0;
    for (const auto& h : inst.community.households) {
      capacity += day_reduction(h, d, inst.terms.target_reduction_pct);
    }
    inst.shortfall.push_back(share(rng) * capacity);
  }
  return inst;
}

}  // namespace ilb::test
