#include "ilb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ilb/error.hpp"

namespace ilb {

namespace {

bool covered(double supplied, double needed) {
  return supplied >= needed - kCoverageTolerance * std::max(1.0, std::abs(needed));
}

}  // namespace

double acceptance_rate(std::span<const OfferOutcome> outcomes) {
  require(!outcomes.empty(), ErrorKind::UndefinedMetric, "acceptance rate of zero offers");
  const auto accepted = std::count_if(outcomes.begin(), outcomes.end(),
                                      [](const OfferOutcome& o) { return o.accepted; });
  return 100.0 * static_cast<double>(accepted) / static_cast<double>(outcomes.size());
}

double responsiveness_cost(std::span<const double> incentives, std::span<const double> reductions) {
  const double paid = std::accumulate(incentives.begin(), incentives.end(), 0.0);
  const double kwh = std::accumulate(reductions.begin(), reductions.end(), 0.0);
  require(kwh > 0.0, ErrorKind::UndefinedMetric, "responsiveness cost with zero total reduction");
  return paid / kwh;
}

double day_reduction(const Household& household, int day, double reduction_pct) {
  require(day >= 0 && static_cast<std::size_t>(day) < household.load.days(), ErrorKind::Coverage,
          "household " + household.id + " has no load for day " + std::to_string(day));
  return household.load.day_total(static_cast<std::size_t>(day)) * reduction_pct / 100.0;
}

double total_demand_reduction(const Community& community, std::span<const std::size_t> participants,
                              double reduction_pct, std::span<const int> emergency_days) {
  require(reduction_pct >= 0.0 && reduction_pct <= 100.0, ErrorKind::Domain,
          "reduction must lie in [0,100]");
  double all = 0.0;
  for (const auto& h : community.households) {
    for (int d : emergency_days) all += day_reduction(h, d, 100.0);
  }
  require(all > 0.0, ErrorKind::UndefinedMetric, "community consumes nothing on emergency days");
  double removed = 0.0;
  for (auto u : participants) {
    require(u < community.size(), ErrorKind::ReferentialIntegrity,
            "participant index " + std::to_string(u) + " outside the community");
    for (int d : emergency_days) removed += day_reduction(community.households[u], d, reduction_pct);
  }
  return 100.0 * removed / all;
}

bool covers_shortfall(const Community& community, std::span<const std::size_t> participants,
                      std::span<const double> shortfall_per_day, const OfferTerms& terms) {
  for (std::size_t k = 0; k < terms.emergency_days.size(); ++k) {
    double supplied = 0.0;
    for (auto u : participants) {
      supplied += day_reduction(community.households[u], terms.emergency_days[k],
                                terms.target_reduction_pct);
    }
    if (!covered(supplied, shortfall_per_day[k])) return false;
  }
  return true;
}

Allocation allocate_budget(const Community& community, std::span<const double> shortfall_per_day,
                           const OfferTerms& terms) {
  const auto& days = terms.emergency_days;
  require(shortfall_per_day.size() == days.size(), ErrorKind::ContractViolation,
          "one shortfall value per emergency day is required");
  const std::size_t n = community.size();
  const std::size_t m = days.size();

  // reduction[u][k]: kWh household u removes on emergency day k.
  std::vector<std::vector<double>> reduction(n, std::vector<double>(m));
  std::vector<double> capacity(m, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t k = 0; k < m; ++k) {
      reduction[u][k] =
          day_reduction(community.households[u], days[k], terms.target_reduction_pct);
      capacity[k] += reduction[u][k];
    }
  }
  for (std::size_t k = 0; k < m; ++k) {
    require(covered(capacity[k], shortfall_per_day[k]), ErrorKind::Infeasible,
            "shortfall of " + std::to_string(shortfall_per_day[k]) + " kWh on day " +
                std::to_string(days[k]) + " exceeds the achievable " +
                std::to_string(capacity[k]) + " kWh");
  }

  Allocation result;
  const bool slack = std::all_of(shortfall_per_day.begin(), shortfall_per_day.end(),
                                 [](double s) { return covered(0.0, s); });
  if (slack) return result;

  const auto worst = static_cast<std::size_t>(
      std::max_element(shortfall_per_day.begin(), shortfall_per_day.end()) -
      shortfall_per_day.begin());
  std::vector<double> price(n);
  std::vector<double> ratio(n);
  for (std::size_t u = 0; u < n; ++u) {
    price[u] = min_incentive(community.households[u], terms);
    ratio[u] = reduction[u][worst] > 0.0 ? price[u] / reduction[u][worst]
                                         : std::numeric_limits<double>::infinity();
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ratio[a] < ratio[b]; });

  std::vector<double> supplied(m, 0.0);
  auto all_covered = [&] {
    for (std::size_t k = 0; k < m; ++k) {
      if (!covered(supplied[k], shortfall_per_day[k])) return false;
    }
    return true;
  };
  std::vector<std::size_t> chosen;
  for (auto u : order) {
    if (all_covered()) break;
    chosen.push_back(u);
    for (std::size_t k = 0; k < m; ++k) supplied[k] += reduction[u][k];
  }

  std::vector<bool> keep(chosen.size(), true);
  for (std::size_t c = chosen.size(); c-- > 0;) {
    const auto u = chosen[c];
    bool removable = true;
    for (std::size_t k = 0; k < m && removable; ++k) {
      removable = covered(supplied[k] - reduction[u][k], shortfall_per_day[k]);
    }
    if (removable) {
      keep[c] = false;
      for (std::size_t k = 0; k < m; ++k) supplied[k] -= reduction[u][k];
    }
  }
  for (std::size_t c = 0; c < chosen.size(); ++c) {
    if (keep[c]) result.participants.push_back(chosen[c]);
  }
  std::sort(result.participants.begin(), result.participants.end());
  for (auto u : result.participants) {
    result.incentives.push_back(price[u]);
    result.incentive_total += price[u];
  }
  return result;
}

}  // namespace ilb
