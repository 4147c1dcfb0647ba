#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ilb/community.hpp"
#include "ilb/tariff.hpp"

namespace ilb {

struct ProgramReport {
  std::size_t offered = 0;
  std::size_t accepted = 0;
  double acceptance_rate_pct = 0.0;
  double responsiveness_cost = 0.0;  // $/kWh
  double total_reduction_pct = 0.0;
  double incentive_total = 0.0;
  double r_extra = 0.0;  // $/kWh
  std::vector<bool> shortfall_met;  // one flag per emergency day
};

// 100 * accepted / offered; throws UndefinedMetric on no offers.
double acceptance_rate(std::span<const OfferOutcome> outcomes);

// Sum of incentives over the sum of kWh reductions (all participants, all
// emergency days). Throws UndefinedMetric when the reductions sum to zero.
double responsiveness_cost(std::span<const double> incentives, std::span<const double> reductions);

// kWh removed from household u on emergency day d at reduction_pct.
double day_reduction(const Household& household, int day, double reduction_pct);

// Share of community emergency-day consumption removed by the participants.
double total_demand_reduction(const Community& community, std::span<const std::size_t> participants,
                              double reduction_pct, std::span<const int> emergency_days);

struct Allocation {
  std::vector<std::size_t> participants;  // community indices, ascending
  std::vector<double> incentives;         // min_incentive of each participant
  double incentive_total = 0.0;
};

// Relative slack for treating a per-day shortfall as covered.
inline constexpr double kCoverageTolerance = 1e-9;

// Greedy solution of: minimize total incentive subject to, for every
// emergency day d, sum of participant reductions >= shortfall_per_day[d].
// Households are ranked by min_incentive per kWh reduced on the day with the
// largest shortfall, added until every day is covered, then pruned in reverse
// order of addition while coverage holds.
Allocation allocate_budget(const Community& community, std::span<const double> shortfall_per_day,
                           const OfferTerms& terms);

// True when the chosen households cover every day's shortfall.
bool covers_shortfall(const Community& community, std::span<const std::size_t> participants,
                      std::span<const double> shortfall_per_day, const OfferTerms& terms);

}  // namespace ilb
