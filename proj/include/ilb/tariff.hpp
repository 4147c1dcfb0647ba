#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ilb/community.hpp"

namespace ilb {

// Rates for one household over one billing cycle of `cycle_days` days
// starting at day 0 of its load series.
struct TariffSchedule {
  double baseline_rate = 0.0;   // $/kWh
  double emergency_rate = 0.0;  // $/kWh, charged on emergency days only
  std::vector<int> emergency_days;
  int cycle_days = 30;
};

// What the utility asks of every participant: cut i% on each emergency day.
struct OfferTerms {
  double target_reduction_pct = 10.0;
  std::vector<int> emergency_days;
  int cycle_days = 30;
};

struct Offer {
  std::string household_id;
  double incentive = 0.0;  // paid once, at the start of the cycle
  double target_reduction_pct = 10.0;
  TariffSchedule schedule;
};

struct OfferOutcome {
  Offer offer;
  bool accepted = false;
  double min_incentive = 0.0;
  double cost_baseline = 0.0;
  double cost_ilb = 0.0;
};

// Relative slack used when comparing the two bills, so that paying exactly
// the minimum incentive is accepted despite rounding in either sum.
inline constexpr double kCostTieTolerance = 1e-12;

// Percent price increase that produces a target_reduction_pct drop in demand
// at the given (negative) elasticity: (-i) / e.
double price_change_pct(double target_reduction_pct, double elasticity);
double emergency_rate(double baseline_rate, double target_reduction_pct, double elasticity);

// kWh over days [0, cycle_days); throws Coverage when the load is shorter.
double cycle_consumption(const LoadSeries& load, int cycle_days);
double baseline_cost(const Household& household, int cycle_days);
double ilb_cost(const Household& household, const Offer& offer, const LoadSeries& reduced_load);

LoadSeries apply_reduction(const LoadSeries& load, std::span<const int> emergency_days,
                           double reduction_pct);

TariffSchedule make_schedule(const Household& household, const OfferTerms& terms);
Offer make_offer(const Household& household, double incentive, const OfferTerms& terms);

// Smallest incentive that leaves the participant no worse off, clamped at 0.
double min_incentive(const Household& household, const OfferTerms& terms);
OfferOutcome accept_offer(const Household& household, const Offer& offer);

// Per-kWh surcharge on non-participants that exactly funds the incentives.
double rate_hike(double incentive_total, double nonparticipant_kwh);
double rate_hike(const Community& community, std::span<const std::size_t> participants,
                 std::span<const std::size_t> nonparticipants, std::span<const double> incentives,
                 int cycle_days);

}  // namespace ilb
