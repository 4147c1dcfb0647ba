#include "ilb/tariff.hpp"

#include <algorithm>
#include <cmath>

#include "ilb/error.hpp"

namespace ilb {

namespace {

void check_days(std::span<const int> days, int limit, const char* what) {
  for (int d : days) {
    require(d >= 0 && d < limit, ErrorKind::Coverage,
            std::string(what) + " day " + std::to_string(d) + " outside [0," +
                std::to_string(limit) + ")");
  }
}

bool is_emergency(std::span<const int> days, int day) {
  return std::find(days.begin(), days.end(), day) != days.end();
}

}  // namespace

double price_change_pct(double target_reduction_pct, double elasticity) {
  require(elasticity < 0.0, ErrorKind::Domain, "elasticity must be negative");
  require(target_reduction_pct > 0.0 && target_reduction_pct < 100.0, ErrorKind::Domain,
          "target reduction must lie in (0,100)");
  return -target_reduction_pct / elasticity;
}

double emergency_rate(double baseline_rate, double target_reduction_pct, double elasticity) {
  require(baseline_rate > 0.0, ErrorKind::Domain, "baseline rate must be positive");
  return baseline_rate * (1.0 + price_change_pct(target_reduction_pct, elasticity) / 100.0);
}

double cycle_consumption(const LoadSeries& load, int cycle_days) {
  require(cycle_days >= 1, ErrorKind::Coverage, "cycle must span at least one day");
  require(load.days() >= static_cast<std::size_t>(cycle_days), ErrorKind::Coverage,
          "load covers " + std::to_string(load.days()) + " days, cycle needs " +
              std::to_string(cycle_days));
  double total = 0.0;
  for (int d = 0; d < cycle_days; ++d) total += load.day_total(d);
  return total;
}

double baseline_cost(const Household& household, int cycle_days) {
  require(cycle_days >= 1, ErrorKind::Coverage, "cycle must span at least one day");
  require(household.load.days() >= static_cast<std::size_t>(cycle_days), ErrorKind::Coverage,
          "household " + household.id + " load is shorter than the billing cycle");
  double cost = 0.0;
  for (int d = 0; d < cycle_days; ++d) cost += household.load.day_total(d) * household.baseline_rate;
  return cost;
}

double ilb_cost(const Household& household, const Offer& offer, const LoadSeries& reduced_load) {
  const auto& schedule = offer.schedule;
  const int cycle = schedule.cycle_days;
  require(household.load.days() >= static_cast<std::size_t>(cycle) &&
              reduced_load.days() >= static_cast<std::size_t>(cycle),
          ErrorKind::Coverage, "household " + household.id + " load is shorter than the cycle");
  check_days(schedule.emergency_days, cycle, "emergency");

  double cost = 0.0;
  for (int d = 0; d < cycle; ++d) {
    if (is_emergency(schedule.emergency_days, d)) {
      cost += reduced_load.day_total(d) * schedule.emergency_rate;
      continue;
    }
    for (int h = 0; h < kHoursPerDay; ++h) {
      require(reduced_load.hour(d, h) == household.load.hour(d, h), ErrorKind::ContractViolation,
              "reduced load differs from the original on non-emergency day " + std::to_string(d));
    }
    cost += household.load.day_total(d) * schedule.baseline_rate;
  }
  return cost - offer.incentive;
}

LoadSeries apply_reduction(const LoadSeries& load, std::span<const int> emergency_days,
                           double reduction_pct) {
  require(reduction_pct >= 0.0 && reduction_pct <= 100.0, ErrorKind::Domain,
          "reduction must lie in [0,100]");
  check_days(emergency_days, static_cast<int>(load.days()), "emergency");
  LoadSeries reduced = load;
  const double keep = 1.0 - reduction_pct / 100.0;
  for (int d : emergency_days) {
    for (int h = 0; h < kHoursPerDay; ++h) {
      reduced.values[static_cast<std::size_t>(d) * kHoursPerDay + h] *= keep;
    }
  }
  return reduced;
}

TariffSchedule make_schedule(const Household& household, const OfferTerms& terms) {
  check_days(terms.emergency_days, terms.cycle_days, "emergency");
  return {household.baseline_rate,
          emergency_rate(household.baseline_rate, terms.target_reduction_pct, household.elasticity),
          terms.emergency_days, terms.cycle_days};
}

Offer make_offer(const Household& household, double incentive, const OfferTerms& terms) {
  require(incentive >= 0.0, ErrorKind::Domain, "incentive must be non-negative");
  return {household.id, incentive, terms.target_reduction_pct, make_schedule(household, terms)};
}

double min_incentive(const Household& household, const OfferTerms& terms) {
  const auto schedule = make_schedule(household, terms);
  require(household.load.days() >= static_cast<std::size_t>(terms.cycle_days),
          ErrorKind::Coverage, "household " + household.id + " load is shorter than the cycle");
  const auto reduced =
      apply_reduction(household.load, terms.emergency_days, terms.target_reduction_pct);
  double emergency_bill = 0.0;
  double baseline_bill = 0.0;
  for (int d : terms.emergency_days) {
    emergency_bill += reduced.day_total(d) * schedule.emergency_rate;
    baseline_bill += household.load.day_total(d) * schedule.baseline_rate;
  }
  return std::max(0.0, emergency_bill - baseline_bill);
}

OfferOutcome accept_offer(const Household& household, const Offer& offer) {
  require(offer.household_id == household.id, ErrorKind::ContractViolation,
          "offer for " + offer.household_id + " applied to " + household.id);
  require(offer.incentive >= 0.0, ErrorKind::Domain, "incentive must be non-negative");
  const OfferTerms terms{offer.target_reduction_pct, offer.schedule.emergency_days,
                         offer.schedule.cycle_days};
  const auto expected = make_schedule(household, terms);
  require(std::abs(expected.emergency_rate - offer.schedule.emergency_rate) <=
                  1e-12 * expected.emergency_rate &&
              expected.baseline_rate == offer.schedule.baseline_rate,
          ErrorKind::ContractViolation,
          "offer schedule is inconsistent with household " + household.id + " elasticity");

  OfferOutcome outcome;
  outcome.offer = offer;
  outcome.cost_baseline = baseline_cost(household, offer.schedule.cycle_days);
  const auto reduced =
      apply_reduction(household.load, offer.schedule.emergency_days, offer.target_reduction_pct);
  outcome.cost_ilb = ilb_cost(household, offer, reduced);
  outcome.min_incentive = min_incentive(household, terms);
  outcome.accepted = outcome.cost_ilb <=
                     outcome.cost_baseline +
                         kCostTieTolerance * std::max(1.0, std::abs(outcome.cost_baseline));
  return outcome;
}

double rate_hike(double incentive_total, double nonparticipant_kwh) {
  require(incentive_total >= 0.0, ErrorKind::Domain, "incentive total must be non-negative");
  require(nonparticipant_kwh > 0.0, ErrorKind::DegeneratePopulation,
          "non-participants consume nothing over the cycle");
  return incentive_total / nonparticipant_kwh;
}

double rate_hike(const Community& community, std::span<const std::size_t> participants,
                 std::span<const std::size_t> nonparticipants, std::span<const double> incentives,
                 int cycle_days) {
  require(incentives.size() == participants.size(), ErrorKind::ContractViolation,
          "one incentive per participant is required");
  if (participants.empty()) return 0.0;
  double incentive_total = 0.0;
  for (double v : incentives) incentive_total += v;
  double kwh = 0.0;
  for (auto u : nonparticipants) kwh += cycle_consumption(community.households.at(u).load, cycle_days);
  return rate_hike(incentive_total, kwh);
}

}  // namespace ilb
