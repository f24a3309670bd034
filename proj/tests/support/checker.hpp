#pragma once

#include <string>
#include <vector>

#include "evcs/planner.hpp"

namespace evcs::testing {

/// Re-derives every planning constraint from the raw design and strategy profile only:
/// integer non-negative chargers within budget, non-negative prices, distributions on every
/// simplex, no mass on closed stations, profitability of every open station at arrivals
/// recomputed from scratch, and the reported social cost against a full re-expansion.
/// Returns one message per violated constraint.
std::vector<std::string> independent_check(const PlanResult& plan, const Problem& problem);

}  // namespace evcs::testing
