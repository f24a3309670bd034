#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcs/costs.hpp"
#include "evcs/equilibrium.hpp"

namespace evcs {

struct RefinementSettings {
    double alpha_threshold = 0.2;  // sequential pipeline when alpha <= threshold
    int max_rounds = 20;
    double flow_tolerance = 1e-4;  // max |dv| / max v between rounds
};

void validate(const RefinementSettings& settings);

struct PlannerSettings {
    SolverSettings inner{1e-10, 100000, StepRule::pairwise};
    RefinementSettings refinement;
    int starts = 5;               // one uniform start plus (starts - 1) seeded random ones
    std::uint64_t seed = 1;
    int sizing_iterations = 200;
    int polish_iterations = 10;
    double polish_step = 1.0;     // largest coordinate move of a first polish trial step
    double open_threshold = 1e-6; // arrivals below which a station is closed before rounding
    int jobs = 1;                 // concurrent restarts
};

void validate(const PlannerSettings& settings);

/// Charger and price vectors with only the EV side of the game adjusting; the NCD side is
/// the background profile it was computed against.
struct EvSolution {
    Design design;
    EquilibriumResult equilibrium;
    SocialCost cost;
    bool converged = false;
};

/// Per-station constraint evaluation, from raw design and arrivals.
struct StationReport {
    NodeId node = 0;
    double chargers = 0.0;
    double price = 0.0;
    double arrivals = 0.0;
    double price_floor = 0.0;
    double revenue = 0.0;
    double profit_gap = 0.0;  // revenue - pi (a e + x T)
};

struct ConstraintReport {
    int budget = 0;
    double chargers_used = 0.0;
    double budget_slack = 0.0;
    std::vector<StationReport> stations;  // open stations only
    std::vector<std::string> violations;

    bool feasible() const { return violations.empty(); }
};

ConstraintReport check_constraints(const Design& design, const FlowState& flows, const Problem& problem);

struct PlanResult {
    Design design;
    EquilibriumResult equilibrium;
    SocialCost cost;
    ConstraintReport constraints;
    std::string provenance;
    bool converged = false;
    double relaxed_social_cost = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> refinement_trace;  // social cost after every accepted round

    double social_cost() const { return cost.total(); }
};

/// Unbounded price floor, returned for an open station without arrivals.
inline constexpr double kUnboundedFloor = std::numeric_limits<double>::infinity();

/// pi (e + x T / a): the lowest profitable price at the given arrivals. kUnboundedFloor when
/// a = 0 and x > 0; pi e for a closed station.
double price_floor(const Node& node, double arrivals, double chargers, double profit_margin);

/// Floors every entry, then adds one charger to the floor(sum of fractional parts) entries
/// with the largest fractional parts; ties go to the lower node index.
std::vector<double> round_and_fix(std::span<const double> relaxed, int budget);

/// Road-only equilibrium of the NCD class with EVs and stations removed.
EquilibriumResult solve_pa_ncd(const Problem& problem, const SolverSettings& settings = {});

/// Relaxed placement and pricing for the EV class with the NCD routes of `background`
/// fixed. Throws InfeasibleError when no station can be opened.
EvSolution solve_pa_ev_relaxed(const Problem& problem, const StrategyProfile& background,
                               const PlannerSettings& settings = {});

/// Prices and EV equilibrium for fixed charger counts. Stations that cannot be served
/// profitably are closed one at a time, weakest first. `warm_prices` seeds the search.
EvSolution resolve_pricing(const Problem& problem, const StrategyProfile& background, std::vector<double> chargers,
                           const PlannerSettings& settings = {}, const std::vector<double>* warm_prices = nullptr);

/// Re-optimises the prices of `start` with its charger counts fixed. The search starts from
/// the prices of `start`, so when those are profitable the result never costs more than the
/// equilibrium they induce. Unprofitable stations are closed as in resolve_pricing.
EvSolution reprice_from(const Problem& problem, const StrategyProfile& background, const Design& start,
                        const PlannerSettings& settings = {});

/// Full pipeline: decomposition of the two driver classes, relaxation, rounding and price
/// re-optimisation.
PlanResult jppo_de(const Problem& problem, const PlannerSettings& settings = {});

/// budget div |candidates| chargers at every candidate node index, one more at the lowest
/// (budget mod |candidates|) of them.
std::vector<double> even_allocation(std::span<const std::size_t> candidates, std::size_t node_count, int budget);

/// Chargers spread evenly over the candidates, then prices optimised.
PlanResult baseline_pro(const Problem& problem, const PlannerSettings& settings = {});

/// One uniform price for every station, set to cover the most expensive one; placement
/// optimised under that price.
PlanResult baseline_plo(const Problem& problem, const PlannerSettings& settings = {});

/// Packs a design and its equilibrium with cost and constraint report.
PlanResult evaluate_plan(const Problem& problem, const Design& design, const EquilibriumResult& equilibrium,
                         std::string provenance);

nlohmann::json plan_to_json(const PlanResult& plan, const Problem& problem);

}  // namespace evcs
