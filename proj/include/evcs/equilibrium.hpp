#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "evcs/costs.hpp"

namespace evcs {

/// Direction rule of the conditional-gradient solver. Both use the all-or-nothing best
/// response of each O-D block as target and an exact line search on the potential.
///  - frank_wolfe: classic simultaneous step towards the best responses.
///  - pairwise:    per block, shifts mass from the costliest used strategy to the best
///                 response (pairwise Frank-Wolfe), one block at a time.
enum class StepRule { frank_wolfe, pairwise };

std::string_view to_string(StepRule rule);
StepRule parse_step_rule(std::string_view name);

struct SolverSettings {
    double gap_tolerance = 1e-5;
    int max_iterations = 5000;
    StepRule step_rule = StepRule::pairwise;
};

void validate(const SolverSettings& settings);

/// Which driver classes adjust. The others keep the flows of the initial profile.
enum class Players { all, ev, ncd };

struct EquilibriumResult {
    StrategyProfile profile;
    FlowState flows;
    double relative_gap = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> potential_trace;  // starts with the initial profile's value
    std::vector<double> gap_trace;
};

struct SolveOptions {
    Players players = Players::all;
    /// Warm start. Classes that do not adjust take their flows from here; when null they
    /// default to the uniform profile.
    const StrategyProfile* initial = nullptr;
};

/// Probability of a strategy above which it counts as used.
inline constexpr double kSupportThreshold = 1e-6;

/// Beckmann-type potential
///   lambda sum_l d_l v_l^2 / (2 c_l) + sum_i lambda a_i^2 / (2 mu x_i) + sum_i y_i a_i
/// with v_l the total link flow. Infinite when a closed station receives arrivals.
double potential(const FlowState& flows, const Design& design, const Problem& problem);
double potential(const StrategyProfile& profile, const Design& design, const Problem& problem);

/// dPhi/dq: gamma_w C_{w,p} for EV entries, gamma0_w C0_{w,r} for NCD entries.
StrategyProfile potential_gradient(const StrategyProfile& profile, const Design& design, const Problem& problem);

/// Sum over adjusting classes of gamma (expected cost - best-response cost), divided by the
/// social cost of those classes. 0 when that cost is 0.
double relative_gap(const StrategyProfile& profile, const FlowState& flows, const Design& design,
                    const Problem& problem, Players players = Players::all);

/// Uniform over routes and over extended paths at open stations. Throws InfeasibleError when
/// an O-D pair with EV demand has no open station on any of its routes.
StrategyProfile uniform_profile(const Problem& problem, const Design& design);

/// Wardrop equilibrium for a fixed design, by minimising the potential over the product of
/// per-O-D simplices. A result that misses the tolerance is returned with converged = false.
EquilibriumResult solve_equilibrium(const Problem& problem, const Design& design, const SolverSettings& settings,
                                    const SolveOptions& options = {});

struct WardropViolation {
    std::size_t od = 0;
    bool ev = false;
    std::size_t strategy = 0;  // position within paths_of(od) or routes_of(od)
    double probability = 0.0;
    double cost = 0.0;
    double best_cost = 0.0;
};

struct WardropCertificate {
    double epsilon = 0.0;
    std::vector<WardropViolation> violations;

    bool passed() const { return violations.empty(); }
};

/// Lists every used strategy (q > kSupportThreshold) whose cost exceeds the best alternative
/// of its O-D pair by more than a factor (1 + epsilon).
WardropCertificate wardrop_certificate(const StrategyProfile& profile, const Problem& problem, const Design& design,
                                       double epsilon = 1e-3, Players players = Players::all);
WardropCertificate wardrop_certificate(const EquilibriumResult& result, const Problem& problem,
                                       const Design& design, double epsilon = 1e-3, Players players = Players::all);

/// CSV with header `iteration,potential,relative_gap`.
void write_trace_csv(std::ostream& out, const EquilibriumResult& result);

}  // namespace evcs
