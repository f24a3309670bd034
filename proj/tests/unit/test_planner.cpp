#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "checker.hpp"
#include "evcs/errors.hpp"
#include "evcs/planner.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace evcs {
namespace {

using testing::problem_from;

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

StrategyProfile background_for(const Problem& pb) {
    auto q = solve_pa_ncd(pb).profile;
    for (std::size_t od = 0; od < q.ev.size(); ++od)
        q.ev[od].assign(pb.catalog->paths_of(od).size(), 0.0);
    return q;
}

Problem single_station_problem(int budget, double ev = 20.0) {
    return problem_from(testing::single_link_network(), {{1, 2, ev, 100.0}}, GlobalParams{25.12, 4.0, 1.2, budget},
                        10, {2});
}

Problem diamond_problem(double ev, double ncd, int budget) {
    return problem_from(testing::diamond_network(), {{1, 4, ev, ncd}}, GlobalParams{25.12, 4.0, 1.2, budget});
}

TEST(RoundAndFix, LargestFractionsGetTheSpareChargers) {
    EXPECT_EQ(round_and_fix(std::vector{2.7, 3.2, 1.6}, 8), (std::vector{3.0, 3.0, 1.0}));
    EXPECT_EQ(round_and_fix(std::vector{0.5, 0.5}, 1), (std::vector{1.0, 0.0}));
    EXPECT_EQ(round_and_fix(std::vector{4.0, 0.0, 2.0}, 6), (std::vector{4.0, 0.0, 2.0}));
}

TEST(RoundAndFix, ConservesTheFlooredTotal) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 9.0);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> x(1 + trial % 12);
        for (auto& v : x)
            v = u(rng);
        const auto r = round_and_fix(x, static_cast<int>(std::ceil(sum(x))));
        EXPECT_EQ(sum(r), std::floor(sum(x) + 1e-9));
        for (std::size_t i = 0; i < x.size(); ++i) {
            EXPECT_EQ(r[i], std::floor(r[i]));
            EXPECT_GE(r[i], std::floor(x[i]));
            EXPECT_LE(r[i], std::floor(x[i]) + 1.0);
        }
    }
}

TEST(RoundAndFix, RejectsNegativeEntries) {
    EXPECT_THROW(round_and_fix(std::vector{1.0, -0.5}, 3), ValidationError);
}

TEST(PriceFloor, Cases) {
    const Node node{1, 7.5, 10.0};
    EXPECT_NEAR(price_floor(node, 40.0, 3.0, 1.2), 9.9, 1e-12);
    EXPECT_NEAR(price_floor(Node{1, 7.5, 0.0}, 40.0, 3.0, 1.2), 9.0, 1e-12);
    const double term = price_floor(node, 40.0, 3.0, 1.2) - 9.0;
    EXPECT_NEAR(price_floor(node, 80.0, 3.0, 1.2) - 9.0, term / 2.0, 1e-12);
    EXPECT_EQ(price_floor(node, 0.0, 3.0, 1.2), kUnboundedFloor);
    EXPECT_NEAR(price_floor(node, 0.0, 0.0, 1.2), 9.0, 1e-12);
}

TEST(EvenAllocation, RemainderGoesToLowestIndices) {
    std::vector<std::size_t> all(24);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(even_allocation(all, 24, 24), std::vector<double>(24, 1.0));
    const auto x = even_allocation(all, 24, 169);
    EXPECT_EQ(x[0], 8.0);
    for (std::size_t i = 1; i < 24; ++i)
        EXPECT_EQ(x[i], 7.0);
    const auto some = even_allocation(std::vector<std::size_t>{1, 3}, 5, 5);
    EXPECT_EQ(some, (std::vector<double>{0.0, 3.0, 0.0, 2.0, 0.0}));
}

TEST(CheckConstraints, ReportsEachViolation) {
    const auto pb = single_station_problem(5);
    FlowState flows{{120.0}, {20.0}, {0.0, 20.0}};
    EXPECT_TRUE(check_constraints(Design{{0.0, 4.0}, {0.0, 11.4}}, flows, pb).feasible());
    EXPECT_FALSE(check_constraints(Design{{0.0, 6.0}, {0.0, 20.0}}, flows, pb).feasible());
    EXPECT_FALSE(check_constraints(Design{{0.0, 3.5}, {0.0, 20.0}}, flows, pb).feasible());
    EXPECT_FALSE(check_constraints(Design{{0.0, 4.0}, {0.0, 11.0}}, flows, pb).feasible());
    EXPECT_FALSE(check_constraints(Design{{0.0, 4.0}, {-1.0, 11.4}}, flows, pb).feasible());
    const auto r = check_constraints(Design{{0.0, 4.0}, {0.0, 12.4}}, flows, pb);
    ASSERT_EQ(r.stations.size(), 1u);
    EXPECT_NEAR(r.stations[0].profit_gap, 20.0, 1e-9);
    EXPECT_EQ(r.budget_slack, 1.0);
}

TEST(Planner, ZeroBudgetWithEvDemandIsInfeasible) {
    const auto pb = single_station_problem(0);
    EXPECT_THROW(jppo_de(pb), InfeasibleError);
    EXPECT_THROW(baseline_pro(pb), InfeasibleError);
    EXPECT_THROW(baseline_plo(pb), InfeasibleError);
}

// Social cost of the single-station instance as a function of x with the price at its floor,
// evaluated by full expansion.
double single_station_cost(const Problem& pb, double x) {
    const double a = pb.demands[0].ev_flow;
    const Design d{{0.0, x}, {0.0, price_floor(pb.network->node(1), a, x, pb.params.profit_margin)}};
    StrategyProfile q{{{1.0}}, {{1.0}}};
    return testing::oracle_social_cost(q, pb, d);
}

double golden_min(const Problem& pb, double lo, double hi) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
    for (int it = 0; it < 200; ++it) {
        if (single_station_cost(pb, c) < single_station_cost(pb, d))
            hi = d;
        else
            lo = c;
        c = hi - g * (hi - lo);
        d = lo + g * (hi - lo);
    }
    return 0.5 * (lo + hi);
}

TEST(RelaxedPlacement, SingleStationMatchesOneDimensionalSearch) {
    for (int budget : {100, 10}) {
        const auto pb = single_station_problem(budget);
        const auto r = solve_pa_ev_relaxed(pb, background_for(pb));
        const double x_star = golden_min(pb, 1e-3, budget);
        EXPECT_NEAR(r.design.chargers[1], x_star, 1e-4 * x_star) << "budget " << budget;
        EXPECT_NEAR(r.cost.total(), single_station_cost(pb, x_star), 1e-6 * r.cost.total());
        EXPECT_EQ(r.design.chargers[0], 0.0);
    }
}

TEST(ResolvePricing, SingleStationPriceIsTheFloor) {
    const auto pb = single_station_problem(5);
    const auto r = resolve_pricing(pb, background_for(pb), {0.0, 4.0});
    EXPECT_NEAR(r.design.prices[1], 1.2 * (7.5 + 4.0 * 10.0 / 20.0), 1e-5);
    EXPECT_NEAR(r.equilibrium.flows.arrivals[1], 20.0, 1e-9);
}

TEST(ResolvePricing, CompetingStationsSitAtOrAboveTheirFloors) {
    const auto pb = diamond_problem(40.0, 150.0, 10);
    const auto r = resolve_pricing(pb, background_for(pb), {0.0, 3.0, 2.0, 0.0});
    for (std::size_t i : {1u, 2u}) {
        const double floor = price_floor(pb.network->node(i), r.equilibrium.flows.arrivals[i],
                                         r.design.chargers[i], 1.2);
        EXPECT_GE(r.design.prices[i], floor - 1e-6);
        EXPECT_GT(r.equilibrium.flows.arrivals[i], 0.0);
    }
    EXPECT_TRUE(wardrop_certificate(r.equilibrium, pb, r.design, 1e-6, Players::ev).passed());
}

TEST(ResolvePricing, UnusedStationIsClosed) {
    // Node 3 is only on the detour; with almost no chargers it cannot attract enough EVs.
    const auto pb = problem_from(testing::diamond_network(), {{1, 4, 40.0, 150.0}},
                                 GlobalParams{25.12, 4.0, 1.2, 10}, 10, {2, 3});
    const auto r = resolve_pricing(pb, background_for(pb), {0.0, 9.0, 1.0, 0.0});
    for (std::size_t i = 0; i < 4; ++i)
        if (r.design.chargers[i] > 0.0)
            EXPECT_GT(r.equilibrium.flows.arrivals[i], 0.0);
}

TEST(RelaxedPlacement, SymmetricStationsGetEqualShares) {
    const auto pb = problem_from(testing::twin_station_network(), {{1, 4, 40.0, 200.0}},
                                 GlobalParams{25.12, 4.0, 1.2, 100}, 10, {2, 3});
    const auto r = solve_pa_ev_relaxed(pb, background_for(pb));
    EXPECT_NEAR(r.design.chargers[1], r.design.chargers[2], 1e-4 * r.design.chargers[1]);
    EXPECT_NEAR(r.design.prices[1], r.design.prices[2], 1e-4 * r.design.prices[1]);
    EXPECT_GT(r.design.chargers[1], 0.0);
}

TEST(RelaxedPlacement, BindingBudgetIsExhausted) {
    const auto pb = diamond_problem(60.0, 150.0, 8);
    const auto r = solve_pa_ev_relaxed(pb, background_for(pb));
    EXPECT_NEAR(r.design.total_chargers(), 8.0, 1e-6);
}

TEST(RelaxedPlacement, NoSingleChargerPerturbationHelps) {
    const auto pb = diamond_problem(60.0, 150.0, 40);
    const auto bg = background_for(pb);
    const auto r = solve_pa_ev_relaxed(pb, bg);
    PlannerSettings fixed;
    fixed.polish_iterations = 0;
    const double theta = r.cost.total();
    for (std::size_t i = 0; i < 4; ++i) {
        if (r.design.chargers[i] <= 0.0)
            continue;
        for (double delta : {1e-3, -1e-3}) {
            auto x = r.design.chargers;
            x[i] += delta;
            if (sum(x) > pb.params.budget || x[i] <= 0.0)
                continue;
            const auto moved = resolve_pricing(pb, bg, x, fixed, &r.design.prices);
            EXPECT_GE(moved.cost.total(), theta * (1.0 - 1e-4)) << "node " << i << " delta " << delta;
        }
    }
}

TEST(Jppo, NoEvDemandGivesTheRoadOnlyPlan) {
    const auto pb = diamond_problem(0.0, 200.0, 10);
    const auto plan = jppo_de(pb);
    EXPECT_EQ(plan.design, Design::closed(4));
    const auto road = solve_equilibrium(pb, Design::closed(4), SolverSettings{1e-10, 20000, StepRule::pairwise});
    EXPECT_NEAR(plan.social_cost(), social_cost(road.profile, road.flows, Design::closed(4), pb).total(),
                1e-6 * plan.social_cost());
    EXPECT_TRUE(plan.constraints.feasible());
}

TEST(Jppo, LowPenetrationTakesTheSequentialBranch) {
    const auto pb = diamond_problem(26.0, 174.0, 20);
    const auto plan = jppo_de(pb);
    EXPECT_NE(plan.provenance.find("sequential"), std::string::npos);
    EXPECT_TRUE(testing::independent_check(plan, pb).empty());
}

TEST(Jppo, HighPenetrationRefinementNeverIncreasesCost) {
    const auto pb = diamond_problem(100.0, 100.0, 40);
    const auto plan = jppo_de(pb);
    EXPECT_NE(plan.provenance.find("refinement"), std::string::npos);
    ASSERT_FALSE(plan.refinement_trace.empty());
    for (std::size_t k = 1; k < plan.refinement_trace.size(); ++k)
        EXPECT_LE(plan.refinement_trace[k], plan.refinement_trace[k - 1]);
    EXPECT_EQ(plan.refinement_trace.back(), plan.social_cost());
    EXPECT_TRUE(testing::independent_check(plan, pb).empty());
}

TEST(Jppo, RoundedCostStaysCloseToRelaxed) {
    const auto pb = diamond_problem(60.0, 150.0, 40);
    const auto plan = jppo_de(pb);
    EXPECT_LE(std::abs(plan.social_cost() - plan.relaxed_social_cost), 0.025 * plan.relaxed_social_cost);
}

TEST(Jppo, DeterministicAcrossJobCounts) {
    const auto pb = diamond_problem(60.0, 150.0, 40);
    PlannerSettings one, three;
    three.jobs = 3;
    const auto a = jppo_de(pb, one);
    const auto b = jppo_de(pb, one);
    const auto c = jppo_de(pb, three);
    EXPECT_EQ(a.design, b.design);
    EXPECT_EQ(a.design, c.design);
    EXPECT_EQ(a.social_cost(), c.social_cost());
}

TEST(Baselines, JointPlanDominatesBoth) {
    const auto pb = diamond_problem(60.0, 150.0, 40);
    const auto jo = jppo_de(pb);
    const auto pro = baseline_pro(pb);
    const auto plo = baseline_plo(pb);
    for (const auto* plan : {&jo, &pro, &plo})
        EXPECT_TRUE(testing::independent_check(*plan, pb).empty()) << plan->provenance;
    EXPECT_LE(jo.social_cost(), std::min(pro.social_cost(), plo.social_cost()) * (1.0 + 1e-6));
}

TEST(Baselines, PlacementOnlyPriceEqualsCommonFloorWhenSymmetric) {
    const auto pb = problem_from(testing::twin_station_network(), {{1, 4, 40.0, 200.0}},
                                 GlobalParams{25.12, 4.0, 1.2, 10}, 10, {2, 3});
    const auto plan = baseline_plo(pb);
    EXPECT_EQ(plan.design.chargers[1], 5.0);
    EXPECT_EQ(plan.design.chargers[2], 5.0);
    for (std::size_t i : {1u, 2u}) {
        const double floor = price_floor(pb.network->node(i), plan.equilibrium.flows.arrivals[i], 5.0, 1.2);
        EXPECT_NEAR(plan.design.prices[i], floor, 1e-6 * floor);
    }
}

TEST(Baselines, PricingOnlySpreadsChargersEvenly) {
    const auto pb = diamond_problem(60.0, 150.0, 9);
    const auto plan = baseline_pro(pb);
    EXPECT_EQ(plan.design.chargers, (std::vector<double>{3.0, 2.0, 2.0, 2.0}));
    EXPECT_TRUE(testing::independent_check(plan, pb).empty());
}

TEST(PlanJson, CarriesCostsAndStations) {
    const auto pb = single_station_problem(10);
    const auto plan = jppo_de(pb);
    const auto j = plan_to_json(plan, pb);
    EXPECT_NEAR(j["social_cost"]["total"].get<double>(), plan.social_cost(), 1e-9);
    EXPECT_EQ(j["nodes"].size(), 2u);
    EXPECT_TRUE(j["feasible"].get<bool>());
    EXPECT_TRUE(j["nodes"][1].contains("price_floor"));
}

TEST(PlannerSettings, RejectsBadValues) {
    PlannerSettings s;
    s.starts = 0;
    EXPECT_THROW(validate(s), ValidationError);
    s = {};
    s.jobs = 0;
    EXPECT_THROW(validate(s), ValidationError);
    s = {};
    s.refinement.max_rounds = 0;
    EXPECT_THROW(validate(s), ValidationError);
}

}  // namespace
}  // namespace evcs
