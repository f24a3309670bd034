#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "checker.hpp"
#include "evcs/errors.hpp"
#include "evcs/experiments.hpp"
#include "fixtures.hpp"

namespace evcs {
namespace {

using testing::scenario_from;

std::filesystem::path scratch_dir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    auto dir = std::filesystem::temp_directory_path() /
               (std::string("evcs_") + info->test_suite_name() + "_" + info->name());
    std::filesystem::remove_all(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
            cells.push_back(cell);
        if (!line.empty() && line.back() == ',')
            cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

GlobalParams params_with_budget(int budget) {
    GlobalParams p;
    p.budget = budget;
    return p;
}

Scenario twin_scenario(int budget = 12) {
    return scenario_from(testing::twin_station_network(), {{1, 4, 120.0, 600.0}}, params_with_budget(budget));
}

HarnessOptions quick_options() {
    HarnessOptions o;
    o.planner.starts = 2;
    return o;
}

TEST(SaturationPoint, FirstValueAfterWhichTheCurveIsFlat) {
    EXPECT_EQ(saturation_point({50, 100, 150, 200}, {120, 100, 99.95, 99.97}), 100.0);
    EXPECT_EQ(saturation_point({50, 100, 150, 200}, {100, 100, 100, 100}), 50.0);
}

TEST(SaturationPoint, NoneWhileStillImproving) {
    EXPECT_FALSE(saturation_point({1, 2, 3}, {100, 95, 90}).has_value());
    EXPECT_FALSE(saturation_point({1}, {100}).has_value());
    EXPECT_FALSE(saturation_point({}, {}).has_value());
}

TEST(BetweennessOrder, WeightsByEvDemandAndBreaksTiesById) {
    // 1->2->3->4 with a feeder 5->3.
    Network net({{1, 7.5, 10}, {2, 7.5, 10}, {3, 7.5, 10}, {4, 7.5, 10}, {5, 7.5, 10}},
                {{1, 1, 2, 1.0, 1000}, {2, 2, 3, 1.0, 1000}, {3, 3, 4, 1.0, 1000}, {4, 5, 3, 1.0, 1000}});
    const auto sc = scenario_from(net, {{1, 4, 10.0, 100.0}, {5, 4, 30.0, 0.0}});
    EXPECT_EQ(betweenness_order(sc), (std::vector<NodeId>{3, 4, 5, 1, 2}));
}

TEST(BetweennessOrder, RestrictedToScenarioCandidates) {
    auto sc = twin_scenario();
    sc.candidates = {3, 4};
    const auto order = betweenness_order(sc);
    EXPECT_EQ(order.size(), 2u);
    EXPECT_EQ(std::set<NodeId>(order.begin(), order.end()), (std::set<NodeId>{3, 4}));
}

TEST(EmitReports, EmptyReportGivesHeaderOnlyCsv) {
    const auto dir = scratch_dir();
    emit_reports(Report{"empty", "budget", {}, {}}, testing::twin_station_network(), dir);
    EXPECT_EQ(slurp(dir / "empty.csv"), std::string(kReportCsvHeader) + "\n");
    const auto j = nlohmann::json::parse(slurp(dir / "empty.json"));
    EXPECT_EQ(j.at("schema_version"), kReportSchemaVersion);
    EXPECT_TRUE(j.at("rows").empty());
    EXPECT_NE(slurp(dir / "empty.svg").find("<svg"), std::string::npos);
}

TEST(EmitReports, UnwritableDirectoryThrows) {
    const auto dir = scratch_dir();
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "file") << "x";
    EXPECT_THROW(emit_reports(Report{"r", "p", {}, {}}, testing::twin_station_network(), dir / "file" / "sub"),
                 std::runtime_error);
}

TEST(EmitReports, SocialCostRecomputesFromStoredDesignAndFlows) {
    const auto sc = scenario_from(testing::diamond_network(), {{1, 4, 150.0, 800.0}}, params_with_budget(15));
    const auto pb = make_problem(sc);
    const auto plan = jppo_de(pb, quick_options().planner);
    Report report{"check", "budget", {row_from_plan(plan, pb, "JO", 15)}, {}};
    const auto dir = scratch_dir();
    emit_reports(report, sc.network, dir);

    const auto main = read_csv(dir / "check.csv");
    ASSERT_EQ(main.size(), 2u);
    const double reported = std::stod(main[1][4]);

    const auto& net = sc.network;
    const double lambda = sc.params.time_value, mu = sc.params.service_rate;
    double theta = 0.0;
    const auto links = read_csv(dir / "check_links.csv");
    ASSERT_EQ(links.size(), net.link_count() + 1);
    for (std::size_t r = 1; r < links.size(); ++r) {
        const auto& link = net.link(r - 1);
        ASSERT_EQ(std::stoll(links[r][2]), link.id);
        const double v = std::stod(links[r][5]) + std::stod(links[r][6]);
        theta += lambda * v * link.distance * v / link.capacity;
    }
    const auto nodes = read_csv(dir / "check_nodes.csv");
    ASSERT_EQ(nodes.size(), net.node_count() + 1);
    for (std::size_t r = 1; r < nodes.size(); ++r) {
        const double x = std::stod(nodes[r][3]), y = std::stod(nodes[r][4]), a = std::stod(nodes[r][5]);
        if (a > 0.0) {
            ASSERT_GT(x, 0.0);
            theta += lambda * a * a / (mu * x) + a * y;
        }
    }
    EXPECT_NEAR(theta, reported, 1e-9 * reported);

    const auto components = std::stod(main[1][5]) + std::stod(main[1][6]) + std::stod(main[1][7]) +
                            std::stod(main[1][8]);
    EXPECT_NEAR(components, reported, 1e-9 * reported);
}

TEST(SweepBudget, InfeasibleBudgetIsARowNotACrash) {
    const auto report = sweep_budget(twin_scenario(), {0, 4, 8, 12, 20}, quick_options());
    ASSERT_EQ(report.rows.size(), 15u);
    for (std::size_t k = 0; k < 3; ++k)
        EXPECT_EQ(report.rows[k].status, "infeasible");
    std::vector<double> jo;
    for (const auto& r : report.rows)
        if (r.method == "JO" && r.has_plan())
            jo.push_back(r.cost.total());
    ASSERT_EQ(jo.size(), 4u);
    for (std::size_t i = 1; i < jo.size(); ++i)
        EXPECT_LE(jo[i], jo[i - 1] * (1 + 1e-6));
    EXPECT_TRUE(report.summary.at("jo_monotone").get<bool>());
}

TEST(SweepBudget, RowsFollowGridOrderWithinBudget) {
    const auto sc = twin_scenario();
    const auto report = sweep_budget(sc, {6, 12}, quick_options());
    const char* methods[] = {"JO", "PrO", "PlO"};
    for (std::size_t k = 0; k < report.rows.size(); ++k) {
        EXPECT_EQ(report.rows[k].method, methods[k % 3]);
        EXPECT_EQ(report.rows[k].value, k < 3 ? 6.0 : 12.0);
        EXPECT_LE(report.rows[k].chargers(), report.rows[k].value);
    }
}

TEST(SweepBudget, GridMustIncrease) {
    EXPECT_THROW(sweep_budget(twin_scenario(), {10, 5}), ValidationError);
    EXPECT_THROW(sweep_budget(twin_scenario(), {}), ValidationError);
}

TEST(Resilience, EmptyFailureSetReproducesTheBase) {
    const auto report = resilience(twin_scenario(), {{}}, quick_options());
    ASSERT_EQ(report.rows.size(), 3u);
    const double base = report.rows[0].cost.total();
    EXPECT_EQ(report.rows[1].cost.total(), base);
    EXPECT_EQ(report.rows[2].cost.total(), base);
}

TEST(Resilience, AdaptiveNeverWorseThanFixed) {
    const auto sc = scenario_from(testing::diamond_network(), {{1, 4, 150.0, 800.0}}, params_with_budget(15));
    const auto report = resilience(sc, {{2}, {3}, {1}, {4}}, quick_options());
    for (std::size_t k = 1; k + 1 < report.rows.size(); k += 2) {
        const auto& fixed = report.rows[k];
        const auto& adaptive = report.rows[k + 1];
        ASSERT_EQ(fixed.method, "fixed");
        ASSERT_EQ(adaptive.method, "adaptive");
        if (!fixed.has_plan())
            continue;
        ASSERT_TRUE(adaptive.has_plan());
        EXPECT_LE(adaptive.cost.total(), fixed.cost.total() * (1 + 1e-6));
    }
}

TEST(Resilience, LosingEveryStationIsInfeasible) {
    const auto report = resilience(twin_scenario(), {{1, 2, 3, 4}}, quick_options());
    EXPECT_EQ(report.rows[1].status, "infeasible");
    EXPECT_EQ(report.rows[2].status, "infeasible");
}

TEST(Resilience, UnknownFailureNodeRejected) {
    EXPECT_THROW(resilience(twin_scenario(), {{99}}), ValidationError);
}

TEST(Generalise, ForcedStationGetsEveryCharger) {
    // Only node 2 of the candidates lies on the single route 1->2->3; 4..6 hang off node 3.
    Network net({{1, 7.5, 10}, {2, 7.5, 10}, {3, 7.5, 10}, {4, 7.5, 5}, {5, 7.5, 5}, {6, 7.5, 5}},
                {{1, 1, 2, 1.0, 1000}, {2, 2, 3, 1.0, 1000}, {3, 3, 4, 1.0, 1000}, {4, 4, 5, 1.0, 1000},
                 {5, 5, 6, 1.0, 1000}});
    const auto sc = scenario_from(net, {{1, 3, 100.0, 400.0}}, params_with_budget(10), 10, {2, 4, 5, 6});
    for (std::size_t batch : {1u, 2u, 3u}) {
        const auto result = generalise(sc, batch, quick_options());
        const auto& x = result.plan.design.chargers;
        EXPECT_GT(x[1], 0.0) << "batch " << batch;
        EXPECT_EQ(x[1], result.plan.design.total_chargers()) << "batch " << batch;
        EXPECT_EQ(result.rounds.size(), (4 + batch - 1) / batch);
        for (NodeId id : {2, 4, 5, 6})
            EXPECT_EQ(result.introduced[net.index_of(id)], 1);
        EXPECT_TRUE(result.report.summary.at("every_node_once").get<bool>());
        EXPECT_TRUE(testing::independent_check(result.plan, make_problem(sc)).empty());
    }
}

TEST(Generalise, BestPlanNoWorseThanFirstRound) {
    const auto sc = scenario_from(testing::diamond_network(), {{1, 4, 150.0, 800.0}}, params_with_budget(15));
    const auto result = generalise(sc, 2, quick_options());
    ASSERT_FALSE(result.report.rows.empty());
    const auto& first = result.report.rows.front();
    if (first.has_plan())
        EXPECT_LE(result.plan.social_cost(), first.cost.total());
    EXPECT_EQ(result.rounds.size(), 2u);
    EXPECT_EQ(result.rounds.front().size(), 2u);
}

TEST(ExperimentSpec, Validation) {
    ExperimentSpec spec;
    spec.kind = ExperimentKind::sweep_budget;
    EXPECT_THROW(validate(spec), ValidationError);
    spec.grid = {100, 50};
    EXPECT_THROW(validate(spec), ValidationError);
    spec.grid = {50, 100.5};
    EXPECT_THROW(validate(spec), ValidationError);
    spec.grid = {50, 100};
    EXPECT_NO_THROW(validate(spec));
    spec.kind = ExperimentKind::sensitivity_alpha;
    spec.grid = {0.1, 1.5};
    EXPECT_THROW(validate(spec), ValidationError);
    spec.kind = ExperimentKind::resilience;
    EXPECT_THROW(validate(spec), ValidationError);
    spec.kind = ExperimentKind::equilibrium;
    EXPECT_THROW(validate(spec), ValidationError);
    EXPECT_EQ(parse_experiment_kind("sweep-budget"), ExperimentKind::sweep_budget);
    EXPECT_EQ(to_string(ExperimentKind::sensitivity_mu), "sensitivity-mu");
    EXPECT_THROW(parse_experiment_kind("nope"), ValidationError);
}

/// Writes a diamond scenario to disk so run_experiment can load it.
std::filesystem::path write_diamond_scenario(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "diamond_net.tntp") << "<NUMBER OF NODES> 4\n<END OF METADATA>\n"
                                               "1 2 1.0 1000 ;\n1 3 1.5 1000 ;\n2 4 1.0 1000 ;\n"
                                               "3 4 0.8 1000 ;\n1 4 2.6 1000 ;\n";
    nlohmann::json doc{{"name", "diamond"},
                       {"network_path", "diamond_net.tntp"},
                       {"distance_unit", "hours"},
                       {"params", {{"lambda", 25.12}, {"mu", 4}, {"pi", 1.2}, {"budget", 15}}},
                       {"demands", {{{"origin", 1}, {"destination", 4}, {"ev_flow", 150}, {"ncd_flow", 800}}}},
                       {"nodes",
                        {{{"id", 1}, {"electricity_price", 7.5}, {"site_cost", 10}},
                         {{"id", 2}, {"electricity_price", 7.5}, {"site_cost", 10}},
                         {{"id", 3}, {"electricity_price", 7.5}, {"site_cost", 15}},
                         {{"id", 4}, {"electricity_price", 7.5}, {"site_cost", 10}}}}};
    std::ofstream(dir / "diamond.json") << doc.dump(2);
    return dir / "diamond.json";
}

TEST(RunExperiment, RepeatedRunsWriteIdenticalCsvs) {
    const auto dir = scratch_dir();
    ExperimentSpec spec;
    spec.scenario = write_diamond_scenario(dir);
    spec.kind = ExperimentKind::sweep_budget;
    spec.grid = {5, 10, 15};
    spec.planner.starts = 3;
    spec.output_dir = dir / "a";
    run_experiment(spec);
    spec.output_dir = dir / "b";
    spec.jobs = 3;
    run_experiment(spec);
    for (const char* f : {"sweep_budget.csv", "sweep_budget_nodes.csv", "sweep_budget_links.csv"})
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
}

TEST(RunExperiment, SolveThenEquilibriumOnTheWrittenPlan) {
    const auto dir = scratch_dir();
    ExperimentSpec spec;
    spec.scenario = write_diamond_scenario(dir);
    spec.kind = ExperimentKind::solve;
    spec.planner.starts = 2;
    spec.output_dir = dir / "solve";
    const auto solved = run_experiment(spec);
    ASSERT_TRUE(std::filesystem::exists(dir / "solve" / "plan.json"));

    spec.kind = ExperimentKind::equilibrium;
    spec.design = dir / "solve" / "plan.json";
    spec.output_dir = dir / "eq";
    const auto eq = run_experiment(spec);
    ASSERT_EQ(eq.front().rows.size(), 1u);
    EXPECT_NEAR(eq.front().rows[0].cost.total(), solved.front().rows[0].cost.total(),
                1e-6 * solved.front().rows[0].cost.total());
    EXPECT_TRUE(std::filesystem::exists(dir / "eq" / "equilibrium_trace.csv"));
}

TEST(Sensitivity, ChargersFallWithServiceRateAndRiseWithEvShare) {
    const auto sc = scenario_from(testing::diamond_network(), {{1, 4, 150.0, 800.0}}, params_with_budget(40));
    const auto mu = sensitivity_mu(sc, {2, 4, 8}, quick_options());
    EXPECT_TRUE(mu.summary.at("chargers_non_increasing").get<bool>());
    const auto alpha = sensitivity_alpha(sc, {0.1, 0.15, 0.2}, quick_options());
    EXPECT_TRUE(alpha.summary.at("chargers_non_decreasing").get<bool>());
    EXPECT_TRUE(alpha.summary.at("chargers_per_percent_alpha").is_number());
}

}  // namespace
}  // namespace evcs
