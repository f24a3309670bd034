// Command-line front end for the planning library.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "evcs/errors.hpp"
#include "evcs/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitNonconvergent = 3;

struct Common {
    std::string scenario;
    std::string out = "results";
    std::uint64_t seed = 1;
    int jobs = 1;
    int starts = 5;
    double tolerance = 1e-10;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--scenario", c.scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
    cmd->add_option("--seed", c.seed, "Seed for the randomised restarts")->capture_default_str();
    cmd->add_option("--jobs", c.jobs, "Concurrent sweep points or failure sets")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--starts", c.starts, "Relaxation starts per EV-side solve")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--tolerance", c.tolerance, "Relative gap tolerance of the equilibrium solver")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
}

/// "3,7,12" -> {3, 7, 12}; an empty string is the empty set.
std::vector<evcs::NodeId> parse_node_list(const std::string& text) {
    std::vector<evcs::NodeId> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty())
            continue;
        std::size_t used = 0;
        const long long v = std::stoll(item, &used);
        if (used != item.size() || v < 0)
            throw evcs::ValidationError("bad node id '" + item + "' in failure set");
        out.push_back(static_cast<evcs::NodeId>(v));
    }
    return out;
}

int exit_code(const std::vector<evcs::Report>& reports) {
    bool infeasible = false, nonconvergent = false;
    for (const auto& r : reports)
        for (const auto& row : r.rows) {
            infeasible = infeasible || row.status == "infeasible";
            nonconvergent = nonconvergent || row.status == "nonconvergent";
        }
    if (nonconvergent)
        return kExitNonconvergent;
    // A sweep with some infeasible points still succeeded; only an entirely infeasible run fails.
    if (infeasible) {
        for (const auto& r : reports)
            for (const auto& row : r.rows)
                if (row.has_plan())
                    return kExitOk;
        return kExitInfeasible;
    }
    return kExitOk;
}

void print_summary(const std::vector<evcs::Report>& reports, const std::string& out) {
    for (const auto& r : reports) {
        fmt::print("{}: {} rows written to {}\n", r.experiment, r.rows.size(), out);
        for (const auto& row : r.rows) {
            if (row.has_plan())
                fmt::print("  {:<10} {}={:<8g} social_cost={:.6f} chargers={:g} [{}]\n", row.method, r.parameter,
                           row.value, row.cost.total(), row.chargers(), row.status);
            else
                fmt::print("  {:<10} {}={:<8g} infeasible: {}\n", row.method, r.parameter, row.value, row.note);
        }
        if (!r.summary.empty())
            fmt::print("  summary: {}\n", r.summary.dump());
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint charging-station placement and pricing under driver equilibrium"};
    app.require_subcommand(1);

    Common common;
    evcs::ExperimentSpec spec;

    auto* solve = app.add_subcommand("solve", "Plan chargers and prices with JO and both baselines");
    add_common(solve, common);

    std::string design;
    auto* equilibrium = app.add_subcommand("equilibrium", "Solve driver equilibrium for a fixed design");
    add_common(equilibrium, common);
    equilibrium->add_option("--design", design, "Design JSON with nodes [{id, chargers, price}]")
        ->required()
        ->check(CLI::ExistingFile);

    std::vector<int> budgets;
    auto* sweep = app.add_subcommand("sweep-budget", "JO, PrO and PlO over a budget grid");
    add_common(sweep, common);
    sweep->add_option("--budgets", budgets, "Increasing charger budgets")->required()->delimiter(',');

    std::string param;
    std::vector<double> values;
    auto* sensitivity = app.add_subcommand("sensitivity", "JO over a service-rate or EV-share grid");
    add_common(sensitivity, common);
    sensitivity->add_option("--param", param, "Swept parameter")->required()->check(CLI::IsMember({"mu", "alpha"}));
    sensitivity->add_option("--values", values, "Increasing parameter values")->required()->delimiter(',');

    std::vector<std::string> failures;
    auto* resilience = app.add_subcommand("resilience", "Fixed against adaptive pricing after station failures");
    add_common(resilience, common);
    resilience->add_option("--fail", failures, "Comma-separated failed node ids; repeat for more sets")
        ->required()
        ->allow_extra_args(false);

    std::size_t batch = 8;
    auto* generalise = app.add_subcommand("generalise", "Candidate-batch loop over all nodes");
    add_common(generalise, common);
    generalise->add_option("--batch", batch, "Candidates introduced per round")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        auto* cmd = app.get_subcommands().front();
        const std::string name = cmd->get_name();
        if (name == "solve") {
            spec.kind = evcs::ExperimentKind::solve;
        } else if (name == "equilibrium") {
            spec.kind = evcs::ExperimentKind::equilibrium;
            spec.design = design;
        } else if (name == "sweep-budget") {
            spec.kind = evcs::ExperimentKind::sweep_budget;
            spec.grid.assign(budgets.begin(), budgets.end());
        } else if (name == "sensitivity") {
            spec.kind = param == "mu" ? evcs::ExperimentKind::sensitivity_mu : evcs::ExperimentKind::sensitivity_alpha;
            spec.grid = values;
        } else if (name == "resilience") {
            spec.kind = evcs::ExperimentKind::resilience;
            for (const auto& f : failures)
                spec.failure_sets.push_back(parse_node_list(f));
        } else {
            spec.kind = evcs::ExperimentKind::generalise;
            spec.batch_size = batch;
        }
        spec.scenario = common.scenario;
        spec.output_dir = common.out;
        spec.seed = common.seed;
        spec.jobs = common.jobs;
        spec.planner.starts = common.starts;
        spec.planner.inner.gap_tolerance = common.tolerance;

        const auto reports = evcs::run_experiment(spec);
        print_summary(reports, common.out);
        return exit_code(reports);
    } catch (const evcs::InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}
