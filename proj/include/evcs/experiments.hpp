#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcs/network.hpp"
#include "evcs/planner.hpp"

namespace evcs {

inline constexpr int kReportSchemaVersion = 1;

enum class ExperimentKind { solve, equilibrium, sweep_budget, sensitivity_mu, sensitivity_alpha, resilience, generalise };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view name);

struct ExperimentSpec {
    std::filesystem::path scenario;
    ExperimentKind kind = ExperimentKind::solve;
    std::vector<double> grid;                       // budgets, mu or alpha values
    std::vector<std::vector<NodeId>> failure_sets;  // resilience only
    std::filesystem::path output_dir;
    std::uint64_t seed = 1;
    int jobs = 1;                 // concurrent sweep points or failure sets
    std::size_t batch_size = 8;   // generalise candidate batch
    std::optional<std::filesystem::path> design;  // equilibrium only
    PlannerSettings planner;
};

/// Grids non-empty and strictly increasing where a sweep needs one; budgets integral.
/// Failure nodes are checked against the network when the experiment runs.
void validate(const ExperimentSpec& spec);

/// One evaluated design. Per-node and per-link data make every row re-checkable.
struct ReportRow {
    std::string method;       // JO, PrO, PlO, fixed, adaptive
    double value = 0.0;       // swept parameter value (budget, mu, alpha, failure-set index, round)
    std::string status = "ok";  // ok, infeasible, nonconvergent, carried
    std::string note;
    SocialCost cost;
    double ev_demand = 0.0;
    double relative_gap = 0.0;
    bool converged = true;
    double runtime_s = 0.0;   // reported in JSON only so CSVs stay reproducible
    Design design;
    FlowState flows;

    bool has_plan() const { return status != "infeasible"; }
    double chargers() const { return design.total_chargers(); }
};

struct Report {
    std::string experiment;  // file stem and chart title
    std::string parameter;   // swept quantity
    std::vector<ReportRow> rows;
    nlohmann::json summary = nlohmann::json::object();
};

struct HarnessOptions {
    PlannerSettings planner;
    int jobs = 1;
};

/// JO, PrO and PlO at each budget, grid ascending. A JO plan that costs more than the one at
/// the previous budget is replaced by that plan (still within the larger budget) and marked
/// "carried". The summary holds the saturation budget and the baseline gaps there.
Report sweep_budget(const Scenario& scenario, const std::vector<int>& budgets, const HarnessOptions& options = {});

/// JO at each service rate; summary reports whether total chargers fall as mu grows.
Report sensitivity_mu(const Scenario& scenario, const std::vector<double>& mus, const HarnessOptions& options = {});

/// JO at each EV share with per-pair totals held; summary reports chargers per percentage point.
Report sensitivity_alpha(const Scenario& scenario, const std::vector<double>& alphas,
                         const HarnessOptions& options = {});

/// For each failure set the JO plan loses the chargers at those nodes. "fixed" keeps the
/// surviving prices and lets EV drivers re-route; "adaptive" re-prices the survivors starting
/// from those prices. NCD routes stay at the plan's equilibrium.
Report resilience(const Scenario& scenario, const std::vector<std::vector<NodeId>>& failure_sets,
                  const HarnessOptions& options = {});

struct GeneraliseResult {
    PlanResult plan;                          // best feasible plan over all rounds
    std::vector<std::vector<NodeId>> rounds;  // candidate set of each round
    std::vector<int> introduced;              // per node index: times added as a new candidate
    Report report;
};

/// Candidate-batch loop: start with the `batch` highest-scoring nodes, solve, keep nodes that
/// received chargers (all of them after an infeasible round), add the next `batch` unseen nodes, until every scenario candidate has
/// been tried. Throws InfeasibleError when no round yields a feasible plan.
GeneraliseResult generalise(const Scenario& scenario, std::size_t batch, const HarnessOptions& options = {});

/// Scenario candidate ids by descending EV-demand-weighted count of free-flow shortest paths
/// through them, ties by ascending id.
std::vector<NodeId> betweenness_order(const Scenario& scenario);

/// Smallest value after which the series changes by less than `tolerance` relative to its
/// value there, for every later point. Empty for fewer than two points.
std::optional<double> saturation_point(const std::vector<double>& values, const std::vector<double>& costs,
                                       double tolerance = 1e-3);

ReportRow row_from_plan(const PlanResult& plan, const Problem& problem, std::string method, double value);

/// Writes <experiment>.csv, <experiment>_nodes.csv, <experiment>_links.csv, <experiment>.json
/// and <experiment>.svg into `dir`, creating it when missing. Throws std::runtime_error when
/// the directory cannot be written.
void emit_reports(const Report& report, const Network& network, const std::filesystem::path& dir);

/// Column layout of the main CSV.
inline constexpr const char* kReportCsvHeader =
    "method,parameter,value,status,social_cost,ncd_travel,ev_travel,queue,charging,ev_cost,cost_per_ev,"
    "chargers,open_stations,relative_gap,converged";

/// Loads the scenario, runs the experiment and writes its reports. Returns the reports written.
std::vector<Report> run_experiment(const ExperimentSpec& spec);

}  // namespace evcs
