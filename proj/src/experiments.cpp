#include "evcs/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/os.h>

#include "evcs/errors.hpp"
#include "parallel.hpp"

namespace evcs {

namespace {

constexpr std::pair<ExperimentKind, std::string_view> kKindNames[] = {
    {ExperimentKind::solve, "solve"},
    {ExperimentKind::equilibrium, "equilibrium"},
    {ExperimentKind::sweep_budget, "sweep-budget"},
    {ExperimentKind::sensitivity_mu, "sensitivity-mu"},
    {ExperimentKind::sensitivity_alpha, "sensitivity-alpha"},
    {ExperimentKind::resilience, "resilience"},
    {ExperimentKind::generalise, "generalise"},
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ReportRow infeasible_row(std::string method, double value, const std::string& why, std::size_t nodes) {
    ReportRow r;
    r.method = std::move(method);
    r.value = value;
    r.status = "infeasible";
    r.note = why;
    r.converged = false;
    r.design = Design::closed(nodes);
    return r;
}

/// Runs `make` and turns an InfeasibleError into an infeasible row.
template <class Fn>
ReportRow guarded(const std::string& method, double value, std::size_t nodes, Fn make) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
        auto row = make();
        row.runtime_s = seconds_since(t0);
        return row;
    } catch (const InfeasibleError& e) {
        auto row = infeasible_row(method, value, e.what(), nodes);
        row.runtime_s = seconds_since(t0);
        return row;
    }
}

/// Collects job results in order, rethrowing the first failure.
template <class R>
std::vector<R> collect(std::pair<std::vector<std::optional<R>>, std::vector<std::exception_ptr>> done) {
    std::vector<R> out;
    for (std::size_t k = 0; k < done.first.size(); ++k) {
        if (done.second[k])
            std::rethrow_exception(done.second[k]);
        out.push_back(std::move(*done.first[k]));
    }
    return out;
}

bool strictly_increasing(const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), [](double a, double b) { return !(a < b); }) == v.end();
}

std::size_t open_count(const Design& d) {
    return static_cast<std::size_t>(std::count_if(d.chargers.begin(), d.chargers.end(), [](double x) { return x > 0.0; }));
}

double least_squares_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    if (x.size() < 2)
        return std::nan("");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    const double den = n * sxx - sx * sx;
    return den == 0.0 ? std::nan("") : (n * sxy - sx * sy) / den;
}

Problem with_params(const Problem& base, const GlobalParams& params) {
    Problem p = base;
    p.params = params;
    validate(p.params);
    return p;
}

}  // namespace

std::string_view to_string(ExperimentKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind)
            return name;
    return "unknown";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name)
            return k;
    throw ValidationError("unknown experiment kind '" + std::string(name) + "'");
}

void validate(const ExperimentSpec& spec) {
    validate(spec.planner);
    if (spec.jobs < 1)
        throw ValidationError("jobs must be >= 1");
    switch (spec.kind) {
    case ExperimentKind::sweep_budget:
    case ExperimentKind::sensitivity_mu:
    case ExperimentKind::sensitivity_alpha:
        if (spec.grid.empty())
            throw ValidationError("sweep grid must not be empty");
        if (!strictly_increasing(spec.grid))
            throw ValidationError("sweep grid must be sorted in increasing order without repeats");
        break;
    case ExperimentKind::resilience:
        if (spec.failure_sets.empty())
            throw ValidationError("resilience needs at least one failure set");
        break;
    case ExperimentKind::generalise:
        if (spec.batch_size < 1)
            throw ValidationError("generalise batch size must be >= 1");
        break;
    case ExperimentKind::equilibrium:
        if (!spec.design)
            throw ValidationError("equilibrium needs a design file");
        break;
    case ExperimentKind::solve:
        break;
    }
    if (spec.kind == ExperimentKind::sweep_budget)
        for (double b : spec.grid)
            if (b < 0.0 || b != std::floor(b))
                throw ValidationError("budgets must be non-negative integers");
    if (spec.kind == ExperimentKind::sensitivity_mu)
        for (double m : spec.grid)
            if (!(m > 0.0))
                throw ValidationError("service rates must be > 0");
    if (spec.kind == ExperimentKind::sensitivity_alpha)
        for (double a : spec.grid)
            if (!(a >= 0.0 && a <= 1.0))
                throw ValidationError("EV shares must lie in [0, 1]");
}

ReportRow row_from_plan(const PlanResult& plan, const Problem& problem, std::string method, double value) {
    ReportRow r;
    r.method = std::move(method);
    r.value = value;
    r.status = plan.converged ? "ok" : "nonconvergent";
    r.note = plan.provenance;
    r.cost = plan.cost;
    r.ev_demand = problem.total_ev_demand();
    r.relative_gap = plan.equilibrium.relative_gap;
    r.converged = plan.converged;
    r.design = plan.design;
    r.flows = plan.equilibrium.flows;
    return r;
}

std::optional<double> saturation_point(const std::vector<double>& values, const std::vector<double>& costs,
                                       double tolerance) {
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        bool flat = true;
        for (std::size_t j = i + 1; j < values.size() && flat; ++j)
            flat = std::abs(costs[j] - costs[i]) < tolerance * std::abs(costs[i]);
        if (flat)
            return values[i];
    }
    return std::nullopt;
}

Report sweep_budget(const Scenario& scenario, const std::vector<int>& budgets, const HarnessOptions& options) {
    std::vector<double> grid(budgets.begin(), budgets.end());
    if (grid.empty() || !strictly_increasing(grid))
        throw ValidationError("budget grid must be non-empty and increasing");
    const auto base = make_problem(scenario);
    const auto n = base.catalog->node_count();
    static const char* kMethods[] = {"JO", "PrO", "PlO"};

    auto done = detail::run_jobs(3 * budgets.size(), options.jobs, [&](std::size_t k) {
        const int budget = budgets[k / 3];
        const std::string method = kMethods[k % 3];
        return guarded(method, budget, n, [&] {
            auto params = base.params;
            params.budget = budget;
            const auto pb = with_params(base, params);
            const auto plan = method == "JO" ? jppo_de(pb, options.planner)
                              : method == "PrO" ? baseline_pro(pb, options.planner)
                                                : baseline_plo(pb, options.planner);
            return row_from_plan(plan, pb, method, budget);
        });
    });
    auto rows = collect(std::move(done));

    // More budget never forces a worse JO plan: the previous one still fits.
    const ReportRow* previous = nullptr;
    for (std::size_t b = 0; b < budgets.size(); ++b) {
        auto& row = rows[3 * b];
        if (!row.has_plan())
            continue;
        if (previous && row.cost.total() > previous->cost.total()) {
            const double runtime = row.runtime_s;
            row = *previous;
            row.value = budgets[b];
            row.status = "carried";
            row.note = fmt::format("plan from budget {}", previous->value);
            row.runtime_s = runtime;
        }
        previous = &row;
    }

    Report report{"sweep_budget", "budget", std::move(rows), nlohmann::json::object()};
    std::vector<double> values, costs;
    for (const auto& r : report.rows)
        if (r.method == "JO" && r.has_plan()) {
            values.push_back(r.value);
            costs.push_back(r.cost.total());
        }
    bool monotone = true;
    for (std::size_t i = 1; i < costs.size(); ++i)
        monotone = monotone && costs[i] <= costs[i - 1] * (1.0 + 1e-6);
    auto& s = report.summary;
    s["jo_monotone"] = monotone;
    s["carried_budgets"] = nlohmann::json::array();
    for (const auto& r : report.rows)
        if (r.status == "carried")
            s["carried_budgets"].push_back(r.value);
    const auto sat = saturation_point(values, costs);
    s["saturation_budget"] = sat ? nlohmann::json(*sat) : nlohmann::json(nullptr);
    if (sat) {
        const auto at = [&](const std::string& m) -> const ReportRow* {
            for (const auto& r : report.rows)
                if (r.method == m && r.value == *sat && r.has_plan())
                    return &r;
            return nullptr;
        };
        const auto* jo = at("JO");
        for (const char* m : {"PrO", "PlO"}) {
            const auto* other = at(m);
            if (jo && other) {
                s["gap_at_saturation"][m] = {
                    {"social_cost", (other->cost.total() - jo->cost.total()) / other->cost.total()},
                    {"ev_cost", (other->cost.ev_total() - jo->cost.ev_total()) / other->cost.ev_total()}};
            }
        }
    }
    return report;
}

namespace {

Report sensitivity(const Scenario& scenario, const std::vector<double>& grid, const HarnessOptions& options,
                   bool mu) {
    if (grid.empty() || !strictly_increasing(grid))
        throw ValidationError("sensitivity grid must be non-empty and increasing");
    const auto base = make_problem(scenario);
    const auto n = base.catalog->node_count();
    auto done = detail::run_jobs(grid.size(), options.jobs, [&](std::size_t k) {
        return guarded("JO", grid[k], n, [&] {
            Problem pb = base;
            if (mu) {
                auto params = base.params;
                params.service_rate = grid[k];
                pb = with_params(base, params);
            } else {
                pb = with_demands(base, with_penetration(base.demands, grid[k]));
            }
            return row_from_plan(jppo_de(pb, options.planner), pb, "JO", grid[k]);
        });
    });
    Report report{mu ? "sensitivity_mu" : "sensitivity_alpha", mu ? "mu" : "alpha", collect(std::move(done)),
                  nlohmann::json::object()};
    std::vector<double> xs, chargers;
    for (const auto& r : report.rows)
        if (r.has_plan()) {
            xs.push_back(mu ? r.value : 100.0 * r.value);
            chargers.push_back(r.chargers());
        }
    bool ordered = true;
    for (std::size_t i = 1; i < chargers.size(); ++i)
        ordered = ordered && (mu ? chargers[i] <= chargers[i - 1] : chargers[i] >= chargers[i - 1]);
    auto& s = report.summary;
    s[mu ? "chargers_non_increasing" : "chargers_non_decreasing"] = ordered;
    s["chargers"] = chargers;
    if (!mu) {
        const double slope = least_squares_slope(xs, chargers);
        s["chargers_per_percent_alpha"] = std::isfinite(slope) ? nlohmann::json(slope) : nlohmann::json(nullptr);
    }
    return report;
}

}  // namespace

Report sensitivity_mu(const Scenario& scenario, const std::vector<double>& mus, const HarnessOptions& options) {
    return sensitivity(scenario, mus, options, true);
}

Report sensitivity_alpha(const Scenario& scenario, const std::vector<double>& alphas, const HarnessOptions& options) {
    return sensitivity(scenario, alphas, options, false);
}

Report resilience(const Scenario& scenario, const std::vector<std::vector<NodeId>>& failure_sets,
                  const HarnessOptions& options) {
    const auto pb = make_problem(scenario);
    const auto& net = *pb.network;
    for (const auto& set : failure_sets)
        for (auto id : set)
            if (!net.find(id))
                throw ValidationError("failure set names unknown node " + std::to_string(id));
    const auto t0 = std::chrono::steady_clock::now();
    const auto base = jppo_de(pb, options.planner);
    auto base_row = row_from_plan(base, pb, "base", 0.0);
    base_row.runtime_s = seconds_since(t0);
    const auto n = net.node_count();

    auto done = detail::run_jobs(failure_sets.size(), options.jobs, [&](std::size_t k) {
        const double value = static_cast<double>(k + 1);
        const auto& failed = failure_sets[k];
        if (failed.empty()) {
            auto fixed = base_row, adaptive = base_row;
            fixed.method = "fixed";
            adaptive.method = "adaptive";
            fixed.value = adaptive.value = value;
            return std::vector<ReportRow>{fixed, adaptive};
        }
        Design broken = base.design;
        for (auto id : failed) {
            broken.chargers[net.index_of(id)] = 0.0;
            broken.prices[net.index_of(id)] = 0.0;
        }
        auto fixed = guarded("fixed", value, n, [&] {
            SolveOptions opts{Players::ev, &base.equilibrium.profile};
            const auto eq = solve_equilibrium(pb, broken, options.planner.inner, opts);
            return row_from_plan(evaluate_plan(pb, broken, eq, "fixed"), pb, "fixed", value);
        });
        auto adaptive = guarded("adaptive", value, n, [&] {
            const auto s = reprice_from(pb, base.equilibrium.profile, broken, options.planner);
            return row_from_plan(evaluate_plan(pb, s.design, s.equilibrium, "adaptive"), pb, "adaptive", value);
        });
        return std::vector<ReportRow>{fixed, adaptive};
    });
    Report report{"resilience", "failure_set", {base_row}, nlohmann::json::object()};
    auto& s = report.summary;
    s["base_social_cost"] = base.social_cost();
    s["sets"] = nlohmann::json::array();
    double max_saving = 0.0;
    const auto pairs = collect(std::move(done));
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto& fixed = pairs[k][0];
        const auto& adaptive = pairs[k][1];
        nlohmann::json entry{{"index", k + 1}, {"failed", failure_sets[k]}};
        if (fixed.has_plan() && adaptive.has_plan()) {
            const double saving = (fixed.cost.total() - adaptive.cost.total()) / fixed.cost.total();
            entry["fixed"] = fixed.cost.total();
            entry["adaptive"] = adaptive.cost.total();
            entry["saving"] = saving;
            max_saving = std::max(max_saving, saving);
        } else {
            entry["status"] = "infeasible";
        }
        s["sets"].push_back(entry);
        report.rows.push_back(fixed);
        report.rows.push_back(adaptive);
    }
    s["max_saving"] = max_saving;
    return report;
}

std::vector<NodeId> betweenness_order(const Scenario& scenario) {
    const auto& net = scenario.network;
    std::vector<double> score(net.node_count(), 0.0);
    for (const auto& d : scenario.demands) {
        const double weight = d.ev_flow > 0.0 ? d.ev_flow : d.total();
        const auto routes = enumerate_routes(net, d.origin, d.destination, 1);
        for (auto i : routes.front().nodes)
            score[i] += weight;
    }
    std::vector<NodeId> out = scenario.candidates;
    std::sort(out.begin(), out.end());
    std::stable_sort(out.begin(), out.end(),
                     [&](NodeId a, NodeId b) { return score[net.index_of(a)] > score[net.index_of(b)]; });
    return out;
}

GeneraliseResult generalise(const Scenario& scenario, std::size_t batch, const HarnessOptions& options) {
    if (batch < 1)
        throw ValidationError("generalise batch size must be >= 1");
    const auto order = betweenness_order(scenario);
    const auto& net = scenario.network;
    GeneraliseResult out;
    out.introduced.assign(net.node_count(), 0);
    out.report = Report{"generalise", "round", {}, nlohmann::json::object()};

    std::size_t next = 0;
    std::vector<NodeId> candidates;
    auto take = [&] {
        for (std::size_t k = 0; k < batch && next < order.size(); ++k, ++next) {
            candidates.push_back(order[next]);
            ++out.introduced[net.index_of(order[next])];
        }
        std::sort(candidates.begin(), candidates.end());
    };
    take();
    std::optional<PlanResult> best;
    for (int round = 1;; ++round) {
        out.rounds.push_back(candidates);
        const auto pb = make_problem(scenario, candidates);
        std::vector<NodeId> retained;
        auto row = guarded("JO", round, net.node_count(), [&] {
            const auto plan = jppo_de(pb, options.planner);
            for (auto id : candidates)
                if (plan.design.chargers[net.index_of(id)] > 0.0)
                    retained.push_back(id);
            if (plan.constraints.feasible() && (!best || plan.social_cost() < best->social_cost()))
                best = plan;
            return row_from_plan(plan, pb, "JO", round);
        });
        // An infeasible round says nothing about which candidates are useful, so all stay.
        if (!row.has_plan())
            retained = candidates;
        row.note = fmt::format("candidates {}", fmt::join(candidates, " "));
        out.report.rows.push_back(std::move(row));
        if (next >= order.size())
            break;
        candidates = retained;
        take();
    }
    if (!best)
        throw InfeasibleError("no candidate round produced a feasible plan");
    out.plan = *best;
    auto& s = out.report.summary;
    s["rounds"] = out.rounds.size();
    s["batch_size"] = batch;
    s["best_social_cost"] = best->social_cost();
    s["every_node_once"] = std::all_of(order.begin(), order.end(),
                                       [&](NodeId id) { return out.introduced[net.index_of(id)] == 1; });
    return out;
}

namespace {

std::string num(double v) { return std::isfinite(v) ? fmt::format("{:.17g}", v) : std::string{}; }

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
}

std::string chart_svg(const Report& report) {
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    std::vector<std::string> order;
    for (const auto& r : report.rows) {
        if (!r.has_plan() || r.method == "base")
            continue;
        if (!series.count(r.method))
            order.push_back(r.method);
        series[r.method].emplace_back(r.value, r.cost.total());
    }
    constexpr double W = 640, H = 400, L = 80, R = 130, T = 40, B = 50;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool first = true;
    for (const auto& [m, pts] : series)
        for (auto [x, y] : pts) {
            if (first) {
                x0 = x1 = x;
                y0 = y1 = y;
                first = false;
            }
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x1 == x0) {
        x0 -= 1;
        x1 += 1;
    }
    if (y1 == y0) {
        y0 -= 1;
        y1 += 1;
    }
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    static const char* kColours[] = {"#1b6ca8", "#d1495b", "#66a182", "#edae49", "#6c4f77"};
    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        "<text x=\"{2}\" y=\"24\" font-size=\"15\">{3}</text>\n",
        W, H, L, report.experiment);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", L, H - B, W - R);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", L, T, H - B);
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.4g}</text>\n", px(xv), H - B + 18,
                           xv);
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.6g}</text>\n", L - 6, py(yv) + 4, yv);
        svg += fmt::format("<line x1=\"{0:.1f}\" y1=\"{1:.1f}\" x2=\"{2:.1f}\" y2=\"{1:.1f}\" stroke=\"#ddd\"/>\n", L,
                           py(yv), W - R);
    }
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{}</text>\n", (L + W - R) / 2, H - 12,
                       report.parameter);
    svg += fmt::format("<text x=\"16\" y=\"{:.1f}\" transform=\"rotate(-90 16 {:.1f})\" text-anchor=\"middle\">"
                       "social cost</text>\n",
                       (T + H - B) / 2, (T + H - B) / 2);
    for (std::size_t s = 0; s < order.size(); ++s) {
        const auto& pts = series[order[s]];
        const char* colour = kColours[s % std::size(kColours)];
        std::string path;
        for (auto [x, y] : pts)
            path += fmt::format("{:.2f},{:.2f} ", px(x), py(y));
        svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", colour, path);
        for (auto [x, y] : pts)
            svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3\" fill=\"{}\"/>\n", px(x), py(y), colour);
        const double ly = T + 20.0 * static_cast<double>(s);
        svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                           W - R + 15, ly, W - R + 40, colour);
        svg += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", W - R + 46, ly + 4, order[s]);
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace

void emit_reports(const Report& report, const Network& network, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());

    std::string csv = std::string(kReportCsvHeader) + "\n";
    std::string nodes = "method,value,node,chargers,price,arrivals\n";
    std::string links = "method,value,link,tail,head,ncd_flow,ev_flow\n";
    auto rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        const bool plan = r.has_plan();
        const double nan = std::nan("");
        const auto& c = r.cost;
        csv += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.method, report.parameter, num(r.value),
                           r.status, plan ? num(c.total()) : "", plan ? num(c.ncd_travel) : "",
                           plan ? num(c.ev_travel) : "", plan ? num(c.queue) : "", plan ? num(c.charging) : "",
                           plan ? num(c.ev_total()) : "",
                           plan && r.ev_demand > 0.0 ? num(c.ev_total() / r.ev_demand) : num(nan),
                           plan ? num(r.chargers()) : "", plan ? std::to_string(open_count(r.design)) : "",
                           plan ? num(r.relative_gap) : "", r.converged ? 1 : 0);
        if (plan) {
            for (std::size_t i = 0; i < network.node_count(); ++i)
                nodes += fmt::format("{},{},{},{},{},{}\n", r.method, num(r.value), network.node(i).id,
                                     num(r.design.chargers[i]), num(r.design.prices[i]), num(r.flows.arrivals[i]));
            for (std::size_t l = 0; l < network.link_count(); ++l) {
                const auto& link = network.link(l);
                links += fmt::format("{},{},{},{},{},{},{}\n", r.method, num(r.value), link.id, link.tail, link.head,
                                     num(r.flows.ncd_link[l]), num(r.flows.ev_link[l]));
            }
        }
        nlohmann::json j{{"method", r.method},     {"value", r.value},          {"status", r.status},
                         {"note", r.note},         {"converged", r.converged}, {"runtime_s", r.runtime_s}};
        if (plan) {
            j["social_cost"] = {{"total", c.total()}, {"ncd_travel", c.ncd_travel}, {"ev_travel", c.ev_travel},
                                {"queue", c.queue},   {"charging", c.charging},     {"ev_total", c.ev_total()}};
            j["chargers"] = r.chargers();
            j["relative_gap"] = r.relative_gap;
        }
        rows.push_back(std::move(j));
    }
    nlohmann::json summary{{"schema_version", kReportSchemaVersion},
                           {"experiment", report.experiment},
                           {"parameter", report.parameter},
                           {"csv_columns", kReportCsvHeader},
                           {"summary", report.summary},
                           {"rows", rows}};
    const auto stem = dir / report.experiment;
    write_file(stem.string() + ".csv", csv);
    write_file(stem.string() + "_nodes.csv", nodes);
    write_file(stem.string() + "_links.csv", links);
    write_file(stem.string() + ".json", summary.dump(2) + "\n");
    write_file(stem.string() + ".svg", chart_svg(report));
}

namespace {

Design read_design(const std::filesystem::path& path, const Network& net) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open design file " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    if (!doc.contains("nodes") || !doc.at("nodes").is_array())
        throw ParseError(path.string() + ": missing array 'nodes' of {id, chargers, price}");
    auto d = Design::closed(net.node_count());
    for (const auto& n : doc.at("nodes")) {
        const auto idx = net.find(n.at("id").get<NodeId>());
        if (!idx)
            throw ValidationError("design names unknown node " + std::to_string(n.at("id").get<NodeId>()));
        d.chargers[*idx] = n.value("chargers", 0.0);
        d.prices[*idx] = n.value("price", 0.0);
        if (d.chargers[*idx] < 0.0 || d.prices[*idx] < 0.0)
            throw ValidationError("design entries must be non-negative");
    }
    return d;
}

}  // namespace

std::vector<Report> run_experiment(const ExperimentSpec& spec) {
    validate(spec);
    auto scenario = load_scenario(spec.scenario);
    HarnessOptions options{spec.planner, spec.jobs};
    options.planner.seed = spec.seed;
    std::vector<Report> reports;

    switch (spec.kind) {
    case ExperimentKind::solve: {
        const auto pb = make_problem(scenario);
        Report report{"solve", "budget", {}, nlohmann::json::object()};
        const auto jo = jppo_de(pb, options.planner);
        report.rows.push_back(row_from_plan(jo, pb, "JO", pb.params.budget));
        report.rows.push_back(guarded("PrO", pb.params.budget, pb.catalog->node_count(), [&] {
            return row_from_plan(baseline_pro(pb, options.planner), pb, "PrO", pb.params.budget);
        }));
        report.rows.push_back(guarded("PlO", pb.params.budget, pb.catalog->node_count(), [&] {
            return row_from_plan(baseline_plo(pb, options.planner), pb, "PlO", pb.params.budget);
        }));
        std::filesystem::create_directories(spec.output_dir);
        write_file(spec.output_dir / "plan.json", plan_to_json(jo, pb).dump(2) + "\n");
        reports.push_back(std::move(report));
        break;
    }
    case ExperimentKind::equilibrium: {
        const auto pb = make_problem(scenario);
        const auto design = read_design(*spec.design, scenario.network);
        const auto eq = solve_equilibrium(pb, design, options.planner.inner);
        Report report{"equilibrium", "design", {}, nlohmann::json::object()};
        report.rows.push_back(row_from_plan(evaluate_plan(pb, design, eq, "equilibrium"), pb, "equilibrium", 0.0));
        report.summary["iterations"] = eq.iterations;
        report.summary["feasible"] = check_constraints(design, eq.flows, pb).feasible();
        std::filesystem::create_directories(spec.output_dir);
        std::ofstream trace(spec.output_dir / "equilibrium_trace.csv", std::ios::binary);
        write_trace_csv(trace, eq);
        reports.push_back(std::move(report));
        break;
    }
    case ExperimentKind::sweep_budget: {
        std::vector<int> budgets;
        for (double b : spec.grid)
            budgets.push_back(static_cast<int>(b));
        reports.push_back(sweep_budget(scenario, budgets, options));
        break;
    }
    case ExperimentKind::sensitivity_mu:
        reports.push_back(sensitivity_mu(scenario, spec.grid, options));
        break;
    case ExperimentKind::sensitivity_alpha:
        reports.push_back(sensitivity_alpha(scenario, spec.grid, options));
        break;
    case ExperimentKind::resilience:
        reports.push_back(resilience(scenario, spec.failure_sets, options));
        break;
    case ExperimentKind::generalise: {
        auto result = generalise(scenario, spec.batch_size, options);
        std::filesystem::create_directories(spec.output_dir);
        write_file(spec.output_dir / "generalise_plan.json",
                   plan_to_json(result.plan, make_problem(scenario)).dump(2) + "\n");
        reports.push_back(std::move(result.report));
        break;
    }
    }
    for (const auto& r : reports)
        emit_reports(r, scenario.network, spec.output_dir);
    return reports;
}

}  // namespace evcs
