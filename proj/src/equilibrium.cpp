#include "evcs/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "evcs/errors.hpp"

namespace evcs {

std::string_view to_string(StepRule rule) {
    switch (rule) {
    case StepRule::frank_wolfe:
        return "frank-wolfe";
    case StepRule::pairwise:
        return "pairwise";
    }
    return "unknown";
}

StepRule parse_step_rule(std::string_view name) {
    if (name == "frank-wolfe")
        return StepRule::frank_wolfe;
    if (name == "pairwise")
        return StepRule::pairwise;
    throw ValidationError("unknown line-search rule '" + std::string(name) + "'");
}

void validate(const SolverSettings& s) {
    if (!(s.gap_tolerance > 0.0))
        throw ValidationError("gap tolerance must be > 0");
    if (s.max_iterations < 1)
        throw ValidationError("max iterations must be >= 1");
}

double potential(const FlowState& flows, const Design& design, const Problem& problem) {
    const auto& net = *problem.network;
    const double lambda = problem.params.time_value;
    const double mu = problem.params.service_rate;
    double phi = 0.0;
    for (std::size_t l = 0; l < net.link_count(); ++l) {
        const auto& link = net.link(l);
        const double v = flows.link_total(l);
        phi += lambda * link.distance * v * v / (2.0 * link.capacity);
    }
    for (std::size_t i = 0; i < flows.arrivals.size(); ++i) {
        const double a = flows.arrivals[i];
        if (a == 0.0)
            continue;
        if (!(design.chargers[i] > 0.0))
            return kUnusable;
        phi += lambda * a * a / (2.0 * mu * design.chargers[i]) + design.prices[i] * a;
    }
    return phi;
}

double potential(const StrategyProfile& profile, const Design& design, const Problem& problem) {
    return potential(aggregate_flows(profile, problem), design, problem);
}

StrategyProfile potential_gradient(const StrategyProfile& profile, const Design& design, const Problem& problem) {
    const auto flows = aggregate_flows(profile, problem);
    const auto& cat = *problem.catalog;
    StrategyProfile g = profile;
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        const auto& d = problem.demands[od];
        const auto paths = cat.paths_of(od);
        for (std::size_t k = 0; k < paths.size(); ++k)
            g.ev[od][k] = d.ev_flow * ev_path_cost(paths[k], problem, flows, design);
        const auto routes = cat.routes_of(od);
        for (std::size_t k = 0; k < routes.size(); ++k)
            g.ncd[od][k] = d.ncd_flow * ncd_route_cost(routes[k], problem, flows);
    }
    return g;
}

double relative_gap(const StrategyProfile& profile, const FlowState& flows, const Design& design,
                    const Problem& problem, Players players) {
    const auto& cat = *problem.catalog;
    double excess = 0.0, cost = 0.0;
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        const auto& d = problem.demands[od];
        if (players != Players::ncd && d.ev_flow > 0.0) {
            const auto paths = cat.paths_of(od);
            double best = kUnusable, expected = 0.0;
            for (std::size_t k = 0; k < paths.size(); ++k) {
                const double c = ev_path_cost(paths[k], problem, flows, design);
                best = std::min(best, c);
                if (profile.ev[od][k] > 0.0)
                    expected += profile.ev[od][k] * c;
            }
            excess += d.ev_flow * (expected - best);
            cost += d.ev_flow * expected;
        }
        if (players != Players::ev && d.ncd_flow > 0.0) {
            const auto routes = cat.routes_of(od);
            double best = kUnusable, expected = 0.0;
            for (std::size_t k = 0; k < routes.size(); ++k) {
                const double c = ncd_route_cost(routes[k], problem, flows);
                best = std::min(best, c);
                expected += profile.ncd[od][k] * c;
            }
            excess += d.ncd_flow * (expected - best);
            cost += d.ncd_flow * expected;
        }
    }
    if (std::isnan(excess) || excess == kUnusable)
        return kUnusable;
    return cost > 0.0 ? std::max(0.0, excess / cost) : 0.0;
}

StrategyProfile uniform_profile(const Problem& problem, const Design& design) {
    const auto& cat = *problem.catalog;
    StrategyProfile q;
    q.ev.resize(cat.od_count());
    q.ncd.resize(cat.od_count());
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        const auto routes = cat.routes_of(od);
        q.ncd[od].assign(routes.size(), routes.empty() ? 0.0 : 1.0 / static_cast<double>(routes.size()));
        const auto paths = cat.paths_of(od);
        std::size_t open = 0;
        for (auto p : paths)
            open += design.is_open(cat.path(p).charge_node) ? 1 : 0;
        q.ev[od].assign(paths.size(), 0.0);
        if (open == 0) {
            if (problem.demands[od].ev_flow > 0.0)
                throw InfeasibleError("O-D pair " + std::to_string(problem.demands[od].origin) + "->" +
                                      std::to_string(problem.demands[od].destination) +
                                      " has EV demand but no open charging station on any route");
            if (!paths.empty())
                std::fill(q.ev[od].begin(), q.ev[od].end(), 1.0 / static_cast<double>(paths.size()));
            continue;
        }
        for (std::size_t k = 0; k < paths.size(); ++k)
            if (design.is_open(cat.path(paths[k]).charge_node))
                q.ev[od][k] = 1.0 / static_cast<double>(open);
    }
    return q;
}

namespace {

/// Path-flow state of the solver. Flows are absolute (veh/h); link volumes and station
/// arrivals are kept in sync incrementally.
class Assignment {
public:
    Assignment(const Problem& problem, const Design& design, const StrategyProfile& start)
        : pb_(problem), cat_(*problem.catalog), design_(design) {
        const auto& net = *problem.network;
        const double lambda = problem.params.time_value;
        weight_.resize(net.link_count());
        for (std::size_t l = 0; l < net.link_count(); ++l)
            weight_[l] = lambda * net.link(l).distance / net.link(l).capacity;
        station_.assign(cat_.node_count(), kUnusable);
        for (std::size_t i = 0; i < cat_.node_count(); ++i)
            if (design.is_open(i))
                station_[i] = lambda / (problem.params.service_rate * design.chargers[i]);
        ncd_.assign(cat_.routes().size(), 0.0);
        ev_.assign(cat_.paths().size(), 0.0);
        for (std::size_t od = 0; od < cat_.od_count(); ++od) {
            const auto& d = problem.demands[od];
            const auto routes = cat_.routes_of(od);
            for (std::size_t k = 0; k < routes.size(); ++k)
                ncd_[routes[k]] = d.ncd_flow * start.ncd[od][k];
            const auto paths = cat_.paths_of(od);
            for (std::size_t k = 0; k < paths.size(); ++k)
                ev_[paths[k]] = d.ev_flow * start.ev[od][k];
        }
        mark_.assign(net.link_count(), 0);
        rebuild();
    }

    void rebuild() {
        volume_.assign(cat_.link_count(), 0.0);
        arrivals_.assign(cat_.node_count(), 0.0);
        for (std::size_t r = 0; r < ncd_.size(); ++r)
            if (ncd_[r] != 0.0)
                for (auto l : cat_.route(r).links)
                    volume_[l] += ncd_[r];
        for (std::size_t p = 0; p < ev_.size(); ++p)
            if (ev_[p] != 0.0) {
                for (auto l : cat_.route_of_path(p).links)
                    volume_[l] += ev_[p];
                arrivals_[cat_.path(p).charge_node] += ev_[p];
            }
    }

    double route_cost(std::size_t r) const {
        double c = 0.0;
        for (auto l : cat_.route(r).links)
            c += weight_[l] * volume_[l];
        return c;
    }

    double station_cost(std::size_t node) const {
        if (station_[node] == kUnusable)
            return kUnusable;
        return station_[node] * arrivals_[node] + design_.prices[node];
    }

    double ev_cost(std::size_t p) const {
        const auto& path = cat_.path(p);
        const double s = station_cost(path.charge_node);
        return s == kUnusable ? kUnusable : route_cost(path.route) + s;
    }

    /// Curvature of the potential when one unit moves between two routes (NCD) or two
    /// extended paths (EV).
    double exchange_curvature(std::size_t route_a, std::size_t route_b) {
        if (route_a == route_b)
            return 0.0;
        double c = 0.0;
        const auto& la = cat_.route(route_a).links;
        const auto& lb = cat_.route(route_b).links;
        for (auto l : la)
            mark_[l] += 1;
        for (auto l : lb)
            mark_[l] += 2;
        for (auto l : la)
            if (mark_[l] == 1)
                c += weight_[l];
        for (auto l : lb)
            if (mark_[l] == 2)
                c += weight_[l];
        for (auto l : la)
            mark_[l] = 0;
        for (auto l : lb)
            mark_[l] = 0;
        return c;
    }

    void move_ncd(std::size_t from, std::size_t to, double amount) {
        ncd_[from] -= amount;
        ncd_[to] += amount;
        for (auto l : cat_.route(from).links)
            volume_[l] -= amount;
        for (auto l : cat_.route(to).links)
            volume_[l] += amount;
    }

    void move_ev(std::size_t from, std::size_t to, double amount) {
        ev_[from] -= amount;
        ev_[to] += amount;
        for (auto l : cat_.route_of_path(from).links)
            volume_[l] -= amount;
        for (auto l : cat_.route_of_path(to).links)
            volume_[l] += amount;
        arrivals_[cat_.path(from).charge_node] -= amount;
        arrivals_[cat_.path(to).charge_node] += amount;
    }

    double potential() const {
        double phi = 0.0;
        for (std::size_t l = 0; l < volume_.size(); ++l)
            phi += 0.5 * weight_[l] * volume_[l] * volume_[l];
        for (std::size_t i = 0; i < arrivals_.size(); ++i) {
            if (arrivals_[i] == 0.0)
                continue;
            if (station_[i] == kUnusable)
                return kUnusable;
            phi += 0.5 * station_[i] * arrivals_[i] * arrivals_[i] + design_.prices[i] * arrivals_[i];
        }
        return phi;
    }

    StrategyProfile profile(const StrategyProfile& fallback) const {
        StrategyProfile q = fallback;
        for (std::size_t od = 0; od < cat_.od_count(); ++od) {
            const auto& d = pb_.demands[od];
            const auto routes = cat_.routes_of(od);
            if (d.ncd_flow > 0.0)
                normalise(routes, ncd_, d.ncd_flow, q.ncd[od]);
            const auto paths = cat_.paths_of(od);
            if (d.ev_flow > 0.0)
                normalise(paths, ev_, d.ev_flow, q.ev[od]);
        }
        return q;
    }

    std::vector<double>& ncd() { return ncd_; }
    std::vector<double>& ev() { return ev_; }
    const std::vector<double>& volume() const { return volume_; }
    const std::vector<double>& arrivals() const { return arrivals_; }
    double station_coefficient(std::size_t node) const { return station_[node]; }
    double weight(std::size_t l) const { return weight_[l]; }

private:
    static void normalise(std::span<const std::size_t> ids, const std::vector<double>& flow, double demand,
                          std::vector<double>& out) {
        double sum = 0.0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            out[k] = std::max(0.0, flow[ids[k]]);
            sum += out[k];
        }
        for (auto& v : out)
            v /= sum > 0.0 ? sum : demand;
    }

    const Problem& pb_;
    const PathCatalog& cat_;
    const Design& design_;
    std::vector<double> weight_;
    std::vector<double> station_;
    std::vector<double> ncd_;
    std::vector<double> ev_;
    std::vector<double> volume_;
    std::vector<double> arrivals_;
    std::vector<int> mark_;
};

struct Block {
    std::size_t od;
    bool ev;
};

std::vector<Block> free_blocks(const Problem& problem, Players players) {
    std::vector<Block> blocks;
    const auto& cat = *problem.catalog;
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        const auto& d = problem.demands[od];
        if (players != Players::ev && d.ncd_flow > 0.0 && !cat.routes_of(od).empty())
            blocks.push_back({od, false});
        if (players != Players::ncd && d.ev_flow > 0.0 && !cat.paths_of(od).empty())
            blocks.push_back({od, true});
    }
    return blocks;
}

bool differs(double worse, double better) {
    return worse == kUnusable || worse - better > 1e-14 * std::max(1.0, std::abs(better));
}

struct GapSample {
    double excess = 0.0;   // sum of flow times (cost - best)
    double total = 0.0;    // sum of flow times cost
    double worst = 0.0;    // largest (cost - best) / best over used strategies
};

/// Gap terms of the adjusting classes, from the solver's own state.
GapSample block_gap(Assignment& st, const Problem& problem, const std::vector<Block>& blocks,
                    std::vector<double>& cost) {
    const auto& cat = *problem.catalog;
    GapSample g;
    for (const auto& b : blocks) {
        const auto ids = b.ev ? cat.paths_of(b.od) : cat.routes_of(b.od);
        const auto& flow = b.ev ? st.ev() : st.ncd();
        cost.resize(ids.size());
        double best = kUnusable;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            cost[k] = b.ev ? st.ev_cost(ids[k]) : st.route_cost(ids[k]);
            best = std::min(best, cost[k]);
        }
        const double demand = b.ev ? problem.demands[b.od].ev_flow : problem.demands[b.od].ncd_flow;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (flow[ids[k]] <= 0.0)
                continue;
            if (cost[k] == kUnusable)
                return {kUnusable, 1.0, kUnusable};
            g.excess += flow[ids[k]] * (cost[k] - best);
            g.total += flow[ids[k]] * cost[k];
            if (flow[ids[k]] > kSupportThreshold * demand && best > 0.0)
                g.worst = std::max(g.worst, (cost[k] - best) / best);
        }
    }
    return g;
}

/// Exact line minimum of moving flow from `from` to `to`; costs are linear in flow, so the
/// potential is quadratic along the exchange.
double exchange_amount(Assignment& st, const PathCatalog& cat, bool ev, std::size_t from, std::size_t to,
                       double cost_from, double cost_to, double available) {
    if (cost_from == kUnusable)
        return available;
    double curvature;
    if (ev) {
        const auto& pf = cat.path(from);
        const auto& pt = cat.path(to);
        curvature = st.exchange_curvature(pf.route, pt.route);
        if (pf.charge_node != pt.charge_node)
            curvature += st.station_coefficient(pf.charge_node) + st.station_coefficient(pt.charge_node);
    } else {
        curvature = st.exchange_curvature(from, to);
    }
    return curvature > 0.0 ? std::min(available, (cost_from - cost_to) / curvature) : available;
}

void pairwise_sweep(Assignment& st, const PathCatalog& cat, const std::vector<Block>& blocks,
                    std::vector<double>& cost) {
    constexpr int kInnerSteps = 4;
    for (const auto& b : blocks) {
        const auto ids = b.ev ? cat.paths_of(b.od) : cat.routes_of(b.od);
        auto& flow = b.ev ? st.ev() : st.ncd();
        auto cost_of = [&](std::size_t k) { return b.ev ? st.ev_cost(ids[k]) : st.route_cost(ids[k]); };
        cost.resize(ids.size());
        for (int inner = 0; inner < kInnerSteps; ++inner) {
            std::size_t best = ids.size();
            for (std::size_t k = 0; k < ids.size(); ++k) {
                cost[k] = cost_of(k);
                if (cost[k] != kUnusable && (best == ids.size() || cost[k] < cost[best]))
                    best = k;
            }
            if (best == ids.size())
                break;
            // Every used strategy in turn trades with the best response at current costs.
            bool moved = false;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (k == best || flow[ids[k]] <= 0.0 || !differs(cost[k], cost[best]) || cost[k] < cost[best])
                    continue;
                const double c_from = cost_of(k), c_to = cost_of(best);
                if (!(c_from > c_to) || !differs(c_from, c_to))
                    continue;
                const double amount = exchange_amount(st, cat, b.ev, ids[k], ids[best], c_from, c_to, flow[ids[k]]);
                if (amount <= 0.0)
                    continue;
                if (b.ev)
                    st.move_ev(ids[k], ids[best], amount);
                else
                    st.move_ncd(ids[k], ids[best], amount);
                if (flow[ids[k]] < 1e-13 * amount)
                    flow[ids[k]] = 0.0;
                moved = true;
            }
            if (!moved)
                break;
        }
    }
}

void frank_wolfe_step(Assignment& st, const Problem& problem, const std::vector<Block>& blocks,
                      std::vector<double>& cost) {
    const auto& cat = *problem.catalog;
    std::vector<double> dvol(cat.link_count(), 0.0), darr(cat.node_count(), 0.0);
    struct Target {
        std::size_t block;
        std::size_t best;
    };
    std::vector<Target> targets;
    double slope = 0.0;
    bool leave_closed = false;
    for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const auto& b = blocks[bi];
        const auto ids = b.ev ? cat.paths_of(b.od) : cat.routes_of(b.od);
        const auto& flow = b.ev ? st.ev() : st.ncd();
        const double demand = b.ev ? problem.demands[b.od].ev_flow : problem.demands[b.od].ncd_flow;
        cost.resize(ids.size());
        std::size_t best = ids.size();
        for (std::size_t k = 0; k < ids.size(); ++k) {
            cost[k] = b.ev ? st.ev_cost(ids[k]) : st.route_cost(ids[k]);
            if (cost[k] != kUnusable && (best == ids.size() || cost[k] < cost[best]))
                best = k;
        }
        if (best == ids.size())
            continue;
        targets.push_back({bi, best});
        for (std::size_t k = 0; k < ids.size(); ++k) {
            const double dir = (k == best ? demand : 0.0) - flow[ids[k]];
            if (dir == 0.0)
                continue;
            if (cost[k] == kUnusable) {
                leave_closed = true;
            } else {
                slope += cost[k] * dir;
            }
            const auto& route = b.ev ? cat.route_of_path(ids[k]) : cat.route(ids[k]);
            for (auto l : route.links)
                dvol[l] += dir;
            if (b.ev)
                darr[cat.path(ids[k]).charge_node] += dir;
        }
    }
    double curvature = 0.0;
    for (std::size_t l = 0; l < dvol.size(); ++l)
        curvature += st.weight(l) * dvol[l] * dvol[l];
    for (std::size_t i = 0; i < darr.size(); ++i)
        if (darr[i] != 0.0 && st.station_coefficient(i) != kUnusable)
            curvature += st.station_coefficient(i) * darr[i] * darr[i];
    double step;
    if (leave_closed)
        step = 1.0;
    else if (curvature > 0.0)
        step = std::clamp(-slope / curvature, 0.0, 1.0);
    else
        step = slope < 0.0 ? 1.0 : 0.0;
    if (step <= 0.0)
        return;
    for (const auto& t : targets) {
        const auto& b = blocks[t.block];
        const auto ids = b.ev ? cat.paths_of(b.od) : cat.routes_of(b.od);
        auto& flow = b.ev ? st.ev() : st.ncd();
        const double demand = b.ev ? problem.demands[b.od].ev_flow : problem.demands[b.od].ncd_flow;
        for (std::size_t k = 0; k < ids.size(); ++k)
            flow[ids[k]] += step * ((k == t.best ? demand : 0.0) - flow[ids[k]]);
    }
    st.rebuild();
}

}  // namespace

EquilibriumResult solve_equilibrium(const Problem& problem, const Design& design, const SolverSettings& settings,
                                    const SolveOptions& options) {
    validate(settings);
    const auto& cat = *problem.catalog;
    if (design.chargers.size() != cat.node_count() || design.prices.size() != cat.node_count())
        throw ValidationError("design does not match the network's node count");

    const StrategyProfile uniform = uniform_profile(problem, design);
    StrategyProfile start = options.initial ? *options.initial : uniform;
    validate(start, cat);
    // Adjusting classes restart from the uniform profile on any O-D whose warm start puts
    // mass on a closed station.
    if (options.players != Players::ncd) {
        for (std::size_t od = 0; od < cat.od_count(); ++od) {
            const auto paths = cat.paths_of(od);
            for (std::size_t k = 0; k < paths.size(); ++k)
                if (start.ev[od][k] > 0.0 && !design.is_open(cat.path(paths[k]).charge_node)) {
                    start.ev[od] = uniform.ev[od];
                    break;
                }
        }
    }

    const auto blocks = free_blocks(problem, options.players);
    Assignment st(problem, design, start);
    std::vector<double> scratch;

    EquilibriumResult res;
    // Besides the aggregate gap, every used strategy must be within 10x the tolerance of the
    // best response so that a converged result also passes the per-strategy certificate.
    double worst = 0.0;
    auto record = [&] {
        const auto g = block_gap(st, problem, blocks, scratch);
        const double gap =
            g.excess == kUnusable ? kUnusable : (g.total > 0.0 ? std::max(0.0, g.excess / g.total) : 0.0);
        worst = g.worst;
        res.potential_trace.push_back(st.potential());
        res.gap_trace.push_back(gap);
        return gap;
    };

    double gap = record();
    while ((gap > settings.gap_tolerance || worst > 10.0 * settings.gap_tolerance) &&
           res.iterations < settings.max_iterations) {
        if (settings.step_rule == StepRule::pairwise)
            pairwise_sweep(st, cat, blocks, scratch);
        else
            frank_wolfe_step(st, problem, blocks, scratch);
        ++res.iterations;
        if (res.iterations % 64 == 0)
            st.rebuild();
        gap = record();
    }

    res.profile = st.profile(start);
    res.flows = aggregate_flows(res.profile, problem);
    res.relative_gap = relative_gap(res.profile, res.flows, design, problem, options.players);
    res.converged = res.relative_gap <= settings.gap_tolerance;
    return res;
}

WardropCertificate wardrop_certificate(const StrategyProfile& profile, const Problem& problem, const Design& design,
                                       double epsilon, Players players) {
    const auto& cat = *problem.catalog;
    const auto flows = aggregate_flows(profile, problem);
    WardropCertificate cert;
    cert.epsilon = epsilon;
    std::vector<double> cost;
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        const auto& d = problem.demands[od];
        for (const bool ev : {false, true}) {
            if (ev ? (players == Players::ncd || d.ev_flow <= 0.0) : (players == Players::ev || d.ncd_flow <= 0.0))
                continue;
            const auto ids = ev ? cat.paths_of(od) : cat.routes_of(od);
            const auto& q = ev ? profile.ev[od] : profile.ncd[od];
            cost.resize(ids.size());
            double best = kUnusable;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                cost[k] = ev ? ev_path_cost(ids[k], problem, flows, design) : ncd_route_cost(ids[k], problem, flows);
                best = std::min(best, cost[k]);
            }
            for (std::size_t k = 0; k < ids.size(); ++k)
                if (q[k] > kSupportThreshold && cost[k] > best * (1.0 + epsilon))
                    cert.violations.push_back({od, ev, k, q[k], cost[k], best});
        }
    }
    return cert;
}

WardropCertificate wardrop_certificate(const EquilibriumResult& result, const Problem& problem,
                                       const Design& design, double epsilon, Players players) {
    return wardrop_certificate(result.profile, problem, design, epsilon, players);
}

void write_trace_csv(std::ostream& out, const EquilibriumResult& result) {
    out << "iteration,potential,relative_gap\n";
    for (std::size_t i = 0; i < result.potential_trace.size(); ++i)
        out << fmt::format("{},{:.17g},{:.17g}\n", i, result.potential_trace[i], result.gap_trace[i]);
}

}  // namespace evcs
