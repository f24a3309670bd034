#include "evcs/costs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "evcs/errors.hpp"

namespace evcs {

double Problem::total_ev_demand() const {
    double s = 0.0;
    for (const auto& d : demands)
        s += d.ev_flow;
    return s;
}

double Problem::total_ncd_demand() const {
    double s = 0.0;
    for (const auto& d : demands)
        s += d.ncd_flow;
    return s;
}

Problem make_problem(const Scenario& scenario) { return make_problem(scenario, scenario.candidates); }

Problem make_problem(const Scenario& scenario, std::span<const NodeId> candidates) {
    auto network = std::make_shared<const Network>(scenario.network);
    auto catalog = std::make_shared<const PathCatalog>(
        build_catalog(*network, scenario.demands, scenario.routes_per_od, candidates));
    std::vector<std::size_t> indices;
    for (auto id : candidates)
        indices.push_back(network->index_of(id));
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
    return Problem{std::move(network), std::move(catalog), scenario.demands, scenario.params, std::move(indices)};
}

Problem with_demands(const Problem& problem, std::vector<OdDemand> demands) {
    if (demands.size() != problem.demands.size())
        throw ValidationError("demand set does not match the catalog's O-D pairs");
    for (std::size_t i = 0; i < demands.size(); ++i) {
        if (demands[i].origin != problem.demands[i].origin || demands[i].destination != problem.demands[i].destination)
            throw ValidationError("demand set does not match the catalog's O-D pairs");
        validate(demands[i], *problem.network);
    }
    Problem out = problem;
    out.demands = std::move(demands);
    return out;
}

void validate(const StrategyProfile& profile, const PathCatalog& catalog) {
    if (profile.ev.size() != catalog.od_count() || profile.ncd.size() != catalog.od_count())
        throw ValidationError("strategy profile does not match the catalog's O-D count");
    auto check = [](const std::vector<double>& q, std::size_t expected, const std::string& what) {
        if (q.size() != expected)
            throw ValidationError(what + ": dimension mismatch");
        if (q.empty())
            return;
        double sum = 0.0;
        for (double v : q) {
            if (!(v >= 0.0 && v <= 1.0))
                throw ValidationError(what + ": entries must lie in [0, 1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError(what + ": probabilities must sum to 1");
    };
    for (std::size_t od = 0; od < catalog.od_count(); ++od) {
        check(profile.ev[od], catalog.paths_of(od).size(), "EV strategy of O-D " + std::to_string(od));
        check(profile.ncd[od], catalog.routes_of(od).size(), "NCD strategy of O-D " + std::to_string(od));
    }
}

double Design::total_chargers() const { return std::accumulate(chargers.begin(), chargers.end(), 0.0); }

FlowState aggregate_flows(const StrategyProfile& profile, const Problem& problem) {
    const auto& cat = *problem.catalog;
    if (profile.ev.size() != cat.od_count() || profile.ncd.size() != cat.od_count() ||
        problem.demands.size() != cat.od_count())
        throw ValidationError("strategy profile does not match the catalog's O-D count");
    FlowState f{std::vector<double>(cat.link_count(), 0.0), std::vector<double>(cat.link_count(), 0.0),
                std::vector<double>(cat.node_count(), 0.0)};
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        const auto routes = cat.routes_of(od);
        const auto paths = cat.paths_of(od);
        if (profile.ncd[od].size() != routes.size() || profile.ev[od].size() != paths.size())
            throw ValidationError("strategy profile dimension mismatch at O-D " + std::to_string(od));
        const auto& d = problem.demands[od];
        for (std::size_t k = 0; k < routes.size(); ++k) {
            const double flow = d.ncd_flow * profile.ncd[od][k];
            if (flow == 0.0)
                continue;
            for (auto l : cat.route(routes[k]).links)
                f.ncd_link[l] += flow;
        }
        for (std::size_t k = 0; k < paths.size(); ++k) {
            const double flow = d.ev_flow * profile.ev[od][k];
            if (flow == 0.0)
                continue;
            for (auto l : cat.route_of_path(paths[k]).links)
                f.ev_link[l] += flow;
            f.arrivals[cat.path(paths[k]).charge_node] += flow;
        }
    }
    return f;
}

double link_time(const Link& link, double total_flow) { return link.distance * total_flow / link.capacity; }

double link_time(const Link& link, const FlowState& flows, std::size_t l) {
    return link_time(link, flows.link_total(l));
}

double path_time(const Route& route, const Network& network, const FlowState& flows) {
    double t = 0.0;
    for (auto l : route.links)
        t += link_time(network.link(l), flows, l);
    return t;
}

double queue_time(const ExtendedPath& path, const FlowState& flows, const Design& design, double service_rate) {
    const double x = design.chargers[path.charge_node];
    if (!(x > 0.0))
        return kUnusable;
    return flows.arrivals[path.charge_node] / (service_rate * x);
}

double ev_path_cost(std::size_t path, const Problem& problem, const FlowState& flows, const Design& design) {
    const auto& cat = *problem.catalog;
    const auto& p = cat.path(path);
    const double g = queue_time(p, flows, design, problem.params.service_rate);
    if (g == kUnusable)
        return kUnusable;
    const double f = path_time(cat.route(p.route), *problem.network, flows);
    return problem.params.time_value * (f + g) + design.prices[p.charge_node];
}

double ncd_route_cost(std::size_t route, const Problem& problem, const FlowState& flows) {
    return problem.params.time_value * path_time(problem.catalog->route(route), *problem.network, flows);
}

SocialCost social_cost(const StrategyProfile& profile, const FlowState& flows, const Design& design,
                       const Problem& problem) {
    const auto& cat = *problem.catalog;
    const double lambda = problem.params.time_value;
    SocialCost c;
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        const auto& d = problem.demands[od];
        const auto routes = cat.routes_of(od);
        for (std::size_t k = 0; k < routes.size(); ++k) {
            const double flow = d.ncd_flow * profile.ncd[od][k];
            if (flow > 0.0)
                c.ncd_travel += flow * ncd_route_cost(routes[k], problem, flows);
        }
        const auto paths = cat.paths_of(od);
        for (std::size_t k = 0; k < paths.size(); ++k) {
            const double flow = d.ev_flow * profile.ev[od][k];
            if (flow <= 0.0)
                continue;
            const auto& p = cat.path(paths[k]);
            const double g = queue_time(p, flows, design, problem.params.service_rate);
            c.ev_travel += flow * lambda * path_time(cat.route(p.route), *problem.network, flows);
            c.queue += g == kUnusable ? kUnusable : flow * lambda * g;
            c.charging += flow * design.prices[p.charge_node];
        }
    }
    return c;
}

double station_profit_gap(double arrivals, const Node& node, double chargers, double price, double profit_margin) {
    return arrivals * price - profit_margin * (arrivals * node.electricity_price + chargers * node.site_cost);
}

}  // namespace evcs
