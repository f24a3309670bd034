#include "checker.hpp"

#include <cmath>

#include "oracles.hpp"

namespace evcs::testing {

std::vector<std::string> independent_check(const PlanResult& plan, const Problem& problem) {
    std::vector<std::string> out;
    const auto& net = *problem.network;
    const auto& cat = *problem.catalog;
    const auto& x = plan.design.chargers;
    const auto& y = plan.design.prices;
    const auto& q = plan.equilibrium.profile;
    const double pi = problem.params.profit_margin;

    if (x.size() != net.node_count() || y.size() != net.node_count())
        return {"design size does not match the network"};

    double used = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        used += x[i];
        if (x[i] < 0.0 || std::floor(x[i]) != x[i])
            out.push_back("chargers at node " + std::to_string(net.node(i).id) + " not a non-negative integer");
        if (y[i] < 0.0)
            out.push_back("negative price at node " + std::to_string(net.node(i).id));
    }
    if (used > problem.params.budget)
        out.push_back("budget exceeded");

    if (q.ev.size() != cat.od_count() || q.ncd.size() != cat.od_count()) {
        out.push_back("profile size does not match the catalog");
        return out;
    }
    auto check_simplex = [&](const std::vector<double>& v, std::size_t expected, const std::string& what) {
        if (v.size() != expected) {
            out.push_back(what + ": wrong length");
            return;
        }
        double s = 0.0;
        for (double p : v) {
            if (p < 0.0 || p > 1.0)
                out.push_back(what + ": entry outside [0,1]");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-9)
            out.push_back(what + ": does not sum to one");
    };
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        check_simplex(q.ev[od], cat.paths_of(od).size(), "EV distribution " + std::to_string(od));
        check_simplex(q.ncd[od], cat.routes_of(od).size(), "NCD distribution " + std::to_string(od));
        if (problem.demands[od].ev_flow <= 0.0)
            continue;
        const auto paths = cat.paths_of(od);
        for (std::size_t k = 0; k < paths.size() && k < q.ev[od].size(); ++k)
            if (q.ev[od][k] > 0.0 && x[cat.path(paths[k]).charge_node] <= 0.0)
                out.push_back("EV mass on a closed station for O-D " + std::to_string(od));
    }
    if (!out.empty())
        return out;

    const auto f = oracle_flows(q, problem);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] <= 0.0)
            continue;
        const auto& node = net.node(i);
        const double revenue = f.arrivals[i] * y[i];
        const double outlay = pi * (f.arrivals[i] * node.electricity_price + x[i] * node.site_cost);
        if (revenue - outlay < -1e-6 * revenue || (revenue == 0.0 && outlay > 0.0))
            out.push_back("station " + std::to_string(node.id) + " unprofitable");
    }
    const double theta = oracle_social_cost(q, problem, plan.design);
    if (std::abs(theta - plan.social_cost()) > 1e-9 * std::max(1.0, std::abs(theta)))
        out.push_back("reported social cost differs from recomputation");
    return out;
}

}  // namespace evcs::testing
