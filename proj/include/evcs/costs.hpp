#pragma once

#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "evcs/network.hpp"
#include "evcs/paths.hpp"

namespace evcs {

/// Cost returned for any extended path whose station has no chargers.
inline constexpr double kUnusable = std::numeric_limits<double>::infinity();

/// Everything an equilibrium or cost evaluation needs; cheap to copy and safe to share
/// between threads.
struct Problem {
    std::shared_ptr<const Network> network;
    std::shared_ptr<const PathCatalog> catalog;
    std::vector<OdDemand> demands;
    GlobalParams params;
    std::vector<std::size_t> candidates;  // station candidate node indices, ascending

    double total_ev_demand() const;
    double total_ncd_demand() const;
};

Problem make_problem(const Scenario& scenario);
Problem make_problem(const Scenario& scenario, std::span<const NodeId> candidates);
/// Same network, catalog and parameters with new demand values (O-D pairs must match).
Problem with_demands(const Problem& problem, std::vector<OdDemand> demands);

/// Per O-D probability vectors: `ev[w]` over catalog.paths_of(w), `ncd[w]` over routes_of(w).
struct StrategyProfile {
    std::vector<std::vector<double>> ev;
    std::vector<std::vector<double>> ncd;

    bool operator==(const StrategyProfile&) const = default;
};

/// Throws ValidationError unless dimensions match and every vector is a distribution
/// (entries in [0,1], sum within 1e-9 of one).
void validate(const StrategyProfile& profile, const PathCatalog& catalog);

/// Per-node charger counts x and prices y, indexed by node index.
struct Design {
    std::vector<double> chargers;
    std::vector<double> prices;

    static Design closed(std::size_t node_count) {
        return Design{std::vector<double>(node_count, 0.0), std::vector<double>(node_count, 0.0)};
    }
    double total_chargers() const;
    bool is_open(std::size_t node) const { return chargers[node] > 0.0; }

    bool operator==(const Design&) const = default;
};

struct FlowState {
    std::vector<double> ncd_link;  // gamma0_l
    std::vector<double> ev_link;   // gamma_l
    std::vector<double> arrivals;  // a_i, EV arrival rate at each node

    double link_total(std::size_t l) const { return ncd_link[l] + ev_link[l]; }
};

FlowState aggregate_flows(const StrategyProfile& profile, const Problem& problem);

/// f_l = d_l * (gamma0_l + gamma_l) / c_l, in hours.
double link_time(const Link& link, double total_flow);
double link_time(const Link& link, const FlowState& flows, std::size_t l);

/// Sum of link times along the route (F_{w,r} or F_{w,p}).
double path_time(const Route& route, const Network& network, const FlowState& flows);

/// G_p = a_{s(p)} / (mu x_{s(p)}); kUnusable when the station is closed.
double queue_time(const ExtendedPath& path, const FlowState& flows, const Design& design, double service_rate);

/// C_{w,p} = lambda (F + G) + y_{s(p)}.
double ev_path_cost(std::size_t path, const Problem& problem, const FlowState& flows, const Design& design);

/// C0_{w,r} = lambda F.
double ncd_route_cost(std::size_t route, const Problem& problem, const FlowState& flows);

/// Social cost split by component. `travel` covers every driver; the EV share of each
/// component is kept separately so EV-driver cost can be reported on its own.
struct SocialCost {
    double ncd_travel = 0.0;
    double ev_travel = 0.0;
    double queue = 0.0;
    double charging = 0.0;

    double travel() const { return ncd_travel + ev_travel; }
    double ev_total() const { return ev_travel + queue + charging; }
    double total() const { return ncd_travel + ev_travel + queue + charging; }
};

/// Theta = sum_w (gamma_w C_w + gamma0_w C0_w), expanded per component.
SocialCost social_cost(const StrategyProfile& profile, const FlowState& flows, const Design& design,
                       const Problem& problem);

/// Revenue a_i y_i minus pi (a_i e_i + x_i T_i). Non-negative iff the station is profitable.
double station_profit_gap(double arrivals, const Node& node, double chargers, double price, double profit_margin);

}  // namespace evcs
