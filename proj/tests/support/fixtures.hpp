#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "evcs/costs.hpp"
#include "evcs/network.hpp"

namespace evcs::testing {

inline std::filesystem::path data_dir() { return EVCS_DATA_DIR; }

inline Scenario scenario_from(const Network& net, std::vector<OdDemand> demands, GlobalParams params = {},
                              std::size_t k = 10, std::vector<NodeId> candidates = {}) {
    if (candidates.empty())
        for (const auto& n : net.nodes())
            candidates.push_back(n.id);
    return Scenario{"fixture", net, std::move(demands), params, std::move(candidates), k};
}

inline Problem problem_from(const Network& net, std::vector<OdDemand> demands, GlobalParams params = {},
                            std::size_t k = 10, std::vector<NodeId> candidates = {}) {
    if (candidates.empty())
        for (const auto& n : net.nodes())
            candidates.push_back(n.id);
    Scenario sc{"fixture", net, std::move(demands), params, std::move(candidates), k};
    return make_problem(sc);
}

/// Two parallel links 1->2 with distances 2 and 4, capacity 1000.
inline Network two_link_network() {
    return Network({{1, 0.0, 0.0}, {2, 0.0, 0.0}}, {{1, 1, 2, 2.0, 1000.0}, {2, 1, 2, 4.0, 1000.0}});
}

/// Single link 1->2; both nodes are stations with the given economics.
inline Network single_link_network(double e = 7.5, double t = 10.0) {
    return Network({{1, e, t}, {2, e, t}}, {{1, 1, 2, 1.0, 1000.0}});
}

/// Diamond 1->{2,3}->4 plus the direct link 1->4.
inline Network diamond_network(double e = 7.5, double t = 10.0) {
    return Network({{1, e, t}, {2, e, t}, {3, e, t + 5.0}, {4, e, t}},
                   {{1, 1, 2, 1.0, 1000.0},
                    {2, 1, 3, 1.5, 1000.0},
                    {3, 2, 4, 1.0, 1000.0},
                    {4, 3, 4, 0.8, 1000.0},
                    {5, 1, 4, 2.6, 1000.0}});
}

/// Two mirror-image routes 1->2->4 and 1->3->4 with identical stations at 2 and 3.
inline Network twin_station_network(double e = 7.5, double t = 10.0) {
    return Network({{1, e, t}, {2, e, t}, {3, e, t}, {4, e, t}},
                   {{1, 1, 2, 1.0, 1000.0}, {2, 1, 3, 1.0, 1000.0}, {3, 2, 4, 1.0, 1000.0}, {4, 3, 4, 1.0, 1000.0}});
}

/// Random probability vector per O-D and class, drawn from a flat Dirichlet.
inline StrategyProfile random_profile(const PathCatalog& cat, std::mt19937_64& rng) {
    std::exponential_distribution<double> expo(1.0);
    auto draw = [&](std::size_t n) {
        std::vector<double> v(n);
        double s = 0.0;
        for (auto& x : v)
            s += (x = expo(rng) + 1e-12);
        for (auto& x : v)
            x /= s;
        return v;
    };
    StrategyProfile q;
    for (std::size_t od = 0; od < cat.od_count(); ++od) {
        q.ev.push_back(draw(cat.paths_of(od).size()));
        q.ncd.push_back(draw(cat.routes_of(od).size()));
    }
    return q;
}

inline Design uniform_design(std::size_t nodes, double x, double y) {
    return Design{std::vector<double>(nodes, x), std::vector<double>(nodes, y)};
}

struct Toy {
    Problem problem;
    Design design;
};

/// Small instances with at most 8 strategies, within reach of the lattice oracle.
inline std::vector<Toy> toy_instances() {
    std::vector<Toy> toys;
    toys.push_back({problem_from(two_link_network(), {{1, 2, 0.0, 1000.0}}), Design::closed(2)});
    toys.push_back({problem_from(single_link_network(), {{1, 2, 40.0, 100.0}}),
                    Design{{2.0, 3.0}, {1.0, 2.0}}});
    toys.push_back({problem_from(two_link_network(), {{1, 2, 100.0, 500.0}}, {}, 10, {2}),
                    Design{{0.0, 4.0}, {0.0, 6.0}}});
    toys.push_back({problem_from(diamond_network(), {{1, 4, 60.0, 400.0}}, {}, 10, {2, 3}),
                    Design{{0.0, 2.0, 3.0, 0.0}, {0.0, 8.0, 5.0, 0.0}}});
    const Network chain({{1, 7.5, 10}, {2, 7.5, 10}, {3, 7.5, 10}},
                        {{1, 1, 2, 1.0, 1000.0}, {2, 1, 2, 2.0, 1000.0}, {3, 2, 3, 1.0, 1000.0}});
    toys.push_back({problem_from(chain, {{1, 3, 50.0, 300.0}, {2, 3, 30.0, 100.0}}, {}, 10, {2}),
                    Design{{0.0, 5.0, 0.0}, {0.0, 4.0, 0.0}}});
    toys.push_back({problem_from(single_link_network(), {{1, 2, 40.0, 100.0}}),
                    uniform_design(2, 3.0, 9.0)});
    return toys;
}

}  // namespace evcs::testing
