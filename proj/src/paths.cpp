#include "evcs/paths.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>

#include "evcs/errors.hpp"

namespace evcs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool nearly_equal(double a, double b) {
    return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

double route_distance(const Network& net, const std::vector<std::size_t>& links) {
    double d = 0.0;
    for (auto l : links)
        d += net.link(l).distance;
    return d;
}

/// Strict order on routes: distance (with tolerance), then node sequence, then link sequence.
struct RouteOrder {
    bool operator()(const Route& a, const Route& b) const {
        if (!nearly_equal(a.distance, b.distance))
            return a.distance < b.distance;
        if (a.nodes != b.nodes)
            return a.nodes < b.nodes;
        return a.links < b.links;
    }
};

/// Shortest spur from `source` to `target` avoiding blocked nodes and links. Among all
/// shortest spurs returns the one with the smallest node sequence, then link sequence.
bool lexmin_shortest(const Network& net, std::size_t source, std::size_t target, const std::vector<char>& blocked_node,
                     const std::vector<char>& blocked_link, std::vector<std::size_t>& links_out,
                     std::vector<std::size_t>& nodes_out) {
    const auto n = net.node_count();
    // Distances to target over reversed links.
    std::vector<std::vector<std::size_t>> incoming(n);
    for (std::size_t l = 0; l < net.link_count(); ++l)
        incoming[net.head_index(l)].push_back(l);
    std::vector<double> dist(n, kInf);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    dist[target] = 0.0;
    heap.emplace(0.0, target);
    while (!heap.empty()) {
        auto [d, v] = heap.top();
        heap.pop();
        if (d > dist[v])
            continue;
        for (auto l : incoming[v]) {
            if (blocked_link[l])
                continue;
            const auto u = net.tail_index(l);
            if (blocked_node[u])
                continue;
            const double nd = d + net.link(l).distance;
            if (nd < dist[u]) {
                dist[u] = nd;
                heap.emplace(nd, u);
            }
        }
    }
    if (dist[source] == kInf)
        return false;

    links_out.clear();
    nodes_out.assign(1, source);
    auto u = source;
    while (u != target) {
        std::size_t best_link = net.link_count();
        for (auto l : net.outgoing(u)) {
            if (blocked_link[l])
                continue;
            const auto v = net.head_index(l);
            if (blocked_node[v] || dist[v] == kInf)
                continue;
            if (!nearly_equal(dist[u], net.link(l).distance + dist[v]))
                continue;
            if (best_link == net.link_count() || v < net.head_index(best_link) ||
                (v == net.head_index(best_link) && l < best_link))
                best_link = l;
        }
        if (best_link == net.link_count())
            return false;
        links_out.push_back(best_link);
        u = net.head_index(best_link);
        nodes_out.push_back(u);
    }
    return true;
}

}  // namespace

std::vector<Route> enumerate_routes(const Network& net, NodeId origin, NodeId destination, std::size_t k) {
    const auto s = net.index_of(origin);
    const auto t = net.index_of(destination);
    if (s == t)
        throw ValidationError("origin equals destination");
    std::vector<Route> accepted;
    if (k == 0)
        return accepted;

    std::vector<char> blocked_node(net.node_count(), 0);
    std::vector<char> blocked_link(net.link_count(), 0);
    Route first;
    if (!lexmin_shortest(net, s, t, blocked_node, blocked_link, first.links, first.nodes))
        throw NoRouteError("no route from node " + std::to_string(origin) + " to node " +
                           std::to_string(destination));
    first.distance = route_distance(net, first.links);
    accepted.push_back(std::move(first));

    std::set<Route, RouteOrder> candidates;
    std::vector<std::size_t> spur_links, spur_nodes;
    while (accepted.size() < k) {
        const Route prev = accepted.back();
        for (std::size_t i = 0; i + 1 < prev.nodes.size(); ++i) {
            const auto spur = prev.nodes[i];
            std::fill(blocked_node.begin(), blocked_node.end(), 0);
            std::fill(blocked_link.begin(), blocked_link.end(), 0);
            for (std::size_t j = 0; j < i; ++j)
                blocked_node[prev.nodes[j]] = 1;
            for (const auto& a : accepted) {
                if (a.nodes.size() <= i + 1)
                    continue;
                if (std::equal(prev.nodes.begin(), prev.nodes.begin() + static_cast<long>(i) + 1, a.nodes.begin()) &&
                    std::equal(prev.links.begin(), prev.links.begin() + static_cast<long>(i), a.links.begin()))
                    blocked_link[a.links[i]] = 1;
            }
            if (!lexmin_shortest(net, spur, t, blocked_node, blocked_link, spur_links, spur_nodes))
                continue;
            Route cand;
            cand.links.assign(prev.links.begin(), prev.links.begin() + static_cast<long>(i));
            cand.links.insert(cand.links.end(), spur_links.begin(), spur_links.end());
            cand.nodes.assign(prev.nodes.begin(), prev.nodes.begin() + static_cast<long>(i));
            cand.nodes.insert(cand.nodes.end(), spur_nodes.begin(), spur_nodes.end());
            cand.distance = route_distance(net, cand.links);
            const bool known = std::any_of(accepted.begin(), accepted.end(), [&](const Route& a) {
                return a.links == cand.links;
            });
            if (!known)
                candidates.insert(std::move(cand));
        }
        if (candidates.empty())
            break;
        accepted.push_back(*candidates.begin());
        candidates.erase(candidates.begin());
    }
    return accepted;
}

std::vector<ExtendedPath> build_extended_paths(std::span<const Route> routes, const std::vector<bool>& candidate) {
    std::vector<ExtendedPath> out;
    for (std::size_t r = 0; r < routes.size(); ++r)
        for (auto v : routes[r].nodes)
            if (v < candidate.size() && candidate[v])
                out.push_back(ExtendedPath{r, v});
    return out;
}

PathCatalog::PathCatalog(std::size_t node_count, std::size_t link_count, std::vector<Route> routes,
                         std::vector<ExtendedPath> paths, std::size_t od_count)
    : routes_(std::move(routes)),
      paths_(std::move(paths)),
      routes_of_(od_count),
      paths_of_(od_count),
      paths_at_(node_count),
      routes_using_(link_count),
      paths_using_(link_count) {
    for (std::size_t r = 0; r < routes_.size(); ++r) {
        const auto& route = routes_[r];
        if (route.od >= od_count)
            throw ValidationError("route references unknown O-D pair");
        routes_of_[route.od].push_back(r);
        for (auto l : route.links)
            routes_using_[l].push_back(r);
    }
    for (std::size_t p = 0; p < paths_.size(); ++p) {
        const auto& path = paths_[p];
        const auto& route = routes_.at(path.route);
        if (std::find(route.nodes.begin(), route.nodes.end(), path.charge_node) == route.nodes.end())
            throw ValidationError("extended path charges at a node off its route");
        paths_of_[route.od].push_back(p);
        paths_at_[path.charge_node].push_back(p);
        for (auto l : route.links)
            paths_using_[l].push_back(p);
    }
}

std::vector<std::size_t> PathCatalog::station_nodes() const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < paths_at_.size(); ++v)
        if (!paths_at_[v].empty())
            out.push_back(v);
    return out;
}

PathCatalog build_catalog(const Network& network, std::span<const OdDemand> demands, std::size_t k,
                          std::span<const NodeId> candidates) {
    std::vector<bool> mask(network.node_count(), false);
    for (auto id : candidates)
        mask[network.index_of(id)] = true;

    std::vector<Route> routes;
    std::vector<ExtendedPath> paths;
    for (std::size_t od = 0; od < demands.size(); ++od) {
        validate(demands[od], network);
        auto od_routes = enumerate_routes(network, demands[od].origin, demands[od].destination, k);
        const auto offset = routes.size();
        for (auto& r : od_routes)
            r.od = od;
        for (auto p : build_extended_paths(od_routes, mask)) {
            p.route += offset;
            paths.push_back(p);
        }
        for (auto& r : od_routes)
            routes.push_back(std::move(r));
    }
    return PathCatalog(network.node_count(), network.link_count(), std::move(routes), std::move(paths),
                       demands.size());
}

nlohmann::json catalog_to_json(const PathCatalog& catalog, const Network& network) {
    nlohmann::json j;
    auto& ods = j["od_pairs"] = nlohmann::json::array();
    for (std::size_t od = 0; od < catalog.od_count(); ++od) {
        nlohmann::json entry;
        auto& routes = entry["routes"] = nlohmann::json::array();
        for (auto r : catalog.routes_of(od)) {
            nlohmann::json nodes = nlohmann::json::array();
            for (auto v : catalog.route(r).nodes)
                nodes.push_back(network.node(v).id);
            routes.push_back({{"nodes", nodes}, {"distance", catalog.route(r).distance}});
        }
        const auto first_route = catalog.routes_of(od).empty() ? 0 : catalog.routes_of(od).front();
        auto& paths = entry["extended_paths"] = nlohmann::json::array();
        for (auto p : catalog.paths_of(od))
            paths.push_back({{"route", catalog.path(p).route - first_route},
                             {"charge_node", network.node(catalog.path(p).charge_node).id}});
        ods.push_back(std::move(entry));
    }
    return j;
}

}  // namespace evcs
