#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "evcs/network.hpp"

namespace evcs {

/// A simple route. `links` and `nodes` hold network indices, not ids.
struct Route {
    std::size_t od = 0;
    std::vector<std::size_t> links;
    std::vector<std::size_t> nodes;  // nodes.size() == links.size() + 1
    double distance = 0.0;           // free-flow length, sum of d_l

    bool operator==(const Route&) const = default;
};

/// A route paired with the node where the EV charges, s(p).
struct ExtendedPath {
    std::size_t route = 0;        // index into the owning route list
    std::size_t charge_node = 0;  // network node index, always on the route

    bool operator==(const ExtendedPath&) const = default;
};

/// Up to `k` simple routes from origin to destination, ordered by ascending free-flow
/// distance, then by node sequence, then by link sequence. Throws NoRouteError when the
/// destination is unreachable.
std::vector<Route> enumerate_routes(const Network& network, NodeId origin, NodeId destination, std::size_t k);

/// One extended path per (route, on-route candidate node), routes in order, nodes in
/// travel order. `candidate` is indexed by network node index.
std::vector<ExtendedPath> build_extended_paths(std::span<const Route> routes, const std::vector<bool>& candidate);

/// Route sets R_w and extended-path sets P_w for every demand pair, with reverse indices.
/// Immutable once built.
class PathCatalog {
public:
    PathCatalog() = default;
    PathCatalog(std::size_t node_count, std::size_t link_count, std::vector<Route> routes,
                std::vector<ExtendedPath> paths, std::size_t od_count);

    std::size_t od_count() const { return routes_of_.size(); }
    std::size_t node_count() const { return paths_at_.size(); }
    std::size_t link_count() const { return routes_using_.size(); }

    std::span<const Route> routes() const { return routes_; }
    std::span<const ExtendedPath> paths() const { return paths_; }
    const Route& route(std::size_t r) const { return routes_[r]; }
    const ExtendedPath& path(std::size_t p) const { return paths_[p]; }
    const Route& route_of_path(std::size_t p) const { return routes_[paths_[p].route]; }

    /// Global route / path indices belonging to one O-D pair, in catalog order.
    std::span<const std::size_t> routes_of(std::size_t od) const { return routes_of_[od]; }
    std::span<const std::size_t> paths_of(std::size_t od) const { return paths_of_[od]; }

    std::span<const std::size_t> paths_charging_at(std::size_t node) const { return paths_at_[node]; }
    std::span<const std::size_t> routes_using(std::size_t link) const { return routes_using_[link]; }
    std::span<const std::size_t> paths_using(std::size_t link) const { return paths_using_[link]; }

    /// Node indices that are the charge node of at least one extended path.
    std::vector<std::size_t> station_nodes() const;

    bool operator==(const PathCatalog&) const = default;

private:
    std::vector<Route> routes_;
    std::vector<ExtendedPath> paths_;
    std::vector<std::vector<std::size_t>> routes_of_;
    std::vector<std::vector<std::size_t>> paths_of_;
    std::vector<std::vector<std::size_t>> paths_at_;
    std::vector<std::vector<std::size_t>> routes_using_;
    std::vector<std::vector<std::size_t>> paths_using_;
};

/// Enumerates `k` routes per demand pair and pairs them with the candidate station nodes.
PathCatalog build_catalog(const Network& network, std::span<const OdDemand> demands, std::size_t k,
                          std::span<const NodeId> candidates);

/// Debug dump: routes as node-id sequences, extended paths as (route index, charge node id).
nlohmann::json catalog_to_json(const PathCatalog& catalog, const Network& network);

}  // namespace evcs
