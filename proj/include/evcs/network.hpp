#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace evcs {

using NodeId = int;

struct Node {
    NodeId id = 0;
    double electricity_price = 0.0;  // e_i, money per full charge
    double site_cost = 0.0;          // T_i, money per charger per modelling period

    bool operator==(const Node&) const = default;
};

struct Link {
    int id = 0;
    NodeId tail = 0;
    NodeId head = 0;
    double distance = 0.0;  // d_l, scaled so that d_l * flow / capacity is in hours
    double capacity = 0.0;  // c_l, vehicles per hour

    bool operator==(const Link&) const = default;
};

/// Directed road graph. Nodes are kept sorted by id, so node index order is id order.
/// Immutable once constructed.
class Network {
public:
    /// Validates every invariant; throws ValidationError naming the failing one.
    Network(std::vector<Node> nodes, std::vector<Link> links);

    std::span<const Node> nodes() const { return nodes_; }
    std::span<const Link> links() const { return links_; }
    std::size_t node_count() const { return nodes_.size(); }
    std::size_t link_count() const { return links_.size(); }

    const Node& node(std::size_t index) const { return nodes_[index]; }
    const Link& link(std::size_t index) const { return links_[index]; }

    std::optional<std::size_t> find(NodeId id) const;
    /// Throws ValidationError for an unknown id.
    std::size_t index_of(NodeId id) const;

    std::size_t tail_index(std::size_t link) const { return tails_[link]; }
    std::size_t head_index(std::size_t link) const { return heads_[link]; }
    std::span<const std::size_t> outgoing(std::size_t node) const { return out_[node]; }

    /// Copy with per-node economics replaced; ids must match one-to-one.
    Network with_nodes(std::vector<Node> nodes) const;

    bool operator==(const Network& other) const {
        return nodes_ == other.nodes_ && links_ == other.links_;
    }

private:
    std::vector<Node> nodes_;
    std::vector<Link> links_;
    std::vector<std::size_t> tails_;
    std::vector<std::size_t> heads_;
    std::vector<std::vector<std::size_t>> out_;
};

struct OdDemand {
    NodeId origin = 0;
    NodeId destination = 0;
    double ev_flow = 0.0;   // gamma_w, EVs needing an en-route charge (veh/h)
    double ncd_flow = 0.0;  // gamma0_w, non-charging drivers (veh/h)

    double total() const { return ev_flow + ncd_flow; }
    bool operator==(const OdDemand&) const = default;
};

struct GlobalParams {
    double time_value = 25.12;  // lambda, money per hour
    double service_rate = 4.0;  // mu, charges per charger per hour
    double profit_margin = 1.2; // pi > 1
    int budget = 0;             // B, maximum total number of chargers

    bool operator==(const GlobalParams&) const = default;
};

void validate(const GlobalParams& params);
void validate(const OdDemand& demand, const Network& network);

/// Share of EV flow in total flow; 0 for an empty or zero-flow demand set.
double penetration_rate(std::span<const OdDemand> demands);

struct Scenario {
    std::string name;
    Network network;
    std::vector<OdDemand> demands;
    GlobalParams params;
    std::vector<NodeId> candidates;  // station candidate nodes, sorted
    std::size_t routes_per_od = 10;

    double alpha() const { return penetration_rate(demands); }
};

inline constexpr double kDefaultCapacity = 1000.0;

/// Reads the whitespace link table: `tail head distance [capacity] [;]` per record.
/// `~` comment lines and `<KEY> value` metadata lines are accepted; `<NUMBER OF NODES> n`
/// declares nodes 1..n. Without that header the node set is the set of link endpoints.
/// Node economics default to zero and are normally supplied by a scenario.
Network load_network(std::istream& in, double distance_scale = 1.0);
Network load_network(const std::filesystem::path& path, double distance_scale = 1.0);

/// Writes the link table in the format read by load_network (distances unscaled).
void write_network(std::ostream& out, const Network& network);

nlohmann::json network_to_json(const Network& network);
Network network_from_json(const nlohmann::json& j);

/// Binds a scenario JSON document; relative network paths resolve against `base_dir`.
Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base_dir);
Scenario load_scenario(const std::filesystem::path& path);

/// Rescales every demand pair to the given EV share, keeping per-pair totals.
std::vector<OdDemand> with_penetration(std::span<const OdDemand> demands, double alpha);

}  // namespace evcs
