#include "evcs/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "evcs/errors.hpp"

namespace evcs {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos)
        return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

bool weakly_connected(std::size_t node_count, const std::vector<std::size_t>& tails,
                      const std::vector<std::size_t>& heads) {
    std::vector<std::size_t> parent(node_count);
    std::iota(parent.begin(), parent.end(), std::size_t{0});
    auto root = [&](std::size_t v) {
        while (parent[v] != v)
            v = parent[v] = parent[parent[v]];
        return v;
    };
    for (std::size_t l = 0; l < tails.size(); ++l)
        parent[root(tails[l])] = root(heads[l]);
    const auto r0 = root(0);
    for (std::size_t v = 1; v < node_count; ++v)
        if (root(v) != r0)
            return false;
    return true;
}

double require_number(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.contains(key))
        throw ParseError(where + ": missing field '" + key + "'");
    if (!j.at(key).is_number())
        throw ParseError(where + ": field '" + key + "' must be a number");
    return j.at(key).get<double>();
}

}  // namespace

Network::Network(std::vector<Node> nodes, std::vector<Link> links)
    : nodes_(std::move(nodes)), links_(std::move(links)) {
    std::sort(nodes_.begin(), nodes_.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < nodes_.size(); ++i)
        if (nodes_[i].id == nodes_[i - 1].id)
            throw ValidationError("node ids must be unique: duplicate id " + std::to_string(nodes_[i].id));
    for (const auto& n : nodes_) {
        if (!(n.electricity_price >= 0.0))
            throw ValidationError("node " + std::to_string(n.id) + ": electricity price must be >= 0");
        if (!(n.site_cost >= 0.0))
            throw ValidationError("node " + std::to_string(n.id) + ": site cost must be >= 0");
    }
    if (nodes_.size() < 2 || links_.empty())
        throw ValidationError("network needs at least two nodes and one link to route any demand");

    tails_.reserve(links_.size());
    heads_.reserve(links_.size());
    out_.assign(nodes_.size(), {});
    for (std::size_t l = 0; l < links_.size(); ++l) {
        const auto& link = links_[l];
        const auto tail = find(link.tail);
        const auto head = find(link.head);
        if (!tail || !head)
            throw ValidationError("link " + std::to_string(link.id) + " references unknown node " +
                                  std::to_string(tail ? link.head : link.tail));
        if (link.tail == link.head)
            throw ValidationError("link " + std::to_string(link.id) + " is a self-loop");
        if (!(link.distance > 0.0))
            throw ValidationError("link " + std::to_string(link.id) + ": distance must be > 0");
        if (!(link.capacity > 0.0))
            throw ValidationError("link " + std::to_string(link.id) + ": capacity must be > 0");
        tails_.push_back(*tail);
        heads_.push_back(*head);
        out_[*tail].push_back(l);
    }
    if (!weakly_connected(nodes_.size(), tails_, heads_))
        throw ValidationError("network graph is not connected");
}

std::optional<std::size_t> Network::find(NodeId id) const {
    const auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id,
                                     [](const Node& n, NodeId v) { return n.id < v; });
    if (it == nodes_.end() || it->id != id)
        return std::nullopt;
    return static_cast<std::size_t>(it - nodes_.begin());
}

std::size_t Network::index_of(NodeId id) const {
    if (const auto idx = find(id))
        return *idx;
    throw ValidationError("unknown node id " + std::to_string(id));
}

Network Network::with_nodes(std::vector<Node> nodes) const {
    Network copy = *this;
    std::sort(nodes.begin(), nodes.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
    if (nodes.size() != nodes_.size())
        throw ValidationError("node economics must cover every network node");
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i].id != nodes_[i].id)
            throw ValidationError("node economics reference unknown node " + std::to_string(nodes[i].id));
        if (!(nodes[i].electricity_price >= 0.0) || !(nodes[i].site_cost >= 0.0))
            throw ValidationError("node " + std::to_string(nodes[i].id) + ": costs must be >= 0");
    }
    copy.nodes_ = std::move(nodes);
    return copy;
}

void validate(const GlobalParams& p) {
    if (!(p.time_value > 0.0))
        throw ValidationError("time value lambda must be > 0");
    if (!(p.service_rate > 0.0))
        throw ValidationError("service rate mu must be > 0");
    if (!(p.profit_margin > 1.0))
        throw ValidationError("profit coefficient pi must be > 1");
    if (p.budget < 0)
        throw ValidationError("budget B must be >= 0");
}

void validate(const OdDemand& d, const Network& network) {
    const auto where = "demand " + std::to_string(d.origin) + "->" + std::to_string(d.destination);
    if (!network.find(d.origin) || !network.find(d.destination))
        throw ValidationError(where + " references an unknown node");
    if (d.origin == d.destination)
        throw ValidationError(where + ": origin equals destination");
    if (!(d.ev_flow >= 0.0) || !(d.ncd_flow >= 0.0))
        throw ValidationError(where + ": negative demand");
}

double penetration_rate(std::span<const OdDemand> demands) {
    double ev = 0.0, total = 0.0;
    for (const auto& d : demands) {
        ev += d.ev_flow;
        total += d.ev_flow + d.ncd_flow;
    }
    return total > 0.0 ? ev / total : 0.0;
}

std::vector<OdDemand> with_penetration(std::span<const OdDemand> demands, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ValidationError("penetration rate must lie in [0, 1]");
    std::vector<OdDemand> out(demands.begin(), demands.end());
    for (auto& d : out) {
        const double total = d.total();
        d.ev_flow = alpha * total;
        d.ncd_flow = total - d.ev_flow;
    }
    return out;
}

Network load_network(std::istream& in, double distance_scale) {
    if (!(distance_scale > 0.0))
        throw ValidationError("distance scale must be > 0");
    std::vector<Link> links;
    std::optional<int> declared_nodes;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = trim(raw);
        if (line.empty() || line.front() == '~')
            continue;
        if (line.front() == '<') {
            const auto close = line.find('>');
            if (close == std::string::npos)
                throw ParseError("unterminated metadata tag", line_no);
            const auto key = line.substr(1, close - 1);
            if (key == "NUMBER OF NODES") {
                std::istringstream value(line.substr(close + 1));
                int n = 0;
                if (!(value >> n) || n < 0)
                    throw ParseError("bad node count", line_no);
                declared_nodes = n;
            }
            continue;
        }
        if (const auto semi = line.find(';'); semi != std::string::npos)
            line = trim(line.substr(0, semi));
        std::istringstream fields(line);
        std::vector<std::string> tokens;
        for (std::string tok; fields >> tok;)
            tokens.push_back(tok);
        if (tokens.size() < 3)
            throw ParseError("expected 'tail head distance [capacity]', got '" + line + "'", line_no);
        Link link;
        link.id = static_cast<int>(links.size()) + 1;
        try {
            std::size_t used = 0;
            link.tail = std::stoi(tokens[0], &used);
            if (used != tokens[0].size())
                throw std::invalid_argument(tokens[0]);
            link.head = std::stoi(tokens[1], &used);
            if (used != tokens[1].size())
                throw std::invalid_argument(tokens[1]);
            link.distance = std::stod(tokens[2], &used) * distance_scale;
            if (used != tokens[2].size())
                throw std::invalid_argument(tokens[2]);
            link.capacity = kDefaultCapacity;
            if (tokens.size() >= 4) {
                link.capacity = std::stod(tokens[3], &used);
                if (used != tokens[3].size())
                    throw std::invalid_argument(tokens[3]);
            }
        } catch (const std::logic_error&) {
            throw ParseError("non-numeric field in '" + line + "'", line_no);
        }
        links.push_back(link);
    }

    std::vector<Node> nodes;
    if (declared_nodes) {
        for (int i = 1; i <= *declared_nodes; ++i)
            nodes.push_back(Node{i, 0.0, 0.0});
    } else {
        std::vector<NodeId> ids;
        for (const auto& l : links) {
            ids.push_back(l.tail);
            ids.push_back(l.head);
        }
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        for (auto id : ids)
            nodes.push_back(Node{id, 0.0, 0.0});
    }
    return Network(std::move(nodes), std::move(links));
}

Network load_network(const std::filesystem::path& path, double distance_scale) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open network file " + path.string());
    try {
        return load_network(in, distance_scale);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_network(std::ostream& out, const Network& network) {
    out << "<NUMBER OF NODES> " << network.node_count() << "\n";
    out << "<NUMBER OF LINKS> " << network.link_count() << "\n";
    out << "<END OF METADATA>\n\n~ tail head distance capacity ;\n";
    out << std::setprecision(17);
    for (const auto& l : network.links())
        out << l.tail << '\t' << l.head << '\t' << l.distance << '\t' << l.capacity << "\t;\n";
}

nlohmann::json network_to_json(const Network& network) {
    nlohmann::json j;
    auto& nodes = j["nodes"] = nlohmann::json::array();
    for (const auto& n : network.nodes())
        nodes.push_back({{"id", n.id}, {"electricity_price", n.electricity_price}, {"site_cost", n.site_cost}});
    auto& links = j["links"] = nlohmann::json::array();
    for (const auto& l : network.links())
        links.push_back({{"id", l.id},
                         {"tail", l.tail},
                         {"head", l.head},
                         {"distance", l.distance},
                         {"capacity", l.capacity}});
    return j;
}

Network network_from_json(const nlohmann::json& j) {
    std::vector<Node> nodes;
    std::vector<Link> links;
    try {
        for (const auto& n : j.at("nodes"))
            nodes.push_back(Node{n.at("id").get<NodeId>(), n.at("electricity_price").get<double>(),
                                 n.at("site_cost").get<double>()});
        for (const auto& l : j.at("links"))
            links.push_back(Link{l.at("id").get<int>(), l.at("tail").get<NodeId>(), l.at("head").get<NodeId>(),
                                 l.at("distance").get<double>(), l.at("capacity").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("network json: ") + e.what());
    }
    return Network(std::move(nodes), std::move(links));
}

Scenario parse_scenario(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object())
        throw ParseError("scenario must be a JSON object");
    if (!doc.contains("network_path") || !doc.at("network_path").is_string())
        throw ParseError("scenario: missing string field 'network_path'");

    double scale = 1.0;
    if (doc.contains("distance_unit")) {
        const auto unit = doc.at("distance_unit").get<std::string>();
        if (unit == "hours")
            scale = 1.0;
        else if (unit == "minutes")
            scale = 1.0 / 60.0;
        else
            throw ParseError("scenario: distance_unit must be 'hours' or 'minutes'");
    }
    if (doc.contains("distance_scale"))
        scale = require_number(doc, "distance_scale", "scenario");

    std::filesystem::path net_path = doc.at("network_path").get<std::string>();
    if (net_path.is_relative())
        net_path = base_dir / net_path;
    Network base = load_network(net_path, scale);

    if (!doc.contains("nodes") || !doc.at("nodes").is_array())
        throw ParseError("scenario: missing array 'nodes' with per-node electricity_price and site_cost");
    std::vector<Node> nodes(base.nodes().begin(), base.nodes().end());
    std::vector<bool> seen(nodes.size(), false);
    for (const auto& n : doc.at("nodes")) {
        const auto id = static_cast<NodeId>(require_number(n, "id", "scenario node"));
        const auto where = "scenario node " + std::to_string(id);
        const auto idx = base.find(id);
        if (!idx)
            throw ValidationError(where + ": unknown node id");
        nodes[*idx].electricity_price = require_number(n, "electricity_price", where);
        nodes[*idx].site_cost = require_number(n, "site_cost", where);
        seen[*idx] = true;
    }
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (!seen[i])
            throw ValidationError("scenario: node " + std::to_string(nodes[i].id) +
                                  " has no explicit electricity_price/site_cost");

    Scenario sc{doc.value("name", std::string{"scenario"}), base.with_nodes(std::move(nodes)), {}, {}, {}, 10};

    if (!doc.contains("params") || !doc.at("params").is_object())
        throw ParseError("scenario: missing object 'params'");
    const auto& p = doc.at("params");
    sc.params.time_value = require_number(p, "lambda", "params");
    sc.params.service_rate = require_number(p, "mu", "params");
    sc.params.profit_margin = require_number(p, "pi", "params");
    const double budget = require_number(p, "budget", "params");
    if (budget != std::floor(budget))
        throw ValidationError("params: budget must be an integer number of chargers");
    sc.params.budget = static_cast<int>(budget);
    validate(sc.params);

    std::optional<double> alpha;
    if (p.contains("alpha")) {
        alpha = require_number(p, "alpha", "params");
        if (!(*alpha >= 0.0 && *alpha <= 1.0))
            throw ValidationError("params: alpha must lie in [0, 1]");
    }

    if (!doc.contains("demands") || !doc.at("demands").is_array())
        throw ParseError("scenario: missing array 'demands'");
    for (const auto& d : doc.at("demands")) {
        OdDemand od;
        od.origin = static_cast<NodeId>(require_number(d, "origin", "demand"));
        od.destination = static_cast<NodeId>(require_number(d, "destination", "demand"));
        const auto where = "demand " + std::to_string(od.origin) + "->" + std::to_string(od.destination);
        if (d.contains("ev_flow") || d.contains("ncd_flow")) {
            od.ev_flow = require_number(d, "ev_flow", where);
            od.ncd_flow = require_number(d, "ncd_flow", where);
        }
        if (d.contains("total_flow")) {
            const double total = require_number(d, "total_flow", where);
            if (total < 0.0)
                throw ValidationError(where + ": negative demand");
            if (!alpha)
                throw ValidationError(where + ": total_flow requires params.alpha to split EV and NCD flow");
            od.ev_flow = *alpha * total;
            od.ncd_flow = total - od.ev_flow;
        } else if (alpha) {
            const double total = od.ev_flow + od.ncd_flow;
            if (od.ev_flow < 0.0 || od.ncd_flow < 0.0)
                throw ValidationError(where + ": negative demand");
            od.ev_flow = *alpha * total;
            od.ncd_flow = total - od.ev_flow;
        }
        validate(od, sc.network);
        sc.demands.push_back(od);
    }

    if (doc.contains("candidates")) {
        for (const auto& c : doc.at("candidates")) {
            const auto id = c.get<NodeId>();
            if (!sc.network.find(id))
                throw ValidationError("scenario: candidate node " + std::to_string(id) + " does not exist");
            sc.candidates.push_back(id);
        }
        std::sort(sc.candidates.begin(), sc.candidates.end());
        sc.candidates.erase(std::unique(sc.candidates.begin(), sc.candidates.end()), sc.candidates.end());
    } else {
        for (const auto& n : sc.network.nodes())
            sc.candidates.push_back(n.id);
    }

    if (doc.contains("routes_per_od")) {
        const double k = require_number(doc, "routes_per_od", "scenario");
        if (k < 1 || k != std::floor(k))
            throw ValidationError("scenario: routes_per_od must be a positive integer");
        sc.routes_per_od = static_cast<std::size_t>(k);
    }
    return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw ParseError("cannot open scenario file " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return parse_scenario(doc, path.parent_path());
}

}  // namespace evcs
