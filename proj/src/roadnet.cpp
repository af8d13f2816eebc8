#include "rglight/roadnet.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rglight/common.hpp"

namespace rglight::net {

namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& what) {
    throw std::invalid_argument("invalid road network: " + what);
}

double wrap_angle(double a) {
    while (a <= -std::numbers::pi) a += 2 * std::numbers::pi;
    while (a > std::numbers::pi) a -= 2 * std::numbers::pi;
    return a;
}

double heading(const Intersection& from, const Intersection& to) {
    return std::atan2(to.y - from.y, to.x - from.x);
}

}  // namespace

void RoadNetwork::finalize() {
    const auto n_nodes = static_cast<int>(intersections.size());
    for (int i = 0; i < n_nodes; ++i) {
        if (intersections[i].id != i) invalid("intersection ids must be dense");
    }
    for (int i = 0; i < static_cast<int>(lanes.size()); ++i) {
        const Lane& l = lanes[i];
        if (l.id != i) invalid("lane ids must be dense");
        if (!(l.length > 0.0)) invalid("lane " + std::to_string(i) + " has non-positive length");
        if (!(l.speed_limit > 0.0)) invalid("lane " + std::to_string(i) + " has non-positive speed limit");
        if (l.from < 0 || l.from >= n_nodes || l.to < 0 || l.to >= n_nodes || l.from == l.to) {
            invalid("lane " + std::to_string(i) + " has bad endpoints");
        }
    }

    inbound_.assign(n_nodes, {});
    node_connections_.assign(n_nodes, {});
    for (Lane& l : lanes) {
        l.successors.clear();
        inbound_[l.to].push_back(l.id);
    }
    by_lanes_.clear();
    for (int i = 0; i < static_cast<int>(connections.size()); ++i) {
        const Connection& c = connections[i];
        if (c.id != i) invalid("connection ids must be dense");
        if (c.from_lane == c.to_lane) invalid("connection " + std::to_string(i) + " loops on one lane");
        if (c.from_lane < 0 || c.from_lane >= static_cast<int>(lanes.size()) || c.to_lane < 0 ||
            c.to_lane >= static_cast<int>(lanes.size())) {
            invalid("connection " + std::to_string(i) + " references a missing lane");
        }
        if (lanes[c.from_lane].to != c.intersection || lanes[c.to_lane].from != c.intersection) {
            invalid("connection " + std::to_string(i) + " lanes do not meet at its intersection");
        }
        if (!by_lanes_.emplace(std::pair{c.from_lane, c.to_lane}, c.id).second) {
            invalid("duplicate connection between lanes");
        }
        lanes[c.from_lane].successors.push_back(c.id);
        node_connections_[c.intersection].push_back(c.id);
    }

    signalized_.clear();
    tsc_index_.assign(n_nodes, -1);
    sources_.clear();
    sinks_.clear();
    for (const Intersection& node : intersections) {
        if (node.kind == NodeKind::Signalized) {
            tsc_index_[node.id] = static_cast<int>(signalized_.size());
            signalized_.push_back(node.id);
        } else if (!node_connections_[node.id].empty()) {
            invalid("boundary node " + std::to_string(node.id) + " has connections");
        }
    }
    for (const Lane& l : lanes) {
        if (intersections[l.from].kind == NodeKind::Boundary) sources_.push_back(l.id);
        if (intersections[l.to].kind == NodeKind::Boundary) sinks_.push_back(l.id);
    }

    open_.assign(connections.size(), {});
    priority_.assign(connections.size(), {});
    for (NodeId node : signalized_) {
        auto it = programs.find(node);
        if (it == programs.end()) invalid("signalized node " + std::to_string(node) + " has no program");
        const PhaseProgram& prog = it->second;
        if (prog.intersection != node) invalid("program keyed under the wrong intersection");
        if (prog.phases.size() < 2) invalid("program at " + std::to_string(node) + " has fewer than 2 phases");
        if (prog.min_phase_duration < 1 || prog.clearance_duration < 1) {
            invalid("phase durations must be at least 1 s");
        }
        for (ConnectionId c : node_connections_[node]) {
            open_[c].assign(prog.phases.size(), 0);
            priority_[c].assign(prog.phases.size(), 0);
        }
        for (std::size_t p = 0; p < prog.phases.size(); ++p) {
            for (const PhaseEntry& e : prog.phases[p].entries) {
                if (e.connection < 0 || e.connection >= static_cast<int>(connections.size()) ||
                    connections[e.connection].intersection != node) {
                    invalid("program at " + std::to_string(node) + " references a foreign connection");
                }
                open_[e.connection][p] = e.open ? 1 : 0;
                priority_[e.connection][p] = (e.open && e.priority) ? 1 : 0;
            }
        }
        for (ConnectionId c : node_connections_[node]) {
            if (std::none_of(open_[c].begin(), open_[c].end(), [](auto v) { return v != 0; })) {
                invalid("connection " + std::to_string(c) + " never opens");
            }
        }
    }
    for (const auto& [node, prog] : programs) {
        if (node < 0 || node >= n_nodes || intersections[node].kind != NodeKind::Signalized) {
            invalid("program attached to a non-signalized node");
        }
    }
}

ConnectionId RoadNetwork::connection_between(LaneId from, LaneId to) const {
    auto it = by_lanes_.find({from, to});
    return it == by_lanes_.end() ? -1 : it->second;
}

NodeId NetworkBuilder::add_node(NodeKind kind, double x, double y) {
    const auto id = static_cast<NodeId>(net_.intersections.size());
    net_.intersections.push_back({id, kind, x, y});
    return id;
}

void NetworkBuilder::add_road(NodeId a, NodeId b, double length, int lanes_per_route,
                              double speed_limit) {
    require(lanes_per_route >= 1, "lanes_per_route must be >= 1");
    for (auto [from, to] : {std::pair{a, b}, std::pair{b, a}}) {
        const RoadId road = next_road_++;
        for (int i = 0; i < lanes_per_route; ++i) {
            Lane l;
            l.id = static_cast<LaneId>(net_.lanes.size());
            l.road = road;
            l.index = i;
            l.from = from;
            l.to = to;
            l.length = length;
            l.speed_limit = speed_limit;
            net_.lanes.push_back(l);
        }
    }
}

RoadNetwork NetworkBuilder::build() && {
    // Group lanes by road so lane i of one road can be matched to lane i of the next.
    std::map<RoadId, std::vector<LaneId>> road_lanes;
    for (const Lane& l : net_.lanes) road_lanes[l.road].push_back(l.id);

    for (const Intersection& node : net_.intersections) {
        if (node.kind != NodeKind::Signalized) continue;
        for (const auto& [in_road, in_lanes] : road_lanes) {
            const Lane& in0 = net_.lanes[in_lanes.front()];
            if (in0.to != node.id) continue;
            for (const auto& [out_road, out_lanes] : road_lanes) {
                const Lane& out0 = net_.lanes[out_lanes.front()];
                if (out0.from != node.id || out0.to == in0.from) continue;  // no U-turns
                for (LaneId in : in_lanes) {
                    const int idx = std::min<int>(net_.lanes[in].index,
                                                  static_cast<int>(out_lanes.size()) - 1);
                    Connection c;
                    c.id = static_cast<ConnectionId>(net_.connections.size());
                    c.from_lane = in;
                    c.to_lane = out_lanes[idx];
                    c.intersection = node.id;
                    net_.connections.push_back(c);
                }
            }
        }
    }
    // default_program only reads lanes, connections, and geometry.
    net_.programs.clear();
    for (const Intersection& node : net_.intersections) {
        if (node.kind == NodeKind::Signalized) {
            net_.programs[node.id] = default_program(net_, node.id);
        }
    }
    net_.finalize();
    return std::move(net_);
}

PhaseProgram default_program(const RoadNetwork& net, NodeId intersection) {
    std::vector<ConnectionId> conns;
    for (const Connection& c : net.connections) {
        if (c.intersection == intersection) conns.push_back(c.id);
    }
    if (conns.empty()) {
        throw PreconditionError("default_program: intersection " + std::to_string(intersection) +
                                " has no connections");
    }
    const Intersection& here = net.intersections.at(intersection);

    // Incoming roads, keyed by road id, with the bearing towards the upstream node.
    std::map<RoadId, double> bearing;
    for (ConnectionId c : conns) {
        const Lane& in = net.lanes[net.connections[c].from_lane];
        bearing.emplace(in.road, heading(here, net.intersections[in.from]));
    }
    std::map<RoadId, int> group;
    const double ref = bearing.begin()->second;
    bool degenerate = true;
    for (const auto& [road, b] : bearing) {
        double d = std::fmod(std::abs(wrap_angle(b - ref)), std::numbers::pi);
        if (d > std::numbers::pi / 2) d = std::numbers::pi - d;
        group[road] = d < std::numbers::pi / 4 ? 0 : 1;
        if (b != ref) degenerate = false;
    }
    if (degenerate) {
        int k = 0;
        for (auto& [road, g] : group) g = (k++) % 2;
    }
    if (bearing.size() > 1 &&
        std::none_of(group.begin(), group.end(), [](const auto& kv) { return kv.second == 1; })) {
        // Everything looked parallel; split off the road furthest from the reference axis.
        RoadId far = bearing.begin()->first;
        double best = -1.0;
        for (const auto& [road, b] : bearing) {
            double d = std::abs(wrap_angle(b - ref));
            if (d > best) {
                best = d;
                far = road;
            }
        }
        group[far] = 1;
    }
    std::map<int, int> group_size;
    for (const auto& [road, g] : group) ++group_size[g];

    PhaseProgram prog;
    prog.intersection = intersection;
    const bool two_groups = group_size.size() > 1;
    const int n_greens = two_groups ? 2 : 1;
    for (int g = 0; g < n_greens; ++g) {
        Phase green;
        green.kind = PhaseKind::Green;
        Phase clear;
        clear.kind = PhaseKind::Clearance;
        for (ConnectionId c : conns) {
            const Connection& conn = net.connections[c];
            const Lane& in = net.lanes[conn.from_lane];
            const Lane& out = net.lanes[conn.to_lane];
            const bool open = !two_groups || group.at(in.road) == g;
            // Left turns across an opposing approach of the same group are permissive.
            const double h_in = heading(net.intersections[in.from], here);
            const double h_out = heading(here, net.intersections[out.to]);
            const bool left = wrap_angle(h_out - h_in) > std::numbers::pi / 4;
            const bool opposed = group_size[group.at(in.road)] > 1;
            green.entries.push_back({c, open, open && !(left && opposed)});
            clear.entries.push_back({c, false, false});
        }
        prog.phases.push_back(std::move(green));
        prog.phases.push_back(std::move(clear));
    }
    return prog;
}

namespace {

bool segments_cross(const Intersection& a, const Intersection& b, const Intersection& c,
                    const Intersection& d) {
    auto orient = [](const Intersection& p, const Intersection& q, const Intersection& r) {
        return (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    };
    if (a.id == c.id || a.id == d.id || b.id == c.id || b.id == d.id) return false;
    const double o1 = orient(a, b, c), o2 = orient(a, b, d);
    const double o3 = orient(c, d, a), o4 = orient(c, d, b);
    return (o1 * o2 < 0) && (o3 * o4 < 0);
}

bool connected(int n, const std::vector<std::pair<int, int>>& edges) {
    std::vector<std::vector<int>> adj(n);
    for (auto [a, b] : edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    std::vector<bool> seen(n, false);
    std::deque<int> q{0};
    seen[0] = true;
    int count = 1;
    while (!q.empty()) {
        int u = q.front();
        q.pop_front();
        for (int v : adj[u]) {
            if (!seen[v]) {
                seen[v] = true;
                ++count;
                q.push_back(v);
            }
        }
    }
    return count == n;
}

}  // namespace

RoadNetwork generate_random_network(std::uint64_t seed, int n_intersections, int lanes_per_route,
                                    const RandomNetworkOptions& opts) {
    require(n_intersections >= 2, "generate_random_network: need at least 2 intersections");
    require(opts.allow_large || n_intersections <= 10,
            "generate_random_network: training profile allows at most 10 intersections");
    require(lanes_per_route >= 1 && lanes_per_route <= 4,
            "generate_random_network: lanes_per_route must be in [1, 4]");

    Rng rng(derive_seed(seed, "roadnet.random"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int n = n_intersections;
    const double side = 220.0 * std::sqrt(static_cast<double>(n));
    constexpr int kMaxDegree = 4;

    for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) throw std::runtime_error("generate_random_network: no connected sample");
        std::vector<Intersection> pts(n);
        bool too_close = false;
        for (int i = 0; i < n; ++i) {
            pts[i] = {i, NodeKind::Signalized, unit(rng) * side, unit(rng) * side};
            for (int j = 0; j < i; ++j) {
                if (std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y) < kMinLaneLength) {
                    too_close = true;
                }
            }
        }
        if (too_close) continue;

        // Nearest-neighbour wiring: each node asks for 1-3 of its nearest
        // neighbours, subject to degree and non-crossing constraints.
        std::vector<std::pair<int, int>> edges;
        std::vector<int> degree(n, 0);
        auto has_edge = [&](int a, int b) {
            return std::any_of(edges.begin(), edges.end(), [&](auto e) {
                return (e.first == a && e.second == b) || (e.first == b && e.second == a);
            });
        };
        for (int i = 0; i < n; ++i) {
            std::vector<int> order;
            for (int j = 0; j < n; ++j) if (j != i) order.push_back(j);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                const double da = std::hypot(pts[i].x - pts[a].x, pts[i].y - pts[a].y);
                const double db = std::hypot(pts[i].x - pts[b].x, pts[i].y - pts[b].y);
                return da < db || (da == db && a < b);
            });
            const int want = 1 + static_cast<int>(unit(rng) * 3.0);
            int got = 0;
            for (int j : order) {
                if (got >= want) break;
                if (has_edge(i, j)) {
                    ++got;
                    continue;
                }
                if (degree[i] >= kMaxDegree - 1 || degree[j] >= kMaxDegree - 1) continue;
                bool crosses = false;
                for (auto [a, b] : edges) {
                    if (segments_cross(pts[i], pts[j], pts[a], pts[b])) {
                        crosses = true;
                        break;
                    }
                }
                if (crosses) continue;
                edges.emplace_back(i, j);
                ++degree[i];
                ++degree[j];
                ++got;
            }
        }
        if (!connected(n, edges)) continue;

        NetworkBuilder b;
        for (const Intersection& p : pts) b.add_node(NodeKind::Signalized, p.x, p.y);
        for (auto [i, j] : edges) {
            const double d = std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y);
            b.add_road(i, j, std::clamp(d, kMinLaneLength, kMaxLaneLength), lanes_per_route,
                       opts.speed_limit);
        }
        // Boundary stubs: every node reaches degree >= 3, some get a fourth.
        std::vector<std::vector<double>> bearings(n);
        for (auto [i, j] : edges) {
            bearings[i].push_back(heading(pts[i], pts[j]));
            bearings[j].push_back(heading(pts[j], pts[i]));
        }
        for (int i = 0; i < n; ++i) {
            int target = std::max(3, degree[i]);
            if (target < kMaxDegree && unit(rng) < 0.5) ++target;
            while (static_cast<int>(bearings[i].size()) < target) {
                // Place the stub in the middle of the widest angular gap.
                std::vector<double> bs = bearings[i];
                std::sort(bs.begin(), bs.end());
                double best_gap = -1.0, best_dir = 0.0;
                if (bs.empty()) {
                    best_dir = unit(rng) * 2 * std::numbers::pi;
                } else {
                    for (std::size_t k = 0; k < bs.size(); ++k) {
                        const double a0 = bs[k];
                        const double a1 = k + 1 < bs.size() ? bs[k + 1] : bs[0] + 2 * std::numbers::pi;
                        if (a1 - a0 > best_gap) {
                            best_gap = a1 - a0;
                            best_dir = (a0 + a1) / 2;
                        }
                    }
                }
                const double len = kMinLaneLength + unit(rng) * (kMaxLaneLength - kMinLaneLength);
                const NodeId stub = b.add_node(NodeKind::Boundary, pts[i].x + len * std::cos(best_dir),
                                               pts[i].y + len * std::sin(best_dir));
                b.add_road(i, stub, len, lanes_per_route, opts.speed_limit);
                bearings[i].push_back(wrap_angle(best_dir));
            }
        }
        RoadNetwork net = std::move(b).build();
        const auto from_src = reachable_from_sources(net);
        const auto to_sink = reaching_sinks(net);
        const bool ok = std::all_of(from_src.begin(), from_src.end(), [](bool v) { return v; }) &&
                        std::all_of(to_sink.begin(), to_sink.end(), [](bool v) { return v; });
        if (ok) return net;
    }
}

RoadNetwork generate_grid_network(int rows, int cols, int lanes_per_route, double road_length,
                                  double speed_limit) {
    require(rows >= 2 && cols >= 2, "generate_grid_network: rows and cols must be >= 2");
    require(lanes_per_route >= 1, "generate_grid_network: lanes_per_route must be >= 1");
    require(road_length >= kMinLaneLength && road_length <= kMaxLaneLength,
            "generate_grid_network: road length outside [100, 300] m");
    NetworkBuilder b;
    auto at = [cols](int r, int c) { return r * cols + c; };
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            b.add_node(NodeKind::Signalized, c * road_length, r * road_length);
        }
    }
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c + 1 < cols) b.add_road(at(r, c), at(r, c + 1), road_length, lanes_per_route, speed_limit);
            if (r + 1 < rows) b.add_road(at(r, c), at(r + 1, c), road_length, lanes_per_route, speed_limit);
        }
    }
    constexpr int dr[4] = {-1, 1, 0, 0};
    constexpr int dc[4] = {0, 0, -1, 1};
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            for (int k = 0; k < 4; ++k) {
                const int nr = r + dr[k], nc = c + dc[k];
                if (nr >= 0 && nr < rows && nc >= 0 && nc < cols) continue;
                const NodeId stub = b.add_node(NodeKind::Boundary, nc * road_length, nr * road_length);
                b.add_road(at(r, c), stub, road_length, lanes_per_route, speed_limit);
            }
        }
    }
    return std::move(b).build();
}

std::vector<bool> reachable_from_sources(const RoadNetwork& net) {
    std::vector<bool> seen(net.lanes.size(), false);
    std::deque<LaneId> q;
    for (LaneId s : net.sources()) {
        seen[s] = true;
        q.push_back(s);
    }
    while (!q.empty()) {
        const LaneId l = q.front();
        q.pop_front();
        for (ConnectionId c : net.lanes[l].successors) {
            const LaneId nxt = net.connections[c].to_lane;
            if (!seen[nxt]) {
                seen[nxt] = true;
                q.push_back(nxt);
            }
        }
    }
    return seen;
}

std::vector<bool> reaching_sinks(const RoadNetwork& net) {
    std::vector<std::vector<LaneId>> preds(net.lanes.size());
    for (const Connection& c : net.connections) preds[c.to_lane].push_back(c.from_lane);
    std::vector<bool> seen(net.lanes.size(), false);
    std::deque<LaneId> q;
    for (LaneId s : net.sinks()) {
        seen[s] = true;
        q.push_back(s);
    }
    while (!q.empty()) {
        const LaneId l = q.front();
        q.pop_front();
        for (LaneId p : preds[l]) {
            if (!seen[p]) {
                seen[p] = true;
                q.push_back(p);
            }
        }
    }
    return seen;
}

json to_json(const RoadNetwork& net) {
    json doc;
    doc["format"] = "rglight-network";
    doc["version"] = kNetworkFormatVersion;
    json nodes = json::array();
    for (const Intersection& n : net.intersections) {
        nodes.push_back({{"id", n.id},
                         {"kind", n.kind == NodeKind::Signalized ? "signalized" : "boundary"},
                         {"x", n.x},
                         {"y", n.y}});
    }
    doc["intersections"] = std::move(nodes);
    json lanes = json::array();
    for (const Lane& l : net.lanes) {
        lanes.push_back({{"id", l.id},
                         {"road", l.road},
                         {"index", l.index},
                         {"from", l.from},
                         {"to", l.to},
                         {"length", l.length},
                         {"speed_limit", l.speed_limit}});
    }
    doc["lanes"] = std::move(lanes);
    json conns = json::array();
    for (const Connection& c : net.connections) {
        conns.push_back({{"id", c.id},
                         {"from_lane", c.from_lane},
                         {"to_lane", c.to_lane},
                         {"intersection", c.intersection}});
    }
    doc["connections"] = std::move(conns);
    json progs = json::array();
    for (const auto& [node, p] : net.programs) {
        json phases = json::array();
        for (const Phase& ph : p.phases) {
            json entries = json::array();
            for (const PhaseEntry& e : ph.entries) {
                entries.push_back({{"connection", e.connection}, {"open", e.open}, {"priority", e.priority}});
            }
            phases.push_back({{"kind", ph.kind == PhaseKind::Green ? "green" : "clearance"},
                              {"entries", std::move(entries)}});
        }
        progs.push_back({{"intersection", node},
                         {"min_phase_duration", p.min_phase_duration},
                         {"clearance_duration", p.clearance_duration},
                         {"phases", std::move(phases)}});
    }
    doc["programs"] = std::move(progs);
    return doc;
}

RoadNetwork network_from_json(const json& doc) {
    if (doc.value("format", "") != "rglight-network") invalid("not an rglight-network document");
    if (doc.value("version", 0) != kNetworkFormatVersion) invalid("unsupported network version");
    RoadNetwork net;
    for (const json& n : doc.at("intersections")) {
        const std::string kind = n.at("kind");
        if (kind != "signalized" && kind != "boundary") invalid("unknown node kind " + kind);
        net.intersections.push_back({n.at("id").get<int>(),
                                     kind == "signalized" ? NodeKind::Signalized : NodeKind::Boundary,
                                     n.value("x", 0.0), n.value("y", 0.0)});
    }
    for (const json& l : doc.at("lanes")) {
        Lane lane;
        lane.id = l.at("id");
        lane.road = l.value("road", lane.id);
        lane.index = l.value("index", 0);
        lane.from = l.at("from");
        lane.to = l.at("to");
        lane.length = l.at("length");
        lane.speed_limit = l.value("speed_limit", kDefaultSpeedLimit);
        net.lanes.push_back(lane);
    }
    for (const json& c : doc.at("connections")) {
        net.connections.push_back(
            {c.at("id").get<int>(), c.at("from_lane").get<int>(), c.at("to_lane").get<int>(),
             c.at("intersection").get<int>()});
    }
    for (const json& p : doc.at("programs")) {
        PhaseProgram prog;
        prog.intersection = p.at("intersection");
        prog.min_phase_duration = p.value("min_phase_duration", 5);
        prog.clearance_duration = p.value("clearance_duration", 2);
        for (const json& ph : p.at("phases")) {
            Phase phase;
            const std::string kind = ph.at("kind");
            if (kind != "green" && kind != "clearance") invalid("unknown phase kind " + kind);
            phase.kind = kind == "green" ? PhaseKind::Green : PhaseKind::Clearance;
            for (const json& e : ph.at("entries")) {
                phase.entries.push_back({e.at("connection").get<int>(), e.at("open").get<bool>(),
                                         e.value("priority", false)});
            }
            prog.phases.push_back(std::move(phase));
        }
        const NodeId key = prog.intersection;
        if (!net.programs.emplace(key, std::move(prog)).second) invalid("duplicate program");
    }
    net.finalize();
    return net;
}

std::string serialize(const RoadNetwork& net) { return to_json(net).dump(1) + "\n"; }

RoadNetwork load_network(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open network file " + path);
    return network_from_json(json::parse(in));
}

void save_network(const RoadNetwork& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write network file " + path);
    out << serialize(net);
}

}  // namespace rglight::net
