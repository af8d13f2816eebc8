#include "rglight/obsgraph.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

#include <nlohmann/json.hpp>

namespace rglight::obs {

double SparseAdjacency::at(int i, int j) const {
    const auto b = col.begin() + row_ptr[i];
    const auto e = col.begin() + row_ptr[i + 1];
    auto it = std::lower_bound(b, e, j);
    return (it != e && *it == j) ? val[it - col.begin()] : 0.0;
}

SparseAdjacency normalize_adjacency(int n, std::span<const std::pair<int, int>> edges) {
    std::vector<std::vector<int>> nbr(n);
    for (int i = 0; i < n; ++i) nbr[i].push_back(i);
    for (auto [a, b] : edges) {
        require(a >= 0 && a < n && b >= 0 && b < n, "normalize_adjacency: edge endpoint out of range");
        if (a == b) continue;
        nbr[a].push_back(b);
        nbr[b].push_back(a);
    }
    std::vector<double> inv_sqrt(n);
    for (int i = 0; i < n; ++i) {
        std::sort(nbr[i].begin(), nbr[i].end());
        nbr[i].erase(std::unique(nbr[i].begin(), nbr[i].end()), nbr[i].end());
        inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(nbr[i].size()));
    }
    SparseAdjacency a;
    a.n = n;
    a.row_ptr.assign(1, 0);
    for (int i = 0; i < n; ++i) {
        for (int j : nbr[i]) {
            a.col.push_back(j);
            a.val.push_back(inv_sqrt[i] * inv_sqrt[j]);
        }
        a.row_ptr.push_back(static_cast<int>(a.col.size()));
    }
    return a;
}

int StateGraph::count(NodeType t) const {
    return static_cast<int>(std::count(type.begin(), type.end(), t));
}

void StateGraph::normalize() { adjacency = normalize_adjacency(size(), edges); }

std::vector<int> StateGraph::receptive_field(int node, int hops) const {
    std::vector<int> dist(size(), -1);
    std::deque<int> q{node};
    dist[node] = 0;
    std::vector<int> out{node};
    while (!q.empty()) {
        const int u = q.front();
        q.pop_front();
        if (dist[u] == hops) continue;
        for (int k = adjacency.row_ptr[u]; k < adjacency.row_ptr[u + 1]; ++k) {
            const int v = adjacency.col[k];
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                out.push_back(v);
                q.push_back(v);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

StateGraph build_state_graph(const sim::SimState& state, const net::RoadNetwork& net,
                             const FeatureScale& scale) {
    StateGraph g;
    const auto& tscs = net.signalized();
    const std::size_t n_vehicles = state.in_network();
    const std::size_t n = tscs.size() + net.connections.size() + net.lanes.size() + n_vehicles;
    g.type.reserve(n);
    g.ref.reserve(n);
    g.features.reserve(n);

    auto add = [&g](NodeType t, std::int64_t ref, Features f) {
        g.type.push_back(t);
        g.ref.push_back(ref);
        g.features.push_back(f);
        return static_cast<int>(g.type.size()) - 1;
    };

    std::vector<int> tsc_node(net.intersections.size(), -1);
    for (std::size_t i = 0; i < tscs.size(); ++i) {
        const double secs = state.tsc[i].seconds_in_phase;
        tsc_node[tscs[i]] = add(NodeType::Tsc, tscs[i], {secs / scale.seconds, 0, 0, 0});
        g.tsc_nodes.push_back(tsc_node[tscs[i]]);
    }

    const int conn_base = g.size();
    for (const net::Connection& c : net.connections) {
        const int ti = net.tsc_index(c.intersection);
        const std::size_t n_phases = net.program(c.intersection).phases.size();
        const auto phase = static_cast<std::size_t>(state.tsc[ti].phase);
        Features f{0, 0, 0, 0};
        if (net.is_open(c.id, phase)) {
            const double prio = net.has_priority(c.id, phase) ? 1.0 : 0.0;
            f = {1.0, prio, 0.0, prio};
        } else {
            for (std::size_t k = 1; k < n_phases; ++k) {
                const std::size_t q = (phase + k) % n_phases;
                if (net.is_open(c.id, q)) {
                    f = {0.0, 0.0, static_cast<double>(k), net.has_priority(c.id, q) ? 1.0 : 0.0};
                    break;
                }
            }
        }
        add(NodeType::Connection, c.id, f);
    }

    const int lane_base = g.size();
    for (const net::Lane& l : net.lanes) add(NodeType::Lane, l.id, {l.length / scale.lane_length, 0, 0, 0});

    for (const net::Connection& c : net.connections) {
        const int node = conn_base + c.id;
        g.edges.emplace_back(tsc_node[c.intersection], node);
        g.edges.emplace_back(node, lane_base + c.from_lane);
        g.edges.emplace_back(node, lane_base + c.to_lane);
    }
    for (std::size_t l = 0; l < state.lanes.size(); ++l) {
        const double len = net.lanes[l].length;
        for (const sim::Vehicle& v : state.lanes[l]) {
            const double pos = scale.position_by_lane_length ? v.position / len : v.position;
            const int node = add(NodeType::Vehicle, v.id, {v.speed / scale.speed, pos, 0, 0});
            g.edges.emplace_back(node, lane_base + static_cast<int>(l));
        }
    }
    g.normalize();
    return g;
}

FailureModel::FailureModel(double missing_probability, std::uint64_t seed)
    : p_(missing_probability), rng_(derive_seed(seed, "obs.failures")) {
    require(p_ >= 0.0 && p_ <= 1.0, "FailureModel: probability must be in [0, 1]");
}

int FailureModel::apply(StateGraph& graph) {
    if (p_ == 0.0) return 0;
    std::bernoulli_distribution fail(p_);
    int hit = 0;
    for (int i = 0; i < graph.size(); ++i) {
        if (graph.type[i] != NodeType::Vehicle) continue;
        if (fail(rng_)) {
            graph.features[i][0] = 0.0;
            graph.features[i][1] = 0.0;
            ++hit;
        }
    }
    return hit;
}

StateGraph inject_failures(StateGraph graph, FailureModel& model) {
    model.apply(graph);
    return graph;
}

nlohmann::json to_json(const StateGraph& graph) {
    static constexpr const char* kNames[] = {"tsc", "connection", "lane", "vehicle"};
    nlohmann::json nodes = nlohmann::json::array();
    for (int i = 0; i < graph.size(); ++i) {
        const auto t = static_cast<int>(graph.type[i]);
        nlohmann::json f = nlohmann::json::array();
        for (int k = 0; k < kFeatureWidth[t]; ++k) f.push_back(graph.features[i][k]);
        nodes.push_back({{"node", i}, {"type", kNames[t]}, {"ref", graph.ref[i]}, {"features", f}});
    }
    nlohmann::json edges = nlohmann::json::array();
    for (auto [a, b] : graph.edges) edges.push_back({a, b});
    return {{"nodes", nodes}, {"edges", edges}};
}

}  // namespace rglight::obs
