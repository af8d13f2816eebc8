#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rglight/common.hpp"
#include "rglight/roadnet.hpp"
#include "rglight/simcore.hpp"

namespace rglight::obs {

enum class NodeType : std::uint8_t { Tsc = 0, Connection = 1, Lane = 2, Vehicle = 3 };
inline constexpr int kNodeTypes = 4;
inline constexpr std::array<int, kNodeTypes> kFeatureWidth{1, 4, 1, 2};

using Features = std::array<double, 4>;

/// Row-compressed symmetric matrix; columns sorted within each row.
struct SparseAdjacency {
    int n = 0;
    std::vector<int> row_ptr{0};
    std::vector<int> col;
    std::vector<double> val;

    double at(int i, int j) const;
};

/// D^{-1/2} (A + I) D^{-1/2} with D_ii = sum_j (A + I)_ij. Edges may be given
/// in either orientation; duplicates and self-edges are ignored.
SparseAdjacency normalize_adjacency(int n, std::span<const std::pair<int, int>> edges);

struct StateGraph {
    std::vector<NodeType> type;
    std::vector<std::int64_t> ref;  // intersection / connection / lane / vehicle id
    std::vector<Features> features;
    std::vector<std::pair<int, int>> edges;  // undirected, one entry per edge
    SparseAdjacency adjacency;
    std::vector<int> tsc_nodes;  // node of each signal, RoadNetwork::signalized() order

    int size() const { return static_cast<int>(type.size()); }
    int count(NodeType t) const;
    /// Recomputes `adjacency` from `edges`.
    void normalize();
    /// Nodes within `hops` edges of `node` (including it), ascending.
    std::vector<int> receptive_field(int node, int hops) const;
};

struct FeatureScale {
    double seconds = 1.0;
    double lane_length = 1.0;
    double speed = 1.0;
    bool position_by_lane_length = false;

    static FeatureScale raw() { return {}; }
    /// seconds / 60, lane length / 300, speed / 13.89, position / lane length.
    static FeatureScale standard() { return {60.0, 300.0, net::kDefaultSpeedLimit, true}; }
};

/// Per-step graph: TSC [seconds since last switch], connection [open now,
/// priority now, switches until next opening, priority at that opening],
/// lane [length], vehicle [speed, position]. Pure function of its inputs.
StateGraph build_state_graph(const sim::SimState& state, const net::RoadNetwork& net,
                             const FeatureScale& scale = FeatureScale::raw());

/// Faulty vehicle sensors: each vehicle node independently reports zeros.
class FailureModel {
  public:
    FailureModel(double missing_probability, std::uint64_t seed);
    double probability() const { return p_; }
    /// Zeroes vehicle features in place; returns the number of nodes hit.
    int apply(StateGraph& graph);

  private:
    double p_;
    Rng rng_;
};

StateGraph inject_failures(StateGraph graph, FailureModel& model);

nlohmann::json to_json(const StateGraph& graph);

}  // namespace rglight::obs
