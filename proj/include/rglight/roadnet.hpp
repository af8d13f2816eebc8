#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace rglight::net {

using NodeId = int;
using LaneId = int;
using ConnectionId = int;
using RoadId = int;

inline constexpr double kDefaultSpeedLimit = 13.89;  // 50 km/h
inline constexpr double kMinLaneLength = 100.0;
inline constexpr double kMaxLaneLength = 300.0;
inline constexpr int kNetworkFormatVersion = 1;

enum class NodeKind : std::uint8_t { Signalized, Boundary };

struct Intersection {
    NodeId id = 0;
    NodeKind kind = NodeKind::Signalized;
    double x = 0.0;
    double y = 0.0;
};

struct Lane {
    LaneId id = 0;
    RoadId road = 0;
    int index = 0;  // position across the road, 0 = rightmost
    NodeId from = 0;
    NodeId to = 0;
    double length = 0.0;
    double speed_limit = kDefaultSpeedLimit;
    std::vector<ConnectionId> successors;
};

struct Connection {
    ConnectionId id = 0;
    LaneId from_lane = 0;
    LaneId to_lane = 0;
    NodeId intersection = 0;
};

enum class PhaseKind : std::uint8_t { Green, Clearance };

struct PhaseEntry {
    ConnectionId connection = 0;
    bool open = false;
    bool priority = false;
};

struct Phase {
    PhaseKind kind = PhaseKind::Green;
    std::vector<PhaseEntry> entries;
};

/// Cyclic signal program. Green phases end on a controller switch once they
/// have run `min_phase_duration` seconds; clearance phases end by themselves
/// after `clearance_duration` seconds.
struct PhaseProgram {
    NodeId intersection = 0;
    std::vector<Phase> phases;
    int min_phase_duration = 5;
    int clearance_duration = 2;

    std::size_t next(std::size_t phase) const { return (phase + 1) % phases.size(); }
    int min_duration(std::size_t phase) const {
        return phases[phase].kind == PhaseKind::Clearance ? clearance_duration
                                                          : min_phase_duration;
    }
};

/// Static topology. Immutable once `finalize()` has run; all lookups used by
/// the simulator are precomputed there.
class RoadNetwork {
  public:
    std::vector<Intersection> intersections;
    std::vector<Lane> lanes;
    std::vector<Connection> connections;
    std::map<NodeId, PhaseProgram> programs;

    /// Rebuilds derived indices and checks every structural invariant.
    /// Throws std::invalid_argument describing the first violation.
    void finalize();

    const std::vector<NodeId>& signalized() const { return signalized_; }
    /// Position of `node` in signalized(), or -1.
    int tsc_index(NodeId node) const { return tsc_index_[node]; }
    const std::vector<LaneId>& inbound(NodeId node) const { return inbound_[node]; }
    const std::vector<ConnectionId>& connections_at(NodeId node) const {
        return node_connections_[node];
    }
    const std::vector<LaneId>& sources() const { return sources_; }
    const std::vector<LaneId>& sinks() const { return sinks_; }

    /// Connection id linking two lanes, or -1.
    ConnectionId connection_between(LaneId from, LaneId to) const;

    const PhaseProgram& program(NodeId node) const { return programs.at(node); }
    bool is_open(ConnectionId c, std::size_t phase) const {
        return open_[c][phase] != 0;
    }
    bool has_priority(ConnectionId c, std::size_t phase) const {
        return priority_[c][phase] != 0;
    }

  private:
    std::vector<NodeId> signalized_;
    std::vector<int> tsc_index_;
    std::vector<std::vector<LaneId>> inbound_;
    std::vector<std::vector<ConnectionId>> node_connections_;
    std::vector<LaneId> sources_;
    std::vector<LaneId> sinks_;
    std::map<std::pair<LaneId, LaneId>, ConnectionId> by_lanes_;
    // Per connection, per phase of its intersection's program.
    std::vector<std::vector<std::uint8_t>> open_;
    std::vector<std::vector<std::uint8_t>> priority_;
};

/// Incremental construction of networks with geometry-aware defaults:
/// roads get `lanes_per_route` lanes in each direction, lane i feeds lane i
/// of every non-U-turn outgoing road.
class NetworkBuilder {
  public:
    NodeId add_node(NodeKind kind, double x, double y);
    /// Adds lanes in both directions between `a` and `b`.
    void add_road(NodeId a, NodeId b, double length, int lanes_per_route,
                  double speed_limit = kDefaultSpeedLimit);
    /// Adds connections, default programs, and finalizes.
    RoadNetwork build() &&;

  private:
    RoadNetwork net_;
    int next_road_ = 0;
};

/// Approach-group alternation (green A, all-red, green B, all-red).
/// Throws if the intersection has no connections.
PhaseProgram default_program(const RoadNetwork& net, NodeId intersection);

struct RandomNetworkOptions {
    /// Permits more than 10 intersections (outside the training profile).
    bool allow_large = false;
    double speed_limit = kDefaultSpeedLimit;
};

RoadNetwork generate_random_network(std::uint64_t seed, int n_intersections,
                                    int lanes_per_route,
                                    const RandomNetworkOptions& opts = {});

/// Lattice of rows x cols signalized nodes, 4-neighbour roads, and one
/// boundary stub per missing lattice neighbour (2*(rows+cols) stubs).
RoadNetwork generate_grid_network(int rows, int cols, int lanes_per_route,
                                  double road_length = 200.0,
                                  double speed_limit = kDefaultSpeedLimit);

nlohmann::json to_json(const RoadNetwork& net);
RoadNetwork network_from_json(const nlohmann::json& doc);
std::string serialize(const RoadNetwork& net);
RoadNetwork load_network(const std::string& path);
void save_network(const RoadNetwork& net, const std::string& path);

/// Lanes reachable from a source / lanes that can reach a sink.
std::vector<bool> reachable_from_sources(const RoadNetwork& net);
std::vector<bool> reaching_sinks(const RoadNetwork& net);

}  // namespace rglight::net
