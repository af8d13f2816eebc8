#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <utility>
#include <vector>

#include "rglight/roadnet.hpp"

namespace rglight::sim {

using net::ConnectionId;
using net::LaneId;
using net::NodeId;
using net::RoadNetwork;

enum class Action : std::uint8_t { Prolong = 0, Switch = 1 };

/// Speeds below this count as standing (queue membership, greedy baseline).
inline constexpr double kStandingSpeed = 0.1;

struct CarFollowing {
    double accel = 2.6;          // m/s^2
    double decel = 4.5;          // m/s^2
    double vehicle_space = 7.5;  // vehicle length + minimum gap, m
    double tau = 1.0;            // reaction time, s
};

struct Route {
    std::vector<LaneId> lanes;
};

struct Departure {
    int vehicle = 0;
    int route = 0;
    double max_speed = net::kDefaultSpeedLimit;
};

struct TripOptions {
    int regime_block = 120;  // seconds between origin-destination reweightings
    /// Bernoulli trials per second; 0 picks max(2, ceil(2 / period)).
    int binomial_trials = 0;
    double vehicle_max_speed = net::kDefaultSpeedLimit;
};

struct TripSchedule {
    double period = 0.0;
    int horizon = 0;
    int regime_block = 120;
    int binomial_trials = 0;
    std::vector<Route> routes;
    /// departures[t] lists vehicles scheduled to depart at step t.
    std::vector<std::vector<Departure>> departures;
    /// One origin-destination weight vector (over routes) per regime block.
    std::vector<std::vector<double>> block_weights;

    const std::vector<double>& weights_at(int step) const {
        return block_weights.at(static_cast<std::size_t>(step / regime_block));
    }
    std::size_t total() const;
};

/// Departure counts per step ~ Binomial(trials, 1 / (period * trials)); each
/// departure picks a source-to-sink route with the block's OD weights.
TripSchedule generate_trips(const RoadNetwork& net, double period, int horizon, std::uint64_t seed,
                            const TripOptions& opts = {});

/// All source-to-sink routes, shortest by length, in (source, sink) order.
std::vector<Route> enumerate_routes(const RoadNetwork& net);

struct Vehicle {
    int id = 0;
    int route = 0;
    int route_pos = 0;         // index of the current lane in the route
    double position = 0.0;     // front bumper, metres from lane start
    double speed = 0.0;
    int depart_step = 0;
    double max_speed = net::kDefaultSpeedLimit;
    int moved_at = -1;
};

struct TscState {
    int phase = 0;
    int seconds_in_phase = 0;
};

struct Arrival {
    int vehicle = 0;
    int depart_step = 0;
    int arrive_step = 0;
};

struct SimState {
    int clock = 0;
    /// Vehicles per lane, front (closest to the stop line) first.
    std::vector<std::deque<Vehicle>> lanes;
    std::vector<TscState> tsc;  // indexed like RoadNetwork::signalized()
    std::vector<std::deque<Departure>> pending;  // per lane; only sources queue
    std::vector<Arrival> arrived;
    std::vector<Route> routes;
    std::size_t departed = 0;
    int next_vehicle_id = 0;

    static SimState empty(const RoadNetwork& net);
    std::size_t in_network() const;
    /// Places a vehicle directly (tests, scenario seeding). Keeps lane order.
    void place(const RoadNetwork& net, std::vector<LaneId> route, double position, double speed,
               double max_speed = net::kDefaultSpeedLimit);
};

struct Crossing {
    int vehicle = 0;
    ConnectionId connection = 0;
    int step = 0;
};

struct MetricsFrame {
    int step = 0;
    double delay = 0.0;
    int queue = 0;  // summed over inbound lanes of signalized intersections
    int switches = 0;  // executed controller switches out of green phases
    int requested = 0;
    int masked = 0;
    int arrivals = 0;
    int departures = 0;
    std::vector<Crossing> crossings;  // filled when SimOptions::record_crossings
};

struct SimOptions {
    CarFollowing car;
    bool record_crossings = false;
};

double compute_delay(const RoadNetwork& net, const SimState& state);
/// Standing vehicles contiguous from the stop line, for every lane.
std::vector<int> compute_queues(const RoadNetwork& net, const SimState& state,
                                double spacing = CarFollowing{}.vehicle_space);
/// -(sum of queue lengths over the intersection's inbound lanes).
double reward(const RoadNetwork& net, const SimState& state, NodeId tsc);
std::vector<double> rewards(const RoadNetwork& net, const std::vector<int>& queues);
std::vector<std::pair<int, int>> travel_times(const SimState& state);

struct InboundCounts {
    int stopped = 0;
    int moving = 0;
};
InboundCounts inbound_counts(const RoadNetwork& net, const SimState& state, NodeId tsc);

class Simulation {
  public:
    Simulation(const RoadNetwork& net, TripSchedule trips, SimOptions opts = {});
    /// Builds around an existing state with no scheduled trips.
    Simulation(const RoadNetwork& net, SimState state, int horizon, SimOptions opts = {});

    /// One action per signalized intersection, in RoadNetwork::signalized() order.
    MetricsFrame step(std::span<const Action> actions);
    /// Keyed form; rejects unknown, duplicate, and missing intersections.
    MetricsFrame step(const std::vector<std::pair<NodeId, Action>>& actions);

    const SimState& state() const { return state_; }
    SimState& mutable_state() { return state_; }
    const RoadNetwork& network() const { return *net_; }
    const TripSchedule& trips() const { return trips_; }
    int horizon() const { return horizon_; }
    bool done() const { return state_.clock >= horizon_; }
    const std::vector<int>& last_queues() const { return queues_; }

  private:
    void apply_signals(std::span<const Action> actions, MetricsFrame& frame);
    void insert_departures(MetricsFrame& frame);
    void move_vehicles(MetricsFrame& frame);

    const RoadNetwork* net_;
    TripSchedule trips_;
    SimOptions opts_;
    SimState state_;
    int horizon_ = 0;
    std::vector<int> queues_;
};

}  // namespace rglight::sim
