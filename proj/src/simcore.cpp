#include "rglight/simcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>

#include "rglight/common.hpp"

namespace rglight::sim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int next_connection(const RoadNetwork& net, const Route& r, int pos) {
    if (pos + 1 >= static_cast<int>(r.lanes.size())) return -1;
    return net.connection_between(r.lanes[pos], r.lanes[pos + 1]);
}

/// Krauss safe speed for a follower at speed v behind a leader at speed vl, gap g.
double safe_speed(const CarFollowing& cf, double v, double vl, double g) {
    const double vbar = 0.5 * (v + vl);
    return vl + (g - vl * cf.tau) / (vbar / cf.decel + cf.tau);
}

}  // namespace

std::size_t TripSchedule::total() const {
    std::size_t n = 0;
    for (const auto& d : departures) n += d.size();
    return n;
}

std::vector<Route> enumerate_routes(const RoadNetwork& net) {
    std::vector<Route> routes;
    const std::size_t n = net.lanes.size();
    std::vector<bool> is_sink(n, false);
    for (LaneId s : net.sinks()) is_sink[s] = true;
    for (LaneId src : net.sources()) {
        std::vector<double> dist(n, kInf);
        std::vector<LaneId> prev(n, -1);
        using Item = std::pair<double, LaneId>;
        std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
        dist[src] = net.lanes[src].length;
        pq.emplace(dist[src], src);
        while (!pq.empty()) {
            auto [d, l] = pq.top();
            pq.pop();
            if (d > dist[l]) continue;
            for (ConnectionId c : net.lanes[l].successors) {
                const LaneId nxt = net.connections[c].to_lane;
                const double nd = d + net.lanes[nxt].length;
                if (nd < dist[nxt] || (nd == dist[nxt] && l < prev[nxt])) {
                    dist[nxt] = nd;
                    prev[nxt] = l;
                    pq.emplace(nd, nxt);
                }
            }
        }
        for (LaneId sink : net.sinks()) {
            if (sink == src || dist[sink] == kInf) continue;
            Route r;
            for (LaneId l = sink; l != -1; l = prev[l]) r.lanes.push_back(l);
            std::reverse(r.lanes.begin(), r.lanes.end());
            routes.push_back(std::move(r));
        }
    }
    return routes;
}

TripSchedule generate_trips(const RoadNetwork& net, double period, int horizon, std::uint64_t seed,
                            const TripOptions& opts) {
    require(period > 0.0, "generate_trips: period must be > 0");
    require(horizon >= 1, "generate_trips: horizon must be >= 1");
    require(opts.regime_block >= 1, "generate_trips: regime block must be >= 1");

    TripSchedule s;
    s.period = period;
    s.horizon = horizon;
    s.regime_block = opts.regime_block;
    s.binomial_trials = opts.binomial_trials > 0
                            ? opts.binomial_trials
                            : std::max(2, static_cast<int>(std::ceil(2.0 / period)));
    const double p = 1.0 / (period * s.binomial_trials);
    require(p <= 1.0, "generate_trips: binomial_trials too small for this period");
    s.routes = enumerate_routes(net);
    if (s.routes.empty()) throw std::invalid_argument("generate_trips: network has no source-to-sink route");

    Rng count_rng(derive_seed(seed, "trips.count"));
    Rng weight_rng(derive_seed(seed, "trips.weights"));
    Rng pick_rng(derive_seed(seed, "trips.pick"));

    const int n_blocks = (horizon + s.regime_block - 1) / s.regime_block;
    std::exponential_distribution<double> expo(1.0);
    for (int b = 0; b < n_blocks; ++b) {
        std::vector<double> src_w(net.lanes.size(), 0.0), sink_w(net.lanes.size(), 0.0);
        for (LaneId l : net.sources()) src_w[l] = expo(weight_rng);
        for (LaneId l : net.sinks()) sink_w[l] = expo(weight_rng);
        std::vector<double> w;
        w.reserve(s.routes.size());
        for (const Route& r : s.routes) w.push_back(src_w[r.lanes.front()] * sink_w[r.lanes.back()]);
        s.block_weights.push_back(std::move(w));
    }

    std::binomial_distribution<int> count(s.binomial_trials, p);
    s.departures.resize(horizon);
    int id = 0;
    for (int t = 0; t < horizon; ++t) {
        const int k = count(count_rng);
        if (k == 0) continue;
        const auto& w = s.weights_at(t);
        std::discrete_distribution<int> pick(w.begin(), w.end());
        for (int j = 0; j < k; ++j) {
            s.departures[t].push_back({id++, pick(pick_rng), opts.vehicle_max_speed});
        }
    }
    return s;
}

SimState SimState::empty(const RoadNetwork& net) {
    SimState s;
    s.lanes.resize(net.lanes.size());
    s.pending.resize(net.lanes.size());
    s.tsc.resize(net.signalized().size());
    return s;
}

std::size_t SimState::in_network() const {
    std::size_t n = 0;
    for (const auto& q : lanes) n += q.size();
    return n;
}

void SimState::place(const RoadNetwork& net, std::vector<LaneId> route, double position,
                     double speed, double max_speed) {
    require(!route.empty(), "place: empty route");
    const LaneId lane = route.front();
    require(position >= 0.0 && position <= net.lanes.at(lane).length, "place: position outside lane");
    for (std::size_t i = 0; i + 1 < route.size(); ++i) {
        require(net.connection_between(route[i], route[i + 1]) >= 0, "place: route is not connected");
    }
    Vehicle v;
    v.id = next_vehicle_id++;
    v.route = static_cast<int>(routes.size());
    v.position = position;
    v.speed = speed;
    v.max_speed = max_speed;
    v.depart_step = clock;
    routes.push_back({std::move(route)});
    auto& q = lanes[lane];
    auto it = std::find_if(q.begin(), q.end(), [&](const Vehicle& o) { return o.position < position; });
    q.insert(it, v);
    ++departed;
}

double compute_delay(const RoadNetwork& net, const SimState& state) {
    double d = 0.0;
    for (std::size_t l = 0; l < state.lanes.size(); ++l) {
        const double limit = net.lanes[l].speed_limit;
        for (const Vehicle& v : state.lanes[l]) {
            const double best = std::min(v.max_speed, limit);
            d += std::clamp((best - v.speed) / best, 0.0, 1.0);
        }
    }
    return d;
}

std::vector<int> compute_queues(const RoadNetwork& net, const SimState& state, double spacing) {
    std::vector<int> q(state.lanes.size(), 0);
    for (std::size_t l = 0; l < state.lanes.size(); ++l) {
        const double len = net.lanes[l].length;
        const int capacity = static_cast<int>(len / spacing) + 1;
        double prev = len;
        int n = 0;
        for (const Vehicle& v : state.lanes[l]) {
            if (v.speed >= kStandingSpeed) break;
            const double allowed = n == 0 ? spacing : 2.0 * spacing;
            if (prev - v.position > allowed) break;
            ++n;
            prev = v.position;
        }
        q[l] = std::min(n, capacity);
    }
    return q;
}

std::vector<double> rewards(const RoadNetwork& net, const std::vector<int>& queues) {
    std::vector<double> r(net.signalized().size(), 0.0);
    for (std::size_t i = 0; i < r.size(); ++i) {
        int sum = 0;
        for (LaneId l : net.inbound(net.signalized()[i])) sum += queues[l];
        r[i] = -static_cast<double>(sum);
    }
    return r;
}

double reward(const RoadNetwork& net, const SimState& state, NodeId tsc) {
    if (tsc < 0 || tsc >= static_cast<int>(net.intersections.size()) || net.tsc_index(tsc) < 0) {
        throw PreconditionError("reward: unknown traffic signal " + std::to_string(tsc));
    }
    const auto q = compute_queues(net, state);
    return rewards(net, q)[net.tsc_index(tsc)];
}

std::vector<std::pair<int, int>> travel_times(const SimState& state) {
    std::vector<std::pair<int, int>> out;
    out.reserve(state.arrived.size());
    for (const Arrival& a : state.arrived) out.emplace_back(a.vehicle, a.arrive_step - a.depart_step);
    return out;
}

InboundCounts inbound_counts(const RoadNetwork& net, const SimState& state, NodeId tsc) {
    InboundCounts c;
    for (LaneId l : net.inbound(tsc)) {
        for (const Vehicle& v : state.lanes[l]) {
            (v.speed < kStandingSpeed ? c.stopped : c.moving) += 1;
        }
    }
    return c;
}

Simulation::Simulation(const RoadNetwork& net, TripSchedule trips, SimOptions opts)
    : net_(&net), trips_(std::move(trips)), opts_(opts), state_(SimState::empty(net)),
      horizon_(trips_.horizon) {
    state_.routes = trips_.routes;
    state_.next_vehicle_id = static_cast<int>(trips_.total());
    queues_.assign(net.lanes.size(), 0);
}

Simulation::Simulation(const RoadNetwork& net, SimState state, int horizon, SimOptions opts)
    : net_(&net), opts_(opts), state_(std::move(state)), horizon_(horizon) {
    require(state_.lanes.size() == net.lanes.size() && state_.tsc.size() == net.signalized().size(),
            "Simulation: state does not match network");
    trips_.horizon = horizon;
    trips_.departures.resize(horizon);
    queues_ = compute_queues(net, state_, opts_.car.vehicle_space);
}

MetricsFrame Simulation::step(const std::vector<std::pair<NodeId, Action>>& actions) {
    const auto& tscs = net_->signalized();
    std::vector<Action> ordered(tscs.size(), Action::Prolong);
    std::vector<bool> seen(tscs.size(), false);
    for (auto [node, a] : actions) {
        if (node < 0 || node >= static_cast<int>(net_->intersections.size()) || net_->tsc_index(node) < 0) {
            throw PreconditionError("step: unknown traffic signal " + std::to_string(node));
        }
        const int idx = net_->tsc_index(node);
        if (seen[idx]) throw PreconditionError("step: duplicate action for " + std::to_string(node));
        seen[idx] = true;
        ordered[idx] = a;
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) throw PreconditionError("step: no action for " + std::to_string(tscs[i]));
    }
    return step(std::span<const Action>(ordered));
}

MetricsFrame Simulation::step(std::span<const Action> actions) {
    require(actions.size() == net_->signalized().size(), "step: one action per signal required");
    require(state_.clock < horizon_, "step: simulation horizon reached");
    MetricsFrame frame;
    frame.step = state_.clock;
    apply_signals(actions, frame);
    insert_departures(frame);
    move_vehicles(frame);
    for (TscState& t : state_.tsc) ++t.seconds_in_phase;
    ++state_.clock;

    frame.delay = compute_delay(*net_, state_);
    queues_ = compute_queues(*net_, state_, opts_.car.vehicle_space);
    for (NodeId node : net_->signalized()) {
        for (LaneId l : net_->inbound(node)) frame.queue += queues_[l];
    }
    return frame;
}

void Simulation::apply_signals(std::span<const Action> actions, MetricsFrame& frame) {
    const auto& tscs = net_->signalized();
    for (std::size_t i = 0; i < tscs.size(); ++i) {
        TscState& s = state_.tsc[i];
        const net::PhaseProgram& prog = net_->program(tscs[i]);
        const bool requested = actions[i] == Action::Switch;
        const bool clearance = prog.phases[s.phase].kind == net::PhaseKind::Clearance;
        bool advance = false;
        if (requested) ++frame.requested;
        if (clearance) {
            advance = s.seconds_in_phase >= prog.clearance_duration;
            if (requested) ++frame.masked;
        } else if (requested) {
            if (s.seconds_in_phase >= prog.min_phase_duration) {
                advance = true;
                ++frame.switches;
            } else {
                ++frame.masked;
            }
        }
        if (advance) {
            s.phase = static_cast<int>(prog.next(s.phase));
            s.seconds_in_phase = 0;
        }
    }
}

void Simulation::insert_departures(MetricsFrame& frame) {
    const int t = state_.clock;
    if (t < static_cast<int>(trips_.departures.size())) {
        for (const Departure& d : trips_.departures[t]) {
            state_.pending[state_.routes[d.route].lanes.front()].push_back(d);
        }
    }
    const double space = opts_.car.vehicle_space;
    for (LaneId src : net_->sources()) {
        auto& pend = state_.pending[src];
        if (pend.empty()) continue;
        auto& lane = state_.lanes[src];
        if (!lane.empty() && lane.back().position < space) continue;
        const Departure d = pend.front();
        pend.pop_front();
        Vehicle v;
        v.id = d.vehicle;
        v.route = d.route;
        v.max_speed = d.max_speed;
        v.depart_step = t;
        lane.push_back(v);
        ++state_.departed;
        ++frame.departures;
    }
}

void Simulation::move_vehicles(MetricsFrame& frame) {
    const int t = state_.clock;
    const CarFollowing& cf = opts_.car;
    for (std::size_t lane_id = 0; lane_id < state_.lanes.size(); ++lane_id) {
        auto& q = state_.lanes[lane_id];
        const net::Lane& lane = net_->lanes[lane_id];
        std::size_t i = 0;
        while (i < q.size()) {
            Vehicle& v = q[i];
            if (v.moved_at == t) {
                ++i;
                continue;
            }
            const Route& route = state_.routes[v.route];
            const bool last_lane = v.route_pos + 1 >= static_cast<int>(route.lanes.size());
            double gap = kInf;
            double lead_speed = 0.0;
            ConnectionId conn = -1;
            LaneId next = -1;
            if (i > 0) {
                gap = q[i - 1].position - cf.vehicle_space - v.position;
                lead_speed = q[i - 1].speed;
            } else if (!last_lane) {
                next = route.lanes[v.route_pos + 1];
                conn = next_connection(*net_, route, v.route_pos);
                const NodeId node = net_->connections[conn].intersection;
                const int phase = state_.tsc[net_->tsc_index(node)].phase;
                const double to_stop = lane.length - v.position;
                if (!net_->is_open(conn, static_cast<std::size_t>(phase))) {
                    gap = to_stop;
                } else {
                    const auto& nq = state_.lanes[next];
                    if (nq.empty()) {
                        gap = to_stop + net_->lanes[next].length;
                    } else {
                        const double back = nq.back().position - cf.vehicle_space;
                        if (back < 0.0) {
                            gap = to_stop;
                        } else {
                            gap = to_stop + back;
                            lead_speed = nq.back().speed;
                        }
                    }
                }
            }
            double vn = std::min({v.speed + cf.accel, v.max_speed, lane.speed_limit});
            if (gap != kInf) {
                gap = std::max(gap, 0.0);
                vn = std::min({vn, safe_speed(cf, v.speed, lead_speed, gap), gap});
            }
            vn = std::max(vn, 0.0);
            v.speed = vn;
            v.moved_at = t;
            const double pos = v.position + vn;
            if (pos <= lane.length) {
                v.position = pos;
                ++i;
                continue;
            }
            // Only the front vehicle can reach the stop line.
            Vehicle moving = v;
            q.pop_front();
            if (last_lane) {
                state_.arrived.push_back({moving.id, moving.depart_step, t});
                ++frame.arrivals;
                continue;
            }
            if (opts_.record_crossings) frame.crossings.push_back({moving.id, conn, t});
            moving.position = pos - lane.length;
            moving.route_pos += 1;
            moving.speed = std::min(moving.speed, net_->lanes[next].speed_limit);
            state_.lanes[next].push_back(moving);
        }
    }
}

}  // namespace rglight::sim
