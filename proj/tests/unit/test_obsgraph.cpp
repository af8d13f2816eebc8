#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "rglight/obsgraph.hpp"
#include "test_util.hpp"

using namespace rglight;
using namespace rglight::obs;
using sim::Action;
using sim::SimState;
using net::LaneId;
using net::NodeId;

namespace {

Eigen::MatrixXd dense(const SparseAdjacency& a) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(a.n, a.n);
    for (int i = 0; i < a.n; ++i) {
        for (int k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) m(i, a.col[k]) = a.val[k];
    }
    return m;
}

// Straightforward dense construction: D^-1/2 (A + I) D^-1/2.
Eigen::MatrixXd dense_oracle(int n, const std::vector<std::pair<int, int>>& edges) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
    for (auto [i, j] : edges) {
        if (i == j) continue;
        a(i, j) = 1;
        a(j, i) = 1;
    }
    Eigen::VectorXd d = a.rowwise().sum().cwiseSqrt().cwiseInverse();
    return d.asDiagonal() * a * d.asDiagonal();
}

int node_of(const StateGraph& g, NodeType t, std::int64_t ref) {
    for (int i = 0; i < g.size(); ++i) {
        if (g.type[i] == t && g.ref[i] == ref) return i;
    }
    return -1;
}

StateGraph busy_graph(std::uint64_t seed, int steps = 300) {
    static const auto net = net::generate_grid_network(2, 2, 1);
    sim::Simulation s(net, sim::generate_trips(net, 1.0, steps, seed));
    std::vector<Action> a(net.signalized().size(), Action::Prolong);
    while (!s.done()) s.step(a);
    return build_state_graph(s.state(), net);
}

}  // namespace

TEST_CASE("TSC feature is seconds in the current phase") {
    const auto net = testutil::star(4);
    SimState st = SimState::empty(net);
    st.tsc[0] = {2, 12};
    auto g = build_state_graph(st, net);
    CHECK(g.features[g.tsc_nodes[0]][0] == 12.0);

    sim::Simulation s(net, SimState::empty(net), 100);
    std::vector<Action> a{Action::Prolong};
    for (int t = 0; t < 12; ++t) s.step(a);
    g = build_state_graph(s.state(), net);
    CHECK(g.features[g.tsc_nodes[0]][0] == 12.0);
    CHECK(build_state_graph(s.state(), net, FeatureScale::standard()).features[g.tsc_nodes[0]][0] ==
          doctest::Approx(0.2));
}

TEST_CASE("connection features") {
    const auto net = testutil::star(4);
    const NodeId c = net.signalized().front();
    // N -> S straight: open with priority in phase 0
    const auto ns = net.connection_between(testutil::lane_between(net, 1, c), testutil::lane_between(net, c, 3));
    // E -> W straight: closed in phase 0, opens after two switches
    const auto ew = net.connection_between(testutil::lane_between(net, 2, c), testutil::lane_between(net, c, 4));
    REQUIRE(ns >= 0);
    REQUIRE(ew >= 0);
    SimState st = SimState::empty(net);
    const auto g = build_state_graph(st, net);
    const auto& f_ns = g.features[node_of(g, NodeType::Connection, ns)];
    CHECK(f_ns == Features{1, 1, 0, 1});
    const auto& f_ew = g.features[node_of(g, NodeType::Connection, ew)];
    CHECK(f_ew == Features{0, 0, 2, 1});

    st.tsc[0].phase = 1;  // clearance: everything opens in 1 (EW) or 3 (NS) switches
    const auto g1 = build_state_graph(st, net);
    CHECK(g1.features[node_of(g1, NodeType::Connection, ns)] == Features{0, 0, 3, 1});
    CHECK(g1.features[node_of(g1, NodeType::Connection, ew)] == Features{0, 0, 1, 1});
}

TEST_CASE("vehicle and lane features") {
    const auto net = testutil::star(4);
    const LaneId l = testutil::lane_between(net, 1, 0);
    SimState st = SimState::empty(net);
    st.place(net, {l}, 45.6, 12.3);
    const auto g = build_state_graph(st, net);
    const int v = node_of(g, NodeType::Vehicle, 0);
    REQUIRE(v >= 0);
    CHECK(g.features[v][0] == 12.3);
    CHECK(g.features[v][1] == 45.6);
    CHECK(g.features[node_of(g, NodeType::Lane, l)][0] == 200.0);

    const auto gs = build_state_graph(st, net, FeatureScale::standard());
    CHECK(gs.features[v][0] == doctest::Approx(12.3 / 13.89));
    CHECK(gs.features[v][1] == doctest::Approx(45.6 / 200.0));
    CHECK(gs.features[node_of(gs, NodeType::Lane, l)][0] == doctest::Approx(200.0 / 300.0));
}

TEST_CASE("graph structure invariants") {
    const auto g = busy_graph(3);
    const auto net = net::generate_grid_network(2, 2, 1);
    REQUIRE(g.count(NodeType::Vehicle) > 10);
    std::vector<std::vector<int>> nbr(g.size());
    for (auto [a, b] : g.edges) {
        nbr[a].push_back(b);
        nbr[b].push_back(a);
    }
    for (int i = 0; i < g.size(); ++i) {
        if (g.type[i] == NodeType::Vehicle) {
            REQUIRE(nbr[i].size() == 1);
            CHECK(g.type[nbr[i][0]] == NodeType::Lane);
        }
        if (g.type[i] == NodeType::Connection) {
            REQUIRE(nbr[i].size() == 3);
            int tsc = 0, lanes = 0;
            for (int j : nbr[i]) (g.type[j] == NodeType::Tsc ? tsc : lanes) += 1;
            CHECK(tsc == 1);
            CHECK(lanes == 2);
        }
    }
    CHECK(g.count(NodeType::Tsc) == 4);
    CHECK(g.count(NodeType::Lane) == static_cast<int>(net.lanes.size()));
    CHECK(g.count(NodeType::Connection) == static_cast<int>(net.connections.size()));
}

TEST_CASE("graph building is a pure function of its inputs") {
    const auto a = busy_graph(5);
    const auto b = busy_graph(5);
    CHECK(a.features == b.features);
    CHECK(a.edges == b.edges);
    CHECK(a.adjacency.val == b.adjacency.val);
}

TEST_CASE("failures: p=0 is the identity, p=1 zeroes every vehicle") {
    const auto g = busy_graph(7);
    FailureModel none(0.0, 1);
    const auto same = inject_failures(g, none);
    CHECK(same.features == g.features);

    FailureModel all(1.0, 1);
    const auto zero = inject_failures(g, all);
    CHECK(zero.edges == g.edges);
    CHECK(zero.adjacency.val == g.adjacency.val);
    for (int i = 0; i < g.size(); ++i) {
        if (g.type[i] == NodeType::Vehicle) {
            CHECK(zero.features[i] == Features{0, 0, 0, 0});
        } else {
            CHECK(zero.features[i] == g.features[i]);
        }
    }

    const auto net = testutil::star(4);
    SimState st = SimState::empty(net);
    st.place(net, {testutil::lane_between(net, 1, 0)}, 45.6, 12.3);
    auto one = build_state_graph(st, net);
    CHECK(all.apply(one) == 1);
    CHECK(one.features[node_of(one, NodeType::Vehicle, 0)] == Features{0, 0, 0, 0});
}

TEST_CASE("failures: frequency matches p") {
    StateGraph g;
    for (int i = 0; i < 10000; ++i) {
        g.type.push_back(NodeType::Vehicle);
        g.ref.push_back(i);
        g.features.push_back({1.0, 2.0, 0, 0});
    }
    FailureModel m(0.4, 17);
    const int hit = m.apply(g);
    int zeroed = 0;
    for (const auto& f : g.features) zeroed += f[0] == 0.0 && f[1] == 0.0;
    CHECK(hit == zeroed);
    CHECK(std::abs(zeroed / 10000.0 - 0.4) <= 0.01);

    FailureModel again(0.4, 17);
    StateGraph h = g;
    for (auto& f : h.features) f = {1.0, 2.0, 0, 0};
    CHECK(again.apply(h) == hit);

    CHECK_THROWS_AS(FailureModel(1.5, 0), PreconditionError);
    CHECK_THROWS_AS(FailureModel(-0.1, 0), PreconditionError);
}

TEST_CASE("normalized adjacency small cases") {
    const std::vector<std::pair<int, int>> one_edge{{0, 1}};
    const auto two = normalize_adjacency(2, one_edge);
    CHECK(two.at(0, 0) == doctest::Approx(0.5));
    CHECK(two.at(0, 1) == doctest::Approx(0.5));
    CHECK(two.at(1, 0) == doctest::Approx(0.5));
    CHECK(two.at(1, 1) == doctest::Approx(0.5));

    const auto iso = normalize_adjacency(1, {});
    CHECK(iso.at(0, 0) == 1.0);

    const std::vector<std::pair<int, int>> star{{0, 1}, {0, 2}, {3, 0}};
    const auto s = normalize_adjacency(4, star);
    CHECK(s.at(0, 0) == doctest::Approx(0.25));
    CHECK(s.at(1, 1) == doctest::Approx(0.5));
    CHECK(s.at(0, 1) == doctest::Approx(1.0 / std::sqrt(8.0)));
    CHECK((dense(s) - dense_oracle(4, star)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("normalized adjacency: symmetric, non-negative, spectral radius at most one") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 15);
        std::vector<std::pair<int, int>> edges;
        std::bernoulli_distribution keep(0.3);
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j) {
                if (keep(rng)) edges.emplace_back(j, i);
            }
        }
        if (!edges.empty()) edges.push_back(edges.front());  // duplicate is ignored
        const auto m = dense(normalize_adjacency(n, edges));
        CHECK((m - m.transpose()).cwiseAbs().maxCoeff() < 1e-15);
        CHECK(m.minCoeff() >= 0.0);
        CHECK((m - dense_oracle(n, edges)).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        CHECK(es.eigenvalues().cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    }
}

TEST_CASE("receptive field by hop count") {
    // path 0-1-2-3-4
    StateGraph g;
    for (int i = 0; i < 5; ++i) {
        g.type.push_back(NodeType::Lane);
        g.ref.push_back(i);
        g.features.push_back({});
    }
    g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}};
    g.normalize();
    CHECK(g.receptive_field(2, 0) == std::vector<int>{2});
    CHECK(g.receptive_field(2, 1) == std::vector<int>{1, 2, 3});
    CHECK(g.receptive_field(0, 3) == std::vector<int>{0, 1, 2, 3});
}
