#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "rglight/gcnmodel.hpp"
#include "test_util.hpp"

using namespace rglight;
using namespace rglight::model;
using ad::Matrix;
using obs::NodeType;
using obs::StateGraph;

namespace {

const char* kNames[] = {"tsc", "connection", "lane", "vehicle"};

GcnConfig small_config() {
    GcnConfig c;
    c.layers = 3;
    c.hidden = 6;
    c.quantile_embedding = 5;
    return c;
}

StateGraph busy_graph(std::uint64_t seed, int rows = 2, int cols = 2, int steps = 200) {
    const auto net = net::generate_grid_network(rows, cols, 1);
    sim::Simulation s(net, sim::generate_trips(net, 1.5, steps, seed));
    std::vector<sim::Action> a(net.signalized().size(), sim::Action::Prolong);
    std::mt19937_64 rng(seed);
    while (!s.done()) {
        for (auto& x : a) x = rng() % 9 == 0 ? sim::Action::Switch : sim::Action::Prolong;
        s.step(a);
    }
    return obs::build_state_graph(s.state(), net, obs::FeatureScale::standard());
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Dense reference forward written independently of the tape: per-type encoders,
// then H <- sigmoid(Ahat H W) per layer, using the graph's own node order.
Eigen::MatrixXd reference_embedding(const StateGraph& g, const ad::ParamStore& ps, const GcnConfig& cfg,
                                    Eigen::MatrixXd* h0_out = nullptr) {
    const int n = g.size();
    Eigen::MatrixXd ahat = Eigen::MatrixXd::Identity(n, n);
    for (auto [a, b] : g.edges) {
        ahat(a, b) = 1;
        ahat(b, a) = 1;
    }
    const Eigen::VectorXd dinv = ahat.rowwise().sum().cwiseSqrt().cwiseInverse();
    ahat = dinv.asDiagonal() * ahat * dinv.asDiagonal();

    Eigen::MatrixXd h(n, cfg.hidden);
    for (int u = 0; u < n; ++u) {
        const int t = static_cast<int>(g.type[u]);
        const auto& w = ps.get(std::string("enc.") + kNames[t] + ".W").value;
        const auto& b = ps.get(std::string("enc.") + kNames[t] + ".b").value;
        for (int j = 0; j < cfg.hidden; ++j) {
            double s = b(0, j);
            for (int f = 0; f < obs::kFeatureWidth[t]; ++f) s += g.features[u][f] * w(f, j);
            h(u, j) = sigm(s);
        }
    }
    if (h0_out) *h0_out = h;
    for (int l = 0; l < cfg.layers; ++l) {
        const Eigen::MatrixXd w = ps.get("gcn." + std::to_string(l) + ".W").value.cast<double>();
        h = (ahat * h * w).unaryExpr([](double x) { return sigm(x); });
    }
    Eigen::MatrixXd out(g.tsc_nodes.size(), cfg.hidden);
    for (std::size_t i = 0; i < g.tsc_nodes.size(); ++i) out.row(i) = h.row(g.tsc_nodes[i]);
    return out;
}

Matrix embed_full(const GcnModel& m, ad::ParamStore& ps, const StateGraph& g) {
    ad::Tape t;
    return m.embed(t, ps, batch_full(g), false).value();
}

StateGraph permuted(const StateGraph& g, std::uint64_t seed) {
    std::vector<int> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);  // old -> new
    StateGraph p;
    p.type.resize(g.size());
    p.ref.resize(g.size());
    p.features.resize(g.size());
    for (int u = 0; u < g.size(); ++u) {
        p.type[perm[u]] = g.type[u];
        p.ref[perm[u]] = g.ref[u];
        p.features[perm[u]] = g.features[u];
    }
    for (auto [a, b] : g.edges) p.edges.emplace_back(perm[b], perm[a]);
    std::shuffle(p.edges.begin(), p.edges.end(), rng);
    for (int t : g.tsc_nodes) p.tsc_nodes.push_back(perm[t]);
    p.normalize();
    return p;
}

StateGraph twin(const StateGraph& g) {
    StateGraph d = g;
    const int n = g.size();
    for (int u = 0; u < n; ++u) {
        d.type.push_back(g.type[u]);
        d.ref.push_back(g.ref[u] + 1000);
        d.features.push_back(g.features[u]);
    }
    for (auto [a, b] : g.edges) d.edges.emplace_back(a + n, b + n);
    for (int t : g.tsc_nodes) d.tsc_nodes.push_back(t + n);
    d.normalize();
    return d;
}

}  // namespace

TEST_CASE("embedding matches a dense reference forward") {
    const auto cfg = small_config();
    GcnModel m(cfg);
    ad::ParamStore ps;
    m.init_params(ps, 4, true);
    const auto g = busy_graph(2);
    const Matrix got = embed_full(m, ps, g);
    const Eigen::MatrixXd want = reference_embedding(g, ps, cfg);
    CHECK((got.cast<double>() - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("all-zero features give H0 = 0.5 everywhere") {
    const auto cfg = small_config();
    GcnModel m(cfg);
    ad::ParamStore ps;
    m.init_params(ps, 1, false);
    auto g = busy_graph(3);
    for (auto& f : g.features) f = {0, 0, 0, 0};
    Eigen::MatrixXd h0;
    const Eigen::MatrixXd want = reference_embedding(g, ps, cfg, &h0);
    CHECK((h0.array() - 0.5).abs().maxCoeff() == 0.0);
    CHECK((embed_full(m, ps, g).cast<double>() - want).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("isolated TSC sees only itself") {
    const auto cfg = small_config();
    GcnModel m(cfg);
    ad::ParamStore ps;
    m.init_params(ps, 2, false);
    StateGraph g;
    g.type = {NodeType::Tsc};
    g.ref = {0};
    g.features = {{0.7, 0, 0, 0}};
    g.tsc_nodes = {0};
    g.normalize();
    CHECK(g.adjacency.at(0, 0) == 1.0);
    Eigen::RowVectorXd h(cfg.hidden);
    for (int j = 0; j < cfg.hidden; ++j) {
        h(j) = sigm(0.7 * ps.get("enc.tsc.W").value(0, j) + ps.get("enc.tsc.b").value(0, j));
    }
    for (int l = 0; l < cfg.layers; ++l) {
        h = (h * ps.get("gcn." + std::to_string(l) + ".W").value.cast<double>()).unaryExpr([](double x) { return sigm(x); });
    }
    CHECK((embed_full(m, ps, g).row(0).cast<double>() - h).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("permuting node order leaves every TSC embedding unchanged") {
    GcnModel m(small_config());
    ad::ParamStore ps;
    m.init_params(ps, 5, false);
    const auto g = busy_graph(4);
    const Matrix a = embed_full(m, ps, g);
    for (std::uint64_t s = 0; s < 3; ++s) {
        const Matrix b = embed_full(m, ps, permuted(g, s));
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("nodes beyond the receptive field have no influence") {
    const auto cfg = small_config();
    GcnModel m(cfg);
    ad::ParamStore ps;
    m.init_params(ps, 6, false);
    const auto g = busy_graph(5, 2, 3);
    const Matrix base = embed_full(m, ps, g);
    const auto field = g.receptive_field(g.tsc_nodes[0], cfg.layers);
    int far = -1, near = -1;
    for (int u = 0; u < g.size(); ++u) {
        const bool inside = std::binary_search(field.begin(), field.end(), u);
        if (!inside && far < 0 && g.type[u] == NodeType::Lane) far = u;
        if (inside && u != g.tsc_nodes[0] && near < 0 && g.type[u] == NodeType::Lane) near = u;
    }
    REQUIRE(far >= 0);
    REQUIRE(near >= 0);
    auto g2 = g;
    g2.features[far][0] += 3.0;
    CHECK((embed_full(m, ps, g2).row(0) - base.row(0)).cwiseAbs().maxCoeff() == 0.0);
    auto g3 = g;
    g3.features[near][0] += 3.0;
    CHECK((embed_full(m, ps, g3).row(0) - base.row(0)).cwiseAbs().maxCoeff() > 1e-9);
}

TEST_CASE("parameter count does not depend on the network") {
    GcnModel m(small_config());
    ad::ParamStore ps;
    m.init_params(ps, 7, true);
    const auto count = ps.scalar_count();
    const auto small = embed_full(m, ps, busy_graph(1, 2, 2, 50));
    const auto large = embed_full(m, ps, busy_graph(1, 4, 4, 50));
    CHECK(small.rows() == 4);
    CHECK(large.rows() == 16);
    CHECK(ps.scalar_count() == count);
    const auto cfg = small_config();
    const std::size_t expected = (1 + 4 + 1 + 2) * cfg.hidden + 4 * cfg.hidden +
                                 cfg.layers * cfg.hidden * cfg.hidden + cfg.hidden * 2 + 2 +
                                 cfg.quantile_embedding * cfg.hidden + cfg.hidden;
    CHECK(count == expected);
}

TEST_CASE("bias-only head returns the bias") {
    GcnModel m(small_config());
    ad::ParamStore ps;
    m.init_params(ps, 8, false);
    ps.get("head.W").value.setZero();
    ps.get("head.b").value << 0.3, -0.2;
    const auto g = busy_graph(6);
    ad::Tape t;
    const Matrix q = m.q_values(t, ps, m.embed(t, ps, batch_full(g), false), false).value();
    for (int i = 0; i < q.rows(); ++i) {
        CHECK(q(i, 0) == doctest::Approx(0.3));
        CHECK(q(i, 1) == doctest::Approx(-0.2));
    }
}

TEST_CASE("identical neighbourhoods give identical values") {
    GcnModel m(small_config());
    ad::ParamStore ps;
    m.init_params(ps, 9, true);
    const auto net = testutil::star(4);
    auto st = sim::SimState::empty(net);
    st.place(net, {testutil::lane_between(net, 1, 0)}, 120, 4.0);
    const auto g = twin(obs::build_state_graph(st, net, obs::FeatureScale::standard()));
    ad::Tape t;
    const auto psi = m.embed(t, ps, batch_full(g), false);
    const Matrix q = m.q_values(t, ps, psi, false).value();
    CHECK(q.row(0) == q.row(1));
    Rng rng(1);
    const Matrix qd = m.q_from_quantiles(t, ps, psi, 8, QuantileMode::Midpoint, &rng, false).value();
    CHECK(qd.row(0) == qd.row(1));
}

TEST_CASE("quantile embedding") {
    const auto cfg = small_config();
    GcnModel m(cfg);
    ad::ParamStore ps;
    m.init_params(ps, 10, true);
    const std::vector<double> taus{0.0, 0.3, 1.0};
    ad::Tape t;
    const Matrix phi = m.quantile_embedding(t, ps, taus, false).value();
    const auto& w = ps.get("quantile.W").value;
    const auto& b = ps.get("quantile.b").value;
    for (std::size_t k = 0; k < taus.size(); ++k) {
        for (int j = 0; j < cfg.hidden; ++j) {
            double s = b(0, j);
            for (int i = 0; i < cfg.quantile_embedding; ++i) s += std::cos(M_PI * i * taus[k]) * w(i, j);
            CHECK(phi(k, j) == doctest::Approx(std::max(0.0, s)));
        }
    }
    const std::vector<double> bad{1.5};
    CHECK_THROWS_AS(m.quantile_embedding(t, ps, bad, false), PreconditionError);
    const std::vector<double> neg{-0.1};
    CHECK_THROWS_AS(m.quantile_embedding(t, ps, neg, false), PreconditionError);
}

TEST_CASE("unit quantile embedding collapses Z to Q, zero embedding leaves the bias") {
    GcnModel m(small_config());
    ad::ParamStore ps;
    m.init_params(ps, 11, true);
    const auto g = busy_graph(8);
    ps.get("quantile.W").value.setZero();
    ps.get("quantile.b").value.setOnes();
    ad::Tape t;
    const auto psi = m.embed(t, ps, batch_full(g), false);
    const Matrix q = m.q_values(t, ps, psi, false).value();
    Matrix taus(psi.rows(), 3);
    taus.col(0).setConstant(0.1);
    taus.col(1).setConstant(0.5);
    taus.col(2).setConstant(0.9);
    const Matrix z = m.z_values(t, ps, psi, taus, false).value();
    for (Eigen::Index b = 0; b < psi.rows(); ++b) {
        for (int i = 0; i < 3; ++i) CHECK((z.row(b * 3 + i) - q.row(b)).cwiseAbs().maxCoeff() < 1e-14);
    }
    ps.get("quantile.b").value.setConstant(-1.0);
    const Matrix z0 = m.z_values(t, ps, psi, taus, false).value();
    const auto& bias = ps.get("head.b").value;
    for (Eigen::Index r = 0; r < z0.rows(); ++r) CHECK(z0.row(r) == bias.row(0));
}

TEST_CASE("Q from quantiles: midpoint grid, single quantile, Monte-Carlo mean") {
    GcnModel m(small_config());
    ad::ParamStore ps;
    m.init_params(ps, 12, true);
    const auto g = busy_graph(9);
    ad::Tape t;
    const auto psi = m.embed(t, ps, batch_full(g), false);

    Matrix half(psi.rows(), 1);
    half.setConstant(0.5);
    const Matrix z_half = m.z_values(t, ps, psi, half, false).value();
    const Matrix k1 = m.q_from_quantiles(t, ps, psi, 1, QuantileMode::Midpoint, nullptr, false).value();
    CHECK((k1 - z_half).cwiseAbs().maxCoeff() < 1e-14);

    const int k = 64;
    const auto grid = midpoint_taus(k);
    CHECK(grid.front() == doctest::Approx(0.5 / k));
    Matrix taus(psi.rows(), k);
    for (int i = 0; i < k; ++i) taus.col(i).setConstant(grid[i]);
    const Matrix z = m.z_values(t, ps, psi, taus, false).value();
    Matrix mean = Matrix::Zero(psi.rows(), kActions);
    for (Eigen::Index b = 0; b < psi.rows(); ++b) {
        for (int i = 0; i < k; ++i) mean.row(b) += z.row(b * k + i) / k;
    }
    const Matrix mid = m.q_from_quantiles(t, ps, psi, k, QuantileMode::Midpoint, nullptr, false).value();
    CHECK((mid - mean).cwiseAbs().maxCoeff() < 1e-12);

    Rng rng(3);
    const Matrix mc = m.q_from_quantiles(t, ps, psi, 20000, QuantileMode::Sampled, &rng, false).value();
    const double spread = (z.colwise().maxCoeff() - z.colwise().minCoeff()).maxCoeff();
    CHECK((mc - mid).cwiseAbs().maxCoeff() < std::max(0.02 * spread, 1e-3));
    CHECK_THROWS(m.q_from_quantiles(t, ps, psi, 4, QuantileMode::Sampled, nullptr, false));
    CHECK_THROWS_AS(m.q_from_quantiles(t, ps, psi, 0, QuantileMode::Midpoint, nullptr, false), PreconditionError);
}

TEST_CASE("local batches reproduce full-graph embeddings") {
    const auto cfg = small_config();
    GcnModel m(cfg);
    ad::ParamStore ps;
    m.init_params(ps, 13, false);
    const auto g1 = busy_graph(10, 2, 3);
    const auto g2 = busy_graph(11);
    const Matrix f1 = embed_full(m, ps, g1);
    const Matrix f2 = embed_full(m, ps, g2);
    std::vector<LocalRef> refs;
    for (int i = 0; i < 6; ++i) refs.push_back({&g1, i});
    refs.push_back({&g2, 3});
    refs.push_back({&g1, 2});
    ad::Tape t;
    const Matrix local = m.embed(t, ps, batch_local(refs, cfg.layers), false).value();
    for (int i = 0; i < 6; ++i) CHECK((local.row(i) - f1.row(i)).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((local.row(6) - f2.row(3)).cwiseAbs().maxCoeff() < 1e-13);
    CHECK((local.row(7) - f1.row(2)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("model gradients match finite differences") {
    GcnConfig cfg = small_config();
    cfg.hidden = 4;
    cfg.quantile_embedding = 3;
    cfg.layers = 2;
    GcnModel m(cfg);
    ad::ParamStore ps;
    m.init_params(ps, 14, true);
    for (auto& p : ps.all()) {
        std::mt19937_64 r(std::hash<std::string>{}(p.name));
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] += u(r);
    }
    const auto g = busy_graph(12, 2, 2, 40);
    const auto batch = batch_full(g);
    Matrix taus(4, 2);
    taus << 0.1, 0.7, 0.3, 0.95, 0.5, 0.05, 0.8, 0.4;
    auto loss_of = [&](ad::Tape& t, bool trainable) {
        auto psi = m.embed(t, ps, batch, trainable);
        auto z = m.z_values(t, ps, psi, taus, trainable);
        auto q = m.q_values(t, ps, psi, trainable);
        return add(mean(huber(z, 1.0)), sum(mul(q, q)));
    };
    ad::Tape t;
    ad::backward(t, loss_of(t, true), ps);
    for (auto& p : ps.all()) {
        CAPTURE(p.name);
        const Matrix analytic = p.grad;
        const double err = testutil::gradient_error(p.value, [&] {
            ad::Tape f;
            return static_cast<double>(loss_of(f, false).item());
        }, analytic);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("config validation and JSON round trip") {
    GcnConfig c;
    c.layers = 4;
    c.hidden = 16;
    c.eval_quantiles = 7;
    c.huber = 0.5;
    c.init_gain = 2.5;
    const auto back = gcn_config_from_json(to_json(c));
    CHECK(to_json(back).dump() == to_json(c).dump());
    GcnConfig bad;
    bad.layers = 1;
    CHECK_THROWS_AS(bad.validate(), PreconditionError);
    bad = GcnConfig{};
    bad.huber = 0;
    CHECK_THROWS_AS(GcnModel{bad}, PreconditionError);
    bad = GcnConfig{};
    bad.tau_samples = 0;
    CHECK_THROWS_AS(bad.validate(), PreconditionError);
    bad = GcnConfig{};
    bad.init_gain = 0;
    CHECK_THROWS_AS(bad.validate(), PreconditionError);
    CHECK(GcnConfig{}.layers == 3);
    CHECK(GcnConfig{}.hidden == 32);
    CHECK(GcnConfig{}.eval_quantiles == 32);
}
