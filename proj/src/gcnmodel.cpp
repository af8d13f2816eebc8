#include "rglight/gcnmodel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

namespace rglight::model {

namespace {

constexpr const char* kTypeNames[obs::kNodeTypes] = {"tsc", "connection", "lane", "vehicle"};

ad::Matrix glorot(Rng& rng, int rows, int cols, double gain = 1.0) {
    const double limit = gain * std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> u(-limit, limit);
    ad::Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<ad::Real>(u(rng));
    return m;
}

std::string enc_w(int t) { return std::string("enc.") + kTypeNames[t] + ".W"; }
std::string enc_b(int t) { return std::string("enc.") + kTypeNames[t] + ".b"; }
std::string gcn_w(int n) { return "gcn." + std::to_string(n) + ".W"; }

}  // namespace

void GcnConfig::validate() const {
    require(layers >= 2, "GcnConfig: layers must be >= 2");
    require(hidden >= 1 && quantile_embedding >= 1, "GcnConfig: widths must be >= 1");
    require(tau_samples >= 1 && tau_target_samples >= 1 && eval_quantiles >= 1,
            "GcnConfig: quantile sample counts must be >= 1");
    require(huber > 0.0, "GcnConfig: huber threshold must be > 0");
    require(init_gain > 0.0, "GcnConfig: init_gain must be > 0");
}

nlohmann::json to_json(const GcnConfig& c) {
    return {{"layers", c.layers},
            {"hidden", c.hidden},
            {"quantile_embedding", c.quantile_embedding},
            {"tau_samples", c.tau_samples},
            {"tau_target_samples", c.tau_target_samples},
            {"eval_quantiles", c.eval_quantiles},
            {"huber", c.huber},
            {"head_hidden", c.head_hidden},
            {"init_gain", c.init_gain}};
}

GcnConfig gcn_config_from_json(const nlohmann::json& j) {
    GcnConfig c;
    c.layers = j.value("layers", c.layers);
    c.hidden = j.value("hidden", c.hidden);
    c.quantile_embedding = j.value("quantile_embedding", c.quantile_embedding);
    c.tau_samples = j.value("tau_samples", c.tau_samples);
    c.tau_target_samples = j.value("tau_target_samples", c.tau_target_samples);
    c.eval_quantiles = j.value("eval_quantiles", c.eval_quantiles);
    c.huber = j.value("huber", c.huber);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.init_gain = j.value("init_gain", c.init_gain);
    c.validate();
    return c;
}

GraphBatch batch_full(const obs::StateGraph& g) {
    const int n = g.size();
    std::array<int, obs::kNodeTypes> counts{};
    for (obs::NodeType t : g.type) ++counts[static_cast<int>(t)];
    std::array<int, obs::kNodeTypes> offset{};
    for (int t = 1; t < obs::kNodeTypes; ++t) offset[t] = offset[t - 1] + counts[t - 1];

    GraphBatch b;
    for (int t = 0; t < obs::kNodeTypes; ++t) b.features[t].resize(counts[t], obs::kFeatureWidth[t]);
    std::vector<int> perm(n);
    std::array<int, obs::kNodeTypes> fill{};
    for (int u = 0; u < n; ++u) {
        const int t = static_cast<int>(g.type[u]);
        const int k = fill[t]++;
        perm[u] = offset[t] + k;
        for (int f = 0; f < obs::kFeatureWidth[t]; ++f) {
            b.features[t](k, f) = static_cast<ad::Real>(g.features[u][f]);
        }
    }
    std::vector<int> inv(n);
    for (int u = 0; u < n; ++u) inv[perm[u]] = u;

    auto csr = std::make_shared<ad::Csr>();
    csr->rows = csr->cols = n;
    csr->row_ptr.reserve(n + 1);
    csr->col.reserve(g.adjacency.col.size());
    csr->val.reserve(g.adjacency.val.size());
    std::vector<std::pair<int, ad::Real>> row;
    for (int r = 0; r < n; ++r) {
        const int u = inv[r];
        row.clear();
        for (int k = g.adjacency.row_ptr[u]; k < g.adjacency.row_ptr[u + 1]; ++k) {
            row.emplace_back(perm[g.adjacency.col[k]], static_cast<ad::Real>(g.adjacency.val[k]));
        }
        std::sort(row.begin(), row.end(), [](auto a, auto c) { return a.first < c.first; });
        for (auto [c, v] : row) {
            csr->col.push_back(c);
            csr->val.push_back(v);
        }
        csr->row_ptr.push_back(static_cast<int>(csr->col.size()));
    }
    b.adjacency = std::move(csr);
    for (int node : g.tsc_nodes) b.readout.push_back(perm[node]);
    return b;
}

GraphBatch batch_local(std::span<const LocalRef> refs, int hops) {
    std::vector<std::vector<int>> fields;
    fields.reserve(refs.size());
    std::array<int, obs::kNodeTypes> counts{};
    for (const LocalRef& r : refs) {
        fields.push_back(r.graph->receptive_field(r.graph->tsc_nodes.at(r.tsc), hops));
        for (int u : fields.back()) ++counts[static_cast<int>(r.graph->type[u])];
    }
    std::array<int, obs::kNodeTypes> offset{};
    for (int t = 1; t < obs::kNodeTypes; ++t) offset[t] = offset[t - 1] + counts[t - 1];
    const int total = offset[obs::kNodeTypes - 1] + counts[obs::kNodeTypes - 1];

    GraphBatch b;
    for (int t = 0; t < obs::kNodeTypes; ++t) b.features[t].resize(counts[t], obs::kFeatureWidth[t]);

    // Stacked index for every (sample, local node); rows are emitted in stacked order afterwards.
    std::vector<std::pair<int, int>> origin(total);  // stacked row -> (sample, old node)
    std::vector<std::vector<int>> stacked(refs.size());
    std::array<int, obs::kNodeTypes> fill{};
    for (std::size_t s = 0; s < refs.size(); ++s) {
        const obs::StateGraph& g = *refs[s].graph;
        stacked[s].resize(fields[s].size());
        for (std::size_t k = 0; k < fields[s].size(); ++k) {
            const int u = fields[s][k];
            const int t = static_cast<int>(g.type[u]);
            const int row = fill[t]++;
            stacked[s][k] = offset[t] + row;
            origin[offset[t] + row] = {static_cast<int>(s), u};
            for (int f = 0; f < obs::kFeatureWidth[t]; ++f) {
                b.features[t](row, f) = static_cast<ad::Real>(g.features[u][f]);
            }
        }
        b.readout.push_back(-1);
    }

    auto csr = std::make_shared<ad::Csr>();
    csr->rows = csr->cols = total;
    csr->row_ptr.reserve(total + 1);
    std::vector<std::pair<int, ad::Real>> row;
    for (int r = 0; r < total; ++r) {
        const auto [s, u] = origin[r];
        const obs::StateGraph& g = *refs[s].graph;
        const auto& field = fields[s];
        row.clear();
        for (int k = g.adjacency.row_ptr[u]; k < g.adjacency.row_ptr[u + 1]; ++k) {
            const int v = g.adjacency.col[k];
            auto it = std::lower_bound(field.begin(), field.end(), v);
            if (it == field.end() || *it != v) continue;
            row.emplace_back(stacked[s][it - field.begin()], static_cast<ad::Real>(g.adjacency.val[k]));
        }
        std::sort(row.begin(), row.end(), [](auto a, auto c) { return a.first < c.first; });
        for (auto [c, v] : row) {
            csr->col.push_back(c);
            csr->val.push_back(v);
        }
        csr->row_ptr.push_back(static_cast<int>(csr->col.size()));
    }
    b.adjacency = std::move(csr);
    for (std::size_t s = 0; s < refs.size(); ++s) {
        const int node = refs[s].graph->tsc_nodes[refs[s].tsc];
        const auto& field = fields[s];
        b.readout[s] = stacked[s][std::lower_bound(field.begin(), field.end(), node) - field.begin()];
    }
    return b;
}

std::vector<double> midpoint_taus(int k) {
    require(k >= 1, "midpoint_taus: K must be >= 1");
    std::vector<double> t(k);
    for (int i = 0; i < k; ++i) t[i] = (i + 0.5) / k;
    return t;
}

GcnModel::GcnModel(GcnConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void GcnModel::init_params(ad::ParamStore& store, std::uint64_t seed, bool distributional) const {
    Rng rng(derive_seed(seed, "model.init"));
    const int d = cfg_.hidden;
    for (int t = 0; t < obs::kNodeTypes; ++t) {
        store.add(enc_w(t), glorot(rng, obs::kFeatureWidth[t], d, cfg_.init_gain));
        store.add(enc_b(t), ad::Matrix::Zero(1, d));
    }
    for (int n = 0; n < cfg_.layers; ++n) store.add(gcn_w(n), glorot(rng, d, d, cfg_.init_gain));
    if (cfg_.head_hidden) {
        store.add("head.hidden.W", glorot(rng, d, d));
        store.add("head.hidden.b", ad::Matrix::Zero(1, d));
    }
    store.add("head.W", glorot(rng, d, kActions));
    store.add("head.b", ad::Matrix::Zero(1, kActions));
    if (distributional) {
        store.add("quantile.W", glorot(rng, cfg_.quantile_embedding, d));
        store.add("quantile.b", ad::Matrix::Zero(1, d));
    }
}

ad::Tensor GcnModel::p(ad::Tape& tape, ad::ParamStore& store, const std::string& name,
                       bool trainable) const {
    ad::Parameter& param = store.get(name);
    return trainable ? tape.param(param) : tape.frozen(param);
}

ad::Tensor GcnModel::embed(ad::Tape& tape, ad::ParamStore& store, const GraphBatch& batch,
                           bool trainable) const {
    if (!batch.adjacency) throw std::invalid_argument("embed: batch has no adjacency");
    std::vector<ad::Tensor> blocks;
    for (int t = 0; t < obs::kNodeTypes; ++t) {
        const ad::Matrix& x = batch.features[t];
        if (x.rows() == 0) continue;
        if (x.cols() != obs::kFeatureWidth[t]) throw std::invalid_argument("embed: feature width mismatch");
        ad::Tensor h = matmul(tape.constant(x), p(tape, store, enc_w(t), trainable));
        blocks.push_back(ad::sigmoid(ad::add_row(h, p(tape, store, enc_b(t), trainable))));
    }
    ad::Tensor h = ad::concat_rows(blocks);
    if (h.rows() != batch.nodes()) throw std::invalid_argument("embed: adjacency and features disagree on node count");
    for (int n = 0; n < cfg_.layers; ++n) {
        h = ad::sigmoid(ad::spmm(batch.adjacency, ad::matmul(h, p(tape, store, gcn_w(n), trainable))));
    }
    return ad::gather_rows(h, batch.readout);
}

ad::Tensor GcnModel::head(ad::Tape& tape, ad::ParamStore& store, const ad::Tensor& x,
                          bool trainable) const {
    if (x.cols() != cfg_.hidden) throw std::invalid_argument("head: input width mismatch");
    ad::Tensor h = x;
    if (cfg_.head_hidden) {
        h = ad::relu(ad::add_row(ad::matmul(h, p(tape, store, "head.hidden.W", trainable)),
                                 p(tape, store, "head.hidden.b", trainable)));
    }
    return ad::add_row(ad::matmul(h, p(tape, store, "head.W", trainable)),
                       p(tape, store, "head.b", trainable));
}

ad::Tensor GcnModel::quantile_embedding(ad::Tape& tape, ad::ParamStore& store,
                                        std::span<const double> taus, bool trainable) const {
    const int n = cfg_.quantile_embedding;
    ad::Matrix basis(static_cast<Eigen::Index>(taus.size()), n);
    for (std::size_t k = 0; k < taus.size(); ++k) {
        const double tau = taus[k];
        if (!(tau >= 0.0 && tau <= 1.0)) {
            throw PreconditionError("quantile_embedding: tau must lie in [0, 1]");
        }
        for (int i = 0; i < n; ++i) {
            basis(static_cast<Eigen::Index>(k), i) = static_cast<ad::Real>(std::cos(std::numbers::pi * i * tau));
        }
    }
    ad::Tensor z = ad::matmul(tape.constant(std::move(basis)), p(tape, store, "quantile.W", trainable));
    return ad::relu(ad::add_row(z, p(tape, store, "quantile.b", trainable)));
}

ad::Tensor GcnModel::z_values(ad::Tape& tape, ad::ParamStore& store, const ad::Tensor& psi,
                              const ad::Matrix& taus, bool trainable) const {
    if (taus.rows() != psi.rows()) throw std::invalid_argument("z_values: one tau row per embedding row");
    const auto m = taus.cols();
    std::vector<int> rep(static_cast<std::size_t>(psi.rows() * m));
    std::vector<double> flat(rep.size());
    for (Eigen::Index b = 0; b < psi.rows(); ++b) {
        for (Eigen::Index i = 0; i < m; ++i) {
            rep[b * m + i] = static_cast<int>(b);
            flat[b * m + i] = taus(b, i);
        }
    }
    ad::Tensor phi = quantile_embedding(tape, store, flat, trainable);
    if (phi.cols() != psi.cols()) throw std::invalid_argument("z_values: width mismatch");
    return head(tape, store, ad::mul(ad::gather_rows(psi, std::move(rep)), phi), trainable);
}

ad::Tensor GcnModel::q_from_quantiles(ad::Tape& tape, ad::ParamStore& store, const ad::Tensor& psi,
                                      int k, QuantileMode mode, Rng* rng, bool trainable) const {
    require(k >= 1, "q_from_quantiles: K must be >= 1");
    const auto rows = psi.rows();
    ad::Matrix taus(rows, k);
    if (mode == QuantileMode::Midpoint) {
        const auto grid = midpoint_taus(k);
        for (Eigen::Index b = 0; b < rows; ++b) {
            for (int i = 0; i < k; ++i) taus(b, i) = static_cast<ad::Real>(grid[i]);
        }
    } else {
        if (rng == nullptr) throw std::invalid_argument("q_from_quantiles: sampled mode needs an rng");
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (Eigen::Index b = 0; b < rows; ++b) {
            for (int i = 0; i < k; ++i) taus(b, i) = static_cast<ad::Real>(u(*rng));
        }
    }
    ad::Tensor z = z_values(tape, store, psi, taus, trainable);
    auto avg = std::make_shared<ad::Csr>();
    avg->rows = static_cast<int>(rows);
    avg->cols = static_cast<int>(rows * k);
    for (Eigen::Index b = 0; b < rows; ++b) {
        for (int i = 0; i < k; ++i) {
            avg->col.push_back(static_cast<int>(b * k + i));
            avg->val.push_back(ad::Real(1) / static_cast<ad::Real>(k));
        }
        avg->row_ptr.push_back(static_cast<int>(avg->col.size()));
    }
    return ad::spmm(std::move(avg), z);
}

}  // namespace rglight::model
