#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rglight/autodiff.hpp"
#include "rglight/common.hpp"
#include "rglight/obsgraph.hpp"

namespace rglight::model {

inline constexpr int kActions = 2;  // prolong, switch

struct GcnConfig {
    int layers = 3;
    int hidden = 32;
    int quantile_embedding = 64;  // cosine basis size n
    int tau_samples = 8;          // M
    int tau_target_samples = 8;   // M'
    int eval_quantiles = 32;      // K
    double huber = 1.0;           // lambda
    bool head_hidden = false;     // one ReLU layer before the linear head
    double init_gain = 4.0;       // Glorot range multiplier for the sigmoid layers

    void validate() const;
};

nlohmann::json to_json(const GcnConfig& cfg);
GcnConfig gcn_config_from_json(const nlohmann::json& j);

/// Nodes stacked by type (all TSC rows, then connections, lanes, vehicles)
/// with the normalized adjacency expressed in that order.
struct GraphBatch {
    std::array<ad::Matrix, obs::kNodeTypes> features;
    std::shared_ptr<const ad::Csr> adjacency;
    std::vector<int> readout;  // stacked row of each TSC whose embedding is read

    int nodes() const { return adjacency ? adjacency->rows : 0; }
};

/// Whole graph; readout lists every TSC in RoadNetwork::signalized() order.
GraphBatch batch_full(const obs::StateGraph& graph);

struct LocalRef {
    const obs::StateGraph* graph = nullptr;
    int tsc = 0;  // index into graph->tsc_nodes
};

/// Block-diagonal batch of receptive fields. Adjacency weights keep the
/// full-graph normalization, so embeddings match batch_full exactly.
GraphBatch batch_local(std::span<const LocalRef> refs, int hops);

enum class QuantileMode { Sampled, Midpoint };

class GcnModel {
  public:
    explicit GcnModel(GcnConfig cfg);

    const GcnConfig& config() const { return cfg_; }

    void init_params(ad::ParamStore& store, std::uint64_t seed, bool distributional) const;

    /// psi: one row per readout node.
    ad::Tensor embed(ad::Tape& tape, ad::ParamStore& store, const GraphBatch& batch,
                     bool trainable) const;
    /// f: rows of width `hidden` to action values.
    ad::Tensor head(ad::Tape& tape, ad::ParamStore& store, const ad::Tensor& x, bool trainable) const;
    ad::Tensor q_values(ad::Tape& tape, ad::ParamStore& store, const ad::Tensor& psi,
                        bool trainable) const {
        return head(tape, store, psi, trainable);
    }
    /// phi(tau) for each tau, one row each.
    ad::Tensor quantile_embedding(ad::Tape& tape, ad::ParamStore& store, std::span<const double> taus,
                                  bool trainable) const;
    /// taus is rows(psi) x M; output row b*M + i holds Z_{tau(b,i)}(s_b, .).
    ad::Tensor z_values(ad::Tape& tape, ad::ParamStore& store, const ad::Tensor& psi,
                        const ad::Matrix& taus, bool trainable) const;
    /// Mean of Z over K quantiles per row of psi.
    ad::Tensor q_from_quantiles(ad::Tape& tape, ad::ParamStore& store, const ad::Tensor& psi, int k,
                                QuantileMode mode, Rng* rng, bool trainable) const;

  private:
    ad::Tensor p(ad::Tape& tape, ad::ParamStore& store, const std::string& name, bool trainable) const;
    GcnConfig cfg_;
};

/// Midpoint grid tau_k = (k - 0.5) / K.
std::vector<double> midpoint_taus(int k);

}  // namespace rglight::model
