#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rglight/autodiff.hpp"
#include "rglight/common.hpp"
#include "rglight/gcnmodel.hpp"
#include "rglight/obsgraph.hpp"
#include "rglight/simcore.hpp"

namespace rglight::agents {

using sim::Action;

struct Transition {
    std::shared_ptr<const obs::StateGraph> state;
    std::shared_ptr<const obs::StateGraph> next;
    int tsc = 0;  // index into graph->tsc_nodes
    Action action = Action::Prolong;
    double reward = 0.0;  // -(sum of queue lengths at the TSC)
    bool terminal = false;
};

/// Fixed-capacity ring buffer, uniform sampling with replacement.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity);
    void push(Transition t);
    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;
    const Transition& operator[](std::size_t i) const { return items_[i]; }

  private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<Transition> items_;
};

struct Batch {
    model::GraphBatch states;
    model::GraphBatch next_states;
    std::vector<int> actions;
    std::vector<double> rewards;
    std::vector<bool> terminal;

    std::size_t size() const { return actions.size(); }
};

/// Rewards are multiplied by `reward_scale` on the way in.
Batch make_batch(std::span<const Transition* const> items, int hops, double reward_scale = 1.0);

// ---- deterministic objective -------------------------------------------------

/// mean_b (y_b - Q(s_b, a_b))^2 with y_b = r_b + gamma * max_a next_q(b, a), or r_b if terminal.
ad::Tensor td_squared_loss(const ad::Tensor& q_sa, const ad::Matrix& next_q, std::span<const double> rewards,
                           const std::vector<bool>& terminal, double gamma);

ad::Tensor dqn_loss(ad::Tape& tape, const model::GcnModel& model, ad::ParamStore& online,
                    ad::ParamStore& target, const Batch& batch, double gamma);

// ---- distributional objective -------------------------------------------------

/// |tau - 1{delta < 0}| * huber_lambda(delta) / lambda.
double quantile_huber(double tau, double delta, double lambda);

/// z_sa is (B*M) x 1 ordered b-major, z_next is B x M', taus is B x M.
/// Returns (1/B) sum_b (1/M') sum_i sum_j rho_{tau_i}(r_b + gamma z_next(b,j) - z_sa(b,i)).
ad::Tensor quantile_td_loss(const ad::Tensor& z_sa, const ad::Matrix& z_next, const ad::Matrix& taus,
                            std::span<const double> rewards, const std::vector<bool>& terminal,
                            double gamma, double lambda);

ad::Tensor iqn_loss(ad::Tape& tape, const model::GcnModel& model, ad::ParamStore& online,
                    ad::ParamStore& target, const Batch& batch, double gamma, Rng& rng);

// ---- action selection -------------------------------------------------------

/// Row-wise argmax over {prolong, switch}; ties go to prolong.
std::vector<Action> greedy_actions(const ad::Matrix& q);
std::vector<Action> epsilon_greedy(const ad::Matrix& q, double epsilon, Rng& rng);

/// Q values for every TSC of a full graph.
ad::Matrix igrl_values(const model::GcnModel& model, ad::ParamStore& params, const obs::StateGraph& g);
ad::Matrix dgrl_values(const model::GcnModel& model, ad::ParamStore& params, const obs::StateGraph& g,
                       int k, model::QuantileMode mode, Rng* rng);

std::vector<Action> act_igrl(const model::GcnModel& model, ad::ParamStore& params,
                             const obs::StateGraph& g, double epsilon, Rng& rng);
std::vector<Action> act_dgrl(const model::GcnModel& model, ad::ParamStore& params,
                             const obs::StateGraph& g, double epsilon, int k, Rng& rng,
                             model::QuantileMode mode = model::QuantileMode::Midpoint);

struct EnsembleConfig {
    double kappa = 0.6;
    double temperature = 5.0;
    void validate() const;
};

/// Row-wise exp(q / T) / sum exp(q / T).
ad::Matrix softmax_normalize(const ad::Matrix& q, double temperature);
ad::Matrix combine_normalized(const ad::Matrix& deter, const ad::Matrix& dis, double kappa);

struct EnsembleResult {
    ad::Matrix values;
    std::vector<Action> actions;
};

/// Softmax-normalize both value sets at temperature T and mix with weight kappa on `q_deter`.
EnsembleResult ensemble_q(const ad::Matrix& q_deter, const ad::Matrix& q_dis, const EnsembleConfig& cfg);

// ---- transportation baselines -----------------------------------------------

struct FixedTimeConfig {
    int green_duration = 30;
};

/// Open-loop plan: request a switch once the current phase has run its planned time.
class FixedTimePlan {
  public:
    FixedTimePlan(const net::RoadNetwork& net, FixedTimeConfig cfg);
    std::vector<Action> actions(const sim::SimState& state) const;

  private:
    const net::RoadNetwork* net_;
    FixedTimeConfig cfg_;
};

/// Switch iff stopped vehicles strictly outnumber moving ones on inbound lanes.
Action greedy_rule(const sim::InboundCounts& counts);
Action baseline_greedy(const net::RoadNetwork& net, const sim::SimState& state, net::NodeId tsc);

// ---- controllers --------------------------------------------------------------

/// Uniform decision interface used by training rollouts and evaluation.
class Controller {
  public:
    virtual ~Controller() = default;
    virtual std::string name() const = 0;
    virtual bool needs_graph() const { return false; }
    /// `graph` is non-null whenever needs_graph() is true.
    virtual std::vector<Action> act(const sim::Simulation& sim, const obs::StateGraph* graph) = 0;
};

class FixedTimeController : public Controller {
  public:
    FixedTimeController(const net::RoadNetwork& net, FixedTimeConfig cfg) : plan_(net, cfg) {}
    std::string name() const override { return "fixed"; }
    std::vector<Action> act(const sim::Simulation& sim, const obs::StateGraph*) override {
        return plan_.actions(sim.state());
    }

  private:
    FixedTimePlan plan_;
};

class GreedyController : public Controller {
  public:
    std::string name() const override { return "greedy"; }
    std::vector<Action> act(const sim::Simulation& sim, const obs::StateGraph*) override;
};

class RandomController : public Controller {
  public:
    RandomController(std::uint64_t seed, double switch_probability = 0.5);
    std::string name() const override { return "random"; }
    std::vector<Action> act(const sim::Simulation& sim, const obs::StateGraph*) override;

  private:
    Rng rng_;
    double p_;
};

/// Frozen policy. Network outputs are multiplied by `value_scale` to undo training reward scaling.
struct PolicyParams {
    model::GcnModel model;
    ad::ParamStore params;
    double value_scale = 1.0;
};

class IgrlController : public Controller {
  public:
    explicit IgrlController(std::shared_ptr<PolicyParams> policy) : policy_(std::move(policy)) {}
    std::string name() const override { return "igrl"; }
    bool needs_graph() const override { return true; }
    std::vector<Action> act(const sim::Simulation& sim, const obs::StateGraph* graph) override;

  private:
    std::shared_ptr<PolicyParams> policy_;
};

class DgrlController : public Controller {
  public:
    explicit DgrlController(std::shared_ptr<PolicyParams> policy) : policy_(std::move(policy)) {}
    std::string name() const override { return "dgrl"; }
    bool needs_graph() const override { return true; }
    std::vector<Action> act(const sim::Simulation& sim, const obs::StateGraph* graph) override;

  private:
    std::shared_ptr<PolicyParams> policy_;
};

class RGLightController : public Controller {
  public:
    RGLightController(std::shared_ptr<PolicyParams> deter, std::shared_ptr<PolicyParams> dis,
                      EnsembleConfig cfg);
    std::string name() const override { return "rglight"; }
    bool needs_graph() const override { return true; }
    std::vector<Action> act(const sim::Simulation& sim, const obs::StateGraph* graph) override;

  private:
    std::shared_ptr<PolicyParams> deter_;
    std::shared_ptr<PolicyParams> dis_;
    EnsembleConfig cfg_;
};

// ---- learner ------------------------------------------------------------------

enum class AgentKind { Igrl, Dgrl };
std::string to_string(AgentKind k);
AgentKind agent_kind_from_string(const std::string& s);

struct LearnerConfig {
    double gamma = 0.95;
    std::size_t batch_size = 64;
    std::size_t replay_capacity = 50000;
    long target_sync = 500;  // training steps between target copies
    double lr = 1e-3;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    int epsilon_anneal_episodes = 30;
    double reward_scale = 0.1;  // applied inside the losses only
    std::size_t min_replay = 1000;
    int train_every = 1;  // environment steps per gradient step

    void validate() const;
    double epsilon(int episode) const;
};

nlohmann::json to_json(const LearnerConfig& c);
LearnerConfig learner_config_from_json(const nlohmann::json& j);

/// One agent's parameters, target copy, optimizer and replay.
class Learner {
  public:
    Learner(AgentKind kind, model::GcnConfig model_cfg, LearnerConfig cfg, std::uint64_t seed);

    AgentKind kind() const { return kind_; }
    const model::GcnModel& model() const { return model_; }
    ad::ParamStore& params() { return params_; }
    ad::ParamStore& target() { return target_; }
    ReplayBuffer& replay() { return replay_; }
    const LearnerConfig& config() const { return cfg_; }

    std::vector<Action> act(const obs::StateGraph& g, double epsilon);
    /// One gradient step on a uniformly sampled batch; returns the loss. Throws
    /// ad::NonFiniteGradient (parameters untouched) on divergence.
    double train_step();
    long updates() const { return params_.step; }
    void sync_target() { target_.copy_values_from(params_); }

    nlohmann::json checkpoint(int episode) const;
    /// Restores parameters and optimizer state; returns the stored episode counter.
    int restore(const nlohmann::json& doc);

  private:
    AgentKind kind_;
    model::GcnModel model_;
    LearnerConfig cfg_;
    ad::ParamStore params_;
    ad::ParamStore target_;
    ReplayBuffer replay_;
    Rng rng_;
};

/// Checkpoint document helpers (format "rglight-checkpoint", version 1).
nlohmann::json params_to_json(const ad::ParamStore& store, bool with_optimizer);
void params_from_json(ad::ParamStore& store, const nlohmann::json& j, bool with_optimizer);
std::uint64_t model_hash(const model::GcnConfig& cfg);
std::shared_ptr<PolicyParams> load_policy(const nlohmann::json& checkpoint);
AgentKind checkpoint_kind(const nlohmann::json& checkpoint);

}  // namespace rglight::agents
