#include "rglight/agents.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>

#include <nlohmann/json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace rglight::agents {

namespace {

constexpr const char* kCheckpointFormat = "rglight-checkpoint";
constexpr int kCheckpointVersion = 1;

std::vector<int> action_columns(const std::vector<int>& actions, int repeat) {
    std::vector<int> cols;
    cols.reserve(actions.size() * repeat);
    for (int a : actions) cols.insert(cols.end(), repeat, a);
    return cols;
}

ad::Matrix uniform_taus(Eigen::Index rows, int m, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ad::Matrix t(rows, m);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<ad::Real>(u(rng));
    return t;
}

void check_batch(std::size_t n, const char* who) {
    if (n == 0) throw PreconditionError(std::string(who) + ": empty batch");
}

// Training allocates and frees many large temporaries per update; keep them off mmap.
void tune_allocator() {
#if defined(__GLIBC__)
    static std::once_flag once;
    std::call_once(once, [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        mallopt(M_TOP_PAD, 256 << 20);
    });
#endif
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

// ---- replay -------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    require(capacity >= 1, "ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(Transition t) {
    if (items_.size() < capacity_) {
        items_.push_back(std::move(t));
        return;
    }
    items_[head_] = std::move(t);
    head_ = (head_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    require(!items_.empty(), "ReplayBuffer::sample: buffer is empty");
    std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
    std::vector<const Transition*> out(n);
    for (auto& p : out) p = &items_[pick(rng)];
    return out;
}

Batch make_batch(std::span<const Transition* const> items, int hops, double reward_scale) {
    check_batch(items.size(), "make_batch");
    std::vector<model::LocalRef> now, next;
    Batch b;
    for (const Transition* t : items) {
        now.push_back({t->state.get(), t->tsc});
        next.push_back({t->next ? t->next.get() : t->state.get(), t->tsc});
        b.actions.push_back(static_cast<int>(t->action));
        b.rewards.push_back(t->reward * reward_scale);
        b.terminal.push_back(t->terminal);
    }
    b.states = model::batch_local(now, hops);
    b.next_states = model::batch_local(next, hops);
    return b;
}

// ---- losses -------------------------------------------------------------------

ad::Tensor td_squared_loss(const ad::Tensor& q_sa, const ad::Matrix& next_q, std::span<const double> rewards,
                           const std::vector<bool>& terminal, double gamma) {
    const auto n = static_cast<Eigen::Index>(rewards.size());
    check_batch(rewards.size(), "dqn_loss");
    require(gamma >= 0.0 && gamma < 1.0, "dqn_loss: gamma must lie in [0, 1)");
    require(q_sa.rows() == n && q_sa.cols() == 1 && next_q.rows() == n &&
                terminal.size() == rewards.size(),
            "dqn_loss: batch shapes disagree");
    ad::Matrix y(n, 1);
    for (Eigen::Index b = 0; b < n; ++b) {
        double target = rewards[b];
        if (!terminal[b]) target += gamma * static_cast<double>(next_q.row(b).maxCoeff());
        y(b, 0) = static_cast<ad::Real>(target);
    }
    ad::Tensor diff = ad::sub(q_sa.tape()->constant(std::move(y)), q_sa);
    return ad::mean(ad::mul(diff, diff));
}

ad::Tensor dqn_loss(ad::Tape& tape, const model::GcnModel& model, ad::ParamStore& online,
                    ad::ParamStore& target, const Batch& batch, double gamma) {
    check_batch(batch.size(), "dqn_loss");
    ad::Matrix next_q;
    {
        ad::Tape frozen;
        ad::Tensor psi = model.embed(frozen, target, batch.next_states, false);
        next_q = model.q_values(frozen, target, psi, false).value();
    }
    ad::Tensor psi = model.embed(tape, online, batch.states, true);
    ad::Tensor q_sa = ad::pick(model.q_values(tape, online, psi, true), batch.actions);
    return td_squared_loss(q_sa, next_q, batch.rewards, batch.terminal, gamma);
}

double quantile_huber(double tau, double delta, double lambda) {
    require(lambda > 0.0, "quantile_huber: lambda must be > 0");
    const double a = std::abs(delta);
    const double h = a <= lambda ? 0.5 * delta * delta : lambda * (a - 0.5 * lambda);
    return std::abs(tau - (delta < 0.0 ? 1.0 : 0.0)) * h / lambda;
}

ad::Tensor quantile_td_loss(const ad::Tensor& z_sa, const ad::Matrix& z_next, const ad::Matrix& taus,
                            std::span<const double> rewards, const std::vector<bool>& terminal,
                            double gamma, double lambda) {
    check_batch(rewards.size(), "iqn_loss");
    require(gamma >= 0.0 && gamma < 1.0, "iqn_loss: gamma must lie in [0, 1)");
    require(lambda > 0.0, "iqn_loss: lambda must be > 0");
    const auto bsz = static_cast<Eigen::Index>(rewards.size());
    const auto m = taus.cols();
    const auto mp = z_next.cols();
    require(m >= 1 && mp >= 1, "iqn_loss: M and M' must be >= 1");
    require(taus.rows() == bsz && z_next.rows() == bsz && z_sa.rows() == bsz * m && z_sa.cols() == 1 &&
                terminal.size() == rewards.size(),
            "iqn_loss: batch shapes disagree");

    const auto n = bsz * m * mp;
    std::vector<int> rows(static_cast<std::size_t>(n));
    ad::Matrix target(n, 1);
    for (Eigen::Index b = 0; b < bsz; ++b) {
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < mp; ++j) {
                const auto r = (b * m + i) * mp + j;
                rows[r] = static_cast<int>(b * m + i);
                double y = rewards[b];
                if (!terminal[b]) y += gamma * static_cast<double>(z_next(b, j));
                target(r, 0) = static_cast<ad::Real>(y);
            }
        }
    }
    ad::Tape& tape = *z_sa.tape();
    ad::Tensor delta = ad::sub(tape.constant(std::move(target)), ad::gather_rows(z_sa, std::move(rows)));

    // |tau - 1{delta < 0}| / lambda, with the 1/B and 1/M' averaging folded in.
    ad::Matrix w(n, 1);
    const double norm = 1.0 / (lambda * static_cast<double>(bsz) * static_cast<double>(mp));
    for (Eigen::Index b = 0; b < bsz; ++b) {
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < mp; ++j) {
                const auto r = (b * m + i) * mp + j;
                const double ind = delta.value()(r, 0) < 0 ? 1.0 : 0.0;
                w(r, 0) = static_cast<ad::Real>(std::abs(taus(b, i) - ind) * norm);
            }
        }
    }
    return ad::sum(ad::mul(tape.constant(std::move(w)), ad::huber(delta, static_cast<ad::Real>(lambda))));
}

ad::Tensor iqn_loss(ad::Tape& tape, const model::GcnModel& model, ad::ParamStore& online,
                    ad::ParamStore& target, const Batch& batch, double gamma, Rng& rng) {
    check_batch(batch.size(), "iqn_loss");
    const auto& cfg = model.config();
    const auto bsz = static_cast<Eigen::Index>(batch.size());

    ad::Matrix z_next(bsz, cfg.tau_target_samples);
    {
        ad::Tape frozen;
        ad::Tensor psi = model.embed(frozen, target, batch.next_states, false);
        const ad::Matrix q = model.q_from_quantiles(frozen, target, psi, cfg.eval_quantiles,
                                                    model::QuantileMode::Sampled, &rng, false)
                                 .value();
        std::vector<int> policy(static_cast<std::size_t>(bsz));
        for (Eigen::Index b = 0; b < bsz; ++b) policy[b] = q(b, 1) > q(b, 0) ? 1 : 0;
        const ad::Matrix taus = uniform_taus(bsz, cfg.tau_target_samples, rng);
        ad::Tensor z = model.z_values(frozen, target, psi, taus, false);
        const ad::Matrix picked = ad::pick(z, action_columns(policy, cfg.tau_target_samples)).value();
        for (Eigen::Index b = 0; b < bsz; ++b) {
            for (int j = 0; j < cfg.tau_target_samples; ++j) z_next(b, j) = picked(b * cfg.tau_target_samples + j, 0);
        }
    }

    const ad::Matrix taus = uniform_taus(bsz, cfg.tau_samples, rng);
    ad::Tensor psi = model.embed(tape, online, batch.states, true);
    ad::Tensor z = model.z_values(tape, online, psi, taus, true);
    ad::Tensor z_sa = ad::pick(z, action_columns(batch.actions, cfg.tau_samples));
    return quantile_td_loss(z_sa, z_next, taus, batch.rewards, batch.terminal, gamma, cfg.huber);
}

// ---- action selection -------------------------------------------------------

std::vector<Action> greedy_actions(const ad::Matrix& q) {
    require(q.cols() == model::kActions, "greedy_actions: expected two action columns");
    std::vector<Action> out(static_cast<std::size_t>(q.rows()));
    for (Eigen::Index r = 0; r < q.rows(); ++r) out[r] = q(r, 1) > q(r, 0) ? Action::Switch : Action::Prolong;
    return out;
}

std::vector<Action> epsilon_greedy(const ad::Matrix& q, double epsilon, Rng& rng) {
    require(epsilon >= 0.0 && epsilon <= 1.0, "epsilon_greedy: epsilon must lie in [0, 1]");
    auto out = greedy_actions(q);
    if (epsilon == 0.0) return out;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution coin(0.5);
    for (auto& a : out) {
        if (u(rng) < epsilon) a = coin(rng) ? Action::Switch : Action::Prolong;
    }
    return out;
}

ad::Matrix igrl_values(const model::GcnModel& model, ad::ParamStore& params, const obs::StateGraph& g) {
    ad::Tape tape;
    const auto batch = model::batch_full(g);
    if (batch.readout.empty()) return ad::Matrix(0, model::kActions);
    ad::Tensor psi = model.embed(tape, params, batch, false);
    return model.q_values(tape, params, psi, false).value();
}

ad::Matrix dgrl_values(const model::GcnModel& model, ad::ParamStore& params, const obs::StateGraph& g,
                       int k, model::QuantileMode mode, Rng* rng) {
    ad::Tape tape;
    const auto batch = model::batch_full(g);
    if (batch.readout.empty()) return ad::Matrix(0, model::kActions);
    ad::Tensor psi = model.embed(tape, params, batch, false);
    return model.q_from_quantiles(tape, params, psi, k, mode, rng, false).value();
}

std::vector<Action> act_igrl(const model::GcnModel& model, ad::ParamStore& params, const obs::StateGraph& g,
                             double epsilon, Rng& rng) {
    return epsilon_greedy(igrl_values(model, params, g), epsilon, rng);
}

std::vector<Action> act_dgrl(const model::GcnModel& model, ad::ParamStore& params, const obs::StateGraph& g,
                             double epsilon, int k, Rng& rng, model::QuantileMode mode) {
    return epsilon_greedy(dgrl_values(model, params, g, k, mode, &rng), epsilon, rng);
}

void EnsembleConfig::validate() const {
    require(kappa >= 0.0 && kappa <= 1.0, "EnsembleConfig: kappa must lie in [0, 1]");
    require(temperature > 0.0, "EnsembleConfig: temperature must be > 0");
}

ad::Matrix softmax_normalize(const ad::Matrix& q, double temperature) {
    require(temperature > 0.0, "softmax_normalize: temperature must be > 0");
    ad::Matrix out(q.rows(), q.cols());
    for (Eigen::Index r = 0; r < q.rows(); ++r) {
        const double mx = static_cast<double>(q.row(r).maxCoeff());
        double total = 0.0;
        for (Eigen::Index c = 0; c < q.cols(); ++c) {
            const double e = std::exp((static_cast<double>(q(r, c)) - mx) / temperature);
            out(r, c) = static_cast<ad::Real>(e);
            total += e;
        }
        out.row(r) /= static_cast<ad::Real>(total);
    }
    return out;
}

ad::Matrix combine_normalized(const ad::Matrix& deter, const ad::Matrix& dis, double kappa) {
    require(kappa >= 0.0 && kappa <= 1.0, "combine_normalized: kappa must lie in [0, 1]");
    require(deter.rows() == dis.rows() && deter.cols() == dis.cols(), "combine_normalized: shape mismatch");
    return static_cast<ad::Real>(kappa) * deter + static_cast<ad::Real>(1.0 - kappa) * dis;
}

EnsembleResult ensemble_q(const ad::Matrix& q_deter, const ad::Matrix& q_dis, const EnsembleConfig& cfg) {
    cfg.validate();
    EnsembleResult r;
    r.values = combine_normalized(softmax_normalize(q_deter, cfg.temperature),
                                  softmax_normalize(q_dis, cfg.temperature), cfg.kappa);
    r.actions = greedy_actions(r.values);
    return r;
}

// ---- baselines ----------------------------------------------------------------

FixedTimePlan::FixedTimePlan(const net::RoadNetwork& net, FixedTimeConfig cfg) : net_(&net), cfg_(cfg) {
    for (net::NodeId id : net.signalized()) {
        require(cfg.green_duration >= net.program(id).min_phase_duration,
                "fixed-time: green duration below the minimum phase duration");
    }
}

std::vector<Action> FixedTimePlan::actions(const sim::SimState& state) const {
    const auto& tscs = net_->signalized();
    std::vector<Action> out(tscs.size(), Action::Prolong);
    for (std::size_t k = 0; k < tscs.size(); ++k) {
        const auto& prog = net_->program(tscs[k]);
        const auto& ts = state.tsc[k];
        const bool green = prog.phases[ts.phase].kind == net::PhaseKind::Green;
        const int planned = green ? cfg_.green_duration : prog.clearance_duration;
        if (ts.seconds_in_phase >= planned) out[k] = Action::Switch;
    }
    return out;
}

Action greedy_rule(const sim::InboundCounts& c) { return c.stopped > c.moving ? Action::Switch : Action::Prolong; }

Action baseline_greedy(const net::RoadNetwork& net, const sim::SimState& state, net::NodeId tsc) {
    return greedy_rule(sim::inbound_counts(net, state, tsc));
}

// ---- controllers --------------------------------------------------------------

std::vector<Action> GreedyController::act(const sim::Simulation& sim, const obs::StateGraph*) {
    std::vector<Action> out;
    for (net::NodeId id : sim.network().signalized()) out.push_back(baseline_greedy(sim.network(), sim.state(), id));
    return out;
}

RandomController::RandomController(std::uint64_t seed, double p) : rng_(seed), p_(p) {
    require(p >= 0.0 && p <= 1.0, "RandomController: probability must lie in [0, 1]");
}

std::vector<Action> RandomController::act(const sim::Simulation& sim, const obs::StateGraph*) {
    std::bernoulli_distribution coin(p_);
    std::vector<Action> out(sim.network().signalized().size());
    for (auto& a : out) a = coin(rng_) ? Action::Switch : Action::Prolong;
    return out;
}

std::vector<Action> IgrlController::act(const sim::Simulation&, const obs::StateGraph* g) {
    require(g != nullptr, "IgrlController: graph required");
    return greedy_actions(igrl_values(policy_->model, policy_->params, *g));
}

std::vector<Action> DgrlController::act(const sim::Simulation&, const obs::StateGraph* g) {
    require(g != nullptr, "DgrlController: graph required");
    const int k = policy_->model.config().eval_quantiles;
    return greedy_actions(dgrl_values(policy_->model, policy_->params, *g, k, model::QuantileMode::Midpoint, nullptr));
}

RGLightController::RGLightController(std::shared_ptr<PolicyParams> deter, std::shared_ptr<PolicyParams> dis,
                                     EnsembleConfig cfg)
    : deter_(std::move(deter)), dis_(std::move(dis)), cfg_(cfg) {
    cfg_.validate();
}

std::vector<Action> RGLightController::act(const sim::Simulation&, const obs::StateGraph* g) {
    require(g != nullptr, "RGLightController: graph required");
    const ad::Matrix qd = igrl_values(deter_->model, deter_->params, *g) * static_cast<ad::Real>(deter_->value_scale);
    const int k = dis_->model.config().eval_quantiles;
    const ad::Matrix qs = dgrl_values(dis_->model, dis_->params, *g, k, model::QuantileMode::Midpoint, nullptr) *
                          static_cast<ad::Real>(dis_->value_scale);
    return ensemble_q(qd, qs, cfg_).actions;
}

// ---- learner ------------------------------------------------------------------

std::string to_string(AgentKind k) { return k == AgentKind::Igrl ? "igrl" : "dgrl"; }

AgentKind agent_kind_from_string(const std::string& s) {
    if (s == "igrl") return AgentKind::Igrl;
    if (s == "dgrl") return AgentKind::Dgrl;
    throw PreconditionError("unknown learning agent kind: " + s);
}

void LearnerConfig::validate() const {
    require(gamma >= 0.0 && gamma < 1.0, "LearnerConfig: gamma must lie in [0, 1)");
    require(batch_size >= 1, "LearnerConfig: batch_size must be >= 1");
    require(replay_capacity >= 1, "LearnerConfig: replay_capacity must be >= 1");
    require(target_sync >= 1, "LearnerConfig: target_sync must be >= 1");
    require(lr > 0.0, "LearnerConfig: lr must be > 0");
    require(epsilon_start >= 0.0 && epsilon_start <= 1.0 && epsilon_end >= 0.0 && epsilon_end <= 1.0,
            "LearnerConfig: epsilon bounds must lie in [0, 1]");
    require(epsilon_anneal_episodes >= 0, "LearnerConfig: epsilon_anneal_episodes must be >= 0");
    require(reward_scale > 0.0, "LearnerConfig: reward_scale must be > 0");
    require(train_every >= 1, "LearnerConfig: train_every must be >= 1");
}

double LearnerConfig::epsilon(int episode) const {
    if (epsilon_anneal_episodes == 0 || episode >= epsilon_anneal_episodes) return epsilon_end;
    const double f = static_cast<double>(episode) / epsilon_anneal_episodes;
    return epsilon_start + (epsilon_end - epsilon_start) * f;
}

nlohmann::json to_json(const LearnerConfig& c) {
    return {{"gamma", c.gamma},
            {"batch_size", c.batch_size},
            {"replay_capacity", c.replay_capacity},
            {"target_sync", c.target_sync},
            {"lr", c.lr},
            {"epsilon_start", c.epsilon_start},
            {"epsilon_end", c.epsilon_end},
            {"epsilon_anneal_episodes", c.epsilon_anneal_episodes},
            {"reward_scale", c.reward_scale},
            {"min_replay", c.min_replay},
            {"train_every", c.train_every}};
}

LearnerConfig learner_config_from_json(const nlohmann::json& j) {
    LearnerConfig c;
    c.gamma = j.value("gamma", c.gamma);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
    c.target_sync = j.value("target_sync", c.target_sync);
    c.lr = j.value("lr", c.lr);
    c.epsilon_start = j.value("epsilon_start", c.epsilon_start);
    c.epsilon_end = j.value("epsilon_end", c.epsilon_end);
    c.epsilon_anneal_episodes = j.value("epsilon_anneal_episodes", c.epsilon_anneal_episodes);
    c.reward_scale = j.value("reward_scale", c.reward_scale);
    c.min_replay = j.value("min_replay", c.min_replay);
    c.train_every = j.value("train_every", c.train_every);
    c.validate();
    return c;
}

Learner::Learner(AgentKind kind, model::GcnConfig model_cfg, LearnerConfig cfg, std::uint64_t seed)
    : kind_(kind), model_(model_cfg), cfg_(cfg), replay_(cfg.replay_capacity), rng_(derive_seed(seed, "learner")) {
    cfg_.validate();
    tune_allocator();
    model_.init_params(params_, seed, kind == AgentKind::Dgrl);
    model_.init_params(target_, seed, kind == AgentKind::Dgrl);
}

std::vector<Action> Learner::act(const obs::StateGraph& g, double epsilon) {
    if (kind_ == AgentKind::Igrl) return act_igrl(model_, params_, g, epsilon, rng_);
    return act_dgrl(model_, params_, g, epsilon, model_.config().eval_quantiles, rng_);
}

double Learner::train_step() {
    const auto items = replay_.sample(cfg_.batch_size, rng_);
    const Batch batch = make_batch(items, model_.config().layers, cfg_.reward_scale);
    ad::Tape tape;
    ad::Tensor loss = kind_ == AgentKind::Igrl ? dqn_loss(tape, model_, params_, target_, batch, cfg_.gamma)
                                               : iqn_loss(tape, model_, params_, target_, batch, cfg_.gamma, rng_);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) throw ad::NonFiniteGradient("non-finite loss at update " + std::to_string(params_.step));
    ad::backward(tape, loss, params_);
    ad::AdamConfig adam;
    adam.lr = static_cast<ad::Real>(cfg_.lr);
    ad::adam_step(params_, adam);
    if (params_.step % cfg_.target_sync == 0) sync_target();
    return value;
}

nlohmann::json params_to_json(const ad::ParamStore& store, bool with_optimizer) {
    auto flat = [](const ad::Matrix& m) {
        return std::vector<double>(m.data(), m.data() + m.size());
    };
    nlohmann::json tensors = nlohmann::json::array();
    for (const auto& p : store.all()) {
        nlohmann::json t{{"name", p.name}, {"shape", {p.value.rows(), p.value.cols()}}, {"data", flat(p.value)}};
        if (with_optimizer) {
            t["m"] = p.m.size() == p.value.size() ? flat(p.m) : std::vector<double>(p.value.size(), 0.0);
            t["v"] = p.v.size() == p.value.size() ? flat(p.v) : std::vector<double>(p.value.size(), 0.0);
        }
        tensors.push_back(std::move(t));
    }
    nlohmann::json j{{"tensors", std::move(tensors)}};
    if (with_optimizer) j["step"] = store.step;
    return j;
}

void params_from_json(ad::ParamStore& store, const nlohmann::json& j, bool with_optimizer) {
    const auto& tensors = j.at("tensors");
    require(tensors.size() == store.all().size(), "checkpoint: tensor count does not match the model");
    for (const auto& t : tensors) {
        const std::string name = t.at("name").get<std::string>();
        require(store.has(name), "checkpoint: unknown tensor " + name);
        ad::Parameter& p = store.get(name);
        const auto shape = t.at("shape").get<std::vector<long>>();
        require(shape.size() == 2 && shape[0] == p.value.rows() && shape[1] == p.value.cols(),
                "checkpoint: shape mismatch for " + name);
        auto load = [&](const char* key, ad::Matrix& dst) {
            const auto data = t.at(key).get<std::vector<double>>();
            require(static_cast<Eigen::Index>(data.size()) == p.value.size(), "checkpoint: size mismatch for " + name);
            dst.resize(p.value.rows(), p.value.cols());
            for (std::size_t i = 0; i < data.size(); ++i) dst.data()[i] = static_cast<ad::Real>(data[i]);
        };
        load("data", p.value);
        if (with_optimizer && t.contains("m")) {
            load("m", p.m);
            load("v", p.v);
        }
    }
    if (with_optimizer) store.step = j.value("step", 0L);
}

std::uint64_t model_hash(const model::GcnConfig& cfg) { return fnv1a(model::to_json(cfg).dump()); }

nlohmann::json Learner::checkpoint(int episode) const {
    return {{"format", kCheckpointFormat},
            {"version", kCheckpointVersion},
            {"kind", to_string(kind_)},
            {"episode", episode},
            {"model", model::to_json(model_.config())},
            {"model_hash", hex64(model_hash(model_.config()))},
            {"learner", to_json(cfg_)},
            {"params", params_to_json(params_, true)},
            {"target", params_to_json(target_, false)}};
}

namespace {

void check_header(const nlohmann::json& doc) {
    require(doc.is_object() && doc.value("format", "") == kCheckpointFormat, "checkpoint: not an rglight checkpoint");
    require(doc.value("version", 0) == kCheckpointVersion, "checkpoint: unsupported version");
    const auto cfg = model::gcn_config_from_json(doc.at("model"));
    require(doc.at("model_hash").get<std::string>() == hex64(model_hash(cfg)),
            "checkpoint: model hash does not match the embedded config");
}

}  // namespace

int Learner::restore(const nlohmann::json& doc) {
    check_header(doc);
    require(agent_kind_from_string(doc.at("kind").get<std::string>()) == kind_, "checkpoint: agent kind mismatch");
    require(doc.at("model_hash").get<std::string>() == hex64(model_hash(model_.config())),
            "checkpoint: incompatible model config hash");
    params_from_json(params_, doc.at("params"), true);
    params_from_json(target_, doc.at("target"), false);
    return doc.at("episode").get<int>();
}

AgentKind checkpoint_kind(const nlohmann::json& doc) {
    check_header(doc);
    return agent_kind_from_string(doc.at("kind").get<std::string>());
}

std::shared_ptr<PolicyParams> load_policy(const nlohmann::json& doc) {
    const AgentKind kind = checkpoint_kind(doc);
    auto policy = std::make_shared<PolicyParams>(PolicyParams{
        model::GcnModel(model::gcn_config_from_json(doc.at("model"))), ad::ParamStore{}, 1.0});
    policy->model.init_params(policy->params, 0, kind == AgentKind::Dgrl);
    params_from_json(policy->params, doc.at("params"), false);
    const double scale = doc.contains("learner") ? doc.at("learner").value("reward_scale", 1.0) : 1.0;
    policy->value_scale = 1.0 / scale;
    return policy;
}

}  // namespace rglight::agents
