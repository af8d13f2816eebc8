#include "rglight/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "rglight/plots.hpp"

namespace rglight::harness {

using nlohmann::json;

namespace {

const char* kind_name(NetworkSource::Kind k) {
    switch (k) {
        case NetworkSource::Kind::Grid: return "grid";
        case NetworkSource::Kind::Random: return "random";
        case NetworkSource::Kind::File: return "file";
    }
    return "grid";
}

json source_to_json(const NetworkSource& s) {
    json j{{"kind", kind_name(s.kind)}, {"lanes", s.lanes}};
    switch (s.kind) {
        case NetworkSource::Kind::Grid:
            j["rows"] = s.rows;
            j["cols"] = s.cols;
            break;
        case NetworkSource::Kind::Random:
            j["intersections"] = s.intersections;
            j["seed"] = s.seed;
            break;
        case NetworkSource::Kind::File: j["path"] = s.path; break;
    }
    return j;
}

NetworkSource source_from_json(const json& j) {
    NetworkSource s;
    const std::string kind = j.value("kind", "grid");
    if (kind == "grid") {
        s.kind = NetworkSource::Kind::Grid;
    } else if (kind == "random") {
        s.kind = NetworkSource::Kind::Random;
    } else if (kind == "file") {
        s.kind = NetworkSource::Kind::File;
    } else {
        throw PreconditionError("network kind must be grid, random, or file: " + kind);
    }
    s.rows = j.value("rows", s.rows);
    s.cols = j.value("cols", s.cols);
    s.intersections = j.value("intersections", s.intersections);
    s.lanes = j.value("lanes", s.lanes);
    s.seed = j.value("seed", s.seed);
    s.path = j.value("path", s.path);
    return s;
}

json scenario_to_json(const ScenarioSpec& s) {
    return {{"name", s.name},    {"network", source_to_json(s.network)}, {"period", s.period},
            {"missing", s.missing}, {"horizon", s.horizon},                 {"seeds", s.seeds}};
}

ScenarioSpec scenario_from_json(const json& j) {
    ScenarioSpec s;
    s.name = j.value("name", "");
    if (j.contains("network")) s.network = source_from_json(j.at("network"));
    s.period = j.value("period", s.period);
    s.missing = j.value("missing", s.missing);
    s.horizon = j.value("horizon", s.horizon);
    if (j.contains("seeds")) {
        const auto& v = j.at("seeds");
        s.seeds = v.is_number() ? default_seeds(v.get<int>()) : v.get<std::vector<std::uint64_t>>();
    } else {
        s.seeds = default_seeds();
    }
    s.validate();
    return s;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

Stat stat_of(const std::vector<double>& v) {
    Stat st;
    st.mean = mean_of(v);
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - st.mean) * (x - st.mean);
        st.stdev = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return st;
}

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s) {
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw std::runtime_error("bad number in CSV: " + s);
    return v;
}

std::string safe_name(std::string s) {
    for (char& c : s) {
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
    }
    return s;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(int n, int workers, Fn fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(mu);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace

// ---- config -------------------------------------------------------------------

net::RoadNetwork NetworkSource::build() const {
    switch (kind) {
        case Kind::Grid: return net::generate_grid_network(rows, cols, lanes);
        case Kind::Random: {
            net::RandomNetworkOptions opts;
            opts.allow_large = intersections > 10;
            return net::generate_random_network(seed, intersections, lanes, opts);
        }
        case Kind::File: return net::load_network(path);
    }
    throw PreconditionError("unknown network kind");
}

std::string NetworkSource::label() const {
    switch (kind) {
        case Kind::Grid: return "grid" + std::to_string(rows) + "x" + std::to_string(cols) + "l" + std::to_string(lanes);
        case Kind::Random:
            return "random" + std::to_string(intersections) + "s" + std::to_string(seed) + "l" + std::to_string(lanes);
        case Kind::File: return "file-" + std::filesystem::path(path).stem().string();
    }
    return "network";
}

std::vector<std::uint64_t> default_seeds(int n) {
    require(n >= 1, "seed count must be >= 1");
    std::vector<std::uint64_t> s(n);
    for (int i = 0; i < n; ++i) s[i] = static_cast<std::uint64_t>(i + 1);
    return s;
}

void ScenarioSpec::validate() const {
    require(period > 0.0, "scenario: period must be > 0");
    require(missing >= 0.0 && missing <= 1.0, "scenario: missing probability must lie in [0, 1]");
    require(horizon >= 1, "scenario: horizon must be >= 1");
    require(!seeds.empty(), "scenario: seed list is empty");
    require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(),
            "scenario: seeds must be distinct");
    if (network.kind == NetworkSource::Kind::File) {
        require(std::filesystem::exists(network.path), "scenario: network file not found: " + network.path);
    }
}

std::string ScenarioSpec::key() const {
    if (!name.empty()) return name;
    return network.label() + "_T" + format_number(period) + "_p" + format_number(missing) + "_h" +
           std::to_string(horizon);
}

void RunConfig::validate(std::vector<std::string>* warnings) const {
    require(workers >= 1, "workers must be >= 1");
    model.validate();
    learner.validate();
    ensemble.validate();
    require(fixed.green_duration >= 1, "fixed-time green duration must be >= 1");
    require(train.episodes >= 1 && train.horizon >= 1, "train: episodes and horizon must be >= 1");
    require(train.period > 0.0, "train: period must be > 0");
    require(train.min_intersections >= 2 && train.max_intersections >= train.min_intersections &&
                train.max_intersections <= 10,
            "train: intersection range must lie within [2, 10]");
    require(train.network_count >= 0, "train: network_count must be >= 0");
    require(train.missing >= 0.0 && train.missing <= 1.0, "train: missing probability must lie in [0, 1]");
    for (const auto& s : scenarios) s.validate();
    static const std::set<std::string> known{"fixed", "greedy", "igrl", "dgrl", "rglight"};
    for (const auto& m : methods) require(known.count(m) != 0, "unknown method: " + m);
    require(!matrix.scales.empty() && !matrix.demands.empty() && matrix.seeds >= 1 && matrix.horizon >= 1,
            "matrix: scales, demands, seeds, and horizon must be non-empty / positive");
    for (int s : matrix.scales) require(s >= 2, "matrix: grid scale must be >= 2");
    for (double d : matrix.demands) require(d > 0.0, "matrix: demand period must be > 0");
    if (warnings && train.missing > 0.0) {
        warnings->push_back("training with missing probability > 0 departs from the clean-training protocol");
    }
}

obs::FeatureScale RunConfig::feature_scale() const {
    return standard_features ? obs::FeatureScale::standard() : obs::FeatureScale::raw();
}

json to_json(const RunConfig& c) {
    json scen = json::array();
    for (const auto& s : c.scenarios) scen.push_back(scenario_to_json(s));
    return {{"root_seed", c.root_seed},
            {"out_dir", c.out_dir},
            {"workers", c.workers},
            {"standard_features", c.standard_features},
            {"model", model::to_json(c.model)},
            {"learner", agents::to_json(c.learner)},
            {"train",
             {{"episodes", c.train.episodes},
              {"horizon", c.train.horizon},
              {"period", c.train.period},
              {"min_intersections", c.train.min_intersections},
              {"max_intersections", c.train.max_intersections},
              {"network_count", c.train.network_count},
              {"lanes", c.train.lanes},
              {"missing", c.train.missing},
              {"checkpoint_every", c.train.checkpoint_every}}},
            {"ensemble", {{"kappa", c.ensemble.kappa}, {"temperature", c.ensemble.temperature}}},
            {"fixed", {{"green_duration", c.fixed.green_duration}}},
            {"scenarios", scen},
            {"methods", c.methods},
            {"matrix",
             {{"scales", c.matrix.scales},
              {"demands", c.matrix.demands},
              {"seeds", c.matrix.seeds},
              {"horizon", c.matrix.horizon},
              {"lanes", c.matrix.lanes}}},
            {"paper_scale", c.paper_scale}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    c.root_seed = j.value("root_seed", c.root_seed);
    c.out_dir = j.value("out_dir", c.out_dir);
    c.workers = j.value("workers", c.workers);
    c.standard_features = j.value("standard_features", c.standard_features);
    if (j.contains("model")) c.model = model::gcn_config_from_json(j.at("model"));
    if (j.contains("learner")) c.learner = agents::learner_config_from_json(j.at("learner"));
    if (j.contains("train")) {
        const auto& t = j.at("train");
        c.train.episodes = t.value("episodes", c.train.episodes);
        c.train.horizon = t.value("horizon", c.train.horizon);
        c.train.period = t.value("period", c.train.period);
        c.train.min_intersections = t.value("min_intersections", c.train.min_intersections);
        c.train.max_intersections = t.value("max_intersections", c.train.max_intersections);
        c.train.network_count = t.value("network_count", c.train.network_count);
        c.train.lanes = t.value("lanes", c.train.lanes);
        c.train.missing = t.value("missing", c.train.missing);
        c.train.checkpoint_every = t.value("checkpoint_every", c.train.checkpoint_every);
    }
    if (j.contains("ensemble")) {
        c.ensemble.kappa = j.at("ensemble").value("kappa", c.ensemble.kappa);
        c.ensemble.temperature = j.at("ensemble").value("temperature", c.ensemble.temperature);
    }
    if (j.contains("fixed")) c.fixed.green_duration = j.at("fixed").value("green_duration", c.fixed.green_duration);
    if (j.contains("scenarios")) {
        for (const auto& s : j.at("scenarios")) c.scenarios.push_back(scenario_from_json(s));
    } else {
        c.scenarios = default_scenarios();
    }
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("matrix")) {
        const auto& m = j.at("matrix");
        c.matrix.scales = m.value("scales", c.matrix.scales);
        c.matrix.demands = m.value("demands", c.matrix.demands);
        c.matrix.seeds = m.value("seeds", c.matrix.seeds);
        c.matrix.horizon = m.value("horizon", c.matrix.horizon);
        c.matrix.lanes = m.value("lanes", c.matrix.lanes);
    }
    c.paper_scale = j.value("paper_scale", c.paper_scale);
    c.validate();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("config " + path + ": " + e.what());
    }
    return run_config_from_json(j);
}

std::uint64_t config_hash(const RunConfig& cfg) {
    json j = to_json(cfg);
    j.erase("out_dir");
    j.erase("workers");
    return fnv1a(j.dump());
}

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void apply_env_overrides(RunConfig& cfg) {
    if (const char* dir = std::getenv("RGLIGHT_OUT_DIR"); dir && *dir) cfg.out_dir = dir;
    if (const char* w = std::getenv("RGLIGHT_WORKERS"); w && *w) {
        int n = 0;
        auto [p, ec] = std::from_chars(w, w + std::char_traits<char>::length(w), n);
        require(ec == std::errc() && *p == '\0' && n >= 1, "RGLIGHT_WORKERS must be a positive integer");
        cfg.workers = n;
    }
}

std::vector<ScenarioSpec> default_scenarios() {
    std::vector<ScenarioSpec> out;
    for (double p : {0.0, 0.2, 0.4, 0.6}) {
        ScenarioSpec s;
        s.network.kind = NetworkSource::Kind::Grid;
        s.period = 4.0;
        s.missing = p;
        s.seeds = default_seeds();
        out.push_back(s);
    }
    return out;
}

// ---- training -----------------------------------------------------------------

std::string training_log_csv(const std::vector<EpisodeLog>& log) {
    std::ostringstream o;
    o << "episode,mean_loss,mean_reward,epsilon,updates,intersections\n";
    for (const auto& e : log) {
        o << e.episode << ',' << format_number(e.mean_loss) << ',' << format_number(e.mean_reward) << ','
          << format_number(e.epsilon) << ',' << e.updates << ',' << e.intersections << '\n';
    }
    return o.str();
}

net::RoadNetwork training_network(const RunConfig& cfg, int episode) {
    const auto& t = cfg.train;
    const int idx = t.network_count > 0 ? episode % t.network_count : episode;
    const int span = t.max_intersections - t.min_intersections + 1;
    const auto pick = derive_seed(cfg.root_seed, "train.size", static_cast<std::uint64_t>(idx));
    const int n = t.min_intersections + static_cast<int>(pick % static_cast<std::uint64_t>(span));
    return net::generate_random_network(derive_seed(cfg.root_seed, "train.network", idx), n, t.lanes);
}

TrainResult train_agent(const RunConfig& cfg, agents::AgentKind kind, const json* resume, const TrainHooks& hooks) {
    cfg.validate();
    const std::string tag = "train." + agents::to_string(kind);
    agents::Learner learner(kind, cfg.model, cfg.learner, derive_seed(cfg.root_seed, tag));
    int first = 0;
    if (resume) first = learner.restore(*resume) + 1;

    const auto scale = cfg.feature_scale();
    const auto& lc = cfg.learner;
    TrainResult result;
    for (int ep = first; ep < cfg.train.episodes; ++ep) {
        const net::RoadNetwork net = training_network(cfg, ep);
        auto trips = sim::generate_trips(net, cfg.train.period, cfg.train.horizon,
                                         derive_seed(cfg.root_seed, tag + ".trips", ep));
        sim::Simulation sim(net, std::move(trips));
        obs::FailureModel failures(cfg.train.missing, derive_seed(cfg.root_seed, tag + ".failures", ep));
        auto observe = [&] {
            auto g = std::make_shared<obs::StateGraph>(obs::build_state_graph(sim.state(), net, scale));
            if (cfg.train.missing > 0.0) failures.apply(*g);
            return std::shared_ptr<const obs::StateGraph>(std::move(g));
        };

        const double eps = lc.epsilon(ep);
        const int tscs = static_cast<int>(net.signalized().size());
        double loss_sum = 0.0, reward_sum = 0.0;
        long losses = 0;
        auto g = observe();
        for (int step = 1; !sim.done(); ++step) {
            const auto actions = learner.act(*g, eps);
            sim.step(actions);
            auto next = observe();
            const auto r = sim::rewards(net, sim.last_queues());
            for (int k = 0; k < tscs; ++k) {
                // Horizon cut-offs are truncations, not terminal states.
                learner.replay().push({g, next, k, actions[k], r[k], false});
                reward_sum += r[k];
            }
            g = std::move(next);
            if (learner.replay().size() >= std::max<std::size_t>(lc.min_replay, 1) && step % lc.train_every == 0) {
                try {
                    loss_sum += learner.train_step();
                } catch (const ad::NonFiniteGradient& e) {
                    throw std::runtime_error("training diverged (" + agents::to_string(kind) + ", episode " +
                                             std::to_string(ep) + ", update " + std::to_string(learner.updates()) +
                                             "): " + e.what());
                }
                ++losses;
            }
        }
        EpisodeLog log;
        log.episode = ep;
        log.mean_loss = losses ? loss_sum / static_cast<double>(losses) : 0.0;
        log.mean_reward = reward_sum / std::max(1.0, static_cast<double>(tscs) * cfg.train.horizon);
        log.epsilon = eps;
        log.updates = learner.updates();
        log.intersections = tscs;
        result.log.push_back(log);
        if (hooks.on_episode) hooks.on_episode(log);
        const bool last = ep + 1 == cfg.train.episodes;
        if (hooks.on_checkpoint && (last || (cfg.train.checkpoint_every > 0 && (ep + 1) % cfg.train.checkpoint_every == 0))) {
            hooks.on_checkpoint(learner.checkpoint(ep), ep);
        }
    }
    auto doc = learner.checkpoint(std::max(first, cfg.train.episodes) - 1);
    doc["config_hash"] = hash_hex(config_hash(cfg));
    result.checkpoint = std::make_shared<json>(std::move(doc));
    return result;
}

// ---- evaluation -------------------------------------------------------------

Policies load_policies(const RunConfig& cfg, const json* igrl, const json* dgrl) {
    const std::string expected = hash_hex(agents::model_hash(cfg.model));
    auto load = [&](const json* doc, agents::AgentKind want) -> std::shared_ptr<agents::PolicyParams> {
        if (!doc) return nullptr;
        require(agents::checkpoint_kind(*doc) == want, "checkpoint holds a " + doc->value("kind", std::string("?")) +
                                                           " agent, expected " + agents::to_string(want));
        if (doc->at("model_hash").get<std::string>() != expected) {
            throw PreconditionError("incompatible checkpoint hash: checkpoint model " +
                                    doc->at("model_hash").get<std::string>() + " vs config model " + expected);
        }
        return agents::load_policy(*doc);
    };
    return {load(igrl, agents::AgentKind::Igrl), load(dgrl, agents::AgentKind::Dgrl)};
}

std::unique_ptr<agents::Controller> make_controller(const std::string& method, const net::RoadNetwork& net,
                                                    const Policies& p, const RunConfig& cfg) {
    if (method == "fixed") return std::make_unique<agents::FixedTimeController>(net, cfg.fixed);
    if (method == "greedy") return std::make_unique<agents::GreedyController>();
    if (method == "igrl") {
        require(p.igrl != nullptr, "method igrl needs an igrl checkpoint");
        return std::make_unique<agents::IgrlController>(p.igrl);
    }
    if (method == "dgrl") {
        require(p.dgrl != nullptr, "method dgrl needs a dgrl checkpoint");
        return std::make_unique<agents::DgrlController>(p.dgrl);
    }
    if (method == "rglight") {
        require(p.igrl != nullptr && p.dgrl != nullptr, "method rglight needs igrl and dgrl checkpoints");
        return std::make_unique<agents::RGLightController>(p.igrl, p.dgrl, cfg.ensemble);
    }
    throw PreconditionError("unknown method: " + method);
}

EpisodeMetrics run_episode(const net::RoadNetwork& net, const sim::TripSchedule& trips, agents::Controller& controller,
                           double missing, std::uint64_t failure_seed, const obs::FeatureScale& scale,
                           int dump_graph_every, const GraphDump& dump, const StepLog& on_step) {
    sim::Simulation sim(net, trips);
    obs::FailureModel failures(missing, failure_seed);
    const long tscs = static_cast<long>(net.signalized().size());
    const bool dumping = dump && dump_graph_every > 0;
    EpisodeMetrics m;
    m.delay_series.reserve(static_cast<std::size_t>(sim.horizon()));
    while (!sim.done()) {
        const int t = sim.state().clock;
        std::optional<obs::StateGraph> g;
        if (controller.needs_graph() || (dumping && t % dump_graph_every == 0)) {
            g = obs::build_state_graph(sim.state(), net, scale);
            if (missing > 0.0) failures.apply(*g);
            if (dumping && t % dump_graph_every == 0) dump(t, *g);
        }
        const auto actions = controller.act(sim, g ? &*g : nullptr);
        const auto f = sim.step(actions);
        m.delay_sum += f.delay;
        m.queue_sum += f.queue;
        m.requested += f.requested;
        m.executed += f.switches;
        m.tsc_steps += tscs;
        m.arrivals += f.arrivals;
        m.departures += f.departures;
        m.delay_series.push_back(f.delay);
        if (on_step) on_step(f);
    }
    for (const auto& a : sim.state().arrived) m.travel_time_sum += a.arrive_step - a.depart_step;
    return m;
}

std::string step_csv_header() { return "step,sum_delay,sum_queue,switches,arrivals\n"; }

std::string step_csv_row(const sim::MetricsFrame& f) {
    return std::to_string(f.step) + ',' + format_number(f.delay) + ',' + std::to_string(f.queue) + ',' +
           std::to_string(f.switches) + ',' + std::to_string(f.arrivals) + '\n';
}

namespace {

std::vector<double> collect(const std::vector<SeedRow>& rows, double (*get)(const EpisodeMetrics&)) {
    std::vector<double> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(get(r.metrics));
    return v;
}

}  // namespace

Stat EvalRecord::delay() const {
    return stat_of(collect(rows, [](const EpisodeMetrics& m) { return m.delay_sum; }));
}
Stat EvalRecord::queue() const {
    return stat_of(collect(rows, [](const EpisodeMetrics& m) { return m.queue_sum; }));
}
Stat EvalRecord::travel_time() const {
    return stat_of(collect(rows, [](const EpisodeMetrics& m) {
        return m.arrivals ? m.travel_time_sum / m.arrivals : 0.0;
    }));
}
double EvalRecord::requested_rate() const {
    return mean_of(collect(rows, [](const EpisodeMetrics& m) {
        return m.tsc_steps ? static_cast<double>(m.requested) / static_cast<double>(m.tsc_steps) : 0.0;
    }));
}
double EvalRecord::executed_rate() const {
    return mean_of(collect(rows, [](const EpisodeMetrics& m) {
        return m.tsc_steps ? static_cast<double>(m.executed) / static_cast<double>(m.tsc_steps) : 0.0;
    }));
}

std::vector<double> EvalRecord::mean_delay_series() const {
    std::vector<double> s;
    for (const auto& r : rows) {
        if (s.size() < r.metrics.delay_series.size()) s.resize(r.metrics.delay_series.size(), 0.0);
        for (std::size_t t = 0; t < r.metrics.delay_series.size(); ++t) s[t] += r.metrics.delay_series[t];
    }
    if (!rows.empty()) {
        for (double& v : s) v /= static_cast<double>(rows.size());
    }
    return s;
}

std::uint64_t trip_seed(const RunConfig& cfg, const ScenarioSpec& s, std::uint64_t seed) {
    // Keyed on network and period only, so every p reuses the same trips.
    return derive_seed(cfg.root_seed, "eval.trips:" + s.network.label() + ":" + format_number(s.period) + ":" +
                                          std::to_string(s.horizon),
                       seed);
}

std::vector<EvalRecord> evaluate(const RunConfig& cfg, const Policies& policies,
                                 const std::vector<ScenarioSpec>& scenarios, const std::vector<std::string>& methods) {
    require(!methods.empty(), "evaluate: no methods");
    require(!scenarios.empty(), "evaluate: no scenarios");
    std::vector<net::RoadNetwork> nets;
    nets.reserve(scenarios.size());
    for (const auto& s : scenarios) {
        s.validate();
        nets.push_back(s.network.build());
    }
    for (const auto& m : methods) (void)make_controller(m, nets.front(), policies, cfg);  // fail fast

    std::vector<EvalRecord> records;
    std::vector<std::pair<int, int>> tasks;  // (scenario, seed index)
    for (std::size_t s = 0; s < scenarios.size(); ++s) {
        for (const auto& m : methods) {
            EvalRecord r;
            r.scenario = scenarios[s].key();
            r.method = m;
            r.period = scenarios[s].period;
            r.missing = scenarios[s].missing;
            r.horizon = scenarios[s].horizon;
            r.rows.resize(scenarios[s].seeds.size());
            records.push_back(std::move(r));
        }
        for (std::size_t k = 0; k < scenarios[s].seeds.size(); ++k) tasks.emplace_back(static_cast<int>(s), static_cast<int>(k));
    }
    const auto scale = cfg.feature_scale();
    parallel_for(static_cast<int>(tasks.size()), cfg.workers, [&](int i) {
        const auto [s, k] = tasks[i];
        const ScenarioSpec& sc = scenarios[s];
        const std::uint64_t seed = sc.seeds[k];
        const auto trips = sim::generate_trips(nets[s], sc.period, sc.horizon, trip_seed(cfg, sc, seed));
        const std::uint64_t fseed = derive_seed(cfg.root_seed, "eval.failures:" + sc.key(), seed);
        for (std::size_t m = 0; m < methods.size(); ++m) {
            auto ctl = make_controller(methods[m], nets[s], policies, cfg);
            auto& row = records[s * methods.size() + m].rows[k];
            row.seed = seed;
            row.metrics = run_episode(nets[s], trips, *ctl, sc.missing, fseed, scale);
        }
    });
    return records;
}

// ---- generalization matrix --------------------------------------------------

double normalize_value(double x, double lo, double hi) {
    if (!(hi > lo)) return 0.0;
    return std::clamp((x - lo) / (hi - lo), 0.0, 1.0) * 10000.0;
}

void normalize_cells(std::vector<MatrixCell>& cells) {
    std::map<std::pair<int, double>, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < cells.size(); ++i) groups[{cells[i].scale, cells[i].demand}].push_back(i);
    for (const auto& [key, idx] : groups) {
        double lo = cells[idx.front()].mean_delay, hi = lo;
        std::string pool;
        for (std::size_t i : idx) {
            lo = std::min(lo, cells[i].mean_delay);
            hi = std::max(hi, cells[i].mean_delay);
            pool += (pool.empty() ? "" : "|") + cells[i].method;
        }
        for (std::size_t i : idx) {
            cells[i].degenerate = !(hi > lo);
            cells[i].normalized = normalize_value(cells[i].mean_delay, lo, hi);
            cells[i].pool = pool;
        }
    }
}

std::vector<MatrixCell> generalization_matrix(const RunConfig& cfg, const Policies& policies,
                                              const std::vector<std::string>& methods, std::vector<EvalRecord>* out) {
    require(methods.size() >= 2, "generalization_matrix: at least two methods are needed");
    std::vector<ScenarioSpec> scenarios;
    for (int s : cfg.matrix.scales) {
        for (double d : cfg.matrix.demands) {
            ScenarioSpec sc;
            sc.network.kind = NetworkSource::Kind::Grid;
            sc.network.rows = sc.network.cols = s;
            sc.network.lanes = cfg.matrix.lanes;
            sc.period = d;
            sc.horizon = cfg.matrix.horizon;
            sc.seeds = default_seeds(cfg.matrix.seeds);
            sc.name = "matrix_s" + std::to_string(s) + "_T" + format_number(d);
            scenarios.push_back(sc);
        }
    }
    auto records = evaluate(cfg, policies, scenarios, methods);
    std::vector<MatrixCell> cells;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& sc = scenarios[i / methods.size()];
        MatrixCell c;
        c.scale = sc.network.rows;
        c.demand = sc.period;
        c.method = records[i].method;
        c.mean_delay = records[i].delay().mean;
        c.requested_x1000 = records[i].requested_rate() * 1000.0;
        c.executed_x1000 = records[i].executed_rate() * 1000.0;
        cells.push_back(c);
    }
    normalize_cells(cells);
    if (out) *out = std::move(records);
    return cells;
}

std::string matrix_csv(const std::vector<MatrixCell>& cells) {
    std::ostringstream o;
    o << "scale,demand,method,mean_delay,normalized,degenerate,pool,switch_requested_x1000,switch_executed_x1000\n";
    for (const auto& c : cells) {
        o << c.scale << ',' << format_number(c.demand) << ',' << c.method << ',' << format_number(c.mean_delay) << ','
          << format_number(c.normalized) << ',' << (c.degenerate ? 1 : 0) << ',' << c.pool << ','
          << format_number(c.requested_x1000) << ',' << format_number(c.executed_x1000) << '\n';
    }
    return o.str();
}

std::vector<MatrixCell> parse_matrix_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), "matrix CSV: missing header");
    const auto header = split(line, ',');
    require(header.size() >= 5 && header[0] == "scale" && header[1] == "demand" && header[2] == "method" &&
                header[3] == "mean_delay" && header[4] == "normalized",
            "matrix CSV: unexpected header");
    std::vector<MatrixCell> cells;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line, ',');
        require(f.size() == header.size(), "matrix CSV: ragged row");
        MatrixCell c;
        c.scale = static_cast<int>(parse_double(f[0]));
        c.demand = parse_double(f[1]);
        c.method = f[2];
        c.mean_delay = parse_double(f[3]);
        c.normalized = parse_double(f[4]);
        if (f.size() >= 9) {
            c.degenerate = f[5] == "1";
            c.pool = f[6];
            c.requested_x1000 = parse_double(f[7]);
            c.executed_x1000 = parse_double(f[8]);
        }
        cells.push_back(c);
    }
    return cells;
}

// ---- reports ------------------------------------------------------------------

std::vector<SwitchRate> switch_rate_report(const std::vector<EvalRecord>& records) {
    std::vector<SwitchRate> out;
    for (const auto& r : records) out.push_back({r.scenario, r.method, r.requested_rate() * 1000.0, r.executed_rate() * 1000.0});
    return out;
}

std::string format_number(double v) {
    if (v == 0.0) return "0";  // folds -0
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc()) throw std::runtime_error("format_number failed");
    return std::string(buf, p);
}

std::string summary_csv(const std::vector<EvalRecord>& records, bool paper_scale) {
    const double k = paper_scale ? 0.01 : 1.0;
    std::ostringstream o;
    o << "scenario,method,period,missing,horizon,seeds,delay_mean,delay_std,queue_mean,queue_std,"
         "travel_time_mean,travel_time_std,switch_requested_x1000,switch_executed_x1000\n";
    for (const auto& r : records) {
        const auto d = r.delay(), q = r.queue(), t = r.travel_time();
        o << r.scenario << ',' << r.method << ',' << format_number(r.period) << ',' << format_number(r.missing) << ','
          << r.horizon << ',' << r.rows.size() << ',' << format_number(d.mean * k) << ',' << format_number(d.stdev * k)
          << ',' << format_number(q.mean * k) << ',' << format_number(q.stdev * k) << ',' << format_number(t.mean)
          << ',' << format_number(t.stdev) << ',' << format_number(r.requested_rate() * 1000.0) << ','
          << format_number(r.executed_rate() * 1000.0) << '\n';
    }
    return o.str();
}

std::string seeds_csv(const std::vector<EvalRecord>& records) {
    std::ostringstream o;
    o << "scenario,method,seed,delay,queue,travel_time_sum,arrivals,departures,requested,executed,tsc_steps\n";
    for (const auto& r : records) {
        for (const auto& row : r.rows) {
            const auto& m = row.metrics;
            o << r.scenario << ',' << r.method << ',' << row.seed << ',' << format_number(m.delay_sum) << ','
              << format_number(m.queue_sum) << ',' << format_number(m.travel_time_sum) << ',' << m.arrivals << ','
              << m.departures << ',' << m.requested << ',' << m.executed << ',' << m.tsc_steps << '\n';
        }
    }
    return o.str();
}

std::string switch_rate_csv(const std::vector<SwitchRate>& rates) {
    std::ostringstream o;
    o << "scenario,method,requested_x1000,executed_x1000\n";
    for (const auto& s : rates) {
        o << s.scenario << ',' << s.method << ',' << format_number(s.requested) << ',' << format_number(s.executed)
          << '\n';
    }
    return o.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> emit_reports(const std::vector<EvalRecord>& records, const std::vector<MatrixCell>* matrix,
                                      const std::string& out_dir, bool paper_scale) {
    require(!records.empty() || (matrix && !matrix->empty()), "emit_reports: no records");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) throw std::runtime_error("cannot create output directory " + out_dir);
    const std::filesystem::path dir(out_dir);
    std::vector<std::string> written;
    auto put = [&](const std::string& name, const std::string& text) {
        const std::string p = (dir / name).string();
        write_text(p, text);
        written.push_back(p);
    };

    if (!records.empty()) {
        put("summary.csv", summary_csv(records, paper_scale));
        put("seeds.csv", seeds_csv(records));
        put("switch_rates.csv", switch_rate_csv(switch_rate_report(records)));
        std::map<std::string, std::vector<plots::Series>> curves;
        std::vector<std::string> order;
        for (const auto& r : records) {
            if (!curves.count(r.scenario)) order.push_back(r.scenario);
            curves[r.scenario].push_back({r.method, r.mean_delay_series()});
        }
        for (const auto& sc : order) {
            put("delay_" + safe_name(sc) + ".svg",
                plots::line_chart_svg("Average delay, " + sc, "time step", "delay", curves[sc]));
        }
    }
    if (matrix && !matrix->empty()) {
        put("matrix.csv", matrix_csv(*matrix));
        std::vector<int> scales;
        std::vector<double> demands;
        std::vector<std::string> methods;
        for (const auto& c : *matrix) {
            if (std::find(scales.begin(), scales.end(), c.scale) == scales.end()) scales.push_back(c.scale);
            if (std::find(demands.begin(), demands.end(), c.demand) == demands.end()) demands.push_back(c.demand);
            if (std::find(methods.begin(), methods.end(), c.method) == methods.end()) methods.push_back(c.method);
        }
        std::vector<std::string> rows, cols;
        for (int s : scales) rows.push_back("scale " + std::to_string(s));
        for (double d : demands) cols.push_back("demand " + format_number(d));
        double rate_hi = 0.0;
        for (const auto& c : *matrix) rate_hi = std::max(rate_hi, c.executed_x1000);
        for (const auto& m : methods) {
            std::vector<std::vector<double>> norm(scales.size(), std::vector<double>(demands.size(), std::nan("")));
            auto rate = norm;
            for (const auto& c : *matrix) {
                if (c.method != m) continue;
                const auto r = std::find(scales.begin(), scales.end(), c.scale) - scales.begin();
                const auto k = std::find(demands.begin(), demands.end(), c.demand) - demands.begin();
                norm[r][k] = c.normalized;
                rate[r][k] = c.executed_x1000;
            }
            put("matrix_" + safe_name(m) + ".svg",
                plots::heatmap_svg("Normalized delay, " + m, rows, cols, norm, 0.0, 10000.0));
            put("switch_rate_" + safe_name(m) + ".svg",
                plots::heatmap_svg("Switch rate x1000, " + m, rows, cols, rate, 0.0, std::max(rate_hi, 1.0)));
        }
    }
    return written;
}

}  // namespace rglight::harness
