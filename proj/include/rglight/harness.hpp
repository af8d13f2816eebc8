#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rglight/agents.hpp"
#include "rglight/gcnmodel.hpp"
#include "rglight/obsgraph.hpp"
#include "rglight/roadnet.hpp"
#include "rglight/simcore.hpp"

namespace rglight::harness {

struct NetworkSource {
    enum class Kind { Grid, Random, File };
    Kind kind = Kind::Grid;
    int rows = 2;
    int cols = 2;
    int intersections = 4;  // random networks
    int lanes = 1;
    std::uint64_t seed = 0;  // random networks
    std::string path;        // file networks

    net::RoadNetwork build() const;
    std::string label() const;
};

struct ScenarioSpec {
    std::string name;
    NetworkSource network;
    double period = 4.0;
    double missing = 0.0;
    int horizon = 1000;
    std::vector<std::uint64_t> seeds;

    void validate() const;
    /// Stable identifier; also salts the trip streams.
    std::string key() const;
};

/// Seeds 1..n.
std::vector<std::uint64_t> default_seeds(int n = 30);

struct TrainConfig {
    int episodes = 60;
    int horizon = 1000;
    double period = 4.0;
    int min_intersections = 2;
    int max_intersections = 6;
    int network_count = 10;  // 0 samples a fresh network every episode
    int lanes = 1;
    double missing = 0.0;
    int checkpoint_every = 10;  // episodes; 0 saves only at the end
};

struct MatrixConfig {
    std::vector<int> scales{2, 4, 6, 8};
    std::vector<double> demands{0.5, 1.0, 2.0, 4.0};
    int seeds = 2;
    int horizon = 1000;
    int lanes = 1;
};

struct RunConfig {
    std::uint64_t root_seed = 1;
    std::string out_dir = "out";
    int workers = 1;
    bool standard_features = true;
    model::GcnConfig model;
    agents::LearnerConfig learner;
    TrainConfig train;
    agents::EnsembleConfig ensemble;
    agents::FixedTimeConfig fixed;
    std::vector<ScenarioSpec> scenarios;
    std::vector<std::string> methods{"fixed", "greedy", "igrl", "dgrl", "rglight"};
    MatrixConfig matrix;
    bool paper_scale = false;

    /// Throws on invalid values; protocol deviations are appended to `warnings`.
    void validate(std::vector<std::string>* warnings = nullptr) const;
    obs::FeatureScale feature_scale() const;
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
/// Hash of the canonical config, ignoring out_dir and workers.
std::uint64_t config_hash(const RunConfig& cfg);
std::string hash_hex(std::uint64_t h);
/// RGLIGHT_OUT_DIR and RGLIGHT_WORKERS.
void apply_env_overrides(RunConfig& cfg);

/// The default robustness grid: 2x2 grid at period 4 for p in {0, 0.2, 0.4, 0.6}.
std::vector<ScenarioSpec> default_scenarios();

// ---- training -----------------------------------------------------------------

struct EpisodeLog {
    int episode = 0;
    double mean_loss = 0.0;
    double mean_reward = 0.0;
    double epsilon = 0.0;
    long updates = 0;
    int intersections = 0;
};

std::string training_log_csv(const std::vector<EpisodeLog>& log);

struct TrainResult {
    std::shared_ptr<nlohmann::json> checkpoint;
    std::vector<EpisodeLog> log;
};

struct TrainHooks {
    std::function<void(const EpisodeLog&)> on_episode;
    /// Called with the checkpoint document every checkpoint_every episodes and at the end.
    std::function<void(const nlohmann::json&, int episode)> on_checkpoint;
};

/// Training networks: a pool of random 2..6-intersection networks (or one per episode).
net::RoadNetwork training_network(const RunConfig& cfg, int episode);

/// Trains one agent kind. With `resume`, continues after the stored episode counter.
/// Divergence aborts with std::runtime_error naming the episode and update.
TrainResult train_agent(const RunConfig& cfg, agents::AgentKind kind, const nlohmann::json* resume = nullptr,
                        const TrainHooks& hooks = {});

// ---- evaluation -------------------------------------------------------------

struct Policies {
    std::shared_ptr<agents::PolicyParams> igrl;
    std::shared_ptr<agents::PolicyParams> dgrl;
};

/// Checks each loaded checkpoint against cfg.model; throws on an incompatible hash.
Policies load_policies(const RunConfig& cfg, const nlohmann::json* igrl, const nlohmann::json* dgrl);

std::unique_ptr<agents::Controller> make_controller(const std::string& method, const net::RoadNetwork& net,
                                                    const Policies& policies, const RunConfig& cfg);

struct EpisodeMetrics {
    double delay_sum = 0.0;
    double queue_sum = 0.0;
    double travel_time_sum = 0.0;  // completed trips
    int arrivals = 0;
    int departures = 0;
    long requested = 0;  // TSC-steps with a switch request
    long executed = 0;   // TSC-steps with an executed switch
    long tsc_steps = 0;
    std::vector<double> delay_series;
};

using GraphDump = std::function<void(int step, const obs::StateGraph& graph)>;
using StepLog = std::function<void(const sim::MetricsFrame& frame)>;

/// One rollout. Vehicle sensor failures (probability `missing`) corrupt only the
/// controller's observation; baselines never look at the graph.
EpisodeMetrics run_episode(const net::RoadNetwork& net, const sim::TripSchedule& trips,
                           agents::Controller& controller, double missing, std::uint64_t failure_seed,
                           const obs::FeatureScale& scale, int dump_graph_every = 0, const GraphDump& dump = {},
                           const StepLog& on_step = {});

/// Header and one row of the per-step metrics stream.
std::string step_csv_header();
std::string step_csv_row(const sim::MetricsFrame& f);

struct SeedRow {
    std::uint64_t seed = 0;
    EpisodeMetrics metrics;
};

struct Stat {
    double mean = 0.0;
    double stdev = 0.0;
};

struct EvalRecord {
    std::string scenario;
    std::string method;
    double period = 0.0;
    double missing = 0.0;
    int horizon = 0;
    std::vector<SeedRow> rows;

    Stat delay() const;
    Stat queue() const;
    Stat travel_time() const;
    double requested_rate() const;  // mean switching fraction per TSC-step
    double executed_rate() const;
    std::vector<double> mean_delay_series() const;
};

/// Every method runs on the same trip schedule for a given (scenario, seed).
std::vector<EvalRecord> evaluate(const RunConfig& cfg, const Policies& policies,
                                 const std::vector<ScenarioSpec>& scenarios,
                                 const std::vector<std::string>& methods);

std::uint64_t trip_seed(const RunConfig& cfg, const ScenarioSpec& s, std::uint64_t seed);

// ---- generalization matrix --------------------------------------------------

struct MatrixCell {
    int scale = 0;
    double demand = 0.0;
    std::string method;
    double mean_delay = 0.0;
    double normalized = 0.0;
    bool degenerate = false;
    std::string pool;  // methods sharing the min/max, joined with '|'
    double requested_x1000 = 0.0;
    double executed_x1000 = 0.0;
};

/// (x - min) / (max - min) * 10000; 0 when max == min.
double normalize_value(double x, double lo, double hi);
/// Normalizes in place across methods within each (scale, demand) cell.
void normalize_cells(std::vector<MatrixCell>& cells);

std::vector<MatrixCell> generalization_matrix(const RunConfig& cfg, const Policies& policies,
                                              const std::vector<std::string>& methods,
                                              std::vector<EvalRecord>* records = nullptr);

std::string matrix_csv(const std::vector<MatrixCell>& cells);
std::vector<MatrixCell> parse_matrix_csv(const std::string& text);

// ---- reports ------------------------------------------------------------------

struct SwitchRate {
    std::string scenario;
    std::string method;
    double requested = 0.0;  // x1000
    double executed = 0.0;   // x1000
};

std::vector<SwitchRate> switch_rate_report(const std::vector<EvalRecord>& records);

/// Shortest round-trip decimal form.
std::string format_number(double v);

std::string summary_csv(const std::vector<EvalRecord>& records, bool paper_scale);
std::string seeds_csv(const std::vector<EvalRecord>& records);
std::string switch_rate_csv(const std::vector<SwitchRate>& rates);

/// Writes CSVs and SVG plots under `out_dir`; returns the written paths.
std::vector<std::string> emit_reports(const std::vector<EvalRecord>& records, const std::vector<MatrixCell>* matrix,
                                      const std::string& out_dir, bool paper_scale);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace rglight::harness
