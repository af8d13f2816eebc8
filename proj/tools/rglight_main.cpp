// rglight: network generation, training, evaluation, and demos from one binary.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "rglight/harness.hpp"

namespace fs = std::filesystem;
using namespace rglight;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("-c,--config", c.config, "JSON run config");
    app->add_option("-o,--out-dir", c.out_dir, "output directory");
    app->add_option("--seed", c.seed, "root seed");
    app->add_option("-j,--workers", c.workers, "worker threads");
}

harness::RunConfig resolve(const Common& c) {
    harness::RunConfig cfg = c.config.empty() ? harness::run_config_from_json(json::object())
                                              : harness::load_run_config(c.config);
    harness::apply_env_overrides(cfg);
    if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
    if (c.seed) cfg.root_seed = *c.seed;
    if (c.workers) cfg.workers = *c.workers;
    std::vector<std::string> warnings;
    cfg.validate(&warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    return cfg;
}

json read_json(const std::string& path) { return json::parse(harness::read_text(path)); }

std::string ckpt_path(const std::string& dir, agents::AgentKind k) {
    return (fs::path(dir) / (agents::to_string(k) + ".ckpt.json")).string();
}

struct Loaded {
    std::optional<json> igrl;
    std::optional<json> dgrl;
};

Loaded load_checkpoints(const std::string& load_dir, const std::string& igrl, const std::string& dgrl) {
    Loaded l;
    auto pick = [&](const std::string& explicit_path, agents::AgentKind k) -> std::optional<json> {
        if (!explicit_path.empty()) return read_json(explicit_path);
        if (!load_dir.empty() && fs::exists(ckpt_path(load_dir, k))) return read_json(ckpt_path(load_dir, k));
        return std::nullopt;
    };
    l.igrl = pick(igrl, agents::AgentKind::Igrl);
    l.dgrl = pick(dgrl, agents::AgentKind::Dgrl);
    return l;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& s : items) {
        std::string cur;
        for (char ch : s + ",") {
            if (ch == ',') {
                if (!cur.empty()) out.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
    }
    return out;
}

int cmd_netgen(const std::string& kind, int rows, int cols, int n, int lanes, std::uint64_t seed,
               const std::string& out) {
    harness::NetworkSource src;
    src.kind = kind == "random" ? harness::NetworkSource::Kind::Random : harness::NetworkSource::Kind::Grid;
    if (kind != "random" && kind != "grid") throw CLI::ValidationError("--kind", "must be grid or random");
    src.rows = rows;
    src.cols = cols;
    src.intersections = n;
    src.lanes = lanes;
    src.seed = seed;
    const auto net = src.build();
    if (out.empty() || out == "-") {
        std::cout << net::serialize(net);
    } else {
        net::save_network(net, out);
        std::cerr << "wrote " << out << " (" << net.intersections.size() << " nodes, " << net.lanes.size()
                  << " lanes, " << net.signalized().size() << " signals)\n";
    }
    return 0;
}

int cmd_train(const Common& common, const std::string& agent, std::optional<int> episodes, const std::string& save,
              const std::string& resume) {
    auto cfg = resolve(common);
    if (episodes) cfg.train.episodes = *episodes;
    const std::string dir = save.empty() ? cfg.out_dir : save;
    fs::create_directories(dir);
    std::vector<agents::AgentKind> kinds;
    if (agent == "igrl" || agent == "both") kinds.push_back(agents::AgentKind::Igrl);
    if (agent == "dgrl" || agent == "both") kinds.push_back(agents::AgentKind::Dgrl);
    if (kinds.empty()) throw CLI::ValidationError("--agent", "must be igrl, dgrl, or both");
    harness::write_text((fs::path(dir) / "config.json").string(), harness::to_json(cfg).dump(2) + "\n");

    for (auto kind : kinds) {
        const std::string path = ckpt_path(dir, kind);
        std::optional<json> prior;
        if (!resume.empty()) {
            const std::string rp = fs::is_directory(resume) ? ckpt_path(resume, kind) : resume;
            prior = read_json(rp);
            std::cerr << "resuming " << agents::to_string(kind) << " from episode " << prior->at("episode").get<int>() + 1
                      << '\n';
        }
        const std::string log_path = (fs::path(dir) / ("train_" + agents::to_string(kind) + ".csv")).string();
        std::vector<harness::EpisodeLog> log;
        if (prior && fs::exists(log_path)) {
            // keep rows from before the checkpoint
            std::istringstream in(harness::read_text(log_path));
            std::string line;
            std::getline(in, line);
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                harness::EpisodeLog e;
                char sep;
                std::istringstream row(line);
                row >> e.episode >> sep >> e.mean_loss >> sep >> e.mean_reward >> sep >> e.epsilon >> sep >>
                    e.updates >> sep >> e.intersections;
                if (e.episode <= prior->at("episode").get<int>()) log.push_back(e);
            }
        }
        const auto t0 = std::chrono::steady_clock::now();
        harness::TrainHooks hooks;
        hooks.on_episode = [&](const harness::EpisodeLog& e) {
            log.push_back(e);
            harness::write_text(log_path, harness::training_log_csv(log));
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::fprintf(stderr, "%s ep %3d  n=%d  eps=%.3f  loss=%.4f  reward=%.3f  updates=%ld  %.0fs\n",
                         agents::to_string(kind).c_str(), e.episode, e.intersections, e.epsilon, e.mean_loss,
                         e.mean_reward, e.updates, secs);
        };
        hooks.on_checkpoint = [&](const json& doc, int) {
            json d = doc;
            d["config_hash"] = harness::hash_hex(harness::config_hash(cfg));
            harness::write_text(path, d.dump() + "\n");
        };
        auto result = harness::train_agent(cfg, kind, prior ? &*prior : nullptr, hooks);
        harness::write_text(path, result.checkpoint->dump() + "\n");
        std::cerr << "wrote " << path << '\n';
    }
    return 0;
}

harness::Policies policies_for(const harness::RunConfig& cfg, const Loaded& l) {
    return harness::load_policies(cfg, l.igrl ? &*l.igrl : nullptr, l.dgrl ? &*l.dgrl : nullptr);
}

std::vector<std::string> methods_for(const harness::RunConfig& cfg, const std::vector<std::string>& agent_flags,
                                     const Loaded& l) {
    auto methods = agent_flags.empty() ? cfg.methods : split_list(agent_flags);
    if (agent_flags.empty()) {
        // drop learned methods whose checkpoints are absent
        std::vector<std::string> keep;
        for (const auto& m : methods) {
            const bool need_i = m == "igrl" || m == "rglight";
            const bool need_d = m == "dgrl" || m == "rglight";
            if ((need_i && !l.igrl) || (need_d && !l.dgrl)) {
                std::cerr << "skipping " << m << ": checkpoint not loaded\n";
                continue;
            }
            keep.push_back(m);
        }
        methods = keep;
    }
    return methods;
}

int cmd_eval(const Common& common, const Loaded& l, const std::vector<std::string>& agent_flags,
             std::optional<int> seeds, bool paper_scale) {
    auto cfg = resolve(common);
    if (paper_scale) cfg.paper_scale = true;
    // an empty list means the standard failure sweep
    auto scenarios = cfg.scenarios.empty() ? harness::default_scenarios() : cfg.scenarios;
    if (seeds) {
        for (auto& s : scenarios) s.seeds = harness::default_seeds(*seeds);
    }
    const auto methods = methods_for(cfg, agent_flags, l);
    const auto policies = policies_for(cfg, l);
    const auto records = harness::evaluate(cfg, policies, scenarios, methods);
    const auto files = harness::emit_reports(records, nullptr, cfg.out_dir, cfg.paper_scale);
    std::cout << harness::summary_csv(records, cfg.paper_scale);
    for (const auto& f : files) std::cerr << "wrote " << f << '\n';
    std::cerr << "config hash " << harness::hash_hex(harness::config_hash(cfg)) << '\n';
    return 0;
}

int cmd_matrix(const Common& common, const Loaded& l, const std::vector<std::string>& agent_flags,
               std::optional<int> seeds) {
    auto cfg = resolve(common);
    if (seeds) cfg.matrix.seeds = *seeds;
    const auto methods = methods_for(cfg, agent_flags, l);
    const auto policies = policies_for(cfg, l);
    std::vector<harness::EvalRecord> records;
    const auto cells = harness::generalization_matrix(cfg, policies, methods, &records);
    const auto files = harness::emit_reports(records, &cells, cfg.out_dir, cfg.paper_scale);
    std::cout << harness::matrix_csv(cells);
    for (const auto& f : files) std::cerr << "wrote " << f << '\n';
    for (const auto& c : cells) {
        if (c.degenerate) std::cerr << "degenerate cell: scale " << c.scale << " demand " << c.demand << '\n';
    }
    return 0;
}

int cmd_demo(const Common& common, const Loaded& l, const std::string& agent, int rows, int cols, double period,
             int horizon, std::uint64_t seed, double missing, int dump_every, int print_every,
             const std::string& metrics_csv) {
    auto cfg = resolve(common);
    harness::NetworkSource src;
    src.rows = rows;
    src.cols = cols;
    const auto net = src.build();
    const auto policies = policies_for(cfg, l);
    auto ctl = harness::make_controller(agent, net, policies, cfg);
    const auto trips = sim::generate_trips(net, period, horizon, derive_seed(cfg.root_seed, "demo.trips", seed));
    harness::GraphDump dump;
    if (dump_every > 0) {
        fs::create_directories(cfg.out_dir);
        dump = [&](int t, const obs::StateGraph& g) {
            harness::write_text((fs::path(cfg.out_dir) / ("graph_" + std::to_string(t) + ".json")).string(),
                                obs::to_json(g).dump() + "\n");
        };
    }
    std::string stream;
    harness::StepLog on_step;
    if (!metrics_csv.empty()) {
        stream = harness::step_csv_header();
        on_step = [&](const sim::MetricsFrame& f) { stream += harness::step_csv_row(f); };
    }
    const auto m = harness::run_episode(net, trips, *ctl, missing, derive_seed(cfg.root_seed, "demo.failures", seed),
                                        cfg.feature_scale(), dump_every, dump, on_step);
    if (!metrics_csv.empty()) harness::write_text(metrics_csv, stream);
    if (print_every > 0) {
        std::printf("step,delay\n");
        for (std::size_t t = 0; t < m.delay_series.size(); t += print_every) {
            std::printf("%zu,%s\n", t + 1, harness::format_number(m.delay_series[t]).c_str());
        }
    }
    std::printf("agent=%s grid=%dx%d period=%s horizon=%d\n", agent.c_str(), rows, cols,
                harness::format_number(period).c_str(), horizon);
    std::printf("delay_sum=%s queue_sum=%s departures=%d arrivals=%d mean_travel_time=%s switch_x1000=%s\n",
                harness::format_number(m.delay_sum).c_str(), harness::format_number(m.queue_sum).c_str(),
                m.departures, m.arrivals,
                harness::format_number(m.arrivals ? m.travel_time_sum / m.arrivals : 0.0).c_str(),
                harness::format_number(m.tsc_steps ? 1000.0 * m.executed / m.tsc_steps : 0.0).c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rglight: graph-based traffic signal control workbench"};
    app.require_subcommand(1);

    std::string kind = "grid", out;
    int rows = 2, cols = 2, n = 4, lanes = 1;
    std::uint64_t net_seed = 0;
    auto* netgen = app.add_subcommand("netgen", "generate a road network as JSON");
    netgen->add_option("--kind", kind, "grid or random")->check(CLI::IsMember({"grid", "random"}));
    netgen->add_option("--rows", rows);
    netgen->add_option("--cols", cols);
    netgen->add_option("-n,--intersections", n);
    netgen->add_option("--lanes", lanes);
    netgen->add_option("--seed", net_seed);
    netgen->add_option("-o,--out", out, "output file (default stdout)");

    Common tc;
    std::string agent = "both", save, resume;
    std::optional<int> episodes;
    auto* train = app.add_subcommand("train", "train IGRL and/or DGRL agents");
    add_common(train, tc);
    train->add_option("--agent", agent, "igrl, dgrl, or both")->check(CLI::IsMember({"igrl", "dgrl", "both"}));
    train->add_option("--episodes", episodes);
    train->add_option("--save", save, "checkpoint directory (default: out dir)");
    train->add_option("--resume", resume, "checkpoint file or directory to continue from");

    Common ec;
    std::string load, igrl_path, dgrl_path;
    std::vector<std::string> agent_flags;
    std::optional<int> seeds;
    bool paper_scale = false;
    auto* eval = app.add_subcommand("eval", "evaluate methods on the configured scenarios");
    add_common(eval, ec);
    eval->add_option("--load", load, "directory holding igrl.ckpt.json / dgrl.ckpt.json");
    eval->add_option("--igrl", igrl_path);
    eval->add_option("--dgrl", dgrl_path);
    eval->add_option("--agent", agent_flags, "methods: igrl,dgrl,rglight,fixed,greedy");
    eval->add_option("--seeds", seeds, "use seeds 1..N for every scenario");
    eval->add_flag("--paper-scale", paper_scale, "divide summed metrics by 100");

    Common mc;
    auto* matrix = app.add_subcommand("matrix", "scale x demand generalization matrix");
    add_common(matrix, mc);
    matrix->add_option("--load", load);
    matrix->add_option("--igrl", igrl_path);
    matrix->add_option("--dgrl", dgrl_path);
    matrix->add_option("--agent", agent_flags);
    matrix->add_option("--seeds", seeds);

    Common dc;
    std::string demo_agent = "fixed";
    double period = 4.0, missing = 0.0;
    int horizon = 300, dump_every = 0, print_every = 0;
    std::uint64_t demo_seed = 1;
    std::string metrics_csv;
    auto* demo = app.add_subcommand("demo", "run one episode and print its metrics");
    add_common(demo, dc);
    demo->add_option("--agent", demo_agent)->check(CLI::IsMember({"fixed", "greedy", "igrl", "dgrl", "rglight"}));
    demo->add_option("--load", load);
    demo->add_option("--igrl", igrl_path);
    demo->add_option("--dgrl", dgrl_path);
    demo->add_option("--rows", rows);
    demo->add_option("--cols", cols);
    demo->add_option("--period", period);
    demo->add_option("--horizon", horizon);
    demo->add_option("--trip-seed", demo_seed);
    demo->add_option("--missing", missing);
    demo->add_option("--dump-graph-every", dump_every, "write the state graph every N steps");
    demo->add_option("--print-every", print_every, "print the delay series every N steps");
    demo->add_option("--metrics-csv", metrics_csv, "write per-step metrics (delay, queue, switches, arrivals)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*netgen) return cmd_netgen(kind, rows, cols, n, lanes, net_seed, out);
        if (*train) return cmd_train(tc, agent, episodes, save, resume);
        const Loaded l = (*eval || *matrix || *demo) ? load_checkpoints(load, igrl_path, dgrl_path) : Loaded{};
        if (*eval) return cmd_eval(ec, l, agent_flags, seeds, paper_scale);
        if (*matrix) return cmd_matrix(mc, l, agent_flags, seeds);
        if (*demo) return cmd_demo(dc, l, demo_agent, rows, cols, period, horizon, demo_seed, missing, dump_every,
                                   print_every, metrics_csv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
