// Python access to networks, the simulator, state graphs, training and evaluation.
// Structured values cross the boundary as JSON text; the package wrapper decodes them.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "rglight/harness.hpp"

namespace py = pybind11;
using namespace rglight;
using nlohmann::json;

namespace {

harness::RunConfig config_of(const std::string& text) {
    return harness::run_config_from_json(text.empty() ? json::object() : json::parse(text));
}

harness::Policies policies_of(const harness::RunConfig& cfg, const std::string& igrl, const std::string& dgrl) {
    json i = igrl.empty() ? json() : json::parse(igrl);
    json d = dgrl.empty() ? json() : json::parse(dgrl);
    return harness::load_policies(cfg, igrl.empty() ? nullptr : &i, dgrl.empty() ? nullptr : &d);
}

std::vector<sim::Action> to_actions(const std::vector<int>& a) {
    std::vector<sim::Action> out;
    out.reserve(a.size());
    for (int x : a) {
        if (x != 0 && x != 1) throw py::value_error("actions are 0 (prolong) or 1 (switch)");
        out.push_back(static_cast<sim::Action>(x));
    }
    return out;
}

py::dict frame_dict(const sim::MetricsFrame& f) {
    py::dict d;
    d["step"] = f.step;
    d["delay"] = f.delay;
    d["queue"] = f.queue;
    d["switches"] = f.switches;
    d["requested"] = f.requested;
    d["masked"] = f.masked;
    d["arrivals"] = f.arrivals;
    d["departures"] = f.departures;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);

    py::class_<net::RoadNetwork>(m, "RoadNetwork")
        .def_property_readonly("signalized", [](const net::RoadNetwork& n) { return n.signalized(); })
        .def_property_readonly("lane_count", [](const net::RoadNetwork& n) { return n.lanes.size(); })
        .def_property_readonly("intersection_count", [](const net::RoadNetwork& n) { return n.intersections.size(); })
        .def("to_json", [](const net::RoadNetwork& n) { return net::to_json(n).dump(); })
        .def_static("from_json", [](const std::string& s) { return net::network_from_json(json::parse(s)); });

    m.def("grid_network", [](int rows, int cols, int lanes) { return net::generate_grid_network(rows, cols, lanes); },
          py::arg("rows"), py::arg("cols"), py::arg("lanes") = 1);
    m.def("random_network",
          [](std::uint64_t seed, int n, int lanes) { return net::generate_random_network(seed, n, lanes); },
          py::arg("seed"), py::arg("intersections"), py::arg("lanes") = 1);

    py::class_<sim::Simulation>(m, "Simulation")
        .def(py::init([](const net::RoadNetwork& n, double period, int horizon, std::uint64_t seed) {
                 return sim::Simulation(n, sim::generate_trips(n, period, horizon, seed));
             }),
             py::arg("network"), py::arg("period"), py::arg("horizon"), py::arg("seed"), py::keep_alive<1, 2>())
        .def("step", [](sim::Simulation& s, const std::vector<int>& a) { return frame_dict(s.step(to_actions(a))); })
        .def_property_readonly("done", &sim::Simulation::done)
        .def_property_readonly("clock", [](const sim::Simulation& s) { return s.state().clock; })
        .def_property_readonly("vehicles", [](const sim::Simulation& s) { return s.state().in_network(); })
        .def_property_readonly("departed", [](const sim::Simulation& s) { return s.state().departed; })
        .def_property_readonly("arrived", [](const sim::Simulation& s) { return s.state().arrived.size(); })
        .def("phases", [](const sim::Simulation& s) {
            std::vector<std::pair<int, int>> out;
            for (const auto& t : s.state().tsc) out.emplace_back(t.phase, t.seconds_in_phase);
            return out;
        })
        .def("rewards", [](const sim::Simulation& s) { return sim::rewards(s.network(), s.last_queues()); })
        .def("state_graph", [](const sim::Simulation& s, bool standard) {
            const auto scale = standard ? obs::FeatureScale::standard() : obs::FeatureScale::raw();
            return obs::to_json(obs::build_state_graph(s.state(), s.network(), scale)).dump();
        }, py::arg("standard_features") = true);

    m.def("ensemble", [](const ad::Matrix& q_deter, const ad::Matrix& q_dis, double kappa, double temperature) {
        agents::EnsembleConfig c;
        c.kappa = kappa;
        c.temperature = temperature;
        c.validate();
        const auto r = agents::ensemble_q(q_deter, q_dis, c);
        std::vector<int> acts;
        for (auto a : r.actions) acts.push_back(static_cast<int>(a));
        return std::make_pair(r.values, acts);
    }, py::arg("q_deter"), py::arg("q_dis"), py::arg("kappa") = 0.6, py::arg("temperature") = 5.0);

    m.def("default_config", [] { return harness::to_json(harness::RunConfig{}).dump(); });
    m.def("config_hash", [](const std::string& cfg) { return harness::hash_hex(harness::config_hash(config_of(cfg))); },
          py::arg("config") = "");

    m.def("train", [](const std::string& cfg, const std::string& agent, py::object on_episode) {
        const auto c = config_of(cfg);
        harness::TrainHooks hooks;
        if (!on_episode.is_none()) {
            hooks.on_episode = [on_episode](const harness::EpisodeLog& e) {
                py::gil_scoped_acquire gil;
                on_episode(e.episode, e.mean_loss, e.mean_reward, e.epsilon);
            };
        }
        std::shared_ptr<json> ckpt;
        {
            py::gil_scoped_release nogil;
            ckpt = harness::train_agent(c, agents::agent_kind_from_string(agent), nullptr, hooks).checkpoint;
        }
        return ckpt->dump();
    }, py::arg("config"), py::arg("agent"), py::arg("on_episode") = py::none());

    m.def("evaluate", [](const std::string& cfg, const std::vector<std::string>& methods, const std::string& igrl,
                         const std::string& dgrl, int seeds) {
        const auto c = config_of(cfg);
        const auto pol = policies_of(c, igrl, dgrl);
        auto scenarios = c.scenarios.empty() ? harness::default_scenarios() : c.scenarios;
        if (seeds > 0) {
            for (auto& s : scenarios) s.seeds = harness::default_seeds(seeds);
        }
        py::gil_scoped_release nogil;
        return harness::summary_csv(harness::evaluate(c, pol, scenarios, methods), c.paper_scale);
    }, py::arg("config"), py::arg("methods"), py::arg("igrl") = "", py::arg("dgrl") = "", py::arg("seeds") = 0);

    m.def("run_episode", [](const std::string& cfg, const std::string& method, int rows, int cols, double period,
                            int horizon, std::uint64_t seed, double missing, const std::string& igrl,
                            const std::string& dgrl) {
        const auto c = config_of(cfg);
        const auto n = net::generate_grid_network(rows, cols, 1);
        const auto pol = policies_of(c, igrl, dgrl);
        auto ctl = harness::make_controller(method, n, pol, c);
        const auto m = harness::run_episode(n, sim::generate_trips(n, period, horizon, seed), *ctl, missing,
                                            derive_seed(seed, "py.failures"), c.feature_scale());
        py::dict d;
        d["delay_sum"] = m.delay_sum;
        d["queue_sum"] = m.queue_sum;
        d["arrivals"] = m.arrivals;
        d["departures"] = m.departures;
        d["requested"] = m.requested;
        d["executed"] = m.executed;
        d["delay_series"] = m.delay_series;
        return d;
    }, py::arg("config"), py::arg("method"), py::arg("rows") = 2, py::arg("cols") = 2, py::arg("period") = 4.0,
       py::arg("horizon") = 1000, py::arg("seed") = 1, py::arg("missing") = 0.0, py::arg("igrl") = "",
       py::arg("dgrl") = "");

    m.def("normalize_value", &harness::normalize_value, py::arg("x"), py::arg("lo"), py::arg("hi"));
}
