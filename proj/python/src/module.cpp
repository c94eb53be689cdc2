#include "advgnn/attacks.hpp"
#include "advgnn/bench.hpp"
#include "advgnn/bounds.hpp"
#include "advgnn/datagen.hpp"
#include "advgnn/error.hpp"
#include "advgnn/gnn.hpp"
#include "advgnn/network.hpp"
#include "advgnn/relaxation.hpp"
#include "advgnn/training.hpp"

#include <nlohmann/json.hpp>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace advgnn;

namespace {

// Heavy runs release the GIL; nothing below touches Python objects.
template <class F>
auto unlocked(F&& f) {
  py::gil_scoped_release release;
  return f();
}

RunLimits limits(std::uint64_t seed, long restarts, std::optional<double> timeout) {
  RunLimits run;
  run.seed = seed;
  run.restarts = restarts;
  if (timeout) run.deadline = deadline_after(*timeout);
  return run;
}

py::list bounds_list(const LayerBounds& b) {
  py::list out;
  for (std::size_t k = 0; k < b.num_layers(); ++k) out.append(py::make_tuple(b.lower[k], b.upper[k]));
  return out;
}

py::object to_python(const nlohmann::json& doc) {
  return py::module_::import("json").attr("loads")(doc.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Attacks, bounds and the learned GNN attack on ReLU networks";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<SoundnessError>(m, "SoundnessError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<Network>(m, "Network")
      .def(py::init([](const std::vector<std::pair<Matrix, Vector>>& layers, std::optional<Vector> lo,
                       std::optional<Vector> hi) {
             std::vector<Layer> ls;
             for (const auto& [w, b] : layers) ls.push_back(Layer{w, b});
             if (lo.has_value() != hi.has_value()) throw ConfigError("Network: give both input_lo and input_hi");
             if (lo) return Network(std::move(ls), *lo, *hi);
             return Network(std::move(ls));
           }),
           py::arg("layers"), py::arg("input_lo") = py::none(), py::arg("input_hi") = py::none(),
           "layers: list of (weight, bias); the input box defaults to [0, 1]")
      .def_static("load", &load_network, py::arg("path"))
      .def_static("from_json", [](const std::string& text) { return network_from_json(nlohmann::json::parse(text)); })
      .def("to_json", [](const Network& net) { return network_to_json(net).dump(); })
      .def("save", &save_network, py::arg("path"))
      .def_property_readonly("input_dim", &Network::input_dim)
      .def_property_readonly("output_dim", &Network::output_dim)
      .def_property_readonly("num_layers", &Network::num_layers)
      .def_property_readonly("input_lo", &Network::input_lo)
      .def_property_readonly("input_hi", &Network::input_hi)
      .def("logits", [](const Network& net, const Vector& x) { return logits(net, x); }, py::arg("x"))
      .def("adversarial_loss", [](const Network& net, const Vector& x, Index y, Index y_tar) {
             return adversarial_loss(net, x, y, y_tar);
           }, py::arg("x"), py::arg("y"), py::arg("y_tar"))
      .def("input_gradient", [](const Network& net, const Vector& x, Index y, Index y_tar) {
             return input_gradient(net, x, y, y_tar);
           }, py::arg("x"), py::arg("y"), py::arg("y_tar"));

  py::class_<PerturbationBall>(m, "PerturbationBall")
      .def_property_readonly("center", &PerturbationBall::center)
      .def_property_readonly("epsilon", &PerturbationBall::epsilon)
      .def_property_readonly("lower", &PerturbationBall::lower)
      .def_property_readonly("upper", &PerturbationBall::upper)
      .def("contains", &PerturbationBall::contains)
      .def("project", &PerturbationBall::project);

  py::class_<AttackProperty>(m, "AttackProperty")
      .def(py::init([](const Network& net, const Vector& x, double epsilon, Index y, Index y_tar) {
             AttackProperty prop{PerturbationBall::around(net, x, epsilon), y, y_tar, {}};
             validate(net, prop);
             return prop;
           }),
           py::arg("net"), py::arg("x"), py::arg("epsilon"), py::arg("y"), py::arg("y_tar"))
      .def_readonly("ball", &AttackProperty::ball)
      .def_readonly("y", &AttackProperty::y)
      .def_readonly("y_tar", &AttackProperty::y_tar);
  m.def("load_property", &load_property, py::arg("net"), py::arg("path"));

  py::class_<AttackOutcome>(m, "AttackOutcome")
      .def_readonly("success", &AttackOutcome::success)
      .def_readonly("adversarial_point", &AttackOutcome::adversarial_point)
      .def_readonly("final_loss", &AttackOutcome::final_loss)
      .def_readonly("iterations", &AttackOutcome::iterations_used)
      .def_readonly("restarts", &AttackOutcome::restarts_used)
      .def_readonly("wall_time", &AttackOutcome::wall_time)
      .def_readonly("timed_out", &AttackOutcome::timed_out)
      .def("to_dict", [](const AttackOutcome& o) { return to_python(outcome_to_json(o)); })
      .def("__repr__", [](const AttackOutcome& o) {
        return "AttackOutcome(success=" + std::string(o.success ? "True" : "False") +
               ", final_loss=" + std::to_string(o.final_loss) + ")";
      });

  m.def("fgsm_step", &fgsm_step, py::arg("net"), py::arg("x"), py::arg("y"), py::arg("y_tar"), py::arg("step"));
  m.def("pgd_attack",
        [](const Network& net, const AttackProperty& prop, long steps, double alpha, std::uint64_t seed,
           long restarts, std::optional<double> timeout) {
          PgdConfig cfg;
          cfg.steps = steps;
          cfg.alpha = alpha;
          cfg.run = limits(seed, restarts, timeout);
          return unlocked([&] { return pgd_attack(net, prop, cfg); });
        },
        py::arg("net"), py::arg("prop"), py::arg("steps") = 100, py::arg("alpha") = 0.01,
        py::arg("seed") = 0, py::arg("restarts") = 1, py::arg("timeout") = py::none());
  m.def("mi_fgsm_plus",
        [](const Network& net, const AttackProperty& prop, long steps, double alpha, double mu,
           std::uint64_t seed, long restarts, std::optional<double> timeout) {
          MiFgsmConfig cfg;
          cfg.steps = steps;
          cfg.alpha = alpha;
          cfg.mu = mu;
          cfg.run = limits(seed, restarts, timeout);
          return unlocked([&] { return mi_fgsm_plus(net, prop, cfg); });
        },
        py::arg("net"), py::arg("prop"), py::arg("steps") = 100, py::arg("alpha") = 0.1,
        py::arg("mu") = 0.5, py::arg("seed") = 0, py::arg("restarts") = 1, py::arg("timeout") = py::none());
  m.def("cw_attack",
        [](const Network& net, const AttackProperty& prop, long steps, double alpha, long max_outer,
           std::optional<double> timeout) {
          CwConfig cfg;
          cfg.steps = steps;
          cfg.alpha = alpha;
          cfg.max_outer = max_outer;
          if (timeout) cfg.deadline = deadline_after(*timeout);
          return unlocked([&] { return cw_attack(net, prop, cfg); });
        },
        py::arg("net"), py::arg("prop"), py::arg("steps") = 100, py::arg("alpha") = 1e-4,
        py::arg("max_outer") = 1000, py::arg("timeout") = py::none());

  m.def("ibp", [](const Network& net, const AttackProperty& prop) { return bounds_list(ibp(net, prop.ball)); });
  m.def("wk_bounds", [](const Network& net, const AttackProperty& prop) { return bounds_list(wk_bounds(net, prop.ball)); });
  m.def("best_bounds", [](const Network& net, const AttackProperty& prop) { return bounds_list(best_bounds(net, prop.ball)); });

  py::class_<DualState>(m, "DualState")
      .def_readonly("rho", &DualState::rho)
      .def_readonly("q", &DualState::dual_value)
      .def_readonly("x_lp", &DualState::x_lp)
      .def_readonly("history", &DualState::history);
  m.def("supergradient_ascent",
        [](const Network& net, const AttackProperty& prop, long steps, double lr) {
          DualConfig cfg;
          cfg.steps = steps;
          cfg.lr = lr;
          return unlocked([&] { return supergradient_ascent(net, prop, best_bounds(net, prop.ball), cfg); });
        },
        py::arg("net"), py::arg("prop"), py::arg("steps") = 100, py::arg("lr") = 0.01);

  py::class_<GnnParams>(m, "GnnParams")
      .def_readonly("p", &GnnParams::p)
      .def_readonly("T1", &GnnParams::T1)
      .def_readonly("T2", &GnnParams::T2)
      .def_readwrite("score", &GnnParams::score)
      .def_static("load", &load_params, py::arg("path"))
      .def_static("from_json", [](const std::string& text) { return params_from_json(nlohmann::json::parse(text)); })
      .def_static("random", &random_params, py::arg("p") = 32, py::arg("T1") = 1, py::arg("T2") = 1, py::arg("seed") = 0)
      .def_static("fgsm", &simulate_fgsm_params, py::arg("p") = 2, py::arg("T2") = 1)
      .def("to_json", [](const GnnParams& p) { return params_to_json(p).dump(); })
      .def("save", &save_params, py::arg("path"))
      .def_property_readonly("num_values", &GnnParams::num_values);

  m.def("advgnn_attack",
        [](const Network& net, const AttackProperty& prop, const GnnParams& params, long steps,
           double alpha, std::uint64_t seed, long restarts, std::optional<double> timeout,
           const std::string& features) {
          AdvGnnConfig cfg;
          cfg.steps = steps;
          cfg.alpha = alpha;
          cfg.run = limits(seed, restarts, timeout);
          cfg.feature_mode = feature_mode_from_string(features);
          return unlocked([&] { return advgnn_attack(net, prop, params, cfg); });
        },
        py::arg("net"), py::arg("prop"), py::arg("params"), py::arg("steps") = 100,
        py::arg("alpha") = 1e-2, py::arg("seed") = 0, py::arg("restarts") = 1,
        py::arg("timeout") = py::none(), py::arg("features") = "dual");

  m.def("binary_search_epsilon",
        [](const Network& net, const Vector& x, Index y, Index y_tar, double eta, long restarts,
           long steps, double lr, std::uint64_t seed) {
          SearchConfig cfg;
          cfg.eta = eta;
          cfg.restarts = restarts;
          cfg.steps = steps;
          cfg.lr = lr;
          cfg.seed = seed;
          const SearchResult r = unlocked([&] { return binary_search_epsilon(net, x, y, y_tar, cfg); });
          py::dict out;
          out["epsilon"] = r.epsilon;
          out["lo"] = r.lo;
          out["hi"] = r.hi;
          out["trivial"] = r.trivial;
          out["point"] = r.point;
          return out;
        },
        py::arg("net"), py::arg("x"), py::arg("y"), py::arg("y_tar"), py::arg("eta") = 1e-3,
        py::arg("restarts") = 20000, py::arg("steps") = 2000, py::arg("lr") = 1e-2, py::arg("seed") = 0);

  m.def("generate_dataset",
        [](const Network& net, const std::filesystem::path& images, std::size_t count,
           const std::filesystem::path& out, double eta, long restarts, long steps, double lr,
           std::uint64_t seed) {
          SearchConfig cfg;
          cfg.eta = eta;
          cfg.restarts = restarts;
          cfg.steps = steps;
          cfg.lr = lr;
          const auto imgs = load_images(images);
          const auto records = unlocked([&] { return generate_dataset(net, imgs, count, cfg, seed); });
          save_dataset(records, out);
          return records.size();
        },
        py::arg("net"), py::arg("images"), py::arg("count"), py::arg("out"), py::arg("eta") = 1e-3,
        py::arg("restarts") = 20000, py::arg("steps") = 2000, py::arg("lr") = 1e-2, py::arg("seed") = 0);

  m.def("train_gnn",
        [](const Network& net, const std::filesystem::path& dataset, int epochs, int horizon,
           double gamma, int starts, Index p, double lr, double alpha, std::uint64_t seed,
           const std::string& features) {
          TrainConfig cfg;
          cfg.epochs = epochs;
          cfg.horizon = horizon;
          cfg.gamma = gamma;
          cfg.starts = starts;
          cfg.p = p;
          cfg.lr = lr;
          cfg.alpha = alpha;
          cfg.seed = seed;
          cfg.feature_mode = feature_mode_from_string(features);
          std::vector<TrainingSample> samples;
          for (const auto& r : load_dataset(dataset)) samples.push_back(to_training_sample(r));
          TrainResult result = unlocked([&] { return train(net, samples, cfg); });
          py::list log;
          for (const auto& e : result.log) log.append(py::make_tuple(e.epoch, e.total_loss, e.lr));
          return py::make_tuple(std::move(result.params), log);
        },
        py::arg("net"), py::arg("dataset"), py::arg("epochs") = 40, py::arg("horizon") = 40,
        py::arg("gamma") = 0.9, py::arg("starts") = 5, py::arg("p") = 32, py::arg("lr") = 0.01,
        py::arg("alpha") = 1e-2, py::arg("seed") = 0, py::arg("features") = "dual",
        "returns (params, [(epoch, total_loss, lr), ...])");

  m.def("run_bench",
        [](const Network& net, const std::filesystem::path& dataset, const std::vector<std::string>& methods,
           std::optional<GnnParams> params, double timeout, const std::vector<std::uint64_t>& seeds,
           std::optional<std::filesystem::path> out) {
          const auto records = load_dataset(dataset);
          std::vector<BenchProperty> props;
          for (std::size_t i = 0; i < records.size(); ++i)
            props.push_back({records[i].id.empty() ? "p" + std::to_string(i) : records[i].id, &net,
                             to_property(net, records[i])});
          MethodOptions options;
          options.pgd = pgd_methods_preset();
          options.params = std::move(params);
          std::vector<BenchMethod> list;
          for (const auto& name : methods) list.push_back(make_method(name, options));
          BenchConfig cfg;
          cfg.timeout = timeout;
          cfg.seeds = seeds;
          const auto runs = unlocked([&] { return run_benchmark(props, list, cfg); });
          const BenchSummary summary = summarize(runs, timeout);
          if (out) emit_report(summary, runs, *out);
          return to_python(summary_to_json(summary));
        },
        py::arg("net"), py::arg("dataset"), py::arg("methods"), py::arg("params") = py::none(),
        py::arg("timeout") = 100.0, py::arg("seeds") = std::vector<std::uint64_t>{1, 2, 3},
        py::arg("out") = py::none());
}
