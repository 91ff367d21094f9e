#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

#include "ngpt/alignment.hpp"
#include "ngpt/data.hpp"
#include "ngpt/errors.hpp"
#include "ngpt/model.hpp"
#include "ngpt/optimizer.hpp"
#include "ngpt/parameterization.hpp"
#include "ngpt/powerlaw.hpp"
#include "ngpt/simple_net.hpp"
#include "ngpt/sweep.hpp"
#include "ngpt/train.hpp"

namespace py = pybind11;
using namespace ngpt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  if (a.ndim() == 1) return Tensor::vector({a.data(), a.data() + a.size()});
  if (a.ndim() != 2) throw ConfigError("expected a 1-D or 2-D array");
  return Tensor(Shape{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))},
                std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

ShapeSpec spec_of(const std::tuple<double, double, double>& t) {
  return {std::get<0>(t), std::get<1>(t), std::get<2>(t)};
}

py::dict plan_dict(const HPPlan& p) {
  py::dict d;
  d["scheme"] = std::string(to_string(p.scheme));
  for (const auto& [k, v] : plan_entries(p)) d[py::str(k)] = v;
  return d;
}

py::dict fit_dict(const PowerLawFit& f) {
  py::dict d;
  d["coefficient"] = f.coefficient;
  d["exponent"] = f.exponent;
  d["residual"] = f.residual;
  d["n_points"] = f.n_points;
  return d;
}

py::dict result_dict(const SweepResult& r) {
  py::dict d;
  d["shape_id"] = r.shape_id;
  d["lr"] = r.lr;
  d["seed"] = r.seed;
  d["final_val_loss_ema"] = r.final_val_loss_ema;
  d["diverged"] = r.diverged;
  return d;
}

TrainSettings settings_from(const py::dict& kw) {
  SweepConfig c;
  std::map<std::string, std::string> entries;
  for (auto [k, v] : kw) entries[py::str(k)] = py::str(v);
  apply_config(c, entries);
  return c.train;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Normalized transformer with hyperparameter-transfer planning";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", PyExc_ArithmeticError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("schemes", [] {
    std::vector<std::string> out;
    for (auto s : all_schemes()) out.emplace_back(to_string(s));
    return out;
  });

  m.def(
      "plan",
      [](const std::string& scheme, std::tuple<double, double, double> base_shape,
         std::tuple<double, double, double> target, double eta_global, std::optional<double> ratio_input,
         std::optional<double> ratio_output, std::optional<bool> data_correction) {
        PlanOptions o;
        if (ratio_input) o.ratios.input = *ratio_input;
        if (ratio_output) o.ratios.output = *ratio_output;
        o.data_correction = data_correction;
        return plan_dict(plan(parse_scheme(scheme), spec_of(base_shape), spec_of(target), eta_global, o));
      },
      py::arg("scheme"), py::arg("base"), py::arg("target"), py::arg("eta_global"), py::arg("ratio_input") = py::none(),
      py::arg("ratio_output") = py::none(), py::arg("data_correction") = py::none(),
      "Per-group learning rates and rescaler constants; shapes are (depth, width, iters).");

  m.def("lr_at", &lr_at, py::arg("step"), py::arg("total"), py::arg("peak"));

  m.def("exponent", &exponent, py::arg("product_norm"), py::arg("left_rms"), py::arg("right_rms"), py::arg("d_in"),
        py::arg("d_out"));
  m.def(
      "pair_exponent",
      [](const Array& mat, const Array& vec) {
        const auto t = to_tensor(vec);
        return pair_exponent(to_tensor(mat), t.values());
      },
      py::arg("matrix"), py::arg("vector"), "Alignment exponent of (matrix, vector); None when a factor vanishes.");

  m.def(
      "fit_power_law",
      [](const std::vector<double>& xs, const std::vector<double>& ys) {
        if (xs.size() != ys.size()) throw ConfigError("x and y lengths differ");
        std::vector<std::pair<double, double>> pts;
        for (std::size_t i = 0; i < xs.size(); ++i) pts.emplace_back(xs[i], ys[i]);
        return fit_dict(fit_power_law(pts));
      },
      py::arg("x"), py::arg("y"));

  m.def("steps_for_tokens_per_param",
        py::overload_cast<double, double, int, int>(&steps_for_tokens_per_param), py::arg("non_embedding_params"),
        py::arg("ratio"), py::arg("batch"), py::arg("seq"));

  py::class_<NgptWeights>(m, "Model")
      .def(py::init([](int n_layers, int n_heads, int d_key, int vocab, int seq_len, int mlp_ratio,
                       const std::string& scheme, std::tuple<double, double, double> base_shape, double eta_global,
                       std::uint64_t seed) {
             const auto cfg = ModelConfig::make(n_layers, n_heads, d_key, vocab, seq_len, mlp_ratio);
             const ShapeSpec target{static_cast<double>(n_layers), static_cast<double>(cfg.d_model),
                                    std::get<2>(base_shape)};
             return init_weights(cfg, seed, plan(parse_scheme(scheme), spec_of(base_shape), target, eta_global));
           }),
           py::arg("n_layers") = 2, py::arg("n_heads") = 2, py::arg("d_key") = 8, py::arg("vocab") = 256,
           py::arg("seq_len") = 64, py::arg("mlp_ratio") = 4, py::arg("scheme") = "nugpt",
           py::arg("base") = std::tuple<double, double, double>{2, 16, 1000}, py::arg("eta_global") = 0.01,
           py::arg("seed") = 0)
      .def_static(
          "load", [](const std::filesystem::path& p) { return load_checkpoint(p).weights; }, py::arg("path"))
      .def(
          "save", [](const NgptWeights& w, const std::filesystem::path& p) { save_checkpoint(p, w); }, py::arg("path"))
      .def_property_readonly("d_model", [](const NgptWeights& w) { return w.config.d_model; })
      .def_property_readonly("n_layers", [](const NgptWeights& w) { return w.config.n_layers; })
      .def_property_readonly("vocab", [](const NgptWeights& w) { return w.config.vocab; })
      .def("parameter_names",
           [](const NgptWeights& w) {
             std::vector<std::string> out;
             for (const auto& p : w.params) out.push_back(p.name);
             return out;
           })
      .def(
          "parameter", [](const NgptWeights& w, const std::string& name) { return to_array(w.find(name).value); },
          py::arg("name"))
      .def(
          "logits", [](const NgptWeights& w, const std::vector<int>& tokens) { return to_array(forward_logits(w, tokens)); },
          py::arg("tokens"))
      .def(
          "loss",
          [](const NgptWeights& w, const std::vector<std::vector<int>>& inputs,
             const std::vector<std::vector<int>>& targets) { return evaluate_loss(w, inputs, targets); },
          py::arg("inputs"), py::arg("targets"))
      .def("max_norm_deviation", [](const NgptWeights& w) { return max_norm_deviation(w); })
      .def("non_embedding_params", [](const NgptWeights& w) { return non_embedding_param_count(w.config); });

  m.def(
      "train",
      [](const std::string& text, const std::string& shape, double eta_global, std::uint64_t seed,
         const std::string& scheme, const std::string& base, double val_fraction, const py::dict& settings) {
        const auto corpus = corpus_from_bytes(text, val_fraction);
        const auto s = settings_from(settings);
        const auto target = parse_shape(shape);
        const auto base_shape = base.empty() ? target : parse_shape(base);
        const auto p = plan(parse_scheme(scheme), shape_spec(base_shape, s.d_key), shape_spec(target, s.d_key), eta_global);
        TrainOutcome out;
        {
          py::gil_scoped_release release;
          out = train_run(corpus, target, p, s, seed);
        }
        py::dict d = result_dict(out.result);
        d["initial_val_loss"] = out.initial_val_loss;
        py::list hist;
        for (const auto& e : out.history) hist.append(py::make_tuple(e.step, e.train_loss, e.val_loss, e.val_loss_ema));
        d["history"] = hist;
        if (out.weights) d["model"] = py::cast(*out.weights);
        return d;
      },
      py::arg("text"), py::arg("shape") = "2x2x200", py::arg("eta_global") = 0.01, py::arg("seed") = 0,
      py::arg("scheme") = "nugpt", py::arg("base") = "", py::arg("val_fraction") = 0.1,
      py::arg("settings") = py::dict(),
      "Trains on a byte corpus. `settings` takes config keys such as {'train.batch_size': 4}.");

  m.def(
      "depth_scaling",
      [](std::vector<int> widths, std::vector<int> depths, std::vector<double> alphas, const std::string& rule,
         double eta_coeff, int trials, int vocab, std::uint64_t seed, unsigned workers) {
        DepthGrid g;
        g.widths = std::move(widths);
        g.depths = std::move(depths);
        g.alphas = std::move(alphas);
        g.rule = parse_eta_rule(rule);
        g.eta_coeff = eta_coeff;
        g.trials = trials;
        g.vocab = vocab;
        g.seed = seed;
        g.workers = workers;
        DepthScalingResult r;
        {
          py::gil_scoped_release release;
          r = depth_scaling_experiment(g);
        }
        py::list cells, slopes;
        for (const auto& c : r.cells) {
          py::dict d;
          d["N"] = c.N;
          d["L"] = c.L;
          d["alpha_depth"] = c.alpha_depth;
          d["eta_hidden"] = c.eta_hidden;
          d["update_norm"] = c.update_norm;
          d["alignment"] = c.alignment;
          cells.append(d);
        }
        for (const auto& s : r.slopes) {
          py::dict d = fit_dict(s.fit);
          d["alpha_depth"] = s.alpha_depth;
          d["axis"] = s.axis == DepthSlope::Axis::depth ? "depth" : "width";
          d["fixed"] = s.fixed;
          slopes.append(d);
        }
        py::dict out;
        out["cells"] = cells;
        out["slopes"] = slopes;
        out["csv"] = depth_csv(r);
        return out;
      },
      py::arg("widths") = std::vector<int>{256}, py::arg("depths") = std::vector<int>{8, 16, 32, 64},
      py::arg("alphas") = std::vector<double>{0.5, 1.0}, py::arg("rule") = "inverse-width",
      py::arg("eta_coeff") = 0.01, py::arg("trials") = 4, py::arg("vocab") = 64, py::arg("seed") = 0,
      py::arg("workers") = 1);

  m.def(
      "sweep",
      [](const std::string& config_text, const std::map<std::string, std::string>& overrides) {
        SweepConfig c;
        apply_config(c, parse_config_text(config_text));
        apply_config(c, overrides);
        SweepReport r;
        {
          py::gil_scoped_release release;
          r = run_sweep(c);
        }
        py::list results, optima;
        for (const auto& x : r.results) results.append(result_dict(x));
        for (const auto& o : r.optima) {
          py::dict d;
          d["shape_id"] = o.shape_id;
          d["lr"] = o.lr ? py::cast(*o.lr) : py::none();
          d["loss"] = o.loss;
          optima.append(d);
        }
        py::dict out;
        out["results"] = results;
        out["optima"] = optima;
        out["output_dir"] = c.output_dir.string();
        return out;
      },
      py::arg("config_text"), py::arg("overrides") = std::map<std::string, std::string>{},
      "Runs a learning-rate sweep described by a config file body; writes CSVs and an SVG to sweep.output_dir.");
}
