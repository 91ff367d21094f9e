#include <algorithm>
#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ngpt/alignment.hpp"
#include "ngpt/errors.hpp"
#include "ngpt/powerlaw.hpp"
#include "ngpt/report.hpp"
#include "ngpt/simple_net.hpp"
#include "ngpt/sweep.hpp"

namespace fs = std::filesystem;
using namespace ngpt;

namespace {

double parse_lr(const std::string& s) {
  if (s.rfind("2^", 0) == 0) return std::exp2(std::stod(s.substr(2)));
  return std::stod(s);
}

void write_file(const fs::path& p, const std::string& body) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  os << body;
}

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void add_to(CLI::App* app) {
    app->add_option("-c,--config", file, "Config file ([section] / key = value)");
    app->add_option("--set", overrides, "Override, e.g. --set sweep.scheme=completep")->take_all();
  }

  SweepConfig load() const {
    SweepConfig c;
    if (!file.empty()) apply_config(c, read_config_file(file));
    std::map<std::string, std::string> extra;
    for (const auto& o : overrides) extra.insert_or_assign(parse_override(o).first, parse_override(o).second);
    apply_config(c, extra);
    return c;
  }
};

template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if constexpr (std::is_same_v<T, int>) {
      out.push_back(std::stoi(item));
    } else {
      out.push_back(std::stod(item));
    }
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalized transformer training and hyperparameter-transfer toolkit"};
  app.require_subcommand(1);

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "Print the per-group learning rates and rescaler constants");
  std::string scheme_name = "nugpt", eta_global_s = "2^-6", format = "kv", data_corr = "auto";
  ShapeSpec base_spec{2, 16, 200}, target_spec{2, 16, 200};
  double ratio_in = 1, ratio_out = 1;
  plan_cmd->add_option("--scheme", scheme_name, "baseline | depth-mup | completep | nugpt | nugpt-full-align");
  plan_cmd->add_option("--base-depth", base_spec.depth);
  plan_cmd->add_option("--base-width", base_spec.width, "Base d_model");
  plan_cmd->add_option("--base-iters", base_spec.iters);
  plan_cmd->add_option("--depth", target_spec.depth);
  plan_cmd->add_option("--width", target_spec.width, "Target d_model");
  plan_cmd->add_option("--iters", target_spec.iters);
  plan_cmd->add_option("--eta-global", eta_global_s, "Peak lr, decimal or 2^k");
  plan_cmd->add_option("--ratio-input", ratio_in);
  plan_cmd->add_option("--ratio-output", ratio_out);
  plan_cmd->add_option("--data-correction", data_corr, "auto | on | off");
  plan_cmd->add_option("--format", format, "kv | json");

  // train
  auto* train_cmd = app.add_subcommand("train", "Single training run");
  ConfigArgs train_cfg;
  train_cfg.add_to(train_cmd);
  std::string train_shape, train_lr = "2^-6", train_out = "train_out";
  std::uint64_t train_seed = 0;
  train_cmd->add_option("--shape", train_shape, "DEPTHxHEADSxITERS (default: first target)");
  train_cmd->add_option("--lr", train_lr, "eta_global, decimal or 2^k");
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("-o,--out", train_out, "Output directory");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Learning-rate grid over target shapes");
  ConfigArgs sweep_cfg;
  sweep_cfg.add_to(sweep_cmd);
  bool print_config = false;
  sweep_cmd->add_flag("--print-config", print_config, "Print the resolved configuration and exit");

  // align
  auto* align_cmd = app.add_subcommand("align", "Alignment exponents between snapshots");
  ConfigArgs align_cfg;
  align_cfg.add_to(align_cmd);
  std::string align_init, align_current, align_shape, align_lr = "2^-6", align_out = "align_out";
  int align_every = 0, align_probe_seqs = 4;
  std::uint64_t align_seed = 0;
  align_cmd->add_option("--initial", align_init, "Initial checkpoint (with --current: probe two files)");
  align_cmd->add_option("--current", align_current, "Later checkpoint");
  align_cmd->add_option("--shape", align_shape, "DEPTHxHEADSxITERS for a training-time probe");
  align_cmd->add_option("--lr", align_lr);
  align_cmd->add_option("--seed", align_seed);
  align_cmd->add_option("--every", align_every, "Probe period in steps (default: powers of two)");
  align_cmd->add_option("--probe-seqs", align_probe_seqs, "Validation sequences in the probe batch");
  align_cmd->add_option("-o,--out", align_out);

  // simplenet
  auto* sn_cmd = app.add_subcommand("simplenet", "Depth and width scaling of single-step updates");
  std::string sn_widths = "256", sn_depths = "8,16,32,64", sn_alphas = "0.5,1", sn_rule = "inverse-width",
              sn_out = "simplenet.csv";
  DepthGrid grid;
  sn_cmd->add_option("--widths", sn_widths);
  sn_cmd->add_option("--depths", sn_depths);
  sn_cmd->add_option("--alphas", sn_alphas);
  sn_cmd->add_option("--rule", sn_rule, "constant | inverse-width | depth-corrected");
  sn_cmd->add_option("--eta-coeff", grid.eta_coeff);
  sn_cmd->add_option("--trials", grid.trials);
  sn_cmd->add_option("--vocab", grid.vocab);
  sn_cmd->add_option("--seed", grid.seed);
  sn_cmd->add_option("--workers", grid.workers);
  sn_cmd->add_option("-o,--out", sn_out);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "Power-law fit y = C x^p on CSV columns, or LERP magnitudes");
  std::string fit_csv, fit_x, fit_y;
  std::vector<std::string> fit_lerp;
  fit_cmd->add_option("--csv", fit_csv, "Input CSV with a header row");
  fit_cmd->add_option("-x", fit_x, "Column name for x");
  fit_cmd->add_option("-y", fit_y, "Column name for y");
  fit_cmd->add_option("--lerp", fit_lerp, "Checkpoints across depths")->take_all();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*plan_cmd) {
      PlanOptions opt;
      opt.ratios = {ratio_in, ratio_out};
      if (data_corr == "on") opt.data_correction = true;
      else if (data_corr == "off") opt.data_correction = false;
      else if (data_corr != "auto") throw ConfigError("--data-correction must be auto, on or off");
      auto p = plan(parse_scheme(scheme_name), base_spec, target_spec, parse_lr(eta_global_s), opt);
      std::cout << (format == "json" ? plan_to_json(p) + "\n" : plan_to_kv(p));
      return 0;
    }

    if (*train_cmd) {
      auto c = train_cfg.load();
      if (c.corpus.empty()) throw ConfigError("train needs sweep.corpus");
      auto shape = train_shape.empty() ? c.resolved_targets().front() : parse_shape(train_shape);
      const auto corpus = load_corpus(c.corpus, c.val_fraction);
      auto p = plan(c.scheme, shape_spec(c.base, c.train.d_key), shape_spec(shape, c.train.d_key),
                    parse_lr(train_lr), c.plan_options);
      TrainHooks hooks;
      fs::create_directories(train_out);
      hooks.checkpoint = fs::path(train_out) / "final.ckpt";
      auto o = train_run(corpus, shape, p, c.train, train_seed, hooks);
      write_file(fs::path(train_out) / "history.csv", history_csv(o.history));
      write_file(fs::path(train_out) / "plan.json", plan_to_json(p) + "\n");
      std::printf("%s lr=%.6g seed=%llu initial=%.6f final_ema=%.6f diverged=%d\n", o.result.shape_id.c_str(),
                  o.result.lr, static_cast<unsigned long long>(train_seed), o.initial_val_loss,
                  o.result.final_val_loss_ema, o.result.diverged ? 1 : 0);
      return 0;
    }

    if (*sweep_cmd) {
      auto c = sweep_cfg.load();
      if (print_config) {
        std::cout << describe_config(c);
        return 0;
      }
      auto rep = run_sweep(c);
      for (const auto& o : rep.optima) {
        if (o.lr) {
          std::printf("%s optimal lr %.6g (loss %.6f)\n", o.shape_id.c_str(), *o.lr, o.loss);
        } else {
          std::printf("%s: every lr diverged\n", o.shape_id.c_str());
        }
      }
      std::printf("wrote %s\n", (c.output_dir / "sweep.csv").string().c_str());
      return 0;
    }

    if (*align_cmd) {
      auto c = align_cfg.load();
      std::vector<AlignmentRecord> records;
      if (!align_init.empty() || !align_current.empty()) {
        if (align_init.empty() || align_current.empty()) throw ConfigError("--initial and --current go together");
        if (c.corpus.empty()) throw ConfigError("align needs sweep.corpus for the probe batch");
        const auto corpus = load_corpus(c.corpus, c.val_fraction);
        auto a = load_checkpoint(align_init), b = load_checkpoint(align_current);
        BatchStream vs(corpus.validation, align_probe_seqs, std::min(a.weights.config.seq_len,
                                                                     static_cast<int>(corpus.validation.size()) - 1));
        auto batch = vs.next();
        const double l0 = evaluate_loss(a.weights, batch.inputs, batch.targets);
        const double lt = evaluate_loss(b.weights, batch.inputs, batch.targets);
        records = probe_model({&a.weights, &b.weights, static_cast<std::int64_t>(b.step), l0 - lt}, batch.inputs);
      } else {
        if (c.corpus.empty()) throw ConfigError("align needs sweep.corpus");
        auto shape = align_shape.empty() ? c.resolved_targets().front() : parse_shape(align_shape);
        const auto corpus = load_corpus(c.corpus, c.val_fraction);
        auto p = plan(c.scheme, shape_spec(c.base, c.train.d_key), shape_spec(shape, c.train.d_key),
                      parse_lr(align_lr), c.plan_options);
        BatchStream vs(corpus.validation, align_probe_seqs, c.train.seq_len);
        auto batch = vs.next();
        const auto steps = snapshot_steps(shape.iters, align_every);
        std::optional<NgptWeights> initial;
        double l0 = 0;
        TrainHooks hooks;
        hooks.on_step = [&](int step, const NgptWeights& w) {
          if (!initial) {
            initial = w;
            l0 = evaluate_loss(w, batch.inputs, batch.targets);
            return;
          }
          if (!std::binary_search(steps.begin(), steps.end(), static_cast<std::int64_t>(step))) return;
          const double lt = evaluate_loss(w, batch.inputs, batch.targets);
          auto r = probe_model({&*initial, &w, step, l0 - lt}, batch.inputs);
          records.insert(records.end(), r.begin(), r.end());
        };
        auto o = train_run(corpus, shape, p, c.train, align_seed, hooks);
        if (o.weights && initial) {
          const double lt = evaluate_loss(*o.weights, batch.inputs, batch.targets);
          auto r = probe_model({&*initial, &*o.weights, shape.iters, l0 - lt}, batch.inputs);
          records.insert(records.end(), r.begin(), r.end());
        }
      }
      fs::create_directories(align_out);
      write_alignment_csv(fs::path(align_out) / "alignment.csv", records);
      const auto means = average_over_layers(records);
      write_alignment_csv(fs::path(align_out) / "alignment_mean.csv", means);
      if (!records.empty()) {
        for (auto weighting : {Weighting::uniform_over_steps, Weighting::by_loss_decrease}) {
          for (const auto& [cls, s] : aggregate(records, weighting)) {
            auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("-"); };
            std::printf("%-7s %-18s alpha=%s omega=%s nu=%s (%zu records)\n", std::string(to_string(cls)).c_str(),
                        weighting == Weighting::uniform_over_steps ? "uniform" : "by-loss-decrease",
                        show(s.alpha).c_str(), show(s.omega).c_str(), show(s.nu).c_str(), s.n_records);
          }
        }
      }
      return 0;
    }

    if (*sn_cmd) {
      grid.widths = parse_list<int>(sn_widths);
      grid.depths = parse_list<int>(sn_depths);
      grid.alphas = parse_list<double>(sn_alphas);
      grid.rule = parse_eta_rule(sn_rule);
      auto r = depth_scaling_experiment(grid);
      write_file(sn_out, depth_csv(r));
      for (const auto& s : r.slopes) {
        std::printf("alpha_depth=%g %s-slope at %s=%d: %.4f (residual %.3g)\n", s.alpha_depth,
                    s.axis == DepthSlope::Axis::depth ? "L" : "N", s.axis == DepthSlope::Axis::depth ? "N" : "L",
                    s.fixed, s.fit.exponent, s.fit.residual);
      }
      return 0;
    }

    if (*fit_cmd) {
      if (!fit_lerp.empty()) {
        std::vector<fs::path> paths(fit_lerp.begin(), fit_lerp.end());
        auto r = lerp_magnitude_report(paths);
        std::cout << lerp_csv(r);
        std::printf("alpha_A ~ %.6g * depth^%.4f\nalpha_M ~ %.6g * depth^%.4f\n", r.fit_alpha_a.coefficient,
                    r.fit_alpha_a.exponent, r.fit_alpha_m.coefficient, r.fit_alpha_m.exponent);
        return 0;
      }
      if (fit_csv.empty() || fit_x.empty() || fit_y.empty()) throw ConfigError("fit needs --csv, -x and -y");
      std::ifstream in(fit_csv);
      if (!in) throw IoError("cannot read " + fit_csv);
      std::string line;
      std::getline(in, line);
      auto header = split_csv_line(line);
      auto col = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i) {
          if (header[i] == name) return i;
        }
        throw ConfigError("no column '" + name + "' in " + fit_csv);
      };
      const auto ix = col(fit_x), iy = col(fit_y);
      std::vector<std::pair<double, double>> pts;
      while (std::getline(in, line)) {
        auto f = split_csv_line(line);
        if (f.size() <= std::max(ix, iy) || f[ix].empty() || f[iy].empty()) continue;
        pts.emplace_back(std::stod(f[ix]), std::stod(f[iy]));
      }
      auto fit = fit_power_law(pts);
      std::printf("C=%.10g p=%.10g residual=%.6g n=%zu\n", fit.coefficient, fit.exponent, fit.residual, fit.n_points);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
