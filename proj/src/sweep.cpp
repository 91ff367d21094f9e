#include "ngpt/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <tuple>
#include <sstream>

#include "ngpt/errors.hpp"
#include "ngpt/parallel.hpp"
#include "ngpt/report.hpp"

namespace ngpt {

std::vector<double> log2_grid(double lo, double hi, double step) {
  if (!(step > 0) || !(hi >= lo)) throw ConfigError("log2 grid needs lo <= hi and step > 0");
  std::vector<double> out;
  const auto n = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
  for (int k = 0; k <= n; ++k) out.push_back(std::exp2(lo + step * k));
  return out;
}

void SweepConfig::validate() const {
  train.validate();
  if (targets.empty()) throw ConfigError("sweep needs at least one target shape");
  if (lr_grid.empty()) throw ConfigError("lr grid is empty");
  for (std::size_t i = 0; i < lr_grid.size(); ++i) {
    if (!(lr_grid[i] > 0)) throw ConfigError("lr grid entries must be positive");
    if (i && !(lr_grid[i] > lr_grid[i - 1])) throw ConfigError("lr grid must be strictly increasing");
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  if (tokens_per_param < 0) throw ConfigError("tokens_per_param must be >= 0");
  if (base.iters < 1) throw ConfigError("base shape needs iters >= 1");
}

std::vector<RunShape> SweepConfig::resolved_targets() const {
  auto out = targets;
  if (tokens_per_param > 0) {
    for (auto& t : out) {
      t.iters = static_cast<int>(steps_for_tokens_per_param(model_config_for(t, train), tokens_per_param,
                                                            train.batch_size, train.seq_len));
    }
  }
  return out;
}

Trainer default_trainer(const SweepConfig& config, const Corpus& corpus) {
  return [&config, &corpus](const RunShape& shape, double lr, std::uint64_t seed) {
    const auto d_key = config.train.d_key;
    auto p = plan(config.scheme, shape_spec(config.base, d_key), shape_spec(shape, d_key), lr, config.plan_options);
    return train_run(corpus, shape, p, config.train, seed).result;
  };
}

std::vector<ShapeOptimum> select_optima(const std::vector<SweepResult>& results,
                                        const std::vector<std::string>& shape_order) {
  std::vector<ShapeOptimum> out;
  for (const auto& id : shape_order) {
    // lr -> (sum, count, any diverged)
    std::map<double, std::tuple<double, int, bool>> per_lr;
    for (const auto& r : results) {
      if (r.shape_id != id) continue;
      auto& [sum, n, div] = per_lr[r.lr];
      if (r.diverged || !std::isfinite(r.final_val_loss_ema)) {
        div = true;
      } else {
        sum += r.final_val_loss_ema;
        ++n;
      }
    }
    ShapeOptimum o;
    o.shape_id = id;
    for (const auto& [lr, acc] : per_lr) {
      const auto& [sum, n, div] = acc;
      if (div || n == 0) continue;
      const double mean = sum / n;
      if (!o.lr || mean < o.loss) {
        o.lr = lr;
        o.loss = mean;
      }
    }
    if (!o.lr) o.loss = std::nan("");
    out.push_back(o);
  }
  return out;
}

SweepReport lr_sweep(const SweepConfig& config, const Trainer& trainer) {
  config.validate();
  const auto targets = config.resolved_targets();
  const auto nl = config.lr_grid.size(), ns = config.seeds.size();
  SweepReport rep;
  rep.results.resize(targets.size() * nl * ns);
  parallel_for(rep.results.size(), config.workers, [&](std::size_t job) {
    const auto t = job / (nl * ns), l = (job / ns) % nl, s = job % ns;
    auto r = trainer(targets[t], config.lr_grid[l], config.seeds[s]);
    r.shape_id = targets[t].id();
    r.lr = config.lr_grid[l];
    r.seed = config.seeds[s];
    rep.results[job] = std::move(r);
  });
  std::vector<std::string> order;
  for (const auto& t : targets) order.push_back(t.id());
  rep.optima = select_optima(rep.results, order);
  return rep;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::out_of_range&) {
    // stod rejects denormals and overflow; fall back to strtod's inf/0.
    return std::strtod(s.c_str(), nullptr);
  } catch (const std::exception&) {
    throw ConfigError("bad number '" + s + "' for " + what);
  }
}

long long to_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad integer '" + s + "' for " + what);
  }
}

bool to_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("bad boolean '" + s + "' for " + what);
}

// "2^-6" or "0.015625".
double to_lr(const std::string& s, const std::string& what) {
  if (s.rfind("2^", 0) == 0) return std::exp2(to_double(s.substr(2), what));
  return to_double(s, what);
}

}  // namespace

std::string sweep_csv(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  os << kSweepCsvHeader << '\n';
  for (const auto& r : results) {
    os << r.shape_id << ',' << fmt(r.lr) << ',' << r.seed << ','
       << (std::isnan(r.final_val_loss_ema) ? std::string("nan") : fmt(r.final_val_loss_ema)) << ','
       << (r.diverged ? 1 : 0) << '\n';
  }
  return os.str();
}

std::vector<SweepResult> parse_sweep_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || trim(line) != kSweepCsvHeader) throw ConfigError("sweep CSV header mismatch");
  std::vector<SweepResult> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    auto f = split(trim(line), ',');
    if (f.size() != 5) throw ConfigError("sweep CSV row has " + std::to_string(f.size()) + " fields: " + line);
    SweepResult r;
    r.shape_id = f[0];
    r.lr = to_double(f[1], "lr");
    r.seed = static_cast<std::uint64_t>(std::stoull(f[2]));
    r.final_val_loss_ema = f[3] == "nan" ? std::nan("") : to_double(f[3], "loss");
    r.diverged = to_bool(f[4], "diverged");
    out.push_back(r);
  }
  return out;
}

std::string optima_csv(const std::vector<ShapeOptimum>& optima) {
  std::ostringstream os;
  os << kOptimaCsvHeader << '\n';
  for (const auto& o : optima) {
    os << o.shape_id << ',' << (o.lr ? fmt(*o.lr) : "") << ',' << (o.lr ? fmt(o.loss) : "") << '\n';
  }
  return os.str();
}

SweepReport run_sweep(const SweepConfig& config) {
  config.validate();
  if (config.corpus.empty()) throw ConfigError("sweep needs a corpus path");
  const auto corpus = load_corpus(config.corpus, config.val_fraction);
  auto rep = lr_sweep(config, default_trainer(config, corpus));
  std::filesystem::create_directories(config.output_dir);
  auto write = [&](const char* name, const std::string& body) {
    std::ofstream os(config.output_dir / name, std::ios::trunc);
    if (!os) throw IoError("cannot write " + (config.output_dir / name).string());
    os << body;
  };
  write("sweep.csv", sweep_csv(rep.results));
  write("optima.csv", optima_csv(rep.optima));
  std::vector<PlotCurve> curves;
  for (const auto& o : rep.optima) {
    PlotCurve c;
    c.label = o.shape_id;
    std::map<double, std::pair<double, int>> acc;
    for (const auto& r : rep.results) {
      if (r.shape_id != o.shape_id) continue;
      auto& [s, n] = acc[r.lr];
      if (r.diverged) {
        s = std::nan("");
      } else {
        s += r.final_val_loss_ema;
      }
      ++n;
    }
    for (const auto& [lr, sn] : acc) c.points.emplace_back(lr, sn.first / sn.second);
    curves.push_back(std::move(c));
  }
  emit_plot(curves, config.output_dir / "sweep.svg",
            std::string("final loss vs peak lr (") + std::string(to_string(config.scheme)) + ")");
  return rep;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  std::string section;
  int lineno = 0;
  for (const auto& raw : split(text, '\n')) {
    ++lineno;
    auto line = raw;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    out[section.empty() ? key : section + "." + key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

std::pair<std::string, std::string> parse_override(std::string_view s) {
  const auto eq = s.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(s) + "' must be key=value");
  auto key = trim(s.substr(0, eq));
  if (key.empty()) throw ConfigError("override '" + std::string(s) + "' has an empty key");
  return {key, trim(s.substr(eq + 1))};
}

void apply_config(SweepConfig& c, const std::map<std::string, std::string>& entries) {
  std::optional<double> lo, hi, step;
  for (const auto& [k, v] : entries) {
    auto& t = c.train;
    if (k == "sweep.scheme") c.scheme = parse_scheme(v);
    else if (k == "sweep.lrs") {
      c.lr_grid.clear();
      for (const auto& x : split(v, ',')) c.lr_grid.push_back(to_lr(trim(x), k));
    } else if (k == "sweep.lr_min_log2") lo = to_double(v, k);
    else if (k == "sweep.lr_max_log2") hi = to_double(v, k);
    else if (k == "sweep.lr_step_log2") step = to_double(v, k);
    else if (k == "sweep.seeds") {
      c.seeds.clear();
      for (const auto& x : split(v, ',')) c.seeds.push_back(static_cast<std::uint64_t>(to_int(trim(x), k)));
    } else if (k == "sweep.tokens_per_param") c.tokens_per_param = to_double(v, k);
    else if (k == "sweep.corpus") c.corpus = v;
    else if (k == "sweep.val_fraction") c.val_fraction = to_double(v, k);
    else if (k == "sweep.output_dir") c.output_dir = v;
    else if (k == "sweep.workers") c.workers = static_cast<unsigned>(to_int(v, k));
    else if (k == "shape.base") c.base = parse_shape(v);
    else if (k == "shape.targets") {
      c.targets.clear();
      for (const auto& x : split(v, ',')) c.targets.push_back(parse_shape(trim(x)));
    } else if (k == "model.d_key") t.d_key = static_cast<int>(to_int(v, k));
    else if (k == "model.mlp_ratio") t.mlp_ratio = static_cast<int>(to_int(v, k));
    else if (k == "model.vocab") t.vocab = static_cast<int>(to_int(v, k));
    else if (k == "model.seq_len") t.seq_len = static_cast<int>(to_int(v, k));
    else if (k == "model.rotary_base") t.rotary_base = to_double(v, k);
    else if (k == "train.batch_size") t.batch_size = static_cast<int>(to_int(v, k));
    else if (k == "train.ema_beta") t.ema_beta = to_double(v, k);
    else if (k == "train.val_batches") t.val_batches = static_cast<int>(to_int(v, k));
    else if (k == "train.wraparound") t.wraparound = to_bool(v, k);
    else if (k == "optim.mode") {
      if (v == "adam") t.mode = OptimMode::Adam;
      else if (v == "signgd") t.mode = OptimMode::SignGD;
      else throw ConfigError("optim.mode must be adam or signgd");
    } else if (k == "optim.beta1") t.beta1 = to_double(v, k);
    else if (k == "optim.beta2") t.beta2 = to_double(v, k);
    else if (k == "optim.eps") t.eps = to_double(v, k);
    else if (k == "plan.ratio_input") c.plan_options.ratios.input = to_double(v, k);
    else if (k == "plan.ratio_output") c.plan_options.ratios.output = to_double(v, k);
    else if (k == "plan.data_exponent") c.plan_options.data_exponent = to_double(v, k);
    else if (k == "plan.data_correction") {
      if (v == "auto") c.plan_options.data_correction.reset();
      else c.plan_options.data_correction = to_bool(v, k);
    } else throw ConfigError("unknown config key '" + k + "'");
  }
  if (lo || hi || step) c.lr_grid = log2_grid(lo.value_or(-12), hi.value_or(-4), step.value_or(1));
}

std::string describe_config(const SweepConfig& c) {
  std::ostringstream os;
  os.precision(17);
  auto shape = [](const RunShape& s) {
    return std::to_string(s.n_layers) + "x" + std::to_string(s.n_heads) + "x" + std::to_string(s.iters);
  };
  os << "[sweep]\nscheme = " << to_string(c.scheme) << "\nlrs = ";
  for (std::size_t i = 0; i < c.lr_grid.size(); ++i) os << (i ? ", " : "") << c.lr_grid[i];
  os << "\nseeds = ";
  for (std::size_t i = 0; i < c.seeds.size(); ++i) os << (i ? ", " : "") << c.seeds[i];
  os << "\ntokens_per_param = " << c.tokens_per_param << "\ncorpus = " << c.corpus.string()
     << "\nval_fraction = " << c.val_fraction << "\noutput_dir = " << c.output_dir.string()
     << "\nworkers = " << c.workers << "\n\n[shape]\nbase = " << shape(c.base) << "\ntargets = ";
  for (std::size_t i = 0; i < c.targets.size(); ++i) os << (i ? ", " : "") << shape(c.targets[i]);
  const auto& t = c.train;
  os << "\n\n[model]\nd_key = " << t.d_key << "\nmlp_ratio = " << t.mlp_ratio << "\nvocab = " << t.vocab
     << "\nseq_len = " << t.seq_len << "\nrotary_base = " << t.rotary_base << "\n\n[train]\nbatch_size = "
     << t.batch_size << "\nema_beta = " << t.ema_beta << "\nval_batches = " << t.val_batches
     << "\nwraparound = " << (t.wraparound ? "true" : "false") << "\n\n[optim]\nmode = "
     << (t.mode == OptimMode::Adam ? "adam" : "signgd") << "\nbeta1 = " << t.beta1 << "\nbeta2 = " << t.beta2
     << "\neps = " << t.eps << "\n\n[plan]\nratio_input = " << c.plan_options.ratios.input
     << "\nratio_output = " << c.plan_options.ratios.output << "\ndata_exponent = " << c.plan_options.data_exponent
     << "\ndata_correction = "
     << (c.plan_options.data_correction ? (*c.plan_options.data_correction ? "true" : "false") : "auto") << "\n";
  return os.str();
}

}  // namespace ngpt
