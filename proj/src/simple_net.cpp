#include "ngpt/simple_net.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "ngpt/alignment.hpp"
#include "ngpt/autodiff.hpp"
#include "ngpt/errors.hpp"
#include "ngpt/parallel.hpp"

namespace ngpt {

void SimpleNetConfig::validate() const {
  if (N < 1 || L < 1 || V < 1) throw ConfigError("simple net extents N, L, V must be >= 1");
  if (!(alpha_depth > 0) || !std::isfinite(alpha_depth)) throw ConfigError("alpha_depth must be positive");
  if (!(eta_input >= 0) || !(eta_hidden >= 0) || !(eta_output >= 0)) {
    throw ConfigError("simple net learning rates must be nonnegative");
  }
}

double SimpleNetConfig::residual_rate() const { return std::pow(static_cast<double>(L), -alpha_depth); }

namespace {

void normalize_slices(Tensor& t, bool rows, const char* what) {
  const auto r = t.rows(), c = t.cols();
  const auto outer = rows ? r : c, inner = rows ? c : r;
  for (std::size_t o = 0; o < outer; ++o) {
    double s = 0;
    for (std::size_t i = 0; i < inner; ++i) {
      const double v = rows ? t.at(o, i) : t.at(i, o);
      s += v * v;
    }
    const double n = std::sqrt(s);
    if (!(n > 0) || !std::isfinite(n)) throw DegenerateInputError(std::string("cannot renormalize ") + what);
    for (std::size_t i = 0; i < inner; ++i) (rows ? t.at(o, i) : t.at(i, o)) /= n;
  }
}

double slice_deviation(const Tensor& t, bool rows) {
  const auto r = t.rows(), c = t.cols();
  const auto outer = rows ? r : c, inner = rows ? c : r;
  double worst = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    double s = 0;
    for (std::size_t i = 0; i < inner; ++i) {
      const double v = rows ? t.at(o, i) : t.at(i, o);
      s += v * v;
    }
    worst = std::max(worst, std::abs(std::sqrt(s) - 1.0));
  }
  return worst;
}

Tensor gaussian(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor t(Shape{r, c});
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

struct Bound {
  ad::Var e_in;
  std::vector<ad::Var> w;
  ad::Var e_out;
};

Bound bind_state(ad::Graph& g, const SimpleNetState& s, bool grad) {
  Bound b{g.leaf(s.e_input, grad), {}, g.leaf(s.e_output, grad)};
  for (const auto& w : s.w) b.w.push_back(g.leaf(w, grad));
  return b;
}

// Returns logits; fills `hidden` with each h^l node.
ad::Var build_forward(const Bound& b, const SimpleNetConfig& c, int x, std::vector<ad::Var>& hidden) {
  if (x < 0 || x >= c.V) throw ConfigError("simple net input token out of range");
  const int ids[1] = {x};
  auto h = ad::gather_columns(b.e_in, ids);
  hidden.push_back(h);
  const double r = c.residual_rate();
  for (const auto& w : b.w) {
    auto u = ad::l2_normalize(ad::matmul(h, ad::transpose(w)), 1);
    h = ad::l2_normalize(ad::add(ad::scale(h, 1.0 - r), ad::scale(u, r)), 1);
    hidden.push_back(h);
  }
  return ad::matmul(h, ad::transpose(b.e_out));
}

Tensor flat(const Tensor& row) { return Tensor::vector(row.values()); }

void sign_update(Tensor& p, const Tensor& g, double eta) {
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k] > 0) {
      p[k] -= eta;
    } else if (g[k] < 0) {
      p[k] += eta;
    }
  }
}

}  // namespace

SimpleNetState SimpleNetState::init(const SimpleNetConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  const auto N = static_cast<std::size_t>(c.N), V = static_cast<std::size_t>(c.V);
  SimpleNetState s;
  s.e_input = gaussian(N, V, rng);
  for (int l = 0; l + 1 < c.L; ++l) s.w.push_back(gaussian(N, N, rng));
  s.e_output = gaussian(V, N, rng);
  s.renormalize();
  return s;
}

void SimpleNetState::renormalize() {
  normalize_slices(e_input, false, "E_input");
  for (auto& m : w) normalize_slices(m, true, "W");
  normalize_slices(e_output, true, "E_output");
}

double SimpleNetState::max_norm_deviation() const {
  double worst = std::max(slice_deviation(e_input, false), slice_deviation(e_output, true));
  for (const auto& m : w) worst = std::max(worst, slice_deviation(m, true));
  return worst;
}

SimpleForward simple_forward(const SimpleNetState& s, const SimpleNetConfig& c, int x) {
  c.validate();
  if (s.w.size() + 1 != static_cast<std::size_t>(c.L)) throw ConfigError("simple net state depth mismatch");
  ad::Graph g;
  auto b = bind_state(g, s, false);
  std::vector<ad::Var> hidden;
  auto z = build_forward(b, c, x, hidden);
  SimpleForward out;
  for (auto h : hidden) out.hidden.push_back(flat(h.value()));
  out.logits = flat(z.value());
  return out;
}

SimpleStepReport simple_signgd_step(SimpleNetState& s, const SimpleNetConfig& c, int x, int target) {
  c.validate();
  if (target < 0 || target >= c.V) throw ConfigError("simple net target out of range");
  s.renormalize();
  SimpleStepReport rep;
  std::vector<Tensor> h_before;
  {
    ad::Graph g;
    auto b = bind_state(g, s, true);
    std::vector<ad::Var> hidden;
    auto z = build_forward(b, c, x, hidden);
    const int t[1] = {target};
    auto loss = ad::cross_entropy(z, t);
    rep.loss = loss.value().item();
    for (auto h : hidden) h_before.push_back(flat(h.value()));
    auto grads = g.backward(loss);

    const auto before_in = s.e_input;
    sign_update(s.e_input, grads[b.e_in], c.eta_input);
    double sq = 0;
    for (std::size_t i = 0; i < s.e_input.rows(); ++i) {
      const double d = s.e_input.at(i, static_cast<std::size_t>(x)) - before_in.at(i, static_cast<std::size_t>(x));
      sq += d * d;
    }
    rep.input_update = std::sqrt(sq);

    double align_sum = 0;
    std::size_t align_n = 0;
    for (std::size_t l = 0; l < s.w.size(); ++l) {
      const auto before = s.w[l];
      sign_update(s.w[l], grads[b.w[l]], c.eta_hidden);
      const auto dw = s.w[l] - before;
      rep.weight_update_fro.push_back(dw.norm());
      rep.weight_times_h.push_back(l2(matvec(dw, h_before[l].values())));
      if (auto e = pair_exponent(dw, h_before[l].values())) {
        align_sum += *e;
        ++align_n;
      }
    }
    rep.mean_alignment = align_n ? align_sum / static_cast<double>(align_n) : 0.0;

    const auto before_out = s.e_output;
    sign_update(s.e_output, grads[b.e_out], c.eta_output);
    rep.output_update_fro = (s.e_output - before_out).norm();
  }
  s.renormalize();
  auto after = simple_forward(s, c, x);
  for (std::size_t l = 0; l < h_before.size(); ++l) rep.hidden_update.push_back((after.hidden[l] - h_before[l]).norm());
  return rep;
}

std::string_view to_string(EtaRule r) {
  switch (r) {
    case EtaRule::constant: return "constant";
    case EtaRule::inverse_width: return "inverse-width";
    case EtaRule::depth_corrected: return "depth-corrected";
  }
  return "?";
}

EtaRule parse_eta_rule(std::string_view s) {
  for (auto r : {EtaRule::constant, EtaRule::inverse_width, EtaRule::depth_corrected}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown eta rule '" + std::string(s) + "' (constant, inverse-width, depth-corrected)");
}

double hidden_lr(EtaRule rule, double coeff, int N, int L, double alpha_depth) {
  switch (rule) {
    case EtaRule::constant: return coeff;
    case EtaRule::inverse_width: return coeff / N;
    case EtaRule::depth_corrected: return coeff * std::pow(static_cast<double>(L), alpha_depth - 1.0) / N;
  }
  return coeff;
}

void DepthGrid::validate() const {
  if (widths.empty() || depths.empty() || alphas.empty()) throw ConfigError("depth grid must be nonempty");
  for (int n : widths) if (n < 1) throw ConfigError("grid widths must be >= 1");
  for (int l : depths) if (l < 1) throw ConfigError("grid depths must be >= 1");
  for (double a : alphas) if (!(a > 0)) throw ConfigError("grid alphas must be positive");
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (vocab < 2) throw ConfigError("vocab must be >= 2");
  if (!(eta_coeff > 0)) throw ConfigError("eta_coeff must be positive");
}

DepthScalingResult depth_scaling_experiment(const DepthGrid& grid) {
  grid.validate();
  DepthScalingResult res;
  for (double a : grid.alphas) {
    for (int n : grid.widths) {
      for (int l : grid.depths) {
        DepthCell cell;
        cell.N = n;
        cell.L = l;
        cell.alpha_depth = a;
        cell.eta_hidden = hidden_lr(grid.rule, grid.eta_coeff, n, l, a);
        res.cells.push_back(cell);
      }
    }
  }
  const auto n_trials = static_cast<std::size_t>(grid.trials);
  std::vector<double> norms(res.cells.size() * n_trials), aligns(norms.size());
  parallel_for(norms.size(), grid.workers, [&](std::size_t job) {
    const auto& cell = res.cells[job / n_trials];
    const auto trial = job % n_trials;
    SimpleNetConfig c;
    c.N = cell.N;
    c.L = cell.L;
    c.V = grid.vocab;
    c.alpha_depth = cell.alpha_depth;
    c.eta_hidden = cell.eta_hidden;
    // Trials are shared across alphas so the comparison is paired.
    c.seed = mix_seed(mix_seed(grid.seed, static_cast<std::uint64_t>(cell.N)),
                      mix_seed(static_cast<std::uint64_t>(cell.L), trial));
    auto s = SimpleNetState::init(c);
    std::mt19937_64 rng(mix_seed(c.seed, 7));
    std::uniform_int_distribution<int> tok(0, c.V - 1);
    const int x = tok(rng);
    const int target = tok(rng);
    auto rep = simple_signgd_step(s, c, x, target);
    norms[job] = rep.hidden_update.back();
    aligns[job] = rep.mean_alignment;
  });
  for (std::size_t i = 0; i < res.cells.size(); ++i) {
    double u = 0, a = 0;
    for (std::size_t t = 0; t < n_trials; ++t) {
      u += norms[i * n_trials + t];
      a += aligns[i * n_trials + t];
    }
    res.cells[i].update_norm = u / static_cast<double>(n_trials);
    res.cells[i].alignment = a / static_cast<double>(n_trials);
  }

  auto fit_axis = [&](double a, DepthSlope::Axis axis, int fixed) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& c : res.cells) {
      if (c.alpha_depth != a) continue;
      if (axis == DepthSlope::Axis::depth && c.N == fixed) pts.emplace_back(c.L, c.update_norm);
      if (axis == DepthSlope::Axis::width && c.L == fixed) pts.emplace_back(c.N, c.update_norm);
    }
    if (pts.size() < 3) return;
    res.slopes.push_back({a, axis, fixed, fit_power_law(pts)});
  };
  for (double a : grid.alphas) {
    for (int n : grid.widths) fit_axis(a, DepthSlope::Axis::depth, n);
    for (int l : grid.depths) fit_axis(a, DepthSlope::Axis::width, l);
  }
  return res;
}

std::string depth_csv(const DepthScalingResult& r) {
  std::ostringstream os;
  os.precision(17);
  os << kDepthCsvHeader << '\n';
  auto slope_for = [&](const DepthCell& c, DepthSlope::Axis axis) -> std::string {
    for (const auto& s : r.slopes) {
      if (s.alpha_depth != c.alpha_depth || s.axis != axis) continue;
      if (s.fixed == (axis == DepthSlope::Axis::depth ? c.N : c.L)) {
        std::ostringstream v;
        v.precision(17);
        v << s.fit.exponent;
        return v.str();
      }
    }
    return "";
  };
  for (const auto& c : r.cells) {
    os << c.N << ',' << c.L << ',' << c.alpha_depth << ',' << c.eta_hidden << ',' << c.update_norm << ','
       << c.alignment << ',' << slope_for(c, DepthSlope::Axis::depth) << ','
       << slope_for(c, DepthSlope::Axis::width) << '\n';
  }
  return os.str();
}

void write_depth_csv(const std::filesystem::path& path, const DepthScalingResult& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << depth_csv(r);
}

}  // namespace ngpt
