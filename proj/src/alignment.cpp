#include "ngpt/alignment.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "ngpt/errors.hpp"

namespace ngpt {

std::string_view to_string(WeightClass c) { return c == WeightClass::hidden ? "hidden" : "output"; }

double exponent(double product_norm, double left_factor_rms, double right_factor_rms, std::size_t d_in,
                std::size_t d_out) {
  if (d_in < 2) throw DegenerateInputError("alignment exponent needs d_in >= 2");
  if (d_out < 1) throw DegenerateInputError("alignment exponent needs d_out >= 1");
  if (!(product_norm > 0) || !(left_factor_rms > 0) || !(right_factor_rms > 0)) {
    throw DegenerateInputError("alignment exponent needs positive product and factor norms");
  }
  const double lhs = product_norm / std::sqrt(static_cast<double>(d_out));
  return std::log(lhs / (left_factor_rms * right_factor_rms)) / std::log(static_cast<double>(d_in));
}

std::optional<double> pair_exponent(const Tensor& m, std::span<const double> x, double tolerance) {
  const auto d_out = m.rows(), d_in = m.cols();
  if (x.size() != d_in) throw ConfigError("pair_exponent: vector length does not match matrix");
  const double mf = m.norm();
  const double xn = l2(x);
  if (!(mf > tolerance) || !(xn > tolerance)) return std::nullopt;
  const auto y = matvec(m, x);
  const double prod = l2(y);
  // |m x| <= |m|_F |x|; a product this far below the bound is a null direction.
  if (!(prod > tolerance * mf * xn)) return std::nullopt;
  const double left = mf / std::sqrt(static_cast<double>(d_out * d_in));
  const double right = xn / std::sqrt(static_cast<double>(d_in));
  return exponent(prod, left, right, d_in, d_out);
}

std::optional<double> mean_pair_exponent(const Tensor& m, const Tensor& xs, double tolerance) {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < xs.rows(); ++r) {
    if (auto e = pair_exponent(m, xs.row(r), tolerance)) {
      s += *e;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

namespace {

Tensor stack_rows(std::span<const Tensor* const> parts) {
  std::size_t rows = 0;
  const auto cols = parts.front()->cols();
  for (auto* p : parts) rows += p->rows();
  Tensor out(Shape{rows, cols});
  std::size_t r = 0;
  for (auto* p : parts) {
    for (std::size_t i = 0; i < p->rows(); ++i, ++r) {
      std::copy(p->row(i).begin(), p->row(i).end(), out.row(r).begin());
    }
  }
  return out;
}

template <typename Get>
Tensor gather(std::span<const ForwardTrace> traces, Get get) {
  std::vector<const Tensor*> parts;
  for (const auto& t : traces) parts.push_back(&get(t));
  if (parts.empty()) throw ConfigError("probe: missing activation capture");
  for (auto* p : parts) {
    if (p->size() == 0) throw ConfigError("probe: missing activation capture");
  }
  return stack_rows(parts);
}

AlignmentRecord measure(const Tensor& w0, const Tensor& wt, const Tensor& h0, const Tensor& ht, int layer,
                        WeightClass cls, std::string name, std::int64_t step, double loss_decrease) {
  const Tensor dw = wt - w0;
  const Tensor dh = ht - h0;
  AlignmentRecord r;
  r.step = step;
  r.layer = layer;
  r.weight_class = cls;
  r.matrix = std::move(name);
  r.loss_decrease = loss_decrease;
  r.alpha = mean_pair_exponent(dw, h0);
  r.omega = mean_pair_exponent(w0, dh);
  r.nu = mean_pair_exponent(dw, dh);
  return r;
}

}  // namespace

std::vector<AlignmentRecord> probe_from_traces(const NgptWeights& initial, const NgptWeights& current,
                                               std::span<const ForwardTrace> traces0,
                                               std::span<const ForwardTrace> traces_t, std::int64_t step,
                                               double loss_decrease) {
  if (!(initial.config == current.config)) throw ConfigError("probe: snapshots have different shapes");
  if (traces0.size() != traces_t.size() || traces0.empty()) {
    throw ConfigError("probe: missing activation capture");
  }
  std::vector<AlignmentRecord> out;
  auto keep = [&](AlignmentRecord r) {
    if (r.alpha || r.omega || r.nu) out.push_back(std::move(r));
  };
  const auto& c = initial.config;
  for (int l = 0; l < c.n_layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const auto& lp0 = initial.layers[li];
    auto h_attn0 = gather(traces0, [&](const ForwardTrace& t) -> const Tensor& { return t.layers[li].attn_in; });
    auto h_attnt = gather(traces_t, [&](const ForwardTrace& t) -> const Tensor& { return t.layers[li].attn_in; });
    for (const auto& hd : lp0.heads) {
      for (auto idx : {hd.w_q, hd.w_k, hd.w_v}) {
        // Stored d_model x d_key; the map applied to h is the transpose.
        keep(measure(transposed(initial[idx].value), transposed(current[idx].value), h_attn0, h_attnt, l,
                     WeightClass::hidden, initial[idx].name, step, loss_decrease));
      }
    }
    auto cat0 = gather(traces0, [&](const ForwardTrace& t) -> const Tensor& { return t.layers[li].heads_concat; });
    auto catt = gather(traces_t, [&](const ForwardTrace& t) -> const Tensor& { return t.layers[li].heads_concat; });
    keep(measure(initial[lp0.w_o].value, current[lp0.w_o].value, cat0, catt, l, WeightClass::hidden,
                 initial[lp0.w_o].name, step, loss_decrease));
    auto mid0 = gather(traces0, [&](const ForwardTrace& t) -> const Tensor& { return t.layers[li].attn_mid; });
    auto midt = gather(traces_t, [&](const ForwardTrace& t) -> const Tensor& { return t.layers[li].attn_mid; });
    for (auto idx : {lp0.w_u, lp0.w_nu}) {
      keep(measure(initial[idx].value, current[idx].value, mid0, midt, l, WeightClass::hidden, initial[idx].name,
                   step, loss_decrease));
    }
    auto hid0 = gather(traces0, [&](const ForwardTrace& t) -> const Tensor& { return t.layers[li].mlp_hidden; });
    auto hidt = gather(traces_t, [&](const ForwardTrace& t) -> const Tensor& { return t.layers[li].mlp_hidden; });
    keep(measure(initial[lp0.w_omlp].value, current[lp0.w_omlp].value, hid0, hidt, l, WeightClass::hidden,
                 initial[lp0.w_omlp].name, step, loss_decrease));
  }
  auto fin0 = gather(traces0, [](const ForwardTrace& t) -> const Tensor& { return t.final_hidden; });
  auto fint = gather(traces_t, [](const ForwardTrace& t) -> const Tensor& { return t.final_hidden; });
  keep(measure(initial[initial.e_output].value, current[current.e_output].value, fin0, fint, -1,
               WeightClass::output, "E_output", step, loss_decrease));
  return out;
}

std::vector<AlignmentRecord> probe_model(const SnapshotPair& pair, std::span<const std::vector<int>> batch) {
  if (!pair.initial || !pair.current) throw ConfigError("probe: snapshot pair is incomplete");
  if (batch.empty()) throw ConfigError("probe: empty batch");
  std::vector<ForwardTrace> t0(batch.size()), tt(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    forward_logits(*pair.initial, batch[i], &t0[i]);
    forward_logits(*pair.current, batch[i], &tt[i]);
  }
  return probe_from_traces(*pair.initial, *pair.current, t0, tt, pair.step, pair.loss_decrease);
}

std::vector<std::int64_t> snapshot_steps(std::int64_t total, std::int64_t every) {
  if (every < 0) throw ConfigError("snapshot period must be >= 0");
  std::vector<std::int64_t> out;
  if (every > 0) {
    for (std::int64_t s = every; s < total; s += every) out.push_back(s);
  } else {
    for (std::int64_t s = 1; s < total; s *= 2) out.push_back(s);
  }
  return out;
}

std::map<WeightClass, ExponentSummary> aggregate(std::span<const AlignmentRecord> records, Weighting weighting) {
  if (records.empty()) throw ConfigError("aggregate: no records");
  struct Acc {
    double a = 0, wa = 0, o = 0, wo = 0, n = 0, wn = 0;
    std::size_t count = 0;
  };
  std::map<WeightClass, Acc> acc;
  for (const auto& r : records) {
    const double wt = weighting == Weighting::uniform_over_steps ? 1.0 : std::max(0.0, r.loss_decrease);
    auto& a = acc[r.weight_class];
    ++a.count;
    if (r.alpha) { a.a += wt * *r.alpha; a.wa += wt; }
    if (r.omega) { a.o += wt * *r.omega; a.wo += wt; }
    if (r.nu) { a.n += wt * *r.nu; a.wn += wt; }
  }
  std::map<WeightClass, ExponentSummary> out;
  for (const auto& [cls, a] : acc) {
    ExponentSummary s;
    s.n_records = a.count;
    if (a.wa > 0) s.alpha = a.a / a.wa;
    if (a.wo > 0) s.omega = a.o / a.wo;
    if (a.wn > 0) s.nu = a.n / a.wn;
    out[cls] = s;
  }
  return out;
}

std::vector<AlignmentRecord> average_over_layers(std::span<const AlignmentRecord> records) {
  std::map<std::pair<std::int64_t, WeightClass>, std::vector<AlignmentRecord>> cells;
  for (const auto& r : records) cells[{r.step, r.weight_class}].push_back(r);
  std::vector<AlignmentRecord> out;
  for (const auto& [key, rs] : cells) {
    auto summary = aggregate(rs, Weighting::uniform_over_steps).at(key.second);
    AlignmentRecord r;
    r.step = key.first;
    r.layer = -1;
    r.weight_class = key.second;
    r.matrix = "mean";
    r.alpha = summary.alpha;
    r.omega = summary.omega;
    r.nu = summary.nu;
    r.loss_decrease = rs.front().loss_decrease;
    out.push_back(std::move(r));
  }
  return out;
}

std::string alignment_csv(std::span<const AlignmentRecord> records) {
  std::ostringstream os;
  os.precision(17);
  os << kAlignmentCsvHeader << '\n';
  auto opt = [&](const std::optional<double>& v) {
    if (v) os << *v;
  };
  for (const auto& r : records) {
    os << r.step << ',' << r.layer << ',' << to_string(r.weight_class) << ',';
    opt(r.alpha);
    os << ',';
    opt(r.omega);
    os << ',';
    opt(r.nu);
    os << ',' << r.loss_decrease << '\n';
  }
  return os.str();
}

void write_alignment_csv(const std::filesystem::path& path, std::span<const AlignmentRecord> records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << alignment_csv(records);
}

}  // namespace ngpt
