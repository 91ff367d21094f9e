#include "ngpt/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "ngpt/errors.hpp"

namespace ngpt {

ModelConfig ModelConfig::make(int n_layers, int n_heads, int d_key, int vocab, int seq_len, int mlp_ratio) {
  ModelConfig c;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_key = d_key;
  c.d_model = n_heads * d_key;
  c.d_mlp = mlp_ratio * c.d_model;
  c.vocab = vocab;
  c.seq_len = seq_len;
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_key < 1 || d_model < 1 || d_mlp < 1 || vocab < 1 || seq_len < 1) {
    throw ConfigError("model extents must all be >= 1");
  }
  if (d_model != n_heads * d_key) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must equal n_heads * d_key (" +
                      std::to_string(n_heads * d_key) + ")");
  }
  if (d_key % 2 != 0) throw ConfigError("d_key must be even for rotary embedding");
  if (!(rotary_base > 0)) throw ConfigError("rotary_base must be positive");
}

std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::input: return "input";
    case ParamGroup::hidden: return "hidden";
    case ParamGroup::output: return "output";
    case ParamGroup::rescaler: return "rescaler";
  }
  return "?";
}

const Param& NgptWeights::find(std::string_view name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

Param& NgptWeights::find(std::string_view name) {
  return const_cast<Param&>(static_cast<const NgptWeights&>(*this).find(name));
}

Tensor NgptWeights::effective(std::size_t i) const {
  const auto& p = params.at(i);
  if (!p.rescaler) throw ConfigError(p.name + " is not a rescaler");
  return p.rescaler->gain() * p.value;
}

bool NgptWeights::operator==(const NgptWeights& o) const {
  if (!(config == o.config) || params.size() != o.params.size()) return false;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != o.params[i].name || !(params[i].value == o.params[i].value)) return false;
  }
  return true;
}

NgptWeights make_layout(const ModelConfig& c, const HPPlan& plan) {
  c.validate();
  NgptWeights w;
  w.config = c;
  const auto dm = static_cast<std::size_t>(c.d_model), dk = static_cast<std::size_t>(c.d_key),
             dmlp = static_cast<std::size_t>(c.d_mlp), V = static_cast<std::size_t>(c.vocab),
             H = static_cast<std::size_t>(c.n_heads);

  auto add = [&](std::string name, Shape shape, ParamGroup group, NormAxis axis,
                 std::optional<Rescaler> r = std::nullopt) {
    w.params.push_back(Param{std::move(name), Tensor(std::move(shape)), group, axis, r});
    return w.params.size() - 1;
  };
  const Rescaler alpha_a{plan.alpha_A_init, plan.alpha_A_scale, true};
  const Rescaler alpha_m{plan.alpha_M_init, plan.alpha_M_scale, true};
  const Rescaler s_qk{plan.s_qk_init, plan.s_qk_scale, false};
  const Rescaler s_u{plan.s_u_init, plan.s_u_scale, false};
  const Rescaler s_nu{plan.s_nu_init, plan.s_nu_scale, false};
  const Rescaler s_z{plan.s_z_init, plan.s_z_scale, false};

  w.e_input = add("E_input", {dm, V}, ParamGroup::input, NormAxis::columns);
  for (int l = 0; l < c.n_layers; ++l) {
    const auto pre = "layer" + std::to_string(l) + ".";
    LayerParams lp;
    for (int h = 0; h < c.n_heads; ++h) {
      const auto hp = pre + "head" + std::to_string(h) + ".";
      HeadParams hd{};
      hd.w_q = add(hp + "W_q", {dm, dk}, ParamGroup::hidden, NormAxis::columns);
      hd.w_k = add(hp + "W_k", {dm, dk}, ParamGroup::hidden, NormAxis::columns);
      hd.w_v = add(hp + "W_v", {dm, dk}, ParamGroup::hidden, NormAxis::columns);
      hd.s_qk = add(hp + "s_qk", {dk}, ParamGroup::rescaler, NormAxis::none, s_qk);
      lp.heads.push_back(hd);
    }
    lp.w_o = add(pre + "W_O", {dm, H * dk}, ParamGroup::hidden, NormAxis::columns);
    lp.alpha_a = add(pre + "alpha_A", {dm}, ParamGroup::rescaler, NormAxis::none, alpha_a);
    lp.w_u = add(pre + "W_u", {dmlp, dm}, ParamGroup::hidden, NormAxis::rows);
    lp.w_nu = add(pre + "W_nu", {dmlp, dm}, ParamGroup::hidden, NormAxis::rows);
    lp.w_omlp = add(pre + "W_oMLP", {dm, dmlp}, ParamGroup::hidden, NormAxis::columns);
    lp.s_u = add(pre + "s_u", {dmlp}, ParamGroup::rescaler, NormAxis::none, s_u);
    lp.s_nu = add(pre + "s_nu", {dmlp}, ParamGroup::rescaler, NormAxis::none, s_nu);
    lp.alpha_m = add(pre + "alpha_M", {dm}, ParamGroup::rescaler, NormAxis::none, alpha_m);
    w.layers.push_back(std::move(lp));
  }
  w.s_z = add("s_z", {V}, ParamGroup::rescaler, NormAxis::none, s_z);
  w.e_output = add("E_output", {V, dm}, ParamGroup::output, NormAxis::rows);
  return w;
}

NgptWeights init_weights(const ModelConfig& config, std::uint64_t seed, const HPPlan& plan) {
  auto w = make_layout(config, plan);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& p : w.params) {
    if (p.rescaler) {
      std::fill(p.value.data().begin(), p.value.data().end(), p.rescaler->scale);
    } else {
      for (auto& v : p.value.data()) v = gauss(rng);
    }
  }
  renormalize_weights(w);
  return w;
}

namespace {

template <typename F>
void for_each_unit_slice(Tensor& t, NormAxis axis, F&& f) {
  const auto r = t.rows(), c = t.cols();
  if (axis == NormAxis::rows) {
    for (std::size_t i = 0; i < r; ++i) f(&t.data()[i * c], std::size_t{1}, c);
  } else {
    for (std::size_t j = 0; j < c; ++j) f(&t.data()[j], c, r);
  }
}

}  // namespace

void renormalize_weights(NgptWeights& w) {
  for (auto& p : w.params) {
    if (p.axis == NormAxis::none) continue;
    for_each_unit_slice(p.value, p.axis, [&](double* base, std::size_t stride, std::size_t len) {
      double s = 0.0;
      for (std::size_t i = 0; i < len; ++i) s += base[i * stride] * base[i * stride];
      const double n = std::sqrt(s);
      if (!(n > 0.0) || !std::isfinite(n)) {
        throw DegenerateInputError("cannot renormalize " + p.name + ": slice norm " + std::to_string(n));
      }
      for (std::size_t i = 0; i < len; ++i) base[i * stride] /= n;
    });
  }
}

double max_norm_deviation(const NgptWeights& w) {
  double worst = 0.0;
  for (const auto& p : w.params) {
    if (p.axis == NormAxis::none) continue;
    auto copy = p.value;
    for_each_unit_slice(copy, p.axis, [&](double* base, std::size_t stride, std::size_t len) {
      double s = 0.0;
      for (std::size_t i = 0; i < len; ++i) s += base[i * stride] * base[i * stride];
      worst = std::max(worst, std::abs(std::sqrt(s) - 1.0));
    });
  }
  return worst;
}

std::size_t non_embedding_param_count(const ModelConfig& c) {
  c.validate();
  const auto dm = static_cast<std::size_t>(c.d_model), dk = static_cast<std::size_t>(c.d_key),
             dmlp = static_cast<std::size_t>(c.d_mlp), H = static_cast<std::size_t>(c.n_heads);
  const std::size_t per_layer = H * (3 * dm * dk + dk)  // W_q, W_k, W_v, s_qk
                                + dm * H * dk            // W_O
                                + 3 * dm * dmlp          // W_u, W_nu, W_oMLP
                                + 2 * dmlp               // s_u, s_nu
                                + 2 * dm;                // alpha_A, alpha_M
  return per_layer * static_cast<std::size_t>(c.n_layers) + static_cast<std::size_t>(c.vocab);  // + s_z
}

// ---- forward --------------------------------------------------------------

BoundParams bind(ad::Graph& g, const NgptWeights& w, bool requires_grad) {
  BoundParams b;
  b.vars.reserve(w.params.size());
  for (const auto& p : w.params) b.vars.push_back(g.leaf(p.value, requires_grad));
  return b;
}

ad::Var effective(ad::Graph& g, const NgptWeights& w, const BoundParams& b, std::size_t i) {
  (void)g;
  const auto& p = w.params.at(i);
  if (!p.rescaler) throw ConfigError(p.name + " is not a rescaler");
  return ad::scale(b.vars[i], p.rescaler->gain());
}

ad::Var attention_block(ad::Graph& g, const NgptWeights& w, const BoundParams& b, int layer, ad::Var h,
                        LayerTrace* trace) {
  const auto& c = w.config;
  const auto& lp = w.layers.at(static_cast<std::size_t>(layer));
  const double score_scale = std::sqrt(static_cast<double>(c.d_key));
  if (trace) trace->head_scores.clear();
  std::vector<ad::Var> heads;
  heads.reserve(lp.heads.size());
  for (const auto& hd : lp.heads) {
    const auto sqk = effective(g, w, b, hd.s_qk);
    // Rows are tokens: h W_q is (W_q^T h_n)^T stacked over n.
    auto q = ad::rotary(ad::matmul(h, b.vars[hd.w_q]), c.rotary_base);
    auto k = ad::rotary(ad::matmul(h, b.vars[hd.w_k]), c.rotary_base);
    auto v = ad::matmul(h, b.vars[hd.w_v]);
    auto qn = ad::mul_rows(ad::l2_normalize(q, 1), sqk);
    auto kn = ad::mul_rows(ad::l2_normalize(k, 1), sqk);
    auto scores = ad::scale(ad::matmul(qn, ad::transpose(kn)), score_scale);
    if (trace) trace->head_scores.push_back(scores.value());
    heads.push_back(ad::causal_softmax_weighted_sum(scores, v));
  }
  auto cat = ad::concat_columns(heads);
  if (trace) trace->heads_concat = cat.value();
  return ad::matmul(cat, ad::transpose(b.vars[lp.w_o]));
}

ad::Var mlp_block(ad::Graph& g, const NgptWeights& w, const BoundParams& b, int layer, ad::Var h,
                  LayerTrace* trace) {
  const auto& lp = w.layers.at(static_cast<std::size_t>(layer));
  const double width_factor = std::sqrt(static_cast<double>(w.config.d_model));
  auto u = ad::mul_rows(ad::matmul(h, ad::transpose(b.vars[lp.w_u])), effective(g, w, b, lp.s_u));
  auto nu = ad::mul_rows(ad::matmul(h, ad::transpose(b.vars[lp.w_nu])),
                         ad::scale(effective(g, w, b, lp.s_nu), width_factor));
  auto hidden = ad::hadamard(ad::silu(nu), u);
  auto out = ad::matmul(hidden, ad::transpose(b.vars[lp.w_omlp]));
  if (trace) {
    trace->mlp_nu = nu.value();
    trace->mlp_hidden = hidden.value();
    trace->mlp_out = out.value();
  }
  return out;
}

namespace {

// Norm(h + gain * alpha (.) (Norm(block) - h)), rows are tokens.
ad::Var lerp(ad::Graph& g, const NgptWeights& w, const BoundParams& b, std::size_t alpha, ad::Var h,
             ad::Var block) {
  auto target = ad::l2_normalize(block, 1);
  auto step = ad::mul_rows(ad::sub(target, h), effective(g, w, b, alpha));
  return ad::l2_normalize(ad::add(h, step), 1);
}

}  // namespace

ad::Var forward(ad::Graph& g, const NgptWeights& w, const BoundParams& b, std::span<const int> tokens,
                ForwardTrace* trace) {
  const auto& c = w.config;
  if (tokens.empty()) throw ConfigError("forward: empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(c.seq_len)) {
    throw ConfigError("forward: sequence of " + std::to_string(tokens.size()) + " exceeds seq_len " +
                      std::to_string(c.seq_len));
  }
  if (trace) {
    *trace = ForwardTrace{};
    trace->layers.resize(static_cast<std::size_t>(c.n_layers));
  }
  auto h = ad::gather_columns(b.vars[w.e_input], tokens);
  if (trace) trace->residual.push_back(h.value());
  for (int l = 0; l < c.n_layers; ++l) {
    const auto& lp = w.layers[static_cast<std::size_t>(l)];
    LayerTrace* lt = trace ? &trace->layers[static_cast<std::size_t>(l)] : nullptr;
    if (lt) lt->attn_in = h.value();
    h = lerp(g, w, b, lp.alpha_a, h, attention_block(g, w, b, l, h, lt));
    if (trace) trace->residual.push_back(h.value());
    if (lt) lt->attn_mid = h.value();
    h = lerp(g, w, b, lp.alpha_m, h, mlp_block(g, w, b, l, h, lt));
    if (trace) trace->residual.push_back(h.value());
  }
  if (trace) trace->final_hidden = h.value();
  auto zhat = ad::matmul(h, ad::transpose(b.vars[w.e_output]));
  auto z = ad::mul_rows(zhat, effective(g, w, b, w.s_z));
  if (trace) trace->logits = z.value();
  return z;
}

ad::Var batch_loss(ad::Graph& g, const NgptWeights& w, const BoundParams& b,
                   std::span<const std::vector<int>> inputs, std::span<const std::vector<int>> targets) {
  if (inputs.empty() || inputs.size() != targets.size()) {
    throw ConfigError("batch_loss: need matching, nonempty input and target batches");
  }
  std::optional<ad::Var> total;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto l = ad::cross_entropy(forward(g, w, b, inputs[i]), targets[i]);
    total = total ? ad::add(*total, l) : l;
  }
  return ad::scale(*total, 1.0 / static_cast<double>(inputs.size()));
}

Tensor forward_logits(const NgptWeights& w, std::span<const int> tokens, ForwardTrace* trace) {
  ad::Graph g;
  auto b = bind(g, w, false);
  return forward(g, w, b, tokens, trace).value();
}

double evaluate_loss(const NgptWeights& w, std::span<const std::vector<int>> inputs,
                     std::span<const std::vector<int>> targets) {
  ad::Graph g;
  auto b = bind(g, w, false);
  return batch_loss(g, w, b, inputs, targets).value().item();
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'N', 'G', 'P', 'T', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint truncated");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NgptWeights& w, std::uint64_t step,
                     double val_loss) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  const auto& c = w.config;
  for (int v : {c.n_layers, c.n_heads, c.d_key, c.d_model, c.d_mlp, c.vocab, c.seq_len}) put<std::int32_t>(os, v);
  put<double>(os, c.rotary_base);
  put<std::uint64_t>(os, step);
  put<double>(os, val_loss);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(w.params.size()));
  for (const auto& p : w.params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(p.group));
    put<std::uint8_t>(os, static_cast<std::uint8_t>(p.axis));
    std::uint8_t flags = 0;
    if (p.rescaler) flags |= 1;
    if (p.rescaler && p.rescaler->nonnegative) flags |= 2;
    put<std::uint8_t>(os, flags);
    put<double>(os, p.rescaler ? p.rescaler->init : 0.0);
    put<double>(os, p.rescaler ? p.rescaler->scale : 0.0);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(p.value.data().data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + " is not an nGPT checkpoint");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.n_layers = get<std::int32_t>(is);
  c.n_heads = get<std::int32_t>(is);
  c.d_key = get<std::int32_t>(is);
  c.d_model = get<std::int32_t>(is);
  c.d_mlp = get<std::int32_t>(is);
  c.vocab = get<std::int32_t>(is);
  c.seq_len = get<std::int32_t>(is);
  c.rotary_base = get<double>(is);

  Checkpoint ck;
  ck.step = get<std::uint64_t>(is);
  ck.val_loss = get<double>(is);
  // Layout constants are overwritten from the file below.
  HPPlan placeholder = plan(Scheme::NuGPT, {1, 1, 1}, {1, 1, 1}, 1.0);
  ck.weights = make_layout(c, placeholder);
  const auto count = get<std::uint32_t>(is);
  if (count != ck.weights.params.size()) {
    throw IoError("checkpoint has " + std::to_string(count) + " tensors, config implies " +
                  std::to_string(ck.weights.params.size()));
  }
  for (auto& p : ck.weights.params) {
    const auto len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is || name != p.name) throw IoError("checkpoint tensor '" + name + "' where '" + p.name + "' expected");
    const auto group = get<std::uint8_t>(is);
    const auto axis = get<std::uint8_t>(is);
    const auto flags = get<std::uint8_t>(is);
    const auto r_init = get<double>(is);
    const auto r_scale = get<double>(is);
    if (group != static_cast<std::uint8_t>(p.group) || axis != static_cast<std::uint8_t>(p.axis) ||
        static_cast<bool>(flags & 1) != p.rescaler.has_value()) {
      throw IoError("checkpoint metadata mismatch for " + name);
    }
    if (p.rescaler) p.rescaler = Rescaler{r_init, r_scale, static_cast<bool>(flags & 2)};
    const auto rank = get<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::size_t>(get<std::uint64_t>(is));
    if (shape != p.value.shape()) {
      throw IoError("checkpoint shape " + shape_string(shape) + " for " + name + ", expected " +
                    shape_string(p.value.shape()));
    }
    is.read(reinterpret_cast<char*>(p.value.data().data()),
            static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    if (!is) throw IoError("checkpoint truncated in " + name);
  }
  return ck;
}

}  // namespace ngpt
