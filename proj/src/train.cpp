#include "ngpt/train.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "ngpt/autodiff.hpp"
#include "ngpt/errors.hpp"

namespace ngpt {

std::string RunShape::id() const {
  return "L" + std::to_string(n_layers) + "_H" + std::to_string(n_heads) + "_T" + std::to_string(iters);
}

RunShape parse_shape(std::string_view s) {
  int v[3] = {0, 0, 0};
  const char* p = s.data();
  const char* end = s.data() + s.size();
  for (int i = 0; i < 3; ++i) {
    auto [next, ec] = std::from_chars(p, end, v[i]);
    if (ec != std::errc{}) throw ConfigError("bad shape '" + std::string(s) + "', expected DEPTHxHEADSxITERS");
    p = next;
    if (i < 2) {
      if (p == end || (*p != 'x' && *p != 'X')) {
        throw ConfigError("bad shape '" + std::string(s) + "', expected DEPTHxHEADSxITERS");
      }
      ++p;
    }
  }
  if (p != end) throw ConfigError("bad shape '" + std::string(s) + "', trailing characters");
  if (v[0] < 1 || v[1] < 1 || v[2] < 0) throw ConfigError("shape extents must be positive");
  return {v[0], v[1], v[2]};
}

void TrainSettings::validate() const {
  if (d_key < 2 || d_key % 2) throw ConfigError("d_key must be even and >= 2");
  if (mlp_ratio < 1 || vocab < 2 || batch_size < 1 || seq_len < 1 || val_batches < 1) {
    throw ConfigError("mlp_ratio, vocab, batch_size, seq_len and val_batches must be positive");
  }
  if (!(ema_beta >= 0 && ema_beta < 1)) throw ConfigError("ema_beta must lie in [0, 1)");
}

ModelConfig model_config_for(const RunShape& shape, const TrainSettings& s) {
  auto c = ModelConfig::make(shape.n_layers, shape.n_heads, s.d_key, s.vocab, s.seq_len, s.mlp_ratio);
  c.rotary_base = s.rotary_base;
  c.validate();
  return c;
}

ShapeSpec shape_spec(const RunShape& shape, int d_key) {
  return {static_cast<double>(shape.n_layers), static_cast<double>(shape.n_heads * d_key),
          static_cast<double>(std::max(shape.iters, 1))};
}

int eval_interval(int total_steps) { return std::max(1, total_steps / 100); }

std::int64_t steps_for_tokens_per_param(double non_embedding_params, double ratio, int batch, int seq) {
  if (!(non_embedding_params > 0) || !(ratio > 0) || batch < 1 || seq < 1) {
    throw ConfigError("tokens-per-parameter budget needs positive params, ratio, batch and seq");
  }
  const double raw = ratio * non_embedding_params / (static_cast<double>(batch) * static_cast<double>(seq));
  const auto steps = static_cast<std::int64_t>(std::ceil(raw));
  return (steps + 249) / 250 * 250;
}

std::int64_t steps_for_tokens_per_param(const ModelConfig& model, double ratio, int batch, int seq) {
  return steps_for_tokens_per_param(static_cast<double>(non_embedding_param_count(model)), ratio, batch, seq);
}

bool SweepResult::operator==(const SweepResult& o) const {
  const bool loss_eq = final_val_loss_ema == o.final_val_loss_ema ||
                       (std::isnan(final_val_loss_ema) && std::isnan(o.final_val_loss_ema));
  return shape_id == o.shape_id && lr == o.lr && seed == o.seed && loss_eq && diverged == o.diverged;
}

namespace {

struct Validation {
  double loss = 0;
  double hidden_dev = 0;
};

Validation validate_on(const NgptWeights& w, const Batch& val, bool track) {
  // The loss always comes from the same routine so tracking cannot change it.
  Validation v;
  v.loss = evaluate_loss(w, val.inputs, val.targets);
  if (!track) return v;
  for (const auto& seq : val.inputs) {
    ForwardTrace t;
    forward_logits(w, seq, &t);
    for (const auto& h : t.residual) {
      for (std::size_t r = 0; r < h.rows(); ++r) v.hidden_dev = std::max(v.hidden_dev, std::abs(l2(h.row(r)) - 1.0));
    }
  }
  return v;
}

}  // namespace

TrainOutcome train_run(const Corpus& corpus, const RunShape& shape, const HPPlan& plan, const TrainSettings& s,
                       std::uint64_t seed, const TrainHooks& hooks) {
  s.validate();
  const auto mc = model_config_for(shape, s);
  const int total = shape.iters;
  if (total < 0) throw ConfigError("iteration count must be >= 0");

  BatchStream val_stream(corpus.validation, s.batch_size, s.seq_len);
  Batch val;
  for (int k = 0; k < s.val_batches; ++k) {
    auto b = val_stream.next();
    for (auto& x : b.inputs) val.inputs.push_back(std::move(x));
    for (auto& x : b.targets) val.targets.push_back(std::move(x));
  }
  BatchStream train_stream(corpus.train, s.batch_size, s.seq_len, s.wraparound);

  TrainOutcome out;
  out.result.shape_id = shape.id();
  out.result.lr = plan.eta_global;
  out.result.seed = seed;

  auto w = init_weights(mc, seed, plan);
  AdamState adam = AdamState::zeros_like(w);
  OptimConfig oc;
  oc.beta1 = s.beta1;
  oc.beta2 = s.beta2;
  oc.eps = s.eps;
  oc.total_steps = std::max(total, 1);
  oc.mode = s.mode;

  auto v0 = validate_on(w, val, hooks.track_norms);
  out.initial_val_loss = v0.loss;
  out.max_hidden_norm_deviation = v0.hidden_dev;
  out.max_weight_norm_deviation = max_norm_deviation(w);
  double ema = v0.loss;
  out.history.push_back({0, std::numeric_limits<double>::quiet_NaN(), v0.loss, ema});
  const int every = eval_interval(total);
  bool diverged = !std::isfinite(v0.loss);

  for (int step = 0; step < total && !diverged; ++step) {
    renormalize_weights(w);
    if (hooks.track_norms) out.max_weight_norm_deviation = std::max(out.max_weight_norm_deviation, max_norm_deviation(w));
    if (hooks.on_step) hooks.on_step(step, w);
    auto batch = train_stream.next();
    double train_loss = 0;
    try {
      ad::Graph g;
      auto b = bind(g, w);
      auto loss = batch_loss(g, w, b, batch.inputs, batch.targets);
      train_loss = loss.value().item();
      auto grads = collect_grads(g.backward(loss), b);
      if (s.mode == OptimMode::Adam) {
        adam_step(w, grads, plan, adam, oc, step);
      } else {
        signgd_step(w, grads, plan, step, oc.total_steps);
      }
    } catch (const NonFiniteError&) {
      diverged = true;
      break;
    } catch (const DegenerateInputError&) {
      diverged = true;
      break;
    }
    if ((step + 1) % every == 0 || step + 1 == total) {
      Validation v;
      try {
        renormalize_weights(w);
        v = validate_on(w, val, hooks.track_norms);
      } catch (const NonFiniteError&) {
        v.loss = std::numeric_limits<double>::quiet_NaN();
      } catch (const DegenerateInputError&) {
        v.loss = std::numeric_limits<double>::quiet_NaN();
      }
      out.max_hidden_norm_deviation = std::max(out.max_hidden_norm_deviation, v.hidden_dev);
      ema = s.ema_beta * ema + (1.0 - s.ema_beta) * v.loss;
      out.history.push_back({step + 1, train_loss, v.loss, ema});
      if (!std::isfinite(v.loss) || !std::isfinite(ema) || ema > 2.0 * out.initial_val_loss) diverged = true;
    }
  }

  out.result.diverged = diverged;
  out.result.final_val_loss_ema = diverged ? std::numeric_limits<double>::quiet_NaN() : ema;
  if (!diverged) {
    renormalize_weights(w);
    if (hooks.track_norms) out.max_weight_norm_deviation = std::max(out.max_weight_norm_deviation, max_norm_deviation(w));
    if (hooks.checkpoint) save_checkpoint(*hooks.checkpoint, w, static_cast<std::uint64_t>(total), ema);
    out.weights = std::move(w);
  }
  return out;
}

std::string history_csv(const std::vector<EvalPoint>& h) {
  std::ostringstream os;
  os.precision(17);
  os << kHistoryCsvHeader << '\n';
  for (const auto& p : h) {
    os << p.step << ',';
    if (!std::isnan(p.train_loss)) os << p.train_loss;
    os << ',' << p.val_loss << ',' << p.val_loss_ema << '\n';
  }
  return os.str();
}

}  // namespace ngpt
