#include "ngpt/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "ngpt/errors.hpp"

namespace ngpt {

void OptimConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw ConfigError("Adam eps must be positive");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
}

AdamState AdamState::zeros_like(const NgptWeights& w) {
  AdamState s;
  for (const auto& p : w.params) {
    s.m.push_back(Tensor::zeros_like(p.value));
    s.v.push_back(Tensor::zeros_like(p.value));
  }
  return s;
}

double lr_at(int step, int total, double peak) {
  if (total <= 0) throw ConfigError("lr schedule needs total > 0");
  if (step < 0 || step > total) {
    throw ConfigError("lr schedule step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return peak * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

double group_lr(const HPPlan& plan, ParamGroup g) {
  switch (g) {
    case ParamGroup::input: return plan.eta_input;
    case ParamGroup::hidden: return plan.eta_hidden;
    case ParamGroup::output: return plan.eta_output;
    case ParamGroup::rescaler: return plan.eta_rescaler;
  }
  return 0;
}

std::vector<Tensor> collect_grads(const ad::Gradients& grads, const BoundParams& b) {
  std::vector<Tensor> out;
  out.reserve(b.vars.size());
  for (auto v : b.vars) out.push_back(grads[v]);
  return out;
}

namespace {

void check_grads(const NgptWeights& w, const std::vector<Tensor>& grads) {
  if (grads.size() != w.params.size()) {
    throw ConfigError("got " + std::to_string(grads.size()) + " gradients for " +
                      std::to_string(w.params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != w.params[i].value.shape()) {
      throw ConfigError("gradient shape " + shape_string(grads[i].shape()) + " does not match " +
                        w.params[i].name + " " + shape_string(w.params[i].value.shape()));
    }
  }
}

}  // namespace

void clamp_rescalers(NgptWeights& w) {
  for (auto& p : w.params) {
    if (!p.rescaler || !p.rescaler->nonnegative) continue;
    for (auto& v : p.value.data()) v = std::max(v, 0.0);
  }
}

void adam_step(NgptWeights& w, const std::vector<Tensor>& grads, const HPPlan& plan, AdamState& state,
               const OptimConfig& config, int step) {
  config.validate();
  check_grads(w, grads);
  if (state.m.size() != w.params.size()) state = AdamState::zeros_like(w);
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    auto& p = w.params[i];
    const double lr = lr_at(step, config.total_steps, group_lr(plan, p.group));
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
      m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g[k];
      v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
  clamp_rescalers(w);
}

void signgd_step(NgptWeights& w, const std::vector<Tensor>& grads, const HPPlan& plan, int step,
                 int total_steps) {
  check_grads(w, grads);
  for (std::size_t i = 0; i < w.params.size(); ++i) {
    auto& p = w.params[i];
    const double lr = lr_at(step, total_steps, group_lr(plan, p.group));
    const auto& g = grads[i];
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (g[k] > 0) {
        p.value[k] -= lr;
      } else if (g[k] < 0) {
        p.value[k] += lr;
      }
    }
  }
  clamp_rescalers(w);
}

}  // namespace ngpt
