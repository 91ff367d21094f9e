#pragma once

#include <cstdint>
#include <vector>

#include "ngpt/autodiff.hpp"
#include "ngpt/model.hpp"
#include "ngpt/parameterization.hpp"

namespace ngpt {

enum class OptimMode { Adam, SignGD };

struct OptimConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-16;
  int total_steps = 1;
  OptimMode mode = OptimMode::Adam;
  // Weight decay is fixed at zero and has no knob.

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  static AdamState zeros_like(const NgptWeights& w);
};

/// Cosine decay from `peak` at step 0 to 0.1 * peak at `total`; no warmup.
double lr_at(int step, int total, double peak);

/// Peak learning rate of a parameter group under a plan.
double group_lr(const HPPlan& plan, ParamGroup g);

/// Gradients of every parameter, index-aligned with NgptWeights::params.
std::vector<Tensor> collect_grads(const ad::Gradients& grads, const BoundParams& b);

/// Bias-corrected Adam with eps outside the square root, then clamps the
/// nonnegative rescalers at 0. Advances state.t. `step` selects the
/// scheduled learning rate.
void adam_step(NgptWeights& w, const std::vector<Tensor>& grads, const HPPlan& plan, AdamState& state,
               const OptimConfig& config, int step);

/// w -= lr * sign(g) with sign(0) = 0, then the same clamp.
void signgd_step(NgptWeights& w, const std::vector<Tensor>& grads, const HPPlan& plan, int step,
                 int total_steps);

/// Clamps raw alpha_A / alpha_M (every rescaler flagged nonnegative) at 0.
void clamp_rescalers(NgptWeights& w);

}  // namespace ngpt
