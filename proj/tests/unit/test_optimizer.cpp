#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ngpt/errors.hpp"
#include "ngpt/optimizer.hpp"
#include "oracles.hpp"

using namespace ngpt;

namespace {

struct Fixture {
  HPPlan p;
  NgptWeights w;
  std::vector<std::vector<int>> in, tg;

  explicit Fixture(Scheme s = Scheme::NuGPT, ShapeSpec target = {2, 16, 100}, std::uint64_t seed = 0) {
    p = plan(s, {2, 16, 100}, target, 0.01);
    w = init_weights(ModelConfig::make(2, 2, 8, 32, 8), seed, p);
    std::mt19937_64 rng(seed + 1);
    for (int b = 0; b < 2; ++b) {
      std::vector<int> x(8), y(8);
      for (auto& t : x) t = static_cast<int>(rng() % 32);
      for (auto& t : y) t = static_cast<int>(rng() % 32);
      in.push_back(x);
      tg.push_back(y);
    }
  }

  std::vector<Tensor> grads() const {
    ad::Graph g;
    auto b = bind(g, w);
    return collect_grads(g.backward(batch_loss(g, w, b, in, tg)), b);
  }
};

std::vector<Tensor> constant_grads(const NgptWeights& w, double v) {
  std::vector<Tensor> g;
  for (const auto& p : w.params) g.emplace_back(p.value.shape(), v);
  return g;
}

}  // namespace

TEST(Schedule, Endpoints) {
  EXPECT_EQ(lr_at(0, 100, 0.4), 0.4);
  EXPECT_NEAR(lr_at(100, 100, 0.4), 0.04, 1e-17);
  EXPECT_NEAR(lr_at(50, 100, 0.4), 0.22, 1e-16);
  EXPECT_NEAR(lr_at(1, 2, 1.0), 0.55, 1e-16);
  EXPECT_THROW(lr_at(0, 0, 1.0), ConfigError);
  EXPECT_THROW(lr_at(5, 4, 1.0), ConfigError);
  EXPECT_THROW(lr_at(-1, 4, 1.0), ConfigError);
}

TEST(Schedule, MonotoneDecay) {
  double prev = 1e9;
  for (int s = 0; s <= 37; ++s) {
    const double v = lr_at(s, 37, 1.0);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Config, Validation) {
  OptimConfig c;
  EXPECT_NO_THROW(c.validate());
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.eps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  EXPECT_EQ(c.beta1, 0.9);
  EXPECT_EQ(c.beta2, 0.95);
  EXPECT_EQ(c.eps, 1e-16);
}

TEST(Adam, ZeroGradientLeavesWeightsAndAdvancesCounter) {
  Fixture f;
  auto before = f.w;
  auto st = AdamState::zeros_like(f.w);
  OptimConfig c;
  c.total_steps = 10;
  adam_step(f.w, constant_grads(f.w, 0.0), f.p, st, c, 0);
  EXPECT_TRUE(f.w == before);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, ConstantGradientMovesByScheduledRate) {
  // With g constant, the bias-corrected m and v equal g and g^2 exactly, so
  // each component moves by lr * g / (|g| + eps) at every step.
  Fixture f;
  auto st = AdamState::zeros_like(f.w);
  OptimConfig c;
  c.total_steps = 20;
  const auto g = constant_grads(f.w, -0.37);  // upward, so the clamp never engages
  for (int s = 0; s < 20; ++s) {
    auto before = f.w;
    adam_step(f.w, g, f.p, st, c, s);
    for (std::size_t i = 0; i < f.w.params.size(); ++i) {
      const double lr = lr_at(s, 20, group_lr(f.p, f.w[i].group));
      for (std::size_t k = 0; k < f.w[i].value.size(); ++k) {
        EXPECT_NEAR(f.w[i].value[k] - before[i].value[k], lr, 1e-12 * lr);
      }
    }
  }
}

TEST(Adam, ZeroBetasReduceToSignGd) {
  Fixture a, b;
  const auto g = a.grads();
  auto st = AdamState::zeros_like(a.w);
  OptimConfig c;
  c.beta1 = 0;
  c.beta2 = 0;
  c.eps = 1e-300;
  c.total_steps = 5;
  adam_step(a.w, g, a.p, st, c, 2);
  signgd_step(b.w, g, b.p, 2, 5);
  for (std::size_t i = 0; i < a.w.params.size(); ++i)
    for (std::size_t k = 0; k < a.w[i].value.size(); ++k) EXPECT_NEAR(a.w[i].value[k], b.w[i].value[k], 1e-15);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Fixture f;
    auto st = AdamState::zeros_like(f.w);
    OptimConfig c;
    c.total_steps = 3;
    for (int s = 0; s < 3; ++s) {
      renormalize_weights(f.w);
      adam_step(f.w, f.grads(), f.p, st, c, s);
    }
    return f.w;
  };
  EXPECT_TRUE(run() == run());
}

TEST(Adam, GradientShapeMismatchIsConfigError) {
  Fixture f;
  auto st = AdamState::zeros_like(f.w);
  auto g = constant_grads(f.w, 1.0);
  g[3] = Tensor(Shape{1}, 1.0);
  EXPECT_THROW(adam_step(f.w, g, f.p, st, OptimConfig{}, 0), ConfigError);
  g.pop_back();
  EXPECT_THROW(signgd_step(f.w, g, f.p, 0, 1), ConfigError);
}

TEST(SignGd, ColumnsMoveByEtaRootD) {
  Fixture f;
  auto before = f.w;
  const auto g = constant_grads(f.w, -2.0);
  signgd_step(f.w, g, f.p, 0, 1);
  const auto& w0 = before.find("layer0.W_O").value;
  const auto& w1 = f.w.find("layer0.W_O").value;
  const double eta = f.p.eta_hidden;
  for (std::size_t c = 0; c < w0.cols(); ++c) {
    double s = 0;
    for (std::size_t r = 0; r < w0.rows(); ++r) s += (w1.at(r, c) - w0.at(r, c)) * (w1.at(r, c) - w0.at(r, c));
    EXPECT_NEAR(std::sqrt(s), eta * std::sqrt(static_cast<double>(w0.rows())), 1e-15);
  }
}

TEST(SignGd, ZeroGradientDoesNotMove) {
  Fixture f;
  auto before = f.w;
  auto g = constant_grads(f.w, 1.0);
  auto& ge = g[f.w.e_input];
  for (std::size_t k = 0; k < ge.size(); k += 2) ge[k] = 0.0;
  signgd_step(f.w, g, f.p, 0, 1);
  for (std::size_t k = 0; k < ge.size(); ++k) {
    if (k % 2 == 0) EXPECT_EQ(f.w[f.w.e_input].value[k], before[f.w.e_input].value[k]);
    else EXPECT_NE(f.w[f.w.e_input].value[k], before[f.w.e_input].value[k]);
  }
}

TEST(SignGd, HiddenRateComposesWithPlanner) {
  Fixture f(Scheme::NuGPT, {2, 64, 100});
  auto before = f.w;
  signgd_step(f.w, f.grads(), f.p, 0, 10);
  const double expect = f.p.eta_base * std::pow(4.0, -0.75);
  const auto& a = before.find("layer1.W_u").value;
  const auto& b = f.w.find("layer1.W_u").value;
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(std::abs(b[k] - a[k]), expect, 1e-15);
}

TEST(Clamp, NonnegativeRescalersStayNonnegative) {
  Fixture f;
  auto g = constant_grads(f.w, 0.0);
  for (const auto& lp : f.w.layers) {
    g[lp.alpha_a] = Tensor(f.w[lp.alpha_a].value.shape(), 1.0);
    g[lp.alpha_m] = Tensor(f.w[lp.alpha_m].value.shape(), 1.0);
  }
  g[f.w.s_z] = Tensor(f.w[f.w.s_z].value.shape(), 1.0);
  auto p = f.p;
  p.eta_rescaler = 1.0;  // far larger than the raw value 0.03
  signgd_step(f.w, g, p, 0, 1);
  for (const auto& lp : f.w.layers) {
    for (double v : f.w[lp.alpha_a].value.values()) EXPECT_EQ(v, 0.0);
    for (double v : f.w[lp.alpha_m].value.values()) EXPECT_EQ(v, 0.0);
  }
  for (double v : f.w[f.w.s_z].value.values()) EXPECT_LT(v, 0.0);  // s_z is not constrained
}

TEST(Drift, PreRenormalizationNormsStayWithinUpdateScale) {
  Fixture f;
  auto st = AdamState::zeros_like(f.w);
  OptimConfig c;
  c.total_steps = 30;
  double worst_ratio = 0;
  for (int s = 0; s < 30; ++s) {
    renormalize_weights(f.w);
    adam_step(f.w, f.grads(), f.p, st, c, s);
    for (const auto& p : f.w.params) {
      if (p.axis == NormAxis::none) continue;
      const std::size_t len = p.axis == NormAxis::rows ? p.value.cols() : p.value.rows();
      const double bound = lr_at(s, 30, group_lr(f.p, p.group)) * std::sqrt(static_cast<double>(len));
      auto copy = p;
      NgptWeights one;
      one.params.push_back(copy);
      worst_ratio = std::max(worst_ratio, max_norm_deviation(one) / bound);
    }
  }
  // Adam's per-component step is at most a small multiple of lr.
  EXPECT_LT(worst_ratio, 3.0);
  renormalize_weights(f.w);
  EXPECT_LT(max_norm_deviation(f.w), 1e-12);
}

TEST(Groups, RescalersUseBaseRate) {
  Fixture f(Scheme::NuGPT, {8, 64, 400});
  EXPECT_EQ(group_lr(f.p, ParamGroup::rescaler), f.p.eta_base);
  EXPECT_EQ(group_lr(f.p, ParamGroup::input), f.p.eta_input);
  EXPECT_EQ(group_lr(f.p, ParamGroup::output), f.p.eta_output);
  EXPECT_EQ(group_lr(f.p, ParamGroup::hidden), f.p.eta_hidden);
}
