#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ngpt/errors.hpp"
#include "ngpt/simple_net.hpp"
#include "oracles.hpp"

using namespace ngpt;

namespace {

SimpleNetConfig cfg(int N, int L, double alpha, std::uint64_t seed = 0) {
  SimpleNetConfig c;
  c.N = N;
  c.L = L;
  c.V = 32;
  c.alpha_depth = alpha;
  c.seed = seed;
  return c;
}

const DepthSlope& slope(const DepthScalingResult& r, double alpha, DepthSlope::Axis axis) {
  for (const auto& s : r.slopes)
    if (s.alpha_depth == alpha && s.axis == axis) return s;
  throw std::runtime_error("slope missing");
}

}  // namespace

TEST(SimpleNet, InitHasUnitNorms) {
  const auto c = cfg(24, 5, 1.0, 3);
  const auto s = SimpleNetState::init(c);
  EXPECT_EQ(s.w.size(), 4u);
  EXPECT_EQ(s.e_input.shape(), (Shape{24, 32}));
  EXPECT_EQ(s.e_output.shape(), (Shape{32, 24}));
  EXPECT_LT(s.max_norm_deviation(), 1e-14);
  const auto f = simple_forward(s, c, 7);
  ASSERT_EQ(f.hidden.size(), 5u);
  for (const auto& h : f.hidden) EXPECT_NEAR(h.norm(), 1.0, 1e-14);
  for (std::size_t i = 0; i < 24; ++i) EXPECT_EQ(f.hidden[0][i], s.e_input.at(i, 7));
}

TEST(SimpleNet, ForwardMatchesDirectRecurrence) {
  const auto c = cfg(10, 4, 0.5, 9);
  const auto s = SimpleNetState::init(c);
  const auto f = simple_forward(s, c, 3);
  oracle::Vec h(10);
  for (std::size_t i = 0; i < 10; ++i) h[i] = s.e_input.at(i, 3);
  const double r = std::pow(4.0, -0.5);
  for (const auto& w : s.w) {
    oracle::Vec u(10, 0.0);
    for (std::size_t i = 0; i < 10; ++i)
      for (std::size_t j = 0; j < 10; ++j) u[i] += w.at(i, j) * h[j];
    u = oracle::normalized(u);
    for (std::size_t i = 0; i < 10; ++i) h[i] = (1 - r) * h[i] + r * u[i];
    h = oracle::normalized(h);
  }
  for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(f.hidden.back()[i], h[i], 1e-14);
  for (std::size_t v = 0; v < 32; ++v) {
    double z = 0;
    for (std::size_t i = 0; i < 10; ++i) z += s.e_output.at(v, i) * h[i];
    EXPECT_NEAR(f.logits[v], z, 1e-14);
  }
}

TEST(SimpleNet, VanishingResidualRateFreezesStream) {
  const auto c = cfg(16, 6, 40.0, 1);
  const auto s = SimpleNetState::init(c);
  const auto f = simple_forward(s, c, 0);
  EXPECT_LT((f.hidden.back() - f.hidden.front()).norm(), 1e-12);
}

TEST(SimpleNet, LogitNormShrinksAsInverseRootWidth) {
  std::vector<std::pair<double, double>> pts;
  for (int N : {16, 32, 64, 128, 256}) {
    double s = 0;
    const int trials = 24;
    for (int t = 0; t < trials; ++t) {
      auto c = cfg(N, 3, 1.0, 100 * N + t);
      c.V = 256;
      s += simple_forward(SimpleNetState::init(c), c, t % c.V).logits.norm();
    }
    pts.emplace_back(N, s / trials);
  }
  EXPECT_NEAR(fit_power_law(pts).exponent, -0.5, 0.1);
}

TEST(SimpleNet, SignUpdateMagnitudes) {
  auto c = cfg(20, 4, 1.0, 5);
  c.eta_input = 0.003;
  c.eta_hidden = 0.002;
  c.eta_output = 0.001;
  auto s = SimpleNetState::init(c);
  const auto rep = simple_signgd_step(s, c, 4, 9);
  EXPECT_NEAR(rep.input_update, 0.003 * std::sqrt(20.0), 1e-15);
  EXPECT_NEAR(rep.output_update_fro, 0.001 * std::sqrt(20.0 * 32.0), 1e-15);
  ASSERT_EQ(rep.weight_update_fro.size(), 3u);
  for (double f : rep.weight_update_fro) EXPECT_NEAR(f, 0.002 * 20.0, 1e-14);
  // |dW h| <= |dW|_F |h| with |h| = 1.
  for (std::size_t l = 0; l < 3; ++l) EXPECT_LE(rep.weight_times_h[l], rep.weight_update_fro[l] + 1e-15);
  EXPECT_LT(s.max_norm_deviation(), 1e-14);
  EXPECT_EQ(rep.hidden_update.size(), 4u);
  EXPECT_GT(rep.loss, 0.0);
}

TEST(SimpleNet, FrozenInputLeavesFirstHiddenState) {
  auto c = cfg(20, 4, 1.0, 6);
  c.eta_hidden = 0.01;
  auto s = SimpleNetState::init(c);
  const auto rep = simple_signgd_step(s, c, 1, 2);
  EXPECT_EQ(rep.input_update, 0.0);
  EXPECT_EQ(rep.hidden_update.front(), 0.0);
  EXPECT_GT(rep.hidden_update.back(), 0.0);
}

TEST(SimpleNet, ProjectorBoundsNormalizedStep) {
  // Norm(h + d) - h for unit h: the tangent part of d bounds the first-order
  // change, since |(I - h h^T) d| <= |d|.
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 200; ++t) {
    oracle::Vec h(12), d(12);
    for (auto& v : h) v = nd(rng);
    h = oracle::normalized(h);
    for (auto& v : d) v = 1e-4 * nd(rng);
    double hd = 0;
    for (std::size_t i = 0; i < 12; ++i) hd += h[i] * d[i];
    oracle::Vec proj(12), moved(12);
    for (std::size_t i = 0; i < 12; ++i) {
      proj[i] = d[i] - hd * h[i];
      moved[i] = h[i] + d[i];
    }
    moved = oracle::normalized(moved);
    for (std::size_t i = 0; i < 12; ++i) moved[i] -= h[i];
    EXPECT_LE(oracle::norm(proj), oracle::norm(d) + 1e-18);
    EXPECT_NEAR(oracle::norm(moved), oracle::norm(proj), 2 * oracle::norm(d) * oracle::norm(d));  // second order
  }
}

TEST(SimpleNet, InvalidInputs) {
  auto c = cfg(8, 2, 1.0);
  EXPECT_THROW(SimpleNetState::init(cfg(0, 2, 1.0)), ConfigError);
  EXPECT_THROW(SimpleNetState::init(cfg(8, 2, 0.0)), ConfigError);
  auto s = SimpleNetState::init(c);
  EXPECT_THROW(simple_forward(s, c, 32), ConfigError);
  EXPECT_THROW(simple_signgd_step(s, c, 0, -1), ConfigError);
  auto deeper = c;
  deeper.L = 3;
  EXPECT_THROW(simple_forward(s, deeper, 0), ConfigError);
  s.w[0] = Tensor(Shape{8, 8});
  EXPECT_THROW(s.renormalize(), DegenerateInputError);
}

TEST(EtaRules, ValuesAndNames) {
  EXPECT_EQ(hidden_lr(EtaRule::constant, 0.5, 64, 8, 0.5), 0.5);
  EXPECT_EQ(hidden_lr(EtaRule::inverse_width, 0.5, 64, 8, 0.5), 0.5 / 64);
  EXPECT_NEAR(hidden_lr(EtaRule::depth_corrected, 0.5, 64, 16, 0.5), 0.5 / 4 / 64, 1e-18);
  EXPECT_EQ(hidden_lr(EtaRule::depth_corrected, 0.5, 64, 16, 1.0), 0.5 / 64);
  for (auto r : {EtaRule::constant, EtaRule::inverse_width, EtaRule::depth_corrected})
    EXPECT_EQ(parse_eta_rule(to_string(r)), r);
  EXPECT_THROW(parse_eta_rule("muP"), ConfigError);
}

TEST(DepthScaling, DepthCorrectedRuleIsFlatInDepthAndWidth) {
  DepthGrid g;
  g.widths = {32, 64, 128};
  g.depths = {8, 16, 32};  // shallower nets are still pre-asymptotic at alpha 0.5
  g.alphas = {0.5, 1.0};
  g.rule = EtaRule::depth_corrected;
  g.trials = 8;
  g.workers = 4;
  const auto r = depth_scaling_experiment(g);
  EXPECT_EQ(r.cells.size(), 18u);
  for (double a : g.alphas) {
    for (auto axis : {DepthSlope::Axis::depth, DepthSlope::Axis::width}) {
      int n = 0;
      for (const auto& s : r.slopes) {
        if (s.alpha_depth != a || s.axis != axis) continue;
        ++n;
        EXPECT_NEAR(s.fit.exponent, 0.0, 0.15) << "alpha " << a << " axis " << int(axis) << " fixed " << s.fixed;
      }
      EXPECT_EQ(n, 3);
    }
  }
}

TEST(DepthScaling, InverseWidthRuleGrowsWithDepthOnlyForHalfAlpha) {
  DepthGrid g;
  g.widths = {64};
  g.depths = {4, 8, 16, 32};
  g.trials = 6;
  g.workers = 4;
  const auto r = depth_scaling_experiment(g);
  EXPECT_NEAR(slope(r, 1.0, DepthSlope::Axis::depth).fit.exponent, 0.0, 0.15);
  EXPECT_NEAR(slope(r, 0.5, DepthSlope::Axis::depth).fit.exponent, 0.5, 0.15);
}

TEST(DepthScaling, DeterministicAcrossWorkerCounts) {
  DepthGrid g;
  g.widths = {16, 32};
  g.depths = {2, 4, 8};
  g.trials = 3;
  g.workers = 1;
  const auto a = depth_csv(depth_scaling_experiment(g));
  g.workers = 5;
  const auto b = depth_csv(depth_scaling_experiment(g));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.substr(0, a.find('\n')), kDepthCsvHeader);
  g.trials = 0;
  EXPECT_THROW(depth_scaling_experiment(g), ConfigError);
}
