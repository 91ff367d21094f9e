#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "ngpt/data.hpp"
#include "ngpt/errors.hpp"
#include "ngpt/powerlaw.hpp"
#include "ngpt/report.hpp"
#include "ngpt/sweep.hpp"
#include "ngpt/train.hpp"
#include "oracles.hpp"

using namespace ngpt;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("ngpt_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TrainSettings tiny_settings() {
  TrainSettings s;
  s.vocab = 256;
  s.batch_size = 2;
  s.seq_len = 16;
  s.val_batches = 1;
  return s;
}

// Parabola in log2(lr) with its minimum at `best`; lrs above `blowup` diverge.
Trainer stub(double best, double blowup = 1e9) {
  return [=](const RunShape& shape, double lr, std::uint64_t seed) {
    SweepResult r;
    r.shape_id = shape.id();
    r.lr = lr;
    r.seed = seed;
    const double x = std::log2(lr) - best - 0.5 * shape.n_heads;
    r.final_val_loss_ema = 1.0 + x * x + 0.01 * static_cast<double>(seed % 3);
    if (lr > blowup) {
      r.diverged = true;
      r.final_val_loss_ema = std::nan("");
    }
    return r;
  };
}

}  // namespace

TEST(Corpus, BytesAreTokens) {
  const auto c = corpus_from_bytes("ab", 0.0);
  EXPECT_EQ(c.train, (std::vector<int>{97, 98}));
  EXPECT_TRUE(c.validation.empty());
  const auto hi = corpus_from_bytes(std::string(1, '\xff'), 0.0);
  EXPECT_EQ(hi.train.front(), 255);
}

TEST(Corpus, HoldsOutTrailingFraction) {
  const auto text = oracle::synthetic_corpus(1000);
  const auto c = corpus_from_bytes(text);
  EXPECT_EQ(c.train.size(), 900u);
  EXPECT_EQ(c.validation.size(), 100u);
  EXPECT_EQ(c.validation.front(), static_cast<unsigned char>(text[900]));
  EXPECT_THROW(corpus_from_bytes(""), DegenerateInputError);
  EXPECT_THROW(corpus_from_bytes("abc", 1.0), ConfigError);
}

TEST(Corpus, FileLoading) {
  const auto d = temp_dir("corpus");
  {
    std::ofstream(d / "c.txt") << "hello world";
    std::ofstream(d / "empty.txt");
  }
  EXPECT_EQ(load_corpus(d / "c.txt", 0.0).train.size(), 11u);
  EXPECT_THROW(load_corpus(d / "missing.txt"), IoError);
  EXPECT_THROW(load_corpus(d / "empty.txt"), DegenerateInputError);
  fs::remove_all(d);
}

TEST(Batches, WindowsShiftAndWrap) {
  std::vector<int> toks(20);
  for (int i = 0; i < 20; ++i) toks[i] = i;
  BatchStream s(toks, 2, 4);
  const auto b = s.next();
  ASSERT_EQ(b.inputs.size(), 2u);
  EXPECT_EQ(b.inputs[0], (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(b.targets[0], (std::vector<int>{1, 2, 3, 4}));
  EXPECT_EQ(b.inputs[1], (std::vector<int>{4, 5, 6, 7}));
  for (int i = 0; i < 10; ++i) {
    const auto n = s.next();
    for (std::size_t r = 0; r < n.inputs.size(); ++r)
      for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(n.targets[r][k], (n.inputs[r][k] + 1) % 20);
  }
  BatchStream a(toks, 3, 4), c(toks, 3, 4);
  for (int i = 0; i < 7; ++i) {
    const auto x = a.next(), y = c.next();
    EXPECT_EQ(x.inputs, y.inputs);
  }
}

TEST(Batches, ExhaustionWithoutWrap) {
  std::vector<int> toks(10, 1);
  BatchStream s(toks, 1, 4, false);
  s.next();
  s.next();
  EXPECT_THROW(s.next(), IoError);
  EXPECT_THROW(BatchStream(toks, 1, 10), DegenerateInputError);
  EXPECT_THROW(BatchStream(toks, 0, 4), ConfigError);
}

TEST(Budget, TokensPerParameter) {
  EXPECT_EQ(steps_for_tokens_per_param(1e6, 20, 8, 128), 19750);
  EXPECT_EQ(steps_for_tokens_per_param(250.0 * 1024 / 20, 20, 8, 128), 250);
  EXPECT_EQ(steps_for_tokens_per_param(1, 20, 8, 128), 250);
  EXPECT_THROW(steps_for_tokens_per_param(1e6, 0, 8, 128), ConfigError);
  EXPECT_THROW(steps_for_tokens_per_param(1e6, 20, 0, 128), ConfigError);
  const auto m = ModelConfig::make(2, 2, 8, 256, 64);
  EXPECT_EQ(steps_for_tokens_per_param(m, 20, 8, 64),
            steps_for_tokens_per_param(static_cast<double>(non_embedding_param_count(m)), 20, 8, 64));
}

TEST(Shapes, ParseAndId) {
  const auto s = parse_shape("3x4x120");
  EXPECT_EQ(s, (RunShape{3, 4, 120}));
  EXPECT_EQ(s.id(), "L3_H4_T120");
  EXPECT_THROW(parse_shape("3x4"), ConfigError);
  EXPECT_THROW(parse_shape("3x4x5x"), ConfigError);
  EXPECT_THROW(parse_shape("0x4x5"), ConfigError);
  EXPECT_EQ(eval_interval(50), 1);
  EXPECT_EQ(eval_interval(1000), 10);
}

TEST(Train, ZeroStepsReportsInitialLoss) {
  const auto corpus = corpus_from_bytes(oracle::synthetic_corpus(4000));
  const RunShape shape{1, 2, 0};
  const auto p = plan(Scheme::NuGPT, shape_spec(shape, 8), shape_spec(shape, 8), 0.01);
  const auto out = train_run(corpus, shape, p, tiny_settings(), 3);
  EXPECT_FALSE(out.result.diverged);
  EXPECT_EQ(out.result.final_val_loss_ema, out.initial_val_loss);
  ASSERT_EQ(out.history.size(), 1u);
  EXPECT_TRUE(std::isnan(out.history[0].train_loss));
  // Near-uniform predictions at initialization.
  EXPECT_NEAR(out.initial_val_loss, std::log(256.0), 0.5);
}

TEST(Train, SameSeedIsBitIdentical) {
  const auto corpus = corpus_from_bytes(oracle::synthetic_corpus(4000));
  const RunShape shape{1, 2, 12};
  const auto p = plan(Scheme::NuGPT, shape_spec(shape, 8), shape_spec(shape, 8), 0.01);
  TrainHooks h;
  h.track_norms = true;
  const auto a = train_run(corpus, shape, p, tiny_settings(), 5, h);
  const auto b = train_run(corpus, shape, p, tiny_settings(), 5, h);
  EXPECT_EQ(history_csv(a.history), history_csv(b.history));
  EXPECT_TRUE(*a.weights == *b.weights);
  EXPECT_EQ(a.history.size(), 13u);
  EXPECT_LT(a.max_weight_norm_deviation, 1e-12);
  EXPECT_LT(a.max_hidden_norm_deviation, 1e-12);
  const auto c = train_run(corpus, shape, p, tiny_settings(), 6);
  EXPECT_NE(a.result.final_val_loss_ema, c.result.final_val_loss_ema);
}

TEST(Train, StepHookSeesRenormalizedWeights) {
  const auto corpus = corpus_from_bytes(oracle::synthetic_corpus(4000));
  const RunShape shape{1, 2, 4};
  const auto p = plan(Scheme::NuGPT, shape_spec(shape, 8), shape_spec(shape, 8), 0.01);
  TrainHooks h;
  std::vector<int> seen;
  h.on_step = [&](int step, const NgptWeights& w) {
    seen.push_back(step);
    EXPECT_LT(max_norm_deviation(w), 1e-12);
  };
  const auto d = temp_dir("hook");
  h.checkpoint = d / "w.ckpt";
  const auto out = train_run(corpus, shape, p, tiny_settings(), 1, h);
  EXPECT_EQ(seen, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_TRUE(load_checkpoint(d / "w.ckpt").weights == *out.weights);
  fs::remove_all(d);
}

TEST(Train, HugeLearningRateDiverges) {
  const auto corpus = corpus_from_bytes(oracle::synthetic_corpus(4000));
  const RunShape shape{1, 2, 30};
  const auto p = plan(Scheme::NuGPT, shape_spec(shape, 8), shape_spec(shape, 8), 64.0);
  const auto out = train_run(corpus, shape, p, tiny_settings(), 1);
  EXPECT_TRUE(out.result.diverged);
  EXPECT_TRUE(std::isnan(out.result.final_val_loss_ema));
}

TEST(Sweep, Log2Grid) {
  const auto g = log2_grid(-3, -1, 0.5);
  ASSERT_EQ(g.size(), 5u);
  EXPECT_EQ(g.front(), 0.125);
  EXPECT_EQ(g.back(), 0.5);
  EXPECT_THROW(log2_grid(1, 0), ConfigError);
}

TEST(Sweep, RecoversArgminPerShape) {
  SweepConfig c;
  c.targets = {{2, 2, 100}, {2, 4, 100}};
  c.lr_grid = log2_grid(-10, -2);
  c.seeds = {0, 1, 2};
  c.workers = 3;
  const auto rep = lr_sweep(c, stub(-8));
  EXPECT_EQ(rep.results.size(), 2u * 9 * 3);
  EXPECT_EQ(rep.results[0].shape_id, "L2_H2_T100");
  EXPECT_EQ(rep.results[1].seed, 1u);
  ASSERT_EQ(rep.optima.size(), 2u);
  EXPECT_EQ(*rep.optima[0].lr, std::exp2(-7));
  EXPECT_EQ(*rep.optima[1].lr, std::exp2(-6));
  EXPECT_NEAR(rep.optima[0].loss, 1.01, 1e-12);  // seed mean
}

TEST(Sweep, SingleLearningRate) {
  SweepConfig c;
  c.lr_grid = {0.01};
  const auto rep = lr_sweep(c, stub(0));
  ASSERT_EQ(rep.optima.size(), 1u);
  EXPECT_EQ(*rep.optima[0].lr, 0.01);
}

TEST(Sweep, DivergedLearningRatesAreExcluded) {
  SweepConfig c;
  c.lr_grid = log2_grid(-10, -2);
  c.seeds = {0, 1};
  auto t = stub(-3, std::exp2(-5.5));
  const auto rep = lr_sweep(c, t);
  EXPECT_EQ(*rep.optima[0].lr, std::exp2(-6));

  // Divergence in a single seed disqualifies the lr.
  auto one_seed = [&](const RunShape& s, double lr, std::uint64_t seed) {
    auto r = stub(-3)(s, lr, seed);
    if (lr == std::exp2(-2) && seed == 1) {
      r.diverged = true;
      r.final_val_loss_ema = std::nan("");
    }
    return r;
  };
  EXPECT_EQ(*lr_sweep(c, one_seed).optima[0].lr, std::exp2(-3));
  const auto all = lr_sweep(c, stub(0, 1e-9));
  EXPECT_FALSE(all.optima[0].lr);
}

TEST(Sweep, TiesGoToSmallerRate) {
  std::vector<SweepResult> rs{{"s", 0.1, 0, 2.0, false}, {"s", 0.2, 0, 2.0, false}};
  EXPECT_EQ(*select_optima(rs, {"s"})[0].lr, 0.1);
}

TEST(Sweep, CsvRoundTrip) {
  std::vector<SweepResult> rs{{"L2_H2_T10", 0.0078125, 0, 3.25, false},
                              {"L2_H2_T10", 1.0 / 3.0, 7, std::nan(""), true}};
  const auto text = sweep_csv(rs);
  EXPECT_EQ(text.substr(0, text.find('\n')), kSweepCsvHeader);
  EXPECT_EQ(parse_sweep_csv(text), rs);
  EXPECT_THROW(parse_sweep_csv("nope\n"), ConfigError);
  const auto o = optima_csv({{"a", 0.5, 1.5}, {"b", std::nullopt, 0}});
  EXPECT_EQ(o.substr(0, o.find('\n')), kOptimaCsvHeader);
}

TEST(Sweep, ValidatesConfig) {
  SweepConfig c;
  c.lr_grid = {0.1, 0.05};
  EXPECT_THROW(c.validate(), ConfigError);
  c.lr_grid = {};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.seeds = {};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tokens_per_param = 20;
  c.train.batch_size = 8;
  c.train.seq_len = 64;
  const auto t = c.resolved_targets();
  EXPECT_EQ(t[0].iters % 250, 0);
}

TEST(Config, ParseAndApply) {
  const auto e = parse_config_text(R"(
# comment
[sweep]
scheme = completep
lrs = 2^-6, 2^-5
seeds = 0, 1   # trailing comment
[shape]
targets = 2x2x50, 3x2x50
[optim]
mode = signgd
)");
  EXPECT_EQ(e.at("sweep.scheme"), "completep");
  SweepConfig c;
  apply_config(c, e);
  EXPECT_EQ(c.scheme, Scheme::CompleteP);
  EXPECT_EQ(c.lr_grid, (std::vector<double>{1.0 / 64, 1.0 / 32}));
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1}));
  ASSERT_EQ(c.targets.size(), 2u);
  EXPECT_EQ(c.targets[1], (RunShape{3, 2, 50}));
  EXPECT_EQ(c.train.mode, OptimMode::SignGD);

  const auto [k, v] = parse_override("model.d_key=16");
  apply_config(c, {{k, v}});
  EXPECT_EQ(c.train.d_key, 16);
  EXPECT_THROW(apply_config(c, {{"model.width", "4"}}), ConfigError);
  EXPECT_THROW(apply_config(c, {{"sweep.workers", "x"}}), ConfigError);
  EXPECT_THROW(parse_override("novalue"), ConfigError);
  EXPECT_THROW(parse_config_text("[oops\n"), ConfigError);
  EXPECT_THROW(parse_config_text("[s]\njustakey\n"), ConfigError);
  EXPECT_THROW(read_config_file("/nonexistent/cfg.ini"), IoError);
  // The description is itself a config file that reproduces the settings.
  const auto entries = parse_config_text(describe_config(c));
  EXPECT_EQ(entries.at("model.d_key"), "16");
  SweepConfig again;
  apply_config(again, entries);
  EXPECT_EQ(describe_config(again), describe_config(c));
}

TEST(Sweep, EndToEndIsReproducible) {
  const auto d = temp_dir("sweep");
  { std::ofstream(d / "corpus.txt") << oracle::synthetic_corpus(6000); }
  SweepConfig c;
  c.base = {1, 2, 6};
  c.targets = {{1, 2, 6}, {1, 4, 6}};
  c.lr_grid = log2_grid(-7, -5);
  c.train = tiny_settings();
  c.corpus = d / "corpus.txt";
  c.workers = 4;
  c.output_dir = d / "a";
  const auto ra = run_sweep(c);
  c.output_dir = d / "b";
  c.workers = 1;
  run_sweep(c);
  for (auto f : {"sweep.csv", "optima.csv", "sweep.svg"}) {
    ASSERT_TRUE(fs::exists(d / "a" / f)) << f;
    EXPECT_EQ(slurp(d / "a" / f), slurp(d / "b" / f)) << f;
  }
  EXPECT_EQ(parse_sweep_csv(slurp(d / "a" / "sweep.csv")), ra.results);
  fs::remove_all(d);
}

TEST(PowerLaw, ExactAndNoisy) {
  std::vector<std::pair<double, double>> exact{{1, 2}, {2, 4}, {8, 16}};
  const auto f = fit_power_law(exact);
  EXPECT_NEAR(f.exponent, 1.0, 1e-14);
  EXPECT_NEAR(f.coefficient, 2.0, 1e-13);
  EXPECT_NEAR(f.residual, 0.0, 1e-14);
  EXPECT_EQ(f.n_points, 3u);

  std::mt19937_64 rng(2);
  std::normal_distribution<double> nd(0.0, 0.02);
  std::vector<std::pair<double, double>> noisy;
  for (int i = 0; i < 12; ++i) {
    const double x = std::exp2(i);
    noisy.emplace_back(x, 5.0 * std::pow(x, -1.0 / 3.0) * std::exp(nd(rng)));
  }
  EXPECT_NEAR(fit_power_law(noisy).exponent, -1.0 / 3.0, 0.02);
}

TEST(PowerLaw, RejectsDegenerateInput) {
  std::vector<std::pair<double, double>> two{{1, 1}, {2, 2}};
  EXPECT_THROW(fit_power_law(two), ConfigError);
  std::vector<std::pair<double, double>> same_x{{2, 1}, {2, 2}, {2, 3}};
  EXPECT_THROW(fit_power_law(same_x), DegenerateInputError);
  std::vector<std::pair<double, double>> negative{{1, 1}, {2, -2}, {3, 3}};
  EXPECT_THROW(fit_power_law(negative), DegenerateInputError);
}

TEST(LerpReport, InitialWeightsFollowPlannedDepthScaling) {
  std::vector<NgptWeights> models;
  std::vector<double> inits;
  for (int L : {2, 4, 8}) {
    const ShapeSpec t{static_cast<double>(L), 16, 100};
    const auto p = plan(Scheme::NuGPT, {2, 16, 100}, t, 0.01);
    inits.push_back(p.alpha_A_init);
    models.push_back(init_weights(ModelConfig::make(L, 2, 8, 32, 8), 1, p));
  }
  std::vector<const NgptWeights*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  const auto r = lerp_magnitude_report(ptrs);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_NEAR(r.rows[0].mean_alpha_a, inits[0], 1e-15);
  EXPECT_NEAR(r.rows[0].std_alpha_a, 0.0, 1e-15);
  EXPECT_NEAR(r.fit_alpha_a.exponent, std::log(inits[2] / inits[0]) / std::log(4.0), 1e-12);
  const auto csv = lerp_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kLerpCsvHeader);
}

TEST(LerpReport, SyntheticInverseRootDepth) {
  std::vector<NgptWeights> models;
  const auto p = plan(Scheme::NuGPT, {2, 16, 100}, {2, 16, 100}, 0.01);
  for (int L : {2, 4, 8, 16}) {
    auto w = init_weights(ModelConfig::make(L, 2, 8, 32, 8), 2, p);
    for (auto& lp : w.layers) {
      for (auto idx : {lp.alpha_a, lp.alpha_m}) {
        const auto& rs = *w[idx].rescaler;
        for (auto& v : w[idx].value.data()) v = 0.3 * std::pow(L, -0.5) / rs.gain();
      }
    }
    models.push_back(std::move(w));
  }
  std::vector<const NgptWeights*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  const auto r = lerp_magnitude_report(ptrs);
  EXPECT_NEAR(r.fit_alpha_a.exponent, -0.5, 1e-12);
  EXPECT_NEAR(r.fit_alpha_m.exponent, -0.5, 1e-12);
  EXPECT_NEAR(r.fit_alpha_m.coefficient, 0.3, 1e-12);
}

TEST(LerpReport, NeedsThreeDepths) {
  const auto p = plan(Scheme::NuGPT, {2, 16, 100}, {2, 16, 100}, 0.01);
  const auto a = init_weights(ModelConfig::make(2, 2, 8, 32, 8), 1, p);
  const auto b = init_weights(ModelConfig::make(2, 2, 8, 32, 8), 2, p);
  EXPECT_THROW(lerp_magnitude_report(std::vector<const NgptWeights*>{&a, &b, &a}), ConfigError);
  EXPECT_THROW(lerp_magnitude_report(std::vector<fs::path>{"/nonexistent/a.ckpt"}), IoError);
}

TEST(Plot, SvgStructure) {
  std::vector<PlotCurve> curves{{"nugpt <L2>", {{0.25, 3.0}, {0.5, 2.0}, {1.0, 2.5}}},
                                {"sp", {{0.125, 4.0}, {0.5, std::nan("")}, {2.0, 3.5}}}};
  const auto svg = render_plot(curves);
  EXPECT_TRUE(svg.starts_with("<?xml") || svg.starts_with("<svg"));
  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (auto p = svg.find(needle); p != std::string::npos; p = svg.find(needle, p + 1)) ++n;
    return n;
  };
  EXPECT_EQ(count("<polyline"), 2u);
  EXPECT_EQ(count("<svg"), 1u);
  EXPECT_EQ(count("</svg>"), 1u);
  EXPECT_EQ(count("<circle"), 2u);
  EXPECT_NE(svg.find("nugpt &lt;L2&gt; (2)"), std::string::npos);
  EXPECT_NE(svg.find("data-x-min=\"0.125\""), std::string::npos);
  EXPECT_NE(svg.find("data-x-max=\"2\""), std::string::npos);
  EXPECT_NE(svg.find("data-y-min=\"2\""), std::string::npos);
  EXPECT_NE(svg.find("data-y-max=\"4\""), std::string::npos);
  EXPECT_THROW(render_plot({}), ConfigError);
  EXPECT_THROW(emit_plot(curves, "/nonexistent/dir/p.svg"), IoError);
}
