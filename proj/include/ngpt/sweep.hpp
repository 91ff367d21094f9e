#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ngpt/parameterization.hpp"
#include "ngpt/train.hpp"

namespace ngpt {

/// Peaks 2^lo, 2^(lo+step), ..., up to 2^hi inclusive.
std::vector<double> log2_grid(double lo, double hi, double step = 1.0);

struct SweepConfig {
  Scheme scheme = Scheme::NuGPT;
  RunShape base{2, 2, 200};
  std::vector<RunShape> targets{{2, 2, 200}};
  std::vector<double> lr_grid = log2_grid(-12, -4);
  std::vector<std::uint64_t> seeds{0};
  /// When positive, each target's iteration count is replaced by the
  /// tokens-per-parameter budget.
  double tokens_per_param = 0;
  TrainSettings train{};
  PlanOptions plan_options{};
  std::filesystem::path corpus;
  double val_fraction = 0.1;
  std::filesystem::path output_dir = "sweep_out";
  unsigned workers = 1;

  void validate() const;
  /// Targets with the tokens-per-parameter budget applied.
  std::vector<RunShape> resolved_targets() const;
};

/// (shape, lr, seed) -> result; lets tests inject synthetic losses.
using Trainer = std::function<SweepResult(const RunShape& shape, double lr, std::uint64_t seed)>;

/// Trainer that runs train_run on `corpus` with the config's scheme and
/// settings. The corpus must outlive the trainer.
Trainer default_trainer(const SweepConfig& config, const Corpus& corpus);

struct ShapeOptimum {
  std::string shape_id;
  std::optional<double> lr;  // empty when every lr diverged
  double loss = 0;           // seed-mean loss at the optimum
};

struct SweepReport {
  std::vector<SweepResult> results;  // ordered by (target, lr, seed)
  std::vector<ShapeOptimum> optima;  // one per target, in target order
};

/// Runs the full (target x lr x seed) grid on a bounded worker pool.
SweepReport lr_sweep(const SweepConfig& config, const Trainer& trainer);

/// Argmin over lrs of the seed-mean final loss; an lr at which any seed
/// diverged is excluded. Ties go to the smaller lr.
std::vector<ShapeOptimum> select_optima(const std::vector<SweepResult>& results,
                                        const std::vector<std::string>& shape_order);

inline constexpr const char* kSweepCsvHeader = "shape_id,lr,seed,final_val_loss_ema,diverged";
inline constexpr const char* kOptimaCsvHeader = "shape_id,optimal_lr,best_loss";
std::string sweep_csv(const std::vector<SweepResult>& results);
std::vector<SweepResult> parse_sweep_csv(std::string_view text);
std::string optima_csv(const std::vector<ShapeOptimum>& optima);

/// Loads the corpus, runs the sweep and writes sweep.csv, optima.csv and
/// sweep.svg into config.output_dir.
SweepReport run_sweep(const SweepConfig& config);

// ---- configuration files ----------------------------------------------------

/// "[section]" headers (dots allowed for nesting) and "key = value" lines;
/// '#' starts a comment. Returns flattened "section.key" entries.
std::map<std::string, std::string> parse_config_text(std::string_view text);
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// Applies flattened entries; unknown keys throw ConfigError.
void apply_config(SweepConfig& config, const std::map<std::string, std::string>& entries);

/// "section.key=value" override, as given on the command line.
std::pair<std::string, std::string> parse_override(std::string_view s);

/// Every recognized key with its current value, in a stable order.
std::string describe_config(const SweepConfig& config);

}  // namespace ngpt
