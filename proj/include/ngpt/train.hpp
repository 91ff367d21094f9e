#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ngpt/data.hpp"
#include "ngpt/model.hpp"
#include "ngpt/optimizer.hpp"
#include "ngpt/parameterization.hpp"

namespace ngpt {

/// Model shape as swept: width grows through n_heads at fixed d_key.
struct RunShape {
  int n_layers = 2;
  int n_heads = 2;
  int iters = 200;

  std::string id() const;  // "L2_H2_T200"
  bool operator==(const RunShape&) const = default;
};

/// "2x2x200" -> {2, 2, 200}.
RunShape parse_shape(std::string_view s);

struct TrainSettings {
  int d_key = 8;
  int mlp_ratio = 4;
  int vocab = 256;
  int batch_size = 8;
  int seq_len = 64;
  double rotary_base = 10000.0;
  double ema_beta = 0.95;
  int val_batches = 2;
  OptimMode mode = OptimMode::Adam;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-16;
  bool wraparound = true;

  void validate() const;
};

ModelConfig model_config_for(const RunShape& shape, const TrainSettings& s);
ShapeSpec shape_spec(const RunShape& shape, int d_key);

/// Validation cadence: every max(1, total / 100) steps.
int eval_interval(int total_steps);

/// ceil(ratio * non_embedding / (batch * seq)), rounded up to a multiple of 250.
std::int64_t steps_for_tokens_per_param(double non_embedding_params, double ratio, int batch, int seq);
std::int64_t steps_for_tokens_per_param(const ModelConfig& model, double ratio, int batch, int seq);

struct SweepResult {
  std::string shape_id;
  double lr = 0;
  std::uint64_t seed = 0;
  double final_val_loss_ema = 0;
  bool diverged = false;

  bool operator==(const SweepResult& o) const;  // NaN losses compare equal
};

struct EvalPoint {
  int step = 0;
  double train_loss = 0;  // NaN at step 0
  double val_loss = 0;
  double val_loss_ema = 0;
};

struct TrainOutcome {
  SweepResult result;
  double initial_val_loss = 0;
  std::vector<EvalPoint> history;
  std::optional<NgptWeights> weights;  // final weights unless diverged mid-step
  double max_weight_norm_deviation = 0;  // worst post-renormalization deviation seen
  double max_hidden_norm_deviation = 0;  // worst residual-state deviation seen on validation
};

struct TrainHooks {
  /// Called with the renormalized weights before every optimizer step.
  std::function<void(int step, const NgptWeights&)> on_step;
  /// When set, the renormalized final weights are written here.
  std::optional<std::filesystem::path> checkpoint;
  /// Track weight and residual norm deviations (extra forward traces).
  bool track_norms = false;
};

/// renormalize -> forward -> loss -> backward -> step, for shape.iters
/// steps. Validation on a fixed slice of the held-out tokens, EMA seeded with
/// the step-0 measurement. A NaN loss or an EMA above twice the initial loss
/// ends the run as diverged.
TrainOutcome train_run(const Corpus& corpus, const RunShape& shape, const HPPlan& plan, const TrainSettings& s,
                       std::uint64_t seed, const TrainHooks& hooks = {});

inline constexpr const char* kHistoryCsvHeader = "step,train_loss,val_loss,val_loss_ema";
std::string history_csv(const std::vector<EvalPoint>& h);

}  // namespace ngpt
