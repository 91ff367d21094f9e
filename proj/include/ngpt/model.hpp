#pragma once

// The normalized transformer: unit-norm residual stream, LERP residual
// updates with trainable per-component rates, normalized queries and keys,
// and a rescaled unembedding.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ngpt/autodiff.hpp"
#include "ngpt/parameterization.hpp"
#include "ngpt/tensor.hpp"

namespace ngpt {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 2;
  int d_key = 8;
  int d_model = 16;  // n_heads * d_key
  int d_mlp = 64;
  int vocab = 256;
  int seq_len = 64;
  double rotary_base = 10000.0;

  /// d_model = n_heads * d_key and d_mlp = mlp_ratio * d_model.
  static ModelConfig make(int n_layers, int n_heads, int d_key, int vocab, int seq_len,
                          int mlp_ratio = 4);
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

enum class ParamGroup { input, hidden, output, rescaler };
std::string_view to_string(ParamGroup g);

/// Which slices of a matrix are kept at unit norm.
enum class NormAxis { none, rows, columns };

/// Trainable componentwise gain; the effective value is (init / scale) * raw,
/// with raw filled with `scale` at initialization.
struct Rescaler {
  double init = 1;
  double scale = 1;
  bool nonnegative = false;
  double gain() const { return init / scale; }
};

struct Param {
  std::string name;
  Tensor value;
  ParamGroup group = ParamGroup::hidden;
  NormAxis axis = NormAxis::none;
  std::optional<Rescaler> rescaler;
};

struct HeadParams {
  std::size_t w_q, w_k, w_v, s_qk;
};

struct LayerParams {
  std::vector<HeadParams> heads;
  std::size_t w_o, w_u, w_nu, w_omlp;
  std::size_t alpha_a, alpha_m, s_u, s_nu;
};

class NgptWeights {
 public:
  ModelConfig config;
  std::vector<Param> params;
  std::size_t e_input = 0, e_output = 0, s_z = 0;
  std::vector<LayerParams> layers;

  Param& operator[](std::size_t i) { return params[i]; }
  const Param& operator[](std::size_t i) const { return params[i]; }
  const Param& find(std::string_view name) const;
  Param& find(std::string_view name);

  /// Effective value (init/scale) * raw of a rescaler parameter.
  Tensor effective(std::size_t i) const;

  bool operator==(const NgptWeights& o) const;
};

/// Parameter table (names, shapes, groups, axes, rescaler constants) with
/// zero-filled values.
NgptWeights make_layout(const ModelConfig& config, const HPPlan& plan);

/// Gaussian matrices (unit variance) followed by renormalize_weights;
/// rescaler raw vectors filled with their scale constants.
NgptWeights init_weights(const ModelConfig& config, std::uint64_t seed, const HPPlan& plan);

/// Restores the unit-norm invariant on every normalized matrix.
void renormalize_weights(NgptWeights& w);

/// Largest |norm - 1| over all designated rows/columns.
double max_norm_deviation(const NgptWeights& w);

std::size_t non_embedding_param_count(const ModelConfig& config);

// ---- forward --------------------------------------------------------------

struct LayerTrace {
  Tensor attn_in;       // h^l, input to W_q/W_k/W_v
  Tensor heads_concat;  // input to W_O
  Tensor attn_mid;      // h^{l+0.5}, input to W_u/W_nu
  Tensor mlp_hidden;    // SiLU(nu) * u, input to W_oMLP
  Tensor mlp_nu;        // nu pre-activation
  Tensor mlp_out;       // MLP(h) before Norm
  std::vector<Tensor> head_scores;  // sqrt(d_key) q'^T k' per head (causal part meaningful)
};

/// Values captured during one forward pass on one sequence.
struct ForwardTrace {
  std::vector<Tensor> residual;  // h^1, h^1.5, h^2, ..., h^{L+1}
  std::vector<LayerTrace> layers;
  Tensor final_hidden;  // input to E_output
  Tensor logits;
};

/// Leaf variables for every parameter, index-aligned with NgptWeights::params.
struct BoundParams {
  std::vector<ad::Var> vars;
};

BoundParams bind(ad::Graph& g, const NgptWeights& w, bool requires_grad = true);

/// Effective rescaler value as a graph expression.
ad::Var effective(ad::Graph& g, const NgptWeights& w, const BoundParams& b, std::size_t i);

/// Attention(h) for one layer, before the output Norm.
ad::Var attention_block(ad::Graph& g, const NgptWeights& w, const BoundParams& b, int layer, ad::Var h,
                        LayerTrace* trace = nullptr);

/// MLP(h) for one layer, before the output Norm.
ad::Var mlp_block(ad::Graph& g, const NgptWeights& w, const BoundParams& b, int layer, ad::Var h,
                  LayerTrace* trace = nullptr);

/// Logits [seq x vocab] for one token sequence.
ad::Var forward(ad::Graph& g, const NgptWeights& w, const BoundParams& b, std::span<const int> tokens,
                ForwardTrace* trace = nullptr);

/// Mean cross-entropy over a batch of (inputs, targets) sequences.
ad::Var batch_loss(ad::Graph& g, const NgptWeights& w, const BoundParams& b,
                   std::span<const std::vector<int>> inputs, std::span<const std::vector<int>> targets);

/// Standalone evaluation without gradients.
Tensor forward_logits(const NgptWeights& w, std::span<const int> tokens, ForwardTrace* trace = nullptr);
double evaluate_loss(const NgptWeights& w, std::span<const std::vector<int>> inputs,
                     std::span<const std::vector<int>> targets);

// ---- checkpoint -----------------------------------------------------------

/// Binary container, all integers and floats little-endian:
///   "NGPTCKPT" | u32 version | 7 x i32 config + f64 rotary_base | u64 step |
///   f64 val_loss | u32 tensor count | per tensor: u32 name length, name,
///   u8 group, u8 axis, u8 flags (bit0 rescaler, bit1 nonnegative),
///   f64 rescaler init, f64 rescaler scale, u32 rank, u64 extents, f64 data.
struct Checkpoint {
  NgptWeights weights;
  std::uint64_t step = 0;
  double val_loss = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const NgptWeights& w, std::uint64_t step = 0,
                     double val_loss = 0);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ngpt
