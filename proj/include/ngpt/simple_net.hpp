#pragma once

// A stripped-down normalized network used to check how single-step updates
// scale with width N and depth L under sign updates:
//
//   h^1 = E_in x,  h^{l+1} = Norm((1 - L^-a) h^l + L^-a Norm(W^l h^l)),
//   z = E_out h^L
//
// with unit columns of E_in and unit rows of W^l and E_out.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ngpt/powerlaw.hpp"
#include "ngpt/tensor.hpp"

namespace ngpt {

struct SimpleNetConfig {
  int N = 64;
  int L = 4;
  int V = 64;
  double alpha_depth = 1.0;
  double eta_input = 0.0;
  double eta_hidden = 1e-3;
  double eta_output = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  double residual_rate() const;  // L^-alpha_depth
};

struct SimpleNetState {
  Tensor e_input;          // [N x V], unit columns
  std::vector<Tensor> w;   // L - 1 matrices [N x N], unit rows
  Tensor e_output;         // [V x N], unit rows

  static SimpleNetState init(const SimpleNetConfig& c);
  void renormalize();
  double max_norm_deviation() const;
};

struct SimpleForward {
  std::vector<Tensor> hidden;  // h^1 .. h^L, each a vector of length N
  Tensor logits;               // length V
};

SimpleForward simple_forward(const SimpleNetState& s, const SimpleNetConfig& c, int x);

struct SimpleStepReport {
  double loss = 0;
  double input_update = 0;              // |dE_in x|
  double output_update_fro = 0;         // |dE_out|_F
  std::vector<double> weight_update_fro;  // |dW^l|_F, raw sign update
  std::vector<double> weight_times_h;     // |dW^l h^l|
  std::vector<double> hidden_update;      // |dh^l| after the renormalized step, l = 1..L
  double mean_alignment = 0;            // token exponent of (dW^l, h^l), mean over layers; 0 if L = 1
};

/// One sign-gradient step on cross-entropy against `target`: renormalize,
/// forward, backward, w -= eta * sign(g) with sign(0) = 0, renormalize, and
/// re-run the forward pass to measure the hidden-state change.
SimpleStepReport simple_signgd_step(SimpleNetState& s, const SimpleNetConfig& c, int x, int target);

enum class EtaRule {
  constant,       // eta_hidden = c
  inverse_width,  // eta_hidden = c / N
  depth_corrected  // eta_hidden = c * L^(alpha - 1) / N
};
std::string_view to_string(EtaRule r);
EtaRule parse_eta_rule(std::string_view s);
double hidden_lr(EtaRule rule, double coeff, int N, int L, double alpha_depth);

struct DepthGrid {
  std::vector<int> widths{256};
  std::vector<int> depths{8, 16, 32, 64};
  std::vector<double> alphas{0.5, 1.0};
  EtaRule rule = EtaRule::inverse_width;
  double eta_coeff = 0.01;
  int vocab = 64;
  int trials = 4;
  std::uint64_t seed = 0;
  unsigned workers = 1;

  void validate() const;
};

struct DepthCell {
  int N = 0, L = 0;
  double alpha_depth = 0;
  double eta_hidden = 0;
  double update_norm = 0;  // trial mean of |dh^L|
  double alignment = 0;    // trial mean of the (dW, h) exponent
};

struct DepthSlope {
  double alpha_depth = 0;
  enum class Axis { depth, width } axis = Axis::depth;
  int fixed = 0;  // the N (depth axis) or L (width axis) held fixed
  PowerLawFit fit;
};

struct DepthScalingResult {
  std::vector<DepthCell> cells;
  std::vector<DepthSlope> slopes;  // only for axes with >= 3 grid points
};

/// Runs every grid cell (in parallel, with per-cell seeds) and fits log-log
/// slopes of |dh^L| in L and in N.
DepthScalingResult depth_scaling_experiment(const DepthGrid& grid);

inline constexpr const char* kDepthCsvHeader =
    "N,L,alpha_depth,eta_hidden,update_norm,alignment,slope_L,slope_N";
std::string depth_csv(const DepthScalingResult& r);
void write_depth_csv(const std::filesystem::path& path, const DepthScalingResult& r);

}  // namespace ngpt
