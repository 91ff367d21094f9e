#pragma once

// Weight/activation alignment exponents. For a linear map W [d_out x d_in]
// acting on h, the exponent x solves
//
//   |W h| / sqrt(d_out) = d_in^x * (|W|_F / sqrt(d_out d_in)) * (|h| / sqrt(d_in))
//
// so x = 1/2 for statistically independent factors and x = 1 for a rank-one
// W whose rows are parallel to h. alpha pairs (dW, h), omega (W, dh) and
// nu (dW, dh), where d denotes the change since initialization.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ngpt/model.hpp"
#include "ngpt/tensor.hpp"

namespace ngpt {

enum class WeightClass { hidden, output };
std::string_view to_string(WeightClass c);

struct AlignmentRecord {
  std::int64_t step = 0;
  int layer = 0;  // -1 for E_output
  WeightClass weight_class = WeightClass::hidden;
  std::string matrix;  // parameter name, informational
  std::optional<double> alpha, omega, nu;
  double loss_decrease = 0;
};

/// Relative tolerance below which a factor counts as vanished.
inline constexpr double kAlignmentTolerance = 1e-12;

/// x from the display above. Throws DegenerateInputError on nonpositive
/// inputs or d_in < 2.
double exponent(double product_norm, double left_factor_rms, double right_factor_rms, std::size_t d_in,
                std::size_t d_out);

/// Exponent of the pair (m, x) computed from the raw objects; nullopt when a
/// factor or the product is below tolerance.
std::optional<double> pair_exponent(const Tensor& m, std::span<const double> x,
                                    double tolerance = kAlignmentTolerance);

/// Token-mean exponent over the rows of `xs` (one token per row).
std::optional<double> mean_pair_exponent(const Tensor& m, const Tensor& xs,
                                         double tolerance = kAlignmentTolerance);

/// Weights at initialization and at step t; activations are recomputed on
/// the probe batch.
struct SnapshotPair {
  const NgptWeights* initial = nullptr;
  const NgptWeights* current = nullptr;
  std::int64_t step = 0;
  double loss_decrease = 0;
};

/// One record per hidden matrix per layer plus one for E_output.
std::vector<AlignmentRecord> probe_model(const SnapshotPair& pair, std::span<const std::vector<int>> batch);

/// Same as probe_model, from activations already captured (one trace per
/// batch sequence, for each snapshot).
std::vector<AlignmentRecord> probe_from_traces(const NgptWeights& initial, const NgptWeights& current,
                                               std::span<const ForwardTrace> traces0,
                                               std::span<const ForwardTrace> traces_t, std::int64_t step,
                                               double loss_decrease);

/// Steps in (0, total) at which to probe: multiples of `every` when it is
/// positive, otherwise powers of two (1, 2, 4, ...).
std::vector<std::int64_t> snapshot_steps(std::int64_t total, std::int64_t every = 0);

enum class Weighting { uniform_over_steps, by_loss_decrease };

struct ExponentSummary {
  std::optional<double> alpha, omega, nu;
  std::size_t n_records = 0;
};

/// Weighted mean per weight class. Loss-decrease weights are clipped at 0.
std::map<WeightClass, ExponentSummary> aggregate(std::span<const AlignmentRecord> records, Weighting weighting);

/// Mean over layers per (step, class): the per-step curves of the probe.
std::vector<AlignmentRecord> average_over_layers(std::span<const AlignmentRecord> records);

inline constexpr const char* kAlignmentCsvHeader = "step,layer,weight_class,alpha,omega,nu,loss_decrease";
std::string alignment_csv(std::span<const AlignmentRecord> records);
void write_alignment_csv(const std::filesystem::path& path, std::span<const AlignmentRecord> records);

}  // namespace ngpt
