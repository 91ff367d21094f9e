#pragma once

// Per-parameter-group learning rates and rescaler constants for transferring
// hyperparameters from a tuned base shape to a target shape.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ngpt {

/// depth = n_layers, width = d_model, iters = optimizer steps.
struct ShapeSpec {
  double depth = 1;
  double width = 1;
  double iters = 1;
};

enum class Scheme { BaselineNgpt, DepthMuP, CompleteP, NuGPT, NuGPTFullAlign };

std::string_view to_string(Scheme s);
Scheme parse_scheme(std::string_view name);
const std::vector<Scheme>& all_schemes();

struct Multipliers {
  double data = 1;
  double width = 1;
  double depth = 1;
};

/// Extra constant factors on eta_input / eta_output tuned on the base model.
struct TunedRatios {
  double input = 1;
  double output = 1;
};

/// Tuned ratios of the reference nuGPT runs (output learning rate halved).
TunedRatios reference_tuned_defaults();
/// Tuned ratios used for the CompleteP comparison (output scaled by 2^-1.5).
TunedRatios completep_tuned_defaults();

struct PlanOptions {
  TunedRatios ratios{};
  /// Apply eta_base *= m_data^(-data_exponent). Unset means "on for the
  /// nuGPT variants, off otherwise".
  std::optional<bool> data_correction{};
  double data_exponent = 1.0 / 3.0;
};

struct HPPlan {
  Scheme scheme = Scheme::NuGPT;
  double eta_global = 0;
  double eta_base = 0;
  double eta_input = 0;
  double eta_hidden = 0;
  double eta_output = 0;
  double eta_rescaler = 0;

  double alpha_A_init = 0;
  double alpha_A_scale = 0;
  double alpha_M_init = 0;
  double alpha_M_scale = 0;
  double s_qk_init = 0;
  double s_qk_scale = 0;
  double s_u_init = 0;
  double s_u_scale = 0;
  double s_nu_init = 0;
  double s_nu_scale = 0;
  double s_z_init = 0;
  double s_z_scale = 0;

  double m_data = 1;
  double m_width = 1;
  double m_depth = 1;
  double tuned_ratio_input = 1;
  double tuned_ratio_output = 1;
  bool data_correction = false;
};

Multipliers multipliers(const ShapeSpec& base, const ShapeSpec& target);

HPPlan plan(Scheme scheme, const ShapeSpec& base, const ShapeSpec& target, double eta_global,
            const PlanOptions& options = {});

/// Ordered (key, value) rows of a plan; the key names are the stable
/// external vocabulary of the `plan` subcommand.
std::vector<std::pair<std::string, double>> plan_entries(const HPPlan& p);
std::string plan_to_kv(const HPPlan& p);
std::string plan_to_json(const HPPlan& p);

}  // namespace ngpt
