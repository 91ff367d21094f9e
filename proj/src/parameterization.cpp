#include "ngpt/parameterization.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "ngpt/errors.hpp"

namespace ngpt {

namespace {

constexpr double kLerpInit = 0.05;
constexpr double kScaleConstant = 0.03;

bool is_nugpt(Scheme s) { return s == Scheme::NuGPT || s == Scheme::NuGPTFullAlign; }

void require_shape(const ShapeSpec& s, const char* which) {
  if (!(s.depth > 0) || !(s.width > 0) || !(s.iters > 0)) {
    throw ConfigError(std::string(which) + " shape needs positive depth, width and iters");
  }
}

}  // namespace

std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::BaselineNgpt: return "baseline";
    case Scheme::DepthMuP: return "depth-mup";
    case Scheme::CompleteP: return "completep";
    case Scheme::NuGPT: return "nugpt";
    case Scheme::NuGPTFullAlign: return "nugpt-full-align";
  }
  return "?";
}

Scheme parse_scheme(std::string_view name) {
  for (auto s : all_schemes()) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown scheme '" + std::string(name) +
                    "' (expected baseline, depth-mup, completep, nugpt, nugpt-full-align)");
}

const std::vector<Scheme>& all_schemes() {
  static const std::vector<Scheme> v{Scheme::BaselineNgpt, Scheme::DepthMuP, Scheme::CompleteP,
                                     Scheme::NuGPT, Scheme::NuGPTFullAlign};
  return v;
}

TunedRatios reference_tuned_defaults() { return {1.0, 0.5}; }
TunedRatios completep_tuned_defaults() { return {1.0, std::pow(2.0, -1.5)}; }

Multipliers multipliers(const ShapeSpec& base, const ShapeSpec& target) {
  if (base.depth == 0 || base.width == 0 || base.iters == 0) {
    throw ConfigError("base shape has a zero dimension");
  }
  require_shape(base, "base");
  require_shape(target, "target");
  return {target.iters / base.iters, target.width / base.width, target.depth / base.depth};
}

HPPlan plan(Scheme scheme, const ShapeSpec& base, const ShapeSpec& target, double eta_global,
            const PlanOptions& options) {
  if (!(eta_global > 0)) throw ConfigError("eta_global must be positive");
  if (!(options.ratios.input > 0) || !(options.ratios.output > 0)) {
    throw ConfigError("tuned ratios must be positive");
  }
  const auto m = multipliers(base, target);

  HPPlan p;
  p.scheme = scheme;
  p.eta_global = eta_global;
  p.m_data = m.data;
  p.m_width = m.width;
  p.m_depth = m.depth;
  p.tuned_ratio_input = options.ratios.input;
  p.tuned_ratio_output = options.ratios.output;
  p.data_correction = options.data_correction.value_or(is_nugpt(scheme));

  p.eta_base = eta_global * (p.data_correction ? std::pow(m.data, -options.data_exponent) : 1.0);

  double input_pow = -0.5, hidden_width_pow = 0, hidden_depth_pow = 0, output_pow = 0;
  double lerp_depth_pow = -1.0;
  switch (scheme) {
    case Scheme::BaselineNgpt:
      input_pow = 0;
      lerp_depth_pow = 0;
      break;
    case Scheme::DepthMuP:
      hidden_width_pow = -1.0;
      hidden_depth_pow = -0.5;
      output_pow = -0.5;
      lerp_depth_pow = -0.5;
      break;
    case Scheme::CompleteP:
      hidden_width_pow = -1.0;
      output_pow = -0.5;
      break;
    case Scheme::NuGPT:
      hidden_width_pow = -0.75;
      output_pow = -0.75;
      break;
    case Scheme::NuGPTFullAlign:
      hidden_width_pow = -1.0;
      output_pow = -1.0;
      break;
  }

  p.eta_input = p.eta_base * std::pow(m.width, input_pow) * options.ratios.input;
  p.eta_hidden = p.eta_base * std::pow(m.width, hidden_width_pow) * std::pow(m.depth, hidden_depth_pow);
  p.eta_output = p.eta_base * std::pow(m.width, output_pow) * options.ratios.output;
  p.eta_rescaler = p.eta_base;

  p.alpha_A_init = kLerpInit * std::pow(m.depth, lerp_depth_pow);
  p.alpha_M_init = p.alpha_A_init;

  // Baseline ties the scale constants to the (target) width.
  const double scale_const =
      scheme == Scheme::BaselineNgpt ? 1.0 / std::sqrt(target.width) : kScaleConstant;
  p.alpha_A_scale = p.alpha_M_scale = p.s_qk_scale = p.s_z_scale = scale_const;
  p.s_qk_init = 1.0;
  p.s_u_init = p.s_u_scale = p.s_nu_init = p.s_nu_scale = 1.0;
  p.s_z_init = is_nugpt(scheme) ? std::sqrt(m.width) : 1.0;
  return p;
}

std::vector<std::pair<std::string, double>> plan_entries(const HPPlan& p) {
  return {
      {"eta_global", p.eta_global},
      {"eta_base", p.eta_base},
      {"eta_input", p.eta_input},
      {"eta_hidden", p.eta_hidden},
      {"eta_output", p.eta_output},
      {"eta_rescaler", p.eta_rescaler},
      {"alpha_A_init", p.alpha_A_init},
      {"alpha_A_scale", p.alpha_A_scale},
      {"alpha_M_init", p.alpha_M_init},
      {"alpha_M_scale", p.alpha_M_scale},
      {"s_qk_init", p.s_qk_init},
      {"s_qk_scale", p.s_qk_scale},
      {"s_u_init", p.s_u_init},
      {"s_u_scale", p.s_u_scale},
      {"s_nu_init", p.s_nu_init},
      {"s_nu_scale", p.s_nu_scale},
      {"s_z_init", p.s_z_init},
      {"s_z_scale", p.s_z_scale},
      {"m_data", p.m_data},
      {"m_width", p.m_width},
      {"m_depth", p.m_depth},
      {"tuned_ratio_input", p.tuned_ratio_input},
      {"tuned_ratio_output", p.tuned_ratio_output},
  };
}

std::string plan_to_kv(const HPPlan& p) {
  std::ostringstream os;
  os.precision(17);
  os << "scheme=" << to_string(p.scheme) << '\n';
  os << "data_correction=" << (p.data_correction ? "true" : "false") << '\n';
  for (const auto& [k, v] : plan_entries(p)) os << k << '=' << v << '\n';
  return os.str();
}

std::string plan_to_json(const HPPlan& p) {
  nlohmann::ordered_json j;
  j["scheme"] = std::string(to_string(p.scheme));
  j["data_correction"] = p.data_correction;
  for (const auto& [k, v] : plan_entries(p)) j[k] = v;
  return j.dump(2);
}

}  // namespace ngpt
