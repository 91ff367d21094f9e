#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ngpt/model.hpp"
#include "ngpt/powerlaw.hpp"

namespace ngpt {

struct LerpRow {
  int depth = 0;
  double mean_alpha_a = 0, std_alpha_a = 0;
  double mean_alpha_m = 0, std_alpha_m = 0;
};

struct LerpReport {
  std::vector<LerpRow> rows;  // sorted by depth
  PowerLawFit fit_alpha_a;
  PowerLawFit fit_alpha_m;
};

/// Mean and standard deviation of the effective alpha_A / alpha_M components
/// over all blocks, per model, and their power-law fits in depth (>= 3
/// distinct depths).
LerpReport lerp_magnitude_report(const std::vector<const NgptWeights*>& models);
LerpReport lerp_magnitude_report(const std::vector<std::filesystem::path>& checkpoints);

inline constexpr const char* kLerpCsvHeader = "depth,mean_alpha_A,std_alpha_A,mean_alpha_M,std_alpha_M";
std::string lerp_csv(const LerpReport& r);

struct PlotCurve {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (lr, loss); non-finite losses are skipped
};

/// Standalone SVG: log2-scaled x axis, one polyline per curve, a marker at
/// each curve's minimum and the best loss in parentheses in the legend.
std::string render_plot(const std::vector<PlotCurve>& curves, const std::string& title = "final loss vs peak lr");
void emit_plot(const std::vector<PlotCurve>& curves, const std::filesystem::path& path,
               const std::string& title = "final loss vs peak lr");

}  // namespace ngpt
