#pragma once

#include <span>
#include <utility>

namespace ngpt {

/// y ~ coefficient * x^exponent, fitted by least squares in log-log space.
struct PowerLawFit {
  double coefficient = 0;
  double exponent = 0;
  double residual = 0;  // RMS of log-space residuals
  std::size_t n_points = 0;
};

/// Needs >= 3 points, all coordinates positive, and at least two distinct x.
PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points);

}  // namespace ngpt
