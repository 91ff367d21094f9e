#include "ngpt/powerlaw.hpp"

#include <cmath>
#include <string>

#include "ngpt/errors.hpp"

namespace ngpt {

PowerLawFit fit_power_law(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) {
    throw ConfigError("power-law fit needs at least 3 points, got " + std::to_string(points.size()));
  }
  double mx = 0, my = 0;
  for (const auto& [x, y] : points) {
    if (!(x > 0) || !(y > 0) || !std::isfinite(x) || !std::isfinite(y)) {
      throw DegenerateInputError("power-law fit needs finite positive points");
    }
    mx += std::log(x);
    my += std::log(y);
  }
  const double n = static_cast<double>(points.size());
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (const auto& [x, y] : points) {
    const double dx = std::log(x) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y) - my);
  }
  if (!(sxx > 0)) throw DegenerateInputError("power-law fit needs at least two distinct x values");
  PowerLawFit f;
  f.exponent = sxy / sxx;
  const double intercept = my - f.exponent * mx;
  f.coefficient = std::exp(intercept);
  double ss = 0;
  for (const auto& [x, y] : points) {
    const double r = std::log(y) - (intercept + f.exponent * std::log(x));
    ss += r * r;
  }
  f.residual = std::sqrt(ss / n);
  f.n_points = points.size();
  return f;
}

}  // namespace ngpt
