#pragma once

#include <cmath>
#include <numbers>

namespace verf {

// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// P(|X| <= x) for X ~ N(0, sigma^2), x >= 0.
inline double folded_normal_cdf(double x, double sigma) {
  return std::erf(x / (sigma * std::numbers::sqrt2));
}

}  // namespace verf
