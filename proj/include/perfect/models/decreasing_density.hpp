#pragma once

#include <cmath>
#include <functional>

#include "perfect/errors.hpp"

namespace perfect::models {

// Strictly decreasing unnormalized density on (0, c) with closed-form
// inverse, so every superlevel set A(u) = {y : f(y) >= u} is (0, upper(u)).
struct DecreasingDensity {
  std::function<double(double)> f;
  std::function<double(double)> f_inv;
  double c = 1.0;

  double upper(double u) const {
    if (u <= f(c)) return c;
    if (u > f(0.0)) return 0.0;
    return f_inv(u);
  }

  // Largest |f_inv(f(y)) - y| over an even grid of the support.
  double inverse_error(int points = 1000) const {
    double worst = 0.0;
    for (int i = 1; i < points; ++i) {
      const double y = c * i / points;
      worst = std::max(worst, std::abs(f_inv(f(y)) - y));
    }
    return worst;
  }
};

// e^{-y} on (0, c).
inline DecreasingDensity truncated_exponential(double c = 3.0) {
  if (!(c > 0.0)) throw ConfigError("decreasing density: support bound must be > 0");
  return {[](double y) { return std::exp(-y); }, [](double u) { return -std::log(u); }, c};
}

}  // namespace perfect::models
