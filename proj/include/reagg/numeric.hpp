#pragma once

#include <cmath>

namespace reagg {

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline double logistic(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

// Reentrant lgamma; std::lgamma writes the global signgam.
inline double log_gamma(double x) {
  int sign = 0;
  return ::lgamma_r(x, &sign);
}

inline double log_factorial(double k) { return log_gamma(k + 1.0); }

inline double log_choose(double n, double k) {
  return log_gamma(n + 1.0) - log_gamma(k + 1.0) - log_gamma(n - k + 1.0);
}

}  // namespace reagg
