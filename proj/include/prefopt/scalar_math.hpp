#pragma once

#include <algorithm>
#include <cmath>
#include <span>

// Numerically stable scalar kernels. These double overloads mirror the tape
// variable overloads so expression code can be written once for both.

namespace prefopt {

inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double tanh(double x) { return std::tanh(x); }

inline double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + e^x) without overflow on either tail
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double log_sigmoid(double x) { return -softplus(-x); }

// log(1 - e^m) for m < 0
inline double log1mexp(double m) {
  constexpr double kLn2 = 0.6931471805599453;
  if (m < -kLn2) return std::log1p(-std::exp(m));
  return std::log(-std::expm1(m));
}

inline double clamp(double x, double lo, double hi) {
  return std::min(std::max(x, lo), hi);
}

// max-shifted log-sum-exp
inline double logsumexp(std::span<const double> xs) {
  double m = xs[0];
  for (double x : xs) m = std::max(m, x);
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace prefopt
