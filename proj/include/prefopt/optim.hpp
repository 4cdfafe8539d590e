#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace prefopt {

struct AdamConfig {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  uint64_t t = 0;

  explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// Bias-corrected Adam update, in place.
void adam_step(AdamState& state, const AdamConfig& cfg, std::span<double> params,
               std::span<const double> grad);

// Central finite differences of a black-box scalar function. This is the
// gradient oracle used to check the tape; it never touches the tape.
std::vector<double> finite_diff(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> at, double h = 1e-5);

// max_i |a_i - b_i| / max(1, max_i |b_i|), with b the trusted side
double max_rel_error(std::span<const double> a, std::span<const double> b);

}  // namespace prefopt
