#include "prefopt/optim.hpp"

#include <cassert>
#include <cmath>

namespace prefopt {

void adam_step(AdamState& state, const AdamConfig& cfg, std::span<double> params,
               std::span<const double> grad) {
  assert(params.size() == grad.size());
  assert(state.m.size() == params.size());
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

std::vector<double> finite_diff(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> at, double h) {
  std::vector<double> x(at.begin(), at.end());
  std::vector<double> g(at.size(), 0.0);
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_error(std::span<const double> a, std::span<const double> b) {
  double num = 0.0;
  double den = 1.0;
  for (size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::fabs(a[i] - b[i]));
    den = std::max(den, std::fabs(b[i]));
  }
  return num / den;
}

}  // namespace prefopt
