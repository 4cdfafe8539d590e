#include <doctest.h>

#include <cmath>
#include <vector>

#include "prefopt/common.hpp"
#include "prefopt/optim.hpp"
#include "prefopt/rng.hpp"
#include "prefopt/scalar_math.hpp"
#include "prefopt/tape.hpp"

using namespace prefopt;

namespace {

// dense gradient of a tape in slot order 0..n-1
std::vector<double> dense_grads(const Tape& tape, size_t n) {
  std::vector<double> g(n, 0.0);
  for (const auto& [slot, grad] : tape.leaf_grads()) g[slot] += grad;
  return g;
}

// Isolated so unqualified exp/log/tanh resolve to the prefopt double wrappers
// for the scalar instantiation instead of colliding with <cmath>.
namespace fsweep {

using prefopt::clamp;
using prefopt::exp;
using prefopt::log;
using prefopt::log1mexp;
using prefopt::log_sigmoid;
using prefopt::sigmoid;
using prefopt::softplus;
using prefopt::tanh;

template <class T>
T formula(T x, T y, T z) {
  auto a = exp(x * 0.3) + log(softplus(y) + 1.5);
  auto b = tanh(z) - sigmoid(x * y);
  auto c = log_sigmoid(y - z) + log1mexp(clamp(x, -8.0, -0.125));
  auto d = (2.0 - x) + (3.0 / softplus(z)) + y / x;
  return a * b + c + 0.25 * d;
}

}  // namespace fsweep

}  // namespace

TEST_CASE("stable scalar kernels hit known values") {
  CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sigmoid(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  CHECK(log_sigmoid(1.0) == doctest::Approx(-0.3132616875182228).epsilon(1e-15));
  CHECK(softplus(0.0) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  // saturation: no overflow on either side
  CHECK(sigmoid(1000.0) == 1.0);
  CHECK(sigmoid(-1000.0) == 0.0);
  CHECK(softplus(1000.0) == 1000.0);
  CHECK(std::isfinite(log_sigmoid(-745.0)));
  CHECK(log_sigmoid(-745.0) == doctest::Approx(-745.0).epsilon(1e-12));
  // complement identity holds across magnitudes
  for (double x : {-30.0, -3.0, -0.25, 0.0, 0.25, 3.0, 30.0}) {
    CHECK(sigmoid(x) + sigmoid(-x) == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("log1mexp is continuous across its branch point") {
  // log(1 - e^x) for x < 0; the two branches meet at -ln 2
  CHECK(log1mexp(-0.6931471805599453) == doctest::Approx(-0.6931471805599453).epsilon(1e-12));
  CHECK(log1mexp(-1e-10) == doctest::Approx(std::log(1e-10)).epsilon(1e-6));
  CHECK(log1mexp(-40.0) == doctest::Approx(-std::exp(-40.0)).epsilon(1e-10));
  const double eps = 1e-9;
  CHECK(log1mexp(-0.6931471805599453 - eps) ==
        doctest::Approx(log1mexp(-0.6931471805599453 + eps)).epsilon(1e-7));
}

TEST_CASE("logsumexp shifts by the max") {
  std::vector<double> two{0.0, 0.0};
  CHECK(logsumexp(two) == doctest::Approx(0.6931471805599453).epsilon(1e-15));
  std::vector<double> big{1000.0, 1000.0};
  CHECK(logsumexp(big) == doctest::Approx(1000.6931471805599453).epsilon(1e-15));
  std::vector<double> one{-3.5};
  CHECK(logsumexp(one) == doctest::Approx(-3.5).epsilon(1e-15));
}

TEST_CASE("sigmoid derivative at zero is exactly a quarter") {
  Tape t;
  Var x = t.leaf(0.0, 0);
  t.backward(sigmoid(x));
  CHECK(dense_grads(t, 1)[0] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("logsumexp partials form a softmax") {
  Tape t;
  std::vector<Var> xs{t.leaf(1.0, 0), t.leaf(2.0, 1), t.leaf(3.0, 2)};
  t.backward(t.logsumexp(xs));
  auto g = dense_grads(t, 3);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(g[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
  CHECK(g[1] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-14));
  CHECK(g[2] == doctest::Approx(std::exp(3.0) / z).epsilon(1e-14));
  CHECK(g[0] + g[1] + g[2] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("polynomial gradient matches finite differences") {
  auto f = [](std::span<const double> p) {
    return p[0] * p[0] * p[1] + p[1] * p[1] * p[1];
  };
  std::vector<double> at{1.3, -0.7};
  auto fd = finite_diff(f, at);

  Tape t;
  Var x = t.leaf(at[0], 0);
  Var y = t.leaf(at[1], 1);
  t.backward(x * x * y + y * y * y);
  auto g = dense_grads(t, 2);
  CHECK(max_rel_error(g, fd) < 1e-9);
}

TEST_CASE("every primitive survives a finite-difference sweep") {
  // one expression exercising each op, including the constant-fused forms
  std::vector<double> at{-1.1, 0.8, 0.4};
  auto f = [&](std::span<const double> p) { return fsweep::formula(p[0], p[1], p[2]); };
  auto fd = finite_diff(f, at);

  Tape t;
  Var x = t.leaf(at[0], 0);
  Var y = t.leaf(at[1], 1);
  Var z = t.leaf(at[2], 2);
  t.backward(fsweep::formula(x, y, z));
  auto g = dense_grads(t, 3);
  CHECK(max_rel_error(g, fd) < 1e-7);
}

TEST_CASE("dot products differentiate against both kinds of right-hand side") {
  std::vector<double> consts{0.5, -1.25, 2.0};
  auto f = [&](std::span<const double> p) {
    double v = p[0] * p[3] + p[1] * p[4] + p[2] * p[5];  // var . var
    double c = p[0] * consts[0] + p[1] * consts[1] + p[2] * consts[2];
    return v * v + c;
  };
  std::vector<double> at{0.3, -0.9, 1.7, 0.2, 1.1, -0.6};
  auto fd = finite_diff(f, at);

  Tape t;
  std::vector<Var> a{t.leaf(at[0], 0), t.leaf(at[1], 1), t.leaf(at[2], 2)};
  std::vector<Var> b{t.leaf(at[3], 3), t.leaf(at[4], 4), t.leaf(at[5], 5)};
  Var v = t.dot(a, b);
  Var c = t.dot(a, std::span<const double>(consts));
  t.backward(v * v + c);
  auto g = dense_grads(t, 6);
  CHECK(max_rel_error(g, fd) < 1e-8);
}

TEST_CASE("clamp passes gradient inside and blocks it at the rails") {
  {
    Tape t;
    Var x = t.leaf(0.5, 0);
    t.backward(clamp(x, -1.0, 1.0) * 3.0);
    CHECK(dense_grads(t, 1)[0] == 3.0);
  }
  {
    Tape t;
    Var x = t.leaf(2.0, 0);
    t.backward(clamp(x, -1.0, 1.0) * 3.0);
    CHECK(dense_grads(t, 1)[0] == 0.0);
  }
}

TEST_CASE("non-finite intermediates abort with the op name") {
  Tape t;
  Var x = t.leaf(-1.0, 0);
  CHECK_THROWS_AS(log(x), NumericError);
  Tape t2;
  Var y = t2.leaf(-2.0, 0);
  try {
    log(y);
    CHECK(false);
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'log'") != std::string::npos);
  }
}

TEST_CASE("identical formulas on separate tapes give identical gradients") {
  auto build = [](Tape& t) {
    Var x = t.leaf(0.77, 0);
    Var y = t.leaf(-0.3, 1);
    t.backward(sigmoid(x * y) + softplus(x - y));
  };
  Tape t1, t2;
  build(t1);
  build(t2);
  CHECK(dense_grads(t1, 2) == dense_grads(t2, 2));
}

TEST_CASE("adam first step moves by roughly lr in the gradient direction") {
  AdamConfig cfg;
  cfg.lr = 0.01;
  AdamState st(2);
  std::vector<double> p{1.0, -2.0};
  std::vector<double> g{0.3, -0.5};
  adam_step(st, cfg, p, g);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(st.t == 1);
}

TEST_CASE("adam trajectories are bitwise deterministic") {
  auto run = [] {
    AdamConfig cfg;
    AdamState st(3);
    std::vector<double> p{0.1, 0.2, 0.3};
    Rng rng(42);
    for (int i = 0; i < 50; ++i) {
      std::vector<double> g{rng.normal(), rng.normal(), rng.normal()};
      adam_step(st, cfg, p, g);
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("central differences are exact on quadratics") {
  auto f = [](std::span<const double> p) { return p[0] * p[0]; };
  std::vector<double> at{3.0};
  auto fd = finite_diff(f, at);
  CHECK(fd[0] == doctest::Approx(6.0).epsilon(1e-9));
}

TEST_CASE("relative error uses the trusted side's scale with a floor of one") {
  std::vector<double> a{1.1, 2.0};
  std::vector<double> b{1.0, 2.0};
  CHECK(max_rel_error(a, b) == doctest::Approx(0.05).epsilon(1e-12));
  std::vector<double> tiny_a{1e-6};
  std::vector<double> tiny_b{0.0};
  CHECK(max_rel_error(tiny_a, tiny_b) == doctest::Approx(1e-6).epsilon(1e-12));
}

TEST_CASE("seed derivation separates streams") {
  CHECK(derive_seed(1, 0) != derive_seed(1, 1));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}

TEST_CASE("rng transforms stay in range and reproduce") {
  Rng a(9), b(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.u01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(u == b.u01());
  }
  Rng c(10);
  for (int i = 0; i < 1000; ++i) {
    CHECK(c.below(7) < 7);
  }
  // polar normals: crude moment check, tight enough at n=20000
  Rng d(11);
  double sum = 0.0, sum2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = d.normal();
    sum += x;
    sum2 += x * x;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.05));
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.05));
}
