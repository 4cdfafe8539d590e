#include "prefopt/tape.hpp"

#include <cmath>
#include <string>

#include "prefopt/scalar_math.hpp"

namespace prefopt {

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::AddC: return "add_const";
    case Op::Sub: return "sub";
    case Op::SubCV: return "const_sub";
    case Op::Mul: return "mul";
    case Op::MulC: return "mul_const";
    case Op::Div: return "div";
    case Op::DivCV: return "const_div";
    case Op::Neg: return "neg";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::LogSigmoid: return "log_sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Log1mExp: return "log1mexp";
    case Op::Clamp: return "clamp";
    case Op::LogSumExp: return "logsumexp";
    case Op::Dot: return "dot";
    case Op::DotC: return "dot_const";
  }
  return "unknown";
}

void Tape::reserve(size_t nodes, size_t args) {
  nodes_.reserve(nodes);
  value_.reserve(nodes);
  arg_node_.reserve(args);
  arg_partial_.reserve(args);
}

void Tape::check_finite(Op op, double value,
                        std::span<const double> partials) const {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite value in node '") + op_name(op) +
                       "'");
  }
  for (double p : partials) {
    if (!std::isfinite(p)) {
      throw NumericError(std::string("non-finite partial in node '") +
                         op_name(op) + "'");
    }
  }
}

uint32_t Tape::push(Op op, double value, std::span<const uint32_t> args,
                    std::span<const double> partials) {
  check_finite(op, value, partials);
  const uint32_t id = static_cast<uint32_t>(nodes_.size());
  nodes_.push_back({op, static_cast<uint32_t>(arg_node_.size()),
                    static_cast<uint32_t>(args.size())});
  value_.push_back(value);
  arg_node_.insert(arg_node_.end(), args.begin(), args.end());
  arg_partial_.insert(arg_partial_.end(), partials.begin(), partials.end());
  return id;
}

Var Tape::leaf(double value, uint32_t slot) {
  const uint32_t id = push(Op::Leaf, value, {}, {});
  leaves_.emplace_back(slot, id);
  return {this, id};
}

Var Tape::constant(double value) {
  return {this, push(Op::Const, value, {}, {})};
}

Var Tape::unary(Op op, Var a, double value, double partial) {
  const uint32_t args[1] = {a.node};
  const double parts[1] = {partial};
  return {this, push(op, value, args, parts)};
}

Var Tape::binary(Op op, Var a, Var b, double value, double pa, double pb) {
  const uint32_t args[2] = {a.node, b.node};
  const double parts[2] = {pa, pb};
  return {this, push(op, value, args, parts)};
}

Var Tape::logsumexp(std::span<const Var> xs) {
  double m = xs[0].value();
  for (Var x : xs) m = std::max(m, x.value());
  double s = 0.0;
  for (Var x : xs) s += std::exp(x.value() - m);
  const double v = m + std::log(s);

  std::vector<uint32_t> args(xs.size());
  std::vector<double> parts(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    args[i] = xs[i].node;
    parts[i] = std::exp(xs[i].value() - v);
  }
  return {this, push(Op::LogSumExp, v, args, parts)};
}

Var Tape::dot(std::span<const Var> a, std::span<const Var> b) {
  double v = 0.0;
  std::vector<uint32_t> args(2 * a.size());
  std::vector<double> parts(2 * a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    const double av = a[i].value();
    const double bv = b[i].value();
    v += av * bv;
    args[i] = a[i].node;
    parts[i] = bv;
    args[a.size() + i] = b[i].node;
    parts[a.size() + i] = av;
  }
  return {this, push(Op::Dot, v, args, parts)};
}

Var Tape::dot(std::span<const Var> a, std::span<const double> b) {
  double v = 0.0;
  std::vector<uint32_t> args(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    v += a[i].value() * b[i];
    args[i] = a[i].node;
  }
  return {this, push(Op::DotC, v, args, b)};
}

void Tape::backward(Var root) {
  adjoint_.assign(nodes_.size(), 0.0);
  adjoint_[root.node] = 1.0;
  for (size_t i = nodes_.size(); i-- > 0;) {
    const double a = adjoint_[i];
    if (a == 0.0) continue;
    if (!std::isfinite(a)) {
      throw NumericError(std::string("non-finite adjoint at node '") +
                         op_name(nodes_[i].op) + "'");
    }
    const Node& n = nodes_[i];
    for (uint32_t k = 0; k < n.arg_count; ++k) {
      adjoint_[arg_node_[n.arg_begin + k]] += a * arg_partial_[n.arg_begin + k];
    }
  }
  leaf_grads_.clear();
  leaf_grads_.reserve(leaves_.size());
  for (const auto& [slot, node] : leaves_) {
    leaf_grads_.emplace_back(slot, adjoint_[node]);
  }
}

Var operator+(Var a, Var b) {
  return a.tape->binary(Op::Add, a, b, a.value() + b.value(), 1.0, 1.0);
}
Var operator+(Var a, double c) {
  return a.tape->unary(Op::AddC, a, a.value() + c, 1.0);
}
Var operator+(double c, Var a) { return a + c; }

Var operator-(Var a, Var b) {
  return a.tape->binary(Op::Sub, a, b, a.value() - b.value(), 1.0, -1.0);
}
Var operator-(Var a, double c) {
  return a.tape->unary(Op::AddC, a, a.value() - c, 1.0);
}
Var operator-(double c, Var a) {
  return a.tape->unary(Op::SubCV, a, c - a.value(), -1.0);
}
Var operator-(Var a) { return a.tape->unary(Op::Neg, a, -a.value(), -1.0); }

Var operator*(Var a, Var b) {
  return a.tape->binary(Op::Mul, a, b, a.value() * b.value(), b.value(),
                        a.value());
}
Var operator*(Var a, double c) {
  return a.tape->unary(Op::MulC, a, a.value() * c, c);
}
Var operator*(double c, Var a) { return a * c; }

Var operator/(Var a, Var b) {
  const double bv = b.value();
  const double v = a.value() / bv;
  return a.tape->binary(Op::Div, a, b, v, 1.0 / bv, -v / bv);
}
Var operator/(Var a, double c) { return a * (1.0 / c); }
Var operator/(double c, Var a) {
  const double av = a.value();
  return a.tape->unary(Op::DivCV, a, c / av, -c / (av * av));
}

Var exp(Var a) {
  const double v = std::exp(a.value());
  return a.tape->unary(Op::Exp, a, v, v);
}
Var log(Var a) {
  return a.tape->unary(Op::Log, a, std::log(a.value()), 1.0 / a.value());
}
Var tanh(Var a) {
  const double t = std::tanh(a.value());
  return a.tape->unary(Op::Tanh, a, t, 1.0 - t * t);
}
Var sigmoid(Var a) {
  const double s = sigmoid(a.value());
  return a.tape->unary(Op::Sigmoid, a, s, s * (1.0 - s));
}
Var log_sigmoid(Var a) {
  return a.tape->unary(Op::LogSigmoid, a, log_sigmoid(a.value()),
                       sigmoid(-a.value()));
}
Var softplus(Var a) {
  return a.tape->unary(Op::Softplus, a, softplus(a.value()),
                       sigmoid(a.value()));
}
Var log1mexp(Var a) {
  const double v = log1mexp(a.value());
  return a.tape->unary(Op::Log1mExp, a, v, -std::exp(a.value() - v));
}
Var clamp(Var a, double lo, double hi) {
  const double x = a.value();
  const double v = clamp(x, lo, hi);
  const double p = (x > lo && x < hi) ? 1.0 : 0.0;
  return a.tape->unary(Op::Clamp, a, v, p);
}
Var logsumexp(std::span<const Var> xs) { return xs[0].tape->logsumexp(xs); }
Var dot(std::span<const Var> a, std::span<const Var> b) {
  return a[0].tape->dot(a, b);
}
Var dot(std::span<const Var> a, std::span<const double> b) {
  return a[0].tape->dot(a, b);
}

}  // namespace prefopt
