#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "prefopt/common.hpp"

// Reverse-mode autodiff on an append-only tape of scalar nodes. Values and
// local partials are computed when a node is recorded; backward() is a single
// reverse sweep accumulating adjoints. Any NaN/Inf aborts with the offending
// node's operation tag.

namespace prefopt {

enum class Op : uint8_t {
  Leaf,
  Const,
  Add,
  AddC,
  Sub,
  SubCV,  // c - v
  Mul,
  MulC,
  Div,
  DivCV,  // c / v
  Neg,
  Exp,
  Log,
  Tanh,
  Sigmoid,
  LogSigmoid,
  Softplus,
  Log1mExp,
  Clamp,
  LogSumExp,
  Dot,
  DotC,  // dot(vars, constants)
};

const char* op_name(Op op);

class Tape;

// Cheap handle to a tape node. Valid while the tape is alive.
struct Var {
  Tape* tape = nullptr;
  uint32_t node = 0;
  double value() const;
};

class Tape {
 public:
  Tape() = default;

  void reserve(size_t nodes, size_t args);
  size_t size() const { return nodes_.size(); }

  // slot identifies the variable in the caller's gradient layout
  Var leaf(double value, uint32_t slot);
  Var constant(double value);

  Var unary(Op op, Var a, double value, double partial);
  Var binary(Op op, Var a, Var b, double value, double pa, double pb);
  Var logsumexp(std::span<const Var> xs);
  Var dot(std::span<const Var> a, std::span<const Var> b);
  Var dot(std::span<const Var> a, std::span<const double> b);

  double value(uint32_t node) const { return value_[node]; }

  // Reverse sweep from root. Leaf adjoints are then available via
  // leaf_grads() as (slot, gradient) pairs in leaf creation order.
  void backward(Var root);
  const std::vector<std::pair<uint32_t, double>>& leaf_grads() const {
    return leaf_grads_;
  }

 private:
  struct Node {
    Op op;
    uint32_t arg_begin;
    uint32_t arg_count;
  };

  uint32_t push(Op op, double value, std::span<const uint32_t> args,
                std::span<const double> partials);
  void check_finite(Op op, double value, std::span<const double> partials) const;

  std::vector<Node> nodes_;
  std::vector<double> value_;
  std::vector<uint32_t> arg_node_;
  std::vector<double> arg_partial_;
  std::vector<std::pair<uint32_t, uint32_t>> leaves_;  // (slot, node)
  std::vector<double> adjoint_;
  std::vector<std::pair<uint32_t, double>> leaf_grads_;
};

inline double Var::value() const { return tape->value(node); }

Var operator+(Var a, Var b);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, Var b);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator-(Var a);
Var operator*(Var a, Var b);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, Var b);
Var operator/(Var a, double c);
Var operator/(double c, Var a);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var log_sigmoid(Var a);
Var softplus(Var a);
Var log1mexp(Var a);
Var clamp(Var a, double lo, double hi);
Var logsumexp(std::span<const Var> xs);
Var dot(std::span<const Var> a, std::span<const Var> b);
Var dot(std::span<const Var> a, std::span<const double> b);

inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.value(); }

}  // namespace prefopt
