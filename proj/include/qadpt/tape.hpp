#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "qadpt/tensor.hpp"

namespace qadpt {

/// Ordered parameter view: stable names plus pointers into the owning model.
using ParameterList = std::vector<std::pair<std::string, Tensor*>>;

/// One gradient tensor per parameter, shape-congruent with the ParameterList it
/// was created from.
struct Gradients {
  std::vector<Tensor> tensors;

  static Gradients zeros_like(const ParameterList& params);
  void zero();
  double global_norm() const;
  void scale(double k);
  /// Throws NumericError if shapes differ from `params`.
  void check_congruent(const ParameterList& params) const;
};

/// Reverse-accumulation tape. Every op appends a node holding its value and a
/// closure that pushes the node's gradient to its inputs; backward() walks the
/// list in reverse. Parameters are bound by reference so their gradients land
/// directly in a caller-owned Gradients buffer.
class Tape {
 public:
  class Var {
   public:
    Var() = default;

   private:
    friend class Tape;
    Var(std::size_t index, const Tape* tape) : index_(index), tape_(tape) {}
    std::size_t index_ = 0;
    const Tape* tape_ = nullptr;
  };

  /// Context handed to a custom op's backward closure.
  struct Backprop {
    const Tensor& out_grad;
    Tape& tape;
    /// Gradient accumulator of the op's i-th input, or nullptr if that input
    /// does not need a gradient.
    Tensor* input_grad(std::size_t i) const;
    const Tensor& input_value(std::size_t i) const;
    std::span<const std::size_t> inputs;
  };
  using BackwardFn = std::function<void(const Backprop&)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `value`. Gradients accumulate into `*grad` when non-null.
  Var parameter(const Tensor& value, Tensor* grad);

  Var matvec(Var w, Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var one_minus(Var a);
  Var scale(Var a, double k);
  Var sigmoid(Var a);
  Var tanh(Var a);
  /// Row `row` of a matrix (embedding lookup).
  Var row(Var table, std::size_t row);
  /// y[i] = W[rows[i]] . x + b[rows[i]].
  Var gather_affine(Var w, Var b, std::vector<std::size_t> rows, Var x);
  Var softmax(Var logits);
  /// Softmax over entries with mask != 0; others are exactly zero.
  Var masked_softmax(Var logits, std::vector<char> mask);
  /// Independent masked softmax per row of a (size / cols) x cols layout.
  Var row_softmax(Var logits, std::size_t cols, std::vector<char> mask);
  /// v / sum(v). Requires positive sum.
  Var normalize(Var v);
  Var pick(Var v, std::size_t i);
  Var sum(Var a);
  Var dot(Var a, Var b);
  /// -log(max(p, floor)) of a scalar; zero gradient when the floor is active.
  Var neg_log(Var p, double floor);
  /// Op with caller-supplied value and backward rule.
  Var custom(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  double scalar(Var v) const;
  /// Gradient of the last backward() target with respect to `v` (zero-shaped
  /// if `v` received no gradient).
  const Tensor& grad(Var v) const;

  /// Seeds d(loss) = seed and accumulates gradients into every node and bound
  /// parameter. Throws NumericError for a non-scalar loss or a foreign Var.
  void backward(Var loss, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor own_value;
    const Tensor* bound_value = nullptr;
    Tensor own_grad;
    Tensor* bound_grad = nullptr;
    bool needs_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::size_t check(Var v) const;
  const Tensor& value_at(std::size_t i) const;
  Tensor* grad_at(std::size_t i);
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  std::deque<Node> nodes_;
};

}  // namespace qadpt
