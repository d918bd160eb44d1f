#include "qadpt/tape.hpp"

#include <algorithm>
#include <cmath>

#include "qadpt/error.hpp"
#include "qadpt/kernels.hpp"

namespace qadpt {

Gradients Gradients::zeros_like(const ParameterList& params) {
  Gradients g;
  g.tensors.reserve(params.size());
  for (const auto& [name, t] : params) g.tensors.push_back(Tensor::zeros_like(*t));
  return g;
}

void Gradients::zero() {
  for (Tensor& t : tensors) t.fill(0.0);
}

double Gradients::global_norm() const {
  double sq = 0.0;
  for (const Tensor& t : tensors)
    for (double v : t.values()) sq += v * v;
  return std::sqrt(sq);
}

void Gradients::scale(double k) {
  for (Tensor& t : tensors)
    for (double& v : t.storage()) v *= k;
}

void Gradients::check_congruent(const ParameterList& params) const {
  if (params.size() != tensors.size())
    throw NumericError("gradient count " + std::to_string(tensors.size()) +
                       " does not match parameter count " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!tensors[i].same_shape(*params[i].second))
      throw NumericError("gradient for " + params[i].first + " has shape " +
                         shape_string(tensors[i].shape()));
  }
}

Tensor* Tape::Backprop::input_grad(std::size_t i) const { return tape.grad_at(inputs[i]); }

const Tensor& Tape::Backprop::input_value(std::size_t i) const {
  return tape.value_at(inputs[i]);
}

Tape::Tape() = default;

std::size_t Tape::check(Var v) const {
  if (v.tape_ != this || v.index_ >= nodes_.size())
    throw NumericError("variable was not recorded on this tape");
  return v.index_;
}

const Tensor& Tape::value_at(std::size_t i) const {
  const Node& n = nodes_[i];
  return n.bound_value ? *n.bound_value : n.own_value;
}

Tensor* Tape::grad_at(std::size_t i) {
  Node& n = nodes_[i];
  if (!n.needs_grad) return nullptr;
  if (n.bound_grad) return n.bound_grad;
  if (n.own_grad.size() != value_at(i).size()) n.own_grad = Tensor::zeros_like(value_at(i));
  return &n.own_grad;
}

Tape::Var Tape::push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  require_finite(value.values(), "tape op output");
  Node n;
  n.own_value = std::move(value);
  n.needs_grad = std::any_of(inputs.begin(), inputs.end(),
                             [&](std::size_t i) { return nodes_[i].needs_grad; });
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1, this);
}

Tape::Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Tape::Var Tape::parameter(const Tensor& value, Tensor* grad) {
  if (grad && !grad->same_shape(value))
    throw NumericError("parameter gradient shape mismatch");
  Node n;
  n.bound_value = &value;
  n.bound_grad = grad;
  n.needs_grad = grad != nullptr;
  nodes_.push_back(std::move(n));
  return Var(nodes_.size() - 1, this);
}

Tape::Var Tape::matvec(Var w, Var x) {
  const std::size_t wi = check(w), xi = check(x);
  Tensor out = Tensor::vector(qadpt::matvec(value_at(wi), value_at(xi).values()));
  return push(std::move(out), {wi, xi}, [](const Backprop& b) {
    const Tensor& wv = b.input_value(0);
    const Tensor& xv = b.input_value(1);
    const std::size_t rows = wv.rows(), cols = wv.cols();
    if (Tensor* gw = b.input_grad(0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = b.out_grad[r];
        if (g == 0.0) continue;
        double* row = gw->storage().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += g * xv[c];
      }
    }
    if (Tensor* gx = b.input_grad(1)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = b.out_grad[r];
        if (g == 0.0) continue;
        const double* row = wv.storage().data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) (*gx)[c] += g * row[c];
      }
    }
  });
}

namespace {

void require_same_size(const Tensor& a, const Tensor& b, const char* op) {
  if (a.size() != b.size())
    throw NumericError(std::string(op) + ": size " + std::to_string(a.size()) + " vs " +
                       std::to_string(b.size()));
}

}  // namespace

Tape::Var Tape::add(Var a, Var b) {
  const std::size_t ai = check(a), bi = check(b);
  require_same_size(value_at(ai), value_at(bi), "add");
  Tensor out = value_at(ai);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += value_at(bi)[i];
  return push(std::move(out), {ai, bi}, [](const Backprop& b) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor* g = b.input_grad(k))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += b.out_grad[i];
  });
}

Tape::Var Tape::sub(Var a, Var b) {
  const std::size_t ai = check(a), bi = check(b);
  require_same_size(value_at(ai), value_at(bi), "sub");
  Tensor out = value_at(ai);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= value_at(bi)[i];
  return push(std::move(out), {ai, bi}, [](const Backprop& b) {
    if (Tensor* g = b.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += b.out_grad[i];
    if (Tensor* g = b.input_grad(1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= b.out_grad[i];
  });
}

Tape::Var Tape::mul(Var a, Var b) {
  const std::size_t ai = check(a), bi = check(b);
  require_same_size(value_at(ai), value_at(bi), "mul");
  Tensor out = value_at(ai);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= value_at(bi)[i];
  return push(std::move(out), {ai, bi}, [](const Backprop& b) {
    const Tensor& av = b.input_value(0);
    const Tensor& bv = b.input_value(1);
    if (Tensor* g = b.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += b.out_grad[i] * bv[i];
    if (Tensor* g = b.input_grad(1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += b.out_grad[i] * av[i];
  });
}

Tape::Var Tape::one_minus(Var a) {
  const std::size_t ai = check(a);
  Tensor out = value_at(ai);
  for (double& v : out.storage()) v = 1.0 - v;
  return push(std::move(out), {ai}, [](const Backprop& b) {
    if (Tensor* g = b.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= b.out_grad[i];
  });
}

Tape::Var Tape::scale(Var a, double k) {
  const std::size_t ai = check(a);
  Tensor out = value_at(ai);
  for (double& v : out.storage()) v *= k;
  return push(std::move(out), {ai}, [k](const Backprop& b) {
    if (Tensor* g = b.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += k * b.out_grad[i];
  });
}

Tape::Var Tape::sigmoid(Var a) {
  const std::size_t ai = check(a);
  Tensor out = value_at(ai);
  for (double& v : out.storage()) v = qadpt::sigmoid(v);
  const std::size_t self = nodes_.size();
  return push(std::move(out), {ai}, [self](const Backprop& b) {
    const Tensor& y = b.tape.value_at(self);
    if (Tensor* g = b.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += b.out_grad[i] * y[i] * (1.0 - y[i]);
  });
}

Tape::Var Tape::tanh(Var a) {
  const std::size_t ai = check(a);
  Tensor out = value_at(ai);
  for (double& v : out.storage()) v = std::tanh(v);
  const std::size_t self = nodes_.size();
  return push(std::move(out), {ai}, [self](const Backprop& b) {
    const Tensor& y = b.tape.value_at(self);
    if (Tensor* g = b.input_grad(0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += b.out_grad[i] * (1.0 - y[i] * y[i]);
  });
}

Tape::Var Tape::row(Var table, std::size_t r) {
  const std::size_t ti = check(table);
  const Tensor& t = value_at(ti);
  if (t.rank() != 2 || r >= t.rows())
    throw NumericError("row " + std::to_string(r) + " out of range for " + shape_string(t.shape()));
  const std::size_t cols = t.cols();
  std::vector<double> vals(t.storage().begin() + static_cast<std::ptrdiff_t>(r * cols),
                           t.storage().begin() + static_cast<std::ptrdiff_t>((r + 1) * cols));
  return push(Tensor::vector(std::move(vals)), {ti}, [r, cols](const Backprop& b) {
    if (Tensor* g = b.input_grad(0)) {
      double* dst = g->storage().data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += b.out_grad[c];
    }
  });
}

Tape::Var Tape::gather_affine(Var w, Var bias, std::vector<std::size_t> rows, Var x) {
  const std::size_t wi = check(w), bi = check(bias), xi = check(x);
  const Tensor& wv = value_at(wi);
  const Tensor& bv = value_at(bi);
  const Tensor& xv = value_at(xi);
  if (wv.rank() != 2 || wv.cols() != xv.size() || bv.size() != wv.rows())
    throw NumericError("gather_affine: shape mismatch " + shape_string(wv.shape()));
  const std::size_t cols = wv.cols();
  Tensor out({rows.size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= wv.rows()) throw NumericError("gather_affine: row out of range");
    const double* row = wv.storage().data() + rows[i] * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += row[c] * xv[c];
    out[i] = acc + bv[rows[i]];
  }
  return push(std::move(out), {wi, bi, xi}, [rows = std::move(rows), cols](const Backprop& b) {
    const Tensor& wv = b.input_value(0);
    const Tensor& xv = b.input_value(2);
    Tensor* gw = b.input_grad(0);
    Tensor* gb = b.input_grad(1);
    Tensor* gx = b.input_grad(2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double g = b.out_grad[i];
      if (g == 0.0) continue;
      if (gb) (*gb)[rows[i]] += g;
      if (gw) {
        double* dst = gw->storage().data() + rows[i] * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += g * xv[c];
      }
      if (gx) {
        const double* row = wv.storage().data() + rows[i] * cols;
        for (std::size_t c = 0; c < cols; ++c) (*gx)[c] += g * row[c];
      }
    }
  });
}

namespace {

// Jacobian-vector product of softmax over the rows [begin, end).
void softmax_backward(const Tensor& y, const Tensor& gy, Tensor& gx, std::size_t begin,
                      std::size_t end) {
  double dot = 0.0;
  for (std::size_t i = begin; i < end; ++i) dot += gy[i] * y[i];
  for (std::size_t i = begin; i < end; ++i) gx[i] += y[i] * (gy[i] - dot);
}

}  // namespace

Tape::Var Tape::softmax(Var logits) {
  const std::size_t li = check(logits);
  Tensor out = Tensor::vector(qadpt::softmax(value_at(li).values()));
  const std::size_t self = nodes_.size();
  return push(std::move(out), {li}, [self](const Backprop& b) {
    if (Tensor* g = b.input_grad(0))
      softmax_backward(b.tape.value_at(self), b.out_grad, *g, 0, g->size());
  });
}

Tape::Var Tape::masked_softmax(Var logits, std::vector<char> mask) {
  const std::size_t li = check(logits);
  Tensor out = Tensor::vector(qadpt::masked_softmax(value_at(li).values(), mask));
  const std::size_t self = nodes_.size();
  return push(std::move(out), {li}, [self](const Backprop& b) {
    // Masked entries have y = 0, so they receive no gradient.
    if (Tensor* g = b.input_grad(0))
      softmax_backward(b.tape.value_at(self), b.out_grad, *g, 0, g->size());
  });
}

Tape::Var Tape::row_softmax(Var logits, std::size_t cols, std::vector<char> mask) {
  const std::size_t li = check(logits);
  const Tensor& in = value_at(li);
  if (cols == 0 || in.size() % cols != 0 || mask.size() != in.size())
    throw NumericError("row_softmax: layout mismatch");
  Tensor out({in.size()});
  for (std::size_t start = 0; start < in.size(); start += cols) {
    const std::vector<double> row = qadpt::masked_softmax(
        std::span<const double>(in.storage()).subspan(start, cols),
        std::span<const char>(mask).subspan(start, cols));
    std::copy(row.begin(), row.end(), out.storage().begin() + static_cast<std::ptrdiff_t>(start));
  }
  const std::size_t self = nodes_.size();
  return push(std::move(out), {li}, [self, cols](const Backprop& b) {
    if (Tensor* g = b.input_grad(0)) {
      const Tensor& y = b.tape.value_at(self);
      for (std::size_t start = 0; start < g->size(); start += cols)
        softmax_backward(y, b.out_grad, *g, start, start + cols);
    }
  });
}

Tape::Var Tape::normalize(Var v) {
  const std::size_t vi = check(v);
  Tensor out = value_at(vi);
  double total = 0.0;
  for (double x : out.values()) total += x;
  if (!(total > 0.0)) throw NumericError("normalize: non-positive total");
  for (double& x : out.storage()) x /= total;
  const std::size_t self = nodes_.size();
  return push(std::move(out), {vi}, [self, total](const Backprop& b) {
    if (Tensor* g = b.input_grad(0)) {
      const Tensor& y = b.tape.value_at(self);
      double dot = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) dot += b.out_grad[i] * y[i];
      for (std::size_t i = 0; i < y.size(); ++i) (*g)[i] += (b.out_grad[i] - dot) / total;
    }
  });
}

Tape::Var Tape::pick(Var v, std::size_t i) {
  const std::size_t vi = check(v);
  if (i >= value_at(vi).size()) throw NumericError("pick: index out of range");
  return push(Tensor::vector({value_at(vi)[i]}), {vi}, [i](const Backprop& b) {
    if (Tensor* g = b.input_grad(0)) (*g)[i] += b.out_grad[0];
  });
}

Tape::Var Tape::sum(Var a) {
  const std::size_t ai = check(a);
  double total = 0.0;
  for (double x : value_at(ai).values()) total += x;
  return push(Tensor::vector({total}), {ai}, [](const Backprop& b) {
    if (Tensor* g = b.input_grad(0))
      for (double& x : g->storage()) x += b.out_grad[0];
  });
}

Tape::Var Tape::dot(Var a, Var b) {
  const std::size_t ai = check(a), bi = check(b);
  require_same_size(value_at(ai), value_at(bi), "dot");
  double total = 0.0;
  for (std::size_t i = 0; i < value_at(ai).size(); ++i) total += value_at(ai)[i] * value_at(bi)[i];
  return push(Tensor::vector({total}), {ai, bi}, [](const Backprop& b) {
    const Tensor& av = b.input_value(0);
    const Tensor& bv = b.input_value(1);
    const double g0 = b.out_grad[0];
    // Accumulate both sides before writing so dot(p, p) sees unmodified grads.
    Tensor* ga = b.input_grad(0);
    Tensor* gb = b.input_grad(1);
    if (ga)
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g0 * bv[i];
    if (gb)
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g0 * av[i];
  });
}

Tape::Var Tape::neg_log(Var p, double floor) {
  const std::size_t pi = check(p);
  if (value_at(pi).size() != 1) throw NumericError("neg_log expects a scalar");
  const double pv = value_at(pi)[0];
  const bool floored = !(pv > floor);
  const double clamped = floored ? floor : pv;
  return push(Tensor::vector({-std::log(clamped)}), {pi}, [floored, clamped](const Backprop& b) {
    if (floored) return;
    if (Tensor* g = b.input_grad(0)) (*g)[0] -= b.out_grad[0] / clamped;
  });
}

Tape::Var Tape::custom(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  std::vector<std::size_t> idx;
  idx.reserve(inputs.size());
  for (Var v : inputs) idx.push_back(check(v));
  return push(std::move(value), std::move(idx), std::move(backward));
}

const Tensor& Tape::value(Var v) const { return value_at(check(v)); }

double Tape::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw NumericError("scalar() on non-scalar tensor");
  return t[0];
}

const Tensor& Tape::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  return n.bound_grad ? *n.bound_grad : n.own_grad;
}

void Tape::backward(Var loss, double seed) {
  const std::size_t li = check(loss);
  if (value_at(li).size() != 1) throw NumericError("backward() needs a scalar loss");
  Tensor* g = grad_at(li);
  if (!g) return;  // loss does not depend on any bound parameter
  (*g)[0] += seed;
  for (std::size_t i = li + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.own_grad.size() == 0) continue;
    n.backward(Backprop{n.own_grad, *this, n.inputs});
  }
}

}  // namespace qadpt
