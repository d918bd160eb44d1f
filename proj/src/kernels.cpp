#include "qadpt/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qadpt/error.hpp"

namespace qadpt {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw NumericError("softmax of empty vector");
  require_finite(logits, "softmax input");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> masked_softmax(std::span<const double> logits, std::span<const char> mask) {
  if (mask.size() != logits.size()) throw NumericError("softmax mask size mismatch");
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    if (!std::isfinite(logits[i])) throw NumericError("non-finite value in softmax input");
    top = std::max(top, logits[i]);
  }
  if (!std::isfinite(top)) throw NumericError("softmax mask selects nothing");
  std::vector<double> out(logits.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!mask[i]) continue;
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> matvec(const Tensor& w, std::span<const double> x) {
  if (w.rank() != 2 || w.cols() != x.size()) {
    throw NumericError("matvec: matrix " + shape_string(w.shape()) + " vs vector of " +
                       std::to_string(x.size()));
  }
  std::vector<double> y(w.rows(), 0.0);
  const double* row = w.values().data();
  for (std::size_t r = 0; r < w.rows(); ++r, row += w.cols()) {
    double acc = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  return y;
}

GruCellParams GruCellParams::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  GruCellParams p;
  for (Tensor* w : {&p.w_z, &p.w_r, &p.w_h}) *w = Tensor({hidden_dim, input_dim});
  for (Tensor* u : {&p.u_z, &p.u_r, &p.u_h}) *u = Tensor({hidden_dim, hidden_dim});
  for (Tensor* b : {&p.b_z, &p.b_r, &p.b_h}) *b = Tensor({hidden_dim});
  return p;
}

void GruCellParams::validate() const {
  const std::size_t in = input_dim();
  const std::size_t hid = hidden_dim();
  for (const Tensor* w : {&w_z, &w_r, &w_h}) {
    if (w->rank() != 2 || w->rows() != hid || w->cols() != in)
      throw NumericError("GRU input weight has shape " + shape_string(w->shape()));
  }
  for (const Tensor* u : {&u_z, &u_r, &u_h}) {
    if (u->rank() != 2 || u->rows() != hid || u->cols() != hid)
      throw NumericError("GRU hidden weight has shape " + shape_string(u->shape()));
  }
  for (const Tensor* b : {&b_z, &b_r, &b_h}) {
    if (b->rank() != 1 || b->size() != hid)
      throw NumericError("GRU bias has shape " + shape_string(b->shape()));
  }
}

std::vector<double> gru_step(const GruCellParams& p, std::span<const double> x,
                             std::span<const double> h) {
  p.validate();
  const std::size_t hid = p.hidden_dim();
  if (x.size() != p.input_dim() || h.size() != hid) {
    throw NumericError("gru_step: input " + std::to_string(x.size()) + "/hidden " +
                       std::to_string(h.size()) + " vs cell " + std::to_string(p.input_dim()) +
                       "/" + std::to_string(hid));
  }
  // Same association order as the taped cell so both paths agree bit for bit.
  auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b) {
    std::vector<double> wx = matvec(w, x);
    std::vector<double> uh = matvec(u, h);
    for (std::size_t i = 0; i < hid; ++i) wx[i] = sigmoid((wx[i] + uh[i]) + b[i]);
    return wx;
  };
  const std::vector<double> z = gate(p.w_z, p.u_z, p.b_z);
  const std::vector<double> r = gate(p.w_r, p.u_r, p.b_r);
  std::vector<double> rh(hid);
  for (std::size_t i = 0; i < hid; ++i) rh[i] = r[i] * h[i];
  std::vector<double> cand = matvec(p.w_h, x);
  const std::vector<double> urh = matvec(p.u_h, rh);
  std::vector<double> out(hid);
  for (std::size_t i = 0; i < hid; ++i) {
    cand[i] = std::tanh((cand[i] + urh[i]) + p.b_h[i]);
    out[i] = (1.0 - z[i]) * h[i] + z[i] * cand[i];
  }
  require_finite(out, "gru_step output");
  return out;
}

void init_uniform(Tensor& t, Rng& rng, double scale) {
  for (double& v : t.storage()) v = uniform_real(rng, -scale, scale);
}

}  // namespace qadpt
