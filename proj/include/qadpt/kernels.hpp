#pragma once

#include <span>
#include <vector>

#include "qadpt/random.hpp"
#include "qadpt/tensor.hpp"

namespace qadpt {

/// Max-subtracted softmax. Throws NumericError on empty or non-finite input.
std::vector<double> softmax(std::span<const double> logits);

/// Softmax restricted to entries with mask[i] != 0; masked entries get exactly 0.
std::vector<double> masked_softmax(std::span<const double> logits, std::span<const char> mask);

double sigmoid(double x);

/// y = W x for a rows x cols matrix.
std::vector<double> matvec(const Tensor& w, std::span<const double> x);

/// Gated recurrent unit cell, update-gate-weights-candidate convention:
///   z  = sigmoid(W_z x + U_z h + b_z)
///   r  = sigmoid(W_r x + U_r h + b_r)
///   h~ = tanh(W_h x + U_h (r * h) + b_h)
///   h' = (1 - z) * h + z * h~
struct GruCellParams {
  Tensor w_z, w_r, w_h;  // hidden x input
  Tensor u_z, u_r, u_h;  // hidden x hidden
  Tensor b_z, b_r, b_h;  // hidden

  static GruCellParams zeros(std::size_t input_dim, std::size_t hidden_dim);

  std::size_t input_dim() const { return w_z.cols(); }
  std::size_t hidden_dim() const { return w_z.rows(); }

  /// Throws NumericError if the nine tensors disagree on dimensions.
  void validate() const;
  friend bool operator==(const GruCellParams&, const GruCellParams&) = default;
};

std::vector<double> gru_step(const GruCellParams& p, std::span<const double> x,
                             std::span<const double> h);

/// Uniform(-scale, scale) fill.
void init_uniform(Tensor& t, Rng& rng, double scale);

}  // namespace qadpt
