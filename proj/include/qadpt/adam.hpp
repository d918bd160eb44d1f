#pragma once

#include <cstdint>
#include <vector>

#include "qadpt/tape.hpp"

namespace qadpt {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParameterList& params);
};

/// One bias-corrected Adam step in place. Throws NumericError on a non-finite
/// gradient or a shape mismatch; parameters are untouched in that case.
void adam_update(const ParameterList& params, const Gradients& grads, AdamState& state,
                 const AdamConfig& config);

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace qadpt
