#include "qadpt/adam.hpp"

#include <cmath>

#include "qadpt/error.hpp"

namespace qadpt {

AdamState AdamState::zeros_like(const ParameterList& params) {
  AdamState s;
  for (const auto& [name, t] : params) {
    s.m.push_back(Tensor::zeros_like(*t));
    s.v.push_back(Tensor::zeros_like(*t));
  }
  return s;
}

void adam_update(const ParameterList& params, const Gradients& grads, AdamState& state,
                 const AdamConfig& config) {
  grads.check_congruent(params);
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw NumericError("Adam state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_finite(grads.tensors[i].values(), "gradient of " + params[i].first);
    if (!state.m[i].same_shape(*params[i].second) || !state.v[i].same_shape(*params[i].second))
      throw NumericError("Adam moment shape mismatch for " + params[i].first);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(config.beta1, t);
  const double correct2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].second->storage();
    auto& m = state.m[i].storage();
    auto& v = state.v[i].storage();
    const auto& g = grads.tensors[i].storage();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correct1;
      const double v_hat = v[j] / correct2;
      p[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = grads.global_norm();
  if (norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace qadpt
