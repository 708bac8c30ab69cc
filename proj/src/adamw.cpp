#include "kdiff/adamw.hpp"

#include <cmath>

#include "kdiff/error.hpp"

namespace kdiff {

OptimizerState make_optimizer_state(const ParamSet& params) {
  OptimizerState s;
  for (const auto& [_, t] : params.entries()) {
    s.m.emplace_back(t.shape(), 0.0);
    s.v.emplace_back(t.shape(), 0.0);
  }
  return s;
}

void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, OptimizerState& state,
                const AdamWConfig& config) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() || state.v.size() != entries.size()) {
    fail(ErrorKind::ShapeMismatch, "optimizer got " + std::to_string(grads.size()) + " gradients for " +
                                       std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& shape = entries[i].second.shape();
    if (grads[i].shape() != shape || state.m[i].shape() != shape || state.v[i].shape() != shape) {
      fail(ErrorKind::ShapeMismatch, "gradient for '" + entries[i].first + "' has shape " +
                                         shape_string(grads[i].shape()));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const double decay = config.lr * config.weight_decay;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].second;
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      p[j] -= decay * p[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

}  // namespace kdiff
