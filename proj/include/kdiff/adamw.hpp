#pragma once

#include <cstdint>
#include <vector>

#include "kdiff/params.hpp"

namespace kdiff {

struct AdamWConfig {
  double lr = 0.9e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// First/second moments aligned with a ParamSet's entries.
struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

OptimizerState make_optimizer_state(const ParamSet& params);

/// Decoupled weight decay, then the bias-corrected Adam update:
///   p <- p - lr * wd * p
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
void adamw_step(ParamSet& params, const std::vector<Tensor>& grads, OptimizerState& state,
                const AdamWConfig& config);

}  // namespace kdiff
