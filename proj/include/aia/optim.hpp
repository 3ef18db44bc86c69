#pragma once

#include <cstdint>
#include <vector>

#include "aia/tensor.hpp"

namespace aia {

struct AdamWOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

// Per-parameter moment buffers plus the shared step counter.
struct OptimizerState {
  AdamWOptions options;
  std::vector<Buffer> m;
  std::vector<Buffer> v;
  std::uint64_t step_count = 0;
};

OptimizerState make_optimizer_state(const std::vector<Tensor>& params, const AdamWOptions& options);

// One decoupled-weight-decay Adam update with bias-corrected moments:
//   p <- p - lr*wd*p
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
// Parameters without a gradient buffer are treated as having zero gradient.
// Gradients are left in place; callers zero them before the next accumulation.
void adamw_step(std::vector<Tensor>& params, OptimizerState& state);

void zero_grads(std::vector<Tensor>& params);

}  // namespace aia
