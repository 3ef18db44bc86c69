#include "aia/optim.hpp"

#include <cmath>

#include "aia/error.hpp"

namespace aia {

OptimizerState make_optimizer_state(const std::vector<Tensor>& params, const AdamWOptions& options) {
  if (!(options.learning_rate >= 0.0) || !(options.epsilon > 0.0) || !(options.weight_decay >= 0.0) ||
      !(options.beta1 > 0.0 && options.beta1 < 1.0) || !(options.beta2 > 0.0 && options.beta2 < 1.0)) {
    throw ContractError("adamw: invalid hyperparameters");
  }
  OptimizerState state;
  state.options = options;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& p : params) {
    state.m.emplace_back(p.numel(), 0.0);
    state.v.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adamw_step(std::vector<Tensor>& params, OptimizerState& state) {
  if (params.size() != state.m.size()) {
    throw ShapeError("adamw: " + std::to_string(params.size()) + " parameters but state for " +
                     std::to_string(state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].numel() != state.m[i].size() || (params[i].has_grad() && params[i].grad().size() != params[i].numel())) {
      throw ShapeError("adamw: parameter " + std::to_string(i) + " has shape " +
                       shape_to_string(params[i].shape()) + " but state holds " + std::to_string(state.m[i].size()) +
                       " entries");
    }
  }
  const auto& o = state.options;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  const double decay = 1.0 - o.learning_rate * o.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has_grad = params[i].has_grad();
    auto g = params[i].grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has_grad ? g[j] : 0.0;
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * gj;
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] = w[j] * decay - o.learning_rate * m_hat / (std::sqrt(v_hat) + o.epsilon);
    }
  }
}

void zero_grads(std::vector<Tensor>& params) {
  for (auto& p : params) p.zero_grad();
}

}  // namespace aia
