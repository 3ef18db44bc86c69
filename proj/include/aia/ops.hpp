#pragma once

#include <span>
#include <vector>

#include "aia/tensor.hpp"

namespace aia {

using TokenId = int;
using Tokens = std::vector<TokenId>;

// Differentiable operations. Each records a backward rule into the active
// tape when one is set and any input requires a gradient.

// [m x k] x [k x n] -> [m x n]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
// x[n x d] + bias[d], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sum(const Tensor& x);

// Normalizes each row over the last dimension with the population variance;
// eps is added inside the square root.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

// tanh approximation
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);

// Multi-head causal self-attention over packed projections.
// qkv is [n x 3d] laid out as [q | k | v]; returns [n x d]. With `rotary`,
// rotary position embeddings (base 10000) are applied to q and k per head.
Tensor causal_attention(const Tensor& qkv, std::size_t n_heads, bool rotary);

// Rows of table[V x d] selected by ids -> [n x d].
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);
// x[n x d] + positions[0..n).
Tensor add_positional(const Tensor& x, const Tensor& positions);
// Stacks a[p x d] on top of b[n x d].
Tensor concat_rows(const Tensor& a, const Tensor& b);
// Rows [begin, end) of x[n x d].
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);

// Mean over rows of -log softmax(logits)[row][target].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const TokenId> targets);

// Non-differentiable helpers.
Tensor row_softmax(const Tensor& logits);
std::vector<double> row_log_softmax(std::span<const double> row);

}  // namespace aia
