#include "aia/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "aia/error.hpp"

namespace aia {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat, Eigen::Aligned64>;
using MutMap = Eigen::Map<RowMat, Eigen::Aligned64>;

ConstMap cmap(std::span<const double> s, std::size_t r, std::size_t c) {
  return ConstMap(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MutMap mmap(std::span<double> s, std::size_t r, std::size_t c) {
  return MutMap(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

Tape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = active_tape();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return tape;
  }
  return nullptr;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_to_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
}

// Accumulates `src` into t's gradient when t participates in differentiation.
template <class F>
void accumulate(const Tensor& t, F&& fn) {
  Tensor handle = t;
  if (handle.requires_grad()) fn(handle.mutable_grad());
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  Tape* tape = recording_tape({&a, &b});
  Tensor out = Tensor::zeros({m, n}, tape != nullptr);
  mmap(out.mutable_data(), m, n).noalias() = cmap(a.data(), m, k) * cmap(b.data(), k, n);
  if (tape) {
    tape->record("matmul", [a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      auto gc = cmap(out.grad(), m, n);
      accumulate(a, [&](std::span<double> g) { mmap(g, m, k).noalias() += gc * cmap(b.data(), k, n).transpose(); });
      accumulate(b, [&](std::span<double> g) { mmap(g, k, n).noalias() += cmap(a.data(), m, k).transpose() * gc; });
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tape* tape = recording_tape({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), tape != nullptr);
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (tape) {
    tape->record("add", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      for (const Tensor* t : {&a, &b}) {
        accumulate(*t, [&](std::span<double> g) {
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
        });
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t d = x.cols();
  if (bias.numel() != d) {
    throw ShapeError("add_bias: bias " + shape_to_string(bias.shape()) + " does not match " +
                     shape_to_string(x.shape()));
  }
  Tape* tape = recording_tape({&x, &bias});
  Tensor out = Tensor::zeros(x.shape(), tape != nullptr);
  auto o = out.mutable_data();
  auto xv = x.data(), bv = bias.data();
  const std::size_t n = x.rows();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) o[r * d + c] = xv[r * d + c] + bv[c];
  }
  if (tape) {
    tape->record("add_bias", [x, bias, out, n, d]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      accumulate(x, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      });
      accumulate(bias, [&](std::span<double> g) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < d; ++c) g[c] += go[r * d + c];
        }
      });
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tape* tape = recording_tape({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), tape != nullptr);
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (tape) {
    tape->record("mul", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto x = a.data(), y = b.data();
      accumulate(a, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * y[i];
      });
      accumulate(b, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * x[i];
      });
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  Tape* tape = recording_tape({&x});
  Tensor out = Tensor::zeros(x.shape(), tape != nullptr);
  auto o = out.mutable_data();
  auto xv = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] * factor;
  if (tape) {
    tape->record("scale", [x, out, factor]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      accumulate(x, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * factor;
      });
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tape* tape = recording_tape({&x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s, tape != nullptr);
  if (tape) {
    tape->record("sum", [x, out]() mutable {
      if (!out.has_grad()) return;
      const double go = out.grad()[0];
      accumulate(x, [&](std::span<double> g) {
        for (auto& v : g) v += go;
      });
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma " + shape_to_string(gamma.shape()) + " / beta " +
                     shape_to_string(beta.shape()) + " do not match input " + shape_to_string(x.shape()));
  }
  if (!(eps >= 0.0)) throw ContractError("layer_norm: eps must be non-negative");
  const std::size_t n = x.rows();
  Tape* tape = recording_tape({&x, &gamma, &beta});
  Tensor out = Tensor::zeros(x.shape(), tape != nullptr);
  Buffer xhat(n * d);
  Buffer inv_std(n);
  auto xv = x.data(), gv = gamma.data(), bv = beta.data();
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * is;
      xhat[r * d + c] = h;
      o[r * d + c] = h * gv[c] + bv[c];
    }
  }
  if (tape) {
    tape->record("layer_norm", [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), n,
                                d]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto gv = gamma.data();
      accumulate(gamma, [&](std::span<double> g) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < d; ++c) g[c] += go[r * d + c] * xhat[r * d + c];
        }
      });
      accumulate(beta, [&](std::span<double> g) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < d; ++c) g[c] += go[r * d + c];
        }
      });
      accumulate(x, [&](std::span<double> g) {
        const double inv_d = 1.0 / static_cast<double>(d);
        for (std::size_t r = 0; r < n; ++r) {
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (std::size_t c = 0; c < d; ++c) {
            const double dh = go[r * d + c] * gv[c];
            mean_dh += dh;
            mean_dh_h += dh * xhat[r * d + c];
          }
          mean_dh *= inv_d;
          mean_dh_h *= inv_d;
          for (std::size_t c = 0; c < d; ++c) {
            const double dh = go[r * d + c] * gv[c];
            g[r * d + c] += inv_std[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
          }
        }
      });
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tape* tape = recording_tape({&x});
  Tensor out = Tensor::zeros(x.shape(), tape != nullptr);
  auto xv = x.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const double v = xv[i];
    o[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  }
  if (tape) {
    tape->record("gelu", [x, out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto xv = x.data();
      accumulate(x, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double v = xv[i];
          const double u = kGeluC * (v + 0.044715 * v * v * v);
          const double t = std::tanh(u);
          const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
          g[i] += go[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
        }
      });
    });
  }
  return out;
}

Tensor silu(const Tensor& x) {
  Tape* tape = recording_tape({&x});
  Tensor out = Tensor::zeros(x.shape(), tape != nullptr);
  auto xv = x.data();
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = xv[i] / (1.0 + std::exp(-xv[i]));
  if (tape) {
    tape->record("silu", [x, out]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      auto xv = x.data();
      accumulate(x, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = 1.0 / (1.0 + std::exp(-xv[i]));
          g[i] += go[i] * s * (1.0 + xv[i] * (1.0 - s));
        }
      });
    });
  }
  return out;
}

namespace {

struct RotaryTable {
  std::vector<double> cos, sin;  // [n x dh/2]
};

RotaryTable make_rotary(std::size_t n, std::size_t head_dim) {
  const std::size_t half = head_dim / 2;
  RotaryTable t;
  t.cos.resize(n * half);
  t.sin.resize(n * half);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < half; ++i) {
      const double theta = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = static_cast<double>(p) * theta;
      t.cos[p * half + i] = std::cos(angle);
      t.sin[p * half + i] = std::sin(angle);
    }
  }
  return t;
}

// Rotates consecutive pairs of one head slice in place; `inverse` applies the
// transpose rotation (used to pull gradients back).
void rotate(double* v, std::size_t p, std::size_t head_dim, const RotaryTable& t, bool inverse) {
  const std::size_t half = head_dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double c = t.cos[p * half + i];
    const double s = inverse ? -t.sin[p * half + i] : t.sin[p * half + i];
    const double a = v[2 * i], b = v[2 * i + 1];
    v[2 * i] = a * c - b * s;
    v[2 * i + 1] = a * s + b * c;
  }
}

}  // namespace

Tensor causal_attention(const Tensor& qkv, std::size_t n_heads, bool rotary) {
  require_2d(qkv, "causal_attention");
  if (n_heads == 0 || qkv.dim(1) % (3 * n_heads) != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(qkv.dim(1)) + " is not 3 x heads x head_dim");
  }
  const std::size_t n = qkv.dim(0);
  const std::size_t d = qkv.dim(1) / 3;
  const std::size_t dh = d / n_heads;
  if (rotary && dh % 2 != 0) throw ShapeError("causal_attention: rotary needs an even head dimension");
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  // Head-major copies: q/k/v[h][p][i].
  Buffer q(n * d), k(n * d), v(n * d);
  auto src = qkv.data();
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t i = 0; i < dh; ++i) {
        const std::size_t dst = (h * n + p) * dh + i;
        q[dst] = src[p * 3 * d + h * dh + i];
        k[dst] = src[p * 3 * d + d + h * dh + i];
        v[dst] = src[p * 3 * d + 2 * d + h * dh + i];
      }
    }
  }
  RotaryTable table;
  if (rotary) {
    table = make_rotary(n, dh);
    for (std::size_t h = 0; h < n_heads; ++h) {
      for (std::size_t p = 0; p < n; ++p) {
        rotate(&q[(h * n + p) * dh], p, dh, table, false);
        rotate(&k[(h * n + p) * dh], p, dh, table, false);
      }
    }
  }

  Tape* tape = recording_tape({&qkv});
  Tensor out = Tensor::zeros({n, d}, tape != nullptr);
  auto o = out.mutable_data();
  Buffer probs(n_heads * n * n, 0.0);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const double* qh = &q[h * n * dh];
    const double* kh = &k[h * n * dh];
    const double* vh = &v[h * n * dh];
    for (std::size_t i = 0; i < n; ++i) {
      double* prow = &probs[(h * n + i) * n];
      double mx = -INFINITY;
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qh[i * dh + c] * kh[j * dh + c];
        prow[j] = s * inv_sqrt;
        mx = std::max(mx, prow[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        prow[j] = std::exp(prow[j] - mx);
        z += prow[j];
      }
      const double inv_z = 1.0 / z;
      for (std::size_t j = 0; j <= i; ++j) prow[j] *= inv_z;
      double* orow = &o[i * d + h * dh];
      for (std::size_t j = 0; j <= i; ++j) {
        const double pj = prow[j];
        for (std::size_t c = 0; c < dh; ++c) orow[c] += pj * vh[j * dh + c];
      }
    }
  }

  if (tape) {
    tape->record("causal_attention", [qkv, out, q = std::move(q), k = std::move(k), v = std::move(v),
                                      probs = std::move(probs), table = std::move(table), n, d, dh, n_heads, rotary,
                                      inv_sqrt]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      Buffer dq(n * d, 0.0), dk(n * d, 0.0), dv(n * d, 0.0);
      std::vector<double> dp(n);
      for (std::size_t h = 0; h < n_heads; ++h) {
        const double* qh = &q[h * n * dh];
        const double* kh = &k[h * n * dh];
        const double* vh = &v[h * n * dh];
        double* dqh = &dq[h * n * dh];
        double* dkh = &dk[h * n * dh];
        double* dvh = &dv[h * n * dh];
        for (std::size_t i = 0; i < n; ++i) {
          const double* prow = &probs[(h * n + i) * n];
          const double* gorow = &go[i * d + h * dh];
          double dot = 0.0;
          for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) {
              s += gorow[c] * vh[j * dh + c];
              dvh[j * dh + c] += prow[j] * gorow[c];
            }
            dp[j] = s;
            dot += prow[j] * s;
          }
          for (std::size_t j = 0; j <= i; ++j) {
            const double ds = prow[j] * (dp[j] - dot) * inv_sqrt;
            for (std::size_t c = 0; c < dh; ++c) {
              dqh[i * dh + c] += ds * kh[j * dh + c];
              dkh[j * dh + c] += ds * qh[i * dh + c];
            }
          }
        }
        if (rotary) {
          for (std::size_t p = 0; p < n; ++p) {
            rotate(&dqh[p * dh], p, dh, table, true);
            rotate(&dkh[p * dh], p, dh, table, true);
          }
        }
      }
      accumulate(qkv, [&](std::span<double> g) {
        for (std::size_t p = 0; p < n; ++p) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            for (std::size_t i = 0; i < dh; ++i) {
              const std::size_t s = (h * n + p) * dh + i;
              g[p * 3 * d + h * dh + i] += dq[s];
              g[p * 3 * d + d + h * dh + i] += dk[s];
              g[p * 3 * d + 2 * d + h * dh + i] += dv[s];
            }
          }
        }
      });
    });
  }
  return out;
}

Tensor embedding(const Tensor& table, std::span<const TokenId> ids) {
  require_2d(table, "embedding");
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  const std::size_t vocab = table.dim(0), d = table.dim(1), n = ids.size();
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw IndexError("embedding: token id " + std::to_string(id) + " outside [0, " + std::to_string(vocab) + ")");
    }
  }
  Tape* tape = recording_tape({&table});
  Tensor out = Tensor::zeros({n, d}, tape != nullptr);
  auto o = out.mutable_data();
  auto tv = table.data();
  for (std::size_t p = 0; p < n; ++p) {
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[p]) * d), d, o.begin() + static_cast<std::ptrdiff_t>(p * d));
  }
  if (tape) {
    tape->record("embedding", [table, out, ids = Tokens(ids.begin(), ids.end()), d]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      accumulate(table, [&](std::span<double> g) {
        for (std::size_t p = 0; p < ids.size(); ++p) {
          const std::size_t base = static_cast<std::size_t>(ids[p]) * d;
          for (std::size_t c = 0; c < d; ++c) g[base + c] += go[p * d + c];
        }
      });
    });
  }
  return out;
}

Tensor add_positional(const Tensor& x, const Tensor& positions) {
  require_2d(x, "add_positional");
  require_2d(positions, "add_positional");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (positions.dim(1) != d || positions.dim(0) < n) {
    throw ShapeError("add_positional: table " + shape_to_string(positions.shape()) + " cannot cover input " +
                     shape_to_string(x.shape()));
  }
  Tape* tape = recording_tape({&x, &positions});
  Tensor out = Tensor::zeros({n, d}, tape != nullptr);
  auto o = out.mutable_data();
  auto xv = x.data(), pv = positions.data();
  for (std::size_t i = 0; i < n * d; ++i) o[i] = xv[i] + pv[i];
  if (tape) {
    tape->record("add_positional", [x, positions, out, n, d]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      for (const Tensor* t : {&x, &positions}) {
        accumulate(*t, [&](std::span<double> g) {
          for (std::size_t i = 0; i < n * d; ++i) g[i] += go[i];
        });
      }
    });
  }
  return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_rows");
  require_2d(b, "concat_rows");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError("concat_rows: widths differ, " + shape_to_string(a.shape()) + " vs " +
                     shape_to_string(b.shape()));
  }
  Tape* tape = recording_tape({&a, &b});
  const std::size_t na = a.numel();
  Tensor out = Tensor::zeros({a.dim(0) + b.dim(0), a.dim(1)}, tape != nullptr);
  auto o = out.mutable_data();
  std::copy(a.data().begin(), a.data().end(), o.begin());
  std::copy(b.data().begin(), b.data().end(), o.begin() + static_cast<std::ptrdiff_t>(na));
  if (tape) {
    tape->record("concat_rows", [a, b, out, na]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      accumulate(a, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i];
      });
      accumulate(b, [&](std::span<double> g) {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[na + i];
      });
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require_2d(x, "slice_rows");
  if (begin > end || end > x.dim(0)) {
    throw IndexError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     shape_to_string(x.shape()));
  }
  Tape* tape = recording_tape({&x});
  const std::size_t d = x.dim(1), off = begin * d;
  Tensor out = Tensor::zeros({end - begin, d}, tape != nullptr);
  std::copy(x.data().begin() + static_cast<std::ptrdiff_t>(off),
            x.data().begin() + static_cast<std::ptrdiff_t>(end * d), out.mutable_data().begin());
  if (tape) {
    tape->record("slice_rows", [x, out, off]() mutable {
      if (!out.has_grad()) return;
      auto go = out.grad();
      accumulate(x, [&](std::span<double> g) {
        for (std::size_t i = 0; i < go.size(); ++i) g[off + i] += go[i];
      });
    });
  }
  return out;
}

std::vector<double> row_log_softmax(std::span<const double> row) {
  double mx = -INFINITY;
  for (double v : row) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : row) z += std::exp(v - mx);
  const double log_z = mx + std::log(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - log_z;
  return out;
}

Tensor row_softmax(const Tensor& logits) {
  Tensor out = Tensor::zeros(logits.shape());
  const std::size_t v = logits.cols(), n = logits.rows();
  auto o = out.mutable_data();
  for (std::size_t r = 0; r < n; ++r) {
    auto ls = row_log_softmax(logits.data().subspan(r * v, v));
    for (std::size_t c = 0; c < v; ++c) o[r * v + c] = std::exp(ls[c]);
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const TokenId> targets) {
  require_2d(logits, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                     shape_to_string(logits.shape()));
  }
  for (TokenId t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(vocab) + ")");
    }
  }
  Tape* tape = recording_tape({&logits});
  Buffer probs(n * vocab);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto ls = row_log_softmax(logits.data().subspan(r * vocab, vocab));
    total -= ls[static_cast<std::size_t>(targets[r])];
    for (std::size_t c = 0; c < vocab; ++c) probs[r * vocab + c] = std::exp(ls[c]);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor out = Tensor::scalar(total * inv_n, tape != nullptr);
  if (tape) {
    tape->record("softmax_cross_entropy", [logits, out, probs = std::move(probs),
                                           targets = Tokens(targets.begin(), targets.end()), n, vocab,
                                           inv_n]() mutable {
      if (!out.has_grad()) return;
      const double go = out.grad()[0] * inv_n;
      accumulate(logits, [&](std::span<double> g) {
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < vocab; ++c) g[r * vocab + c] += go * probs[r * vocab + c];
          g[r * vocab + static_cast<std::size_t>(targets[r])] -= go;
        }
      });
    });
  }
  return out;
}

}  // namespace aia
