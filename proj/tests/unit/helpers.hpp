#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "aia/corpus.hpp"
#include "aia/model.hpp"
#include "aia/ops.hpp"
#include "aia/tensor.hpp"
#include "aia/vocab.hpp"

namespace aia::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

struct GradProbe {
  std::size_t param = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

// Relative error with a 1e-6 floor on the scale, so gradients smaller than
// the difference quotient can resolve are compared absolutely.
inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

// Analytic gradients of loss() versus five-point central differences at `probes`
// randomly chosen entries of `params`. With probes == 0 every entry is checked.
inline std::vector<GradProbe> grad_check(std::vector<Tensor> params, const std::function<Tensor()>& loss,
                                         std::size_t probes, std::uint64_t seed, double h = 1e-3) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.clear_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(loss());
  }
  std::vector<std::pair<std::size_t, std::size_t>> where;
  if (probes == 0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t k = 0; k < params[i].numel(); ++k) where.emplace_back(i, k);
    }
  } else {
    std::mt19937_64 rng(seed);
    std::size_t total = 0;
    for (const auto& p : params) total += p.numel();
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t t = 0; t < probes; ++t) {
      std::size_t flat = pick(rng), i = 0;
      while (flat >= params[i].numel()) flat -= params[i++].numel();
      where.emplace_back(i, flat);
    }
  }
  std::vector<GradProbe> out;
  NoGradScope no_grad;
  for (auto [i, k] : where) {
    auto w = params[i].mutable_data();
    const double orig = w[k];
    auto at = [&](double delta) {
      w[k] = orig + delta;
      return loss().item();
    };
    const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
    w[k] = orig;
    GradProbe g{i, k, params[i].has_grad() ? params[i].grad()[k] : 0.0, numeric, 0.0};
    g.rel_error = rel_error(g.analytic, g.numeric);
    out.push_back(g);
  }
  return out;
}

inline double max_rel_error(const std::vector<GradProbe>& probes) {
  double m = 0.0;
  for (const auto& p : probes) m = std::max(m, p.rel_error);
  return m;
}

inline ModelConfig tiny_config(Architecture arch = Architecture::B, std::size_t layers = 2) {
  ModelConfig c;
  c.n_layers = layers;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 12;
  c.max_seq_len = 16;
  c.arch = arch;
  return c;
}

inline Corpus toy_corpus(std::size_t docs, std::uint64_t seed, const std::string& name = "toy",
                         CorpusRole role = CorpusRole::Public) {
  static const std::vector<std::string> words{"the", "red", "cat", "sat", "on", "a", "mat", "and", "dog", "ran"};
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t d = 0; d < docs; ++d) {
    std::string s;
    const std::size_t n = 4 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + words[rng() % words.size()];
    out.push_back(s + " " + std::to_string(d) + ".");
  }
  return Corpus(name, role, std::move(out));
}

}  // namespace aia::test
