#include "aia/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aia/error.hpp"

namespace aia {

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return aa == bb ? 1.0 : 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0);
}

std::vector<double> activation_similarity_study(const TransformerModel& model_pre, const TransformerModel& model_fine,
                                                std::span<const Tokens> probes) {
  if (!(model_pre.config() == model_fine.config())) throw ContractError("similarity study: model configs differ");
  if (probes.empty()) throw ContractError("similarity study: no probe texts");
  NoGradScope no_grad;
  const std::size_t layers = model_pre.config().n_layers, d = model_pre.config().d_model;
  std::vector<double> total(layers, 0.0);
  std::size_t count = 0;
  for (const auto& probe : probes) {
    if (probe.empty()) continue;
    const auto a = forward_full(model_pre, probe).activations;
    const auto b = forward_full(model_fine, probe).activations;
    for (std::size_t j = 0; j < layers; ++j) {
      for (std::size_t p = 0; p < probe.size(); ++p) {
        total[j] += cosine(a[j].data().subspan(p * d, d), b[j].data().subspan(p * d, d));
      }
    }
    count += probe.size();
  }
  if (count == 0) throw ContractError("similarity study: probe texts are all empty");
  for (auto& v : total) v /= static_cast<double>(count);
  return total;
}

namespace {
std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}
}  // namespace

double spearman_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman: need two equal-length samples of size >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace aia
