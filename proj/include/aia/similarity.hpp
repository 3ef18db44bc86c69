#pragma once

#include <span>
#include <vector>

#include "aia/model.hpp"

namespace aia {

// Mean cosine similarity, per layer, between the activations the two models
// produce for the same probe tokens. Averaged over probes and positions.
// Entry j-1 belongs to block j.
std::vector<double> activation_similarity_study(const TransformerModel& model_pre, const TransformerModel& model_fine,
                                                std::span<const Tokens> probes);

double cosine(std::span<const double> a, std::span<const double> b);

// Spearman rank correlation with average ranks for ties.
double spearman_correlation(std::span<const double> x, std::span<const double> y);

}  // namespace aia
