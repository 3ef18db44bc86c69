#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "aia/model.hpp"
#include "aia/pii.hpp"
#include "aia/vocab.hpp"

namespace aia {

struct ReferencePair {
  Tensor activation;
  Tokens reference;  // reference[p] is scored against logits row p
};

// exp of the mean per-token NLL, pooled over every reference token.
double perplexity(const AttackModel& model, std::span<const ReferencePair> pairs);
double perplexity_from_logits(const Tensor& logits, std::span<const TokenId> reference);

// Lowercased, whitespace-split tokens.
std::vector<std::string> metric_tokens(std::string_view text);

double rouge_n(std::string_view candidate, std::string_view reference, std::size_t n);
double rouge_l(std::string_view candidate, std::string_view reference);
double bleu_n(std::string_view candidate, std::string_view reference, std::size_t max_n);

// Cosine of mean-pooled final-block activations of the encoder.
double embedding_cosine(std::string_view candidate, std::string_view reference, const TransformerModel& encoder,
                        const Vocab& vocab);
std::vector<double> sentence_embedding(std::string_view text, const TransformerModel& encoder, const Vocab& vocab);

struct NormalizedPii {
  std::string canonical;
};
NormalizedPii normalize_pii(std::string_view value);
bool pii_recovered(std::string_view generation, std::string_view true_value);
double asr_exact_match(std::span<const std::string> generations, std::span<const PiiRecord> records, PiiType target);
double asr_exact_match(std::span<const std::string> generations, std::span<const PiiRecord> records,
                       std::string_view target_type);

struct MetricReport {
  double ppl = 1.0;
  double rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0;
  double bleu1 = 0.0, bleu2 = 0.0, bleu4 = 0.0;
  double cos = 0.0;
  std::map<std::string, double> asr;

  // Throws MetricError when a value leaves its range.
  void validate() const;
  nlohmann::json to_json() const;
};

struct TextScores {
  double rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0;
  double bleu1 = 0.0, bleu2 = 0.0, bleu4 = 0.0;
  double cos = 0.0;
};

// Means over aligned (candidate, reference) pairs. COS is skipped (left 0)
// without an encoder.
TextScores score_texts(std::span<const std::string> candidates, std::span<const std::string> references,
                       const TransformerModel* encoder = nullptr, const Vocab* vocab = nullptr);

}  // namespace aia
