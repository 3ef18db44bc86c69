#include "aia/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "aia/error.hpp"
#include "aia/similarity.hpp"

namespace aia {

double perplexity_from_logits(const Tensor& logits, std::span<const TokenId> reference) {
  if (reference.empty()) throw ContractError("perplexity: empty reference");
  NoGradScope no_grad;
  return std::exp(softmax_cross_entropy(logits, reference).item());
}

double perplexity(const AttackModel& model, std::span<const ReferencePair> pairs) {
  NoGradScope no_grad;
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& p : pairs) {
    if (p.reference.empty()) throw ContractError("perplexity: empty reference");
    const double mean = softmax_cross_entropy(forward_attack(model, p.activation), p.reference).item();
    nll += mean * static_cast<double>(p.reference.size());
    count += p.reference.size();
  }
  if (count == 0) throw ContractError("perplexity: no reference tokens");
  return std::exp(nll / static_cast<double>(count));
}

std::vector<std::string> metric_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

using Tok = std::vector<std::string>;

std::map<Tok, std::size_t> ngram_counts(const Tok& t, std::size_t n) {
  std::map<Tok, std::size_t> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tok(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

std::size_t clipped_overlap(const std::map<Tok, std::size_t>& cand, const std::map<Tok, std::size_t>& ref) {
  std::size_t m = 0;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

double f1(double overlap, double n_cand, double n_ref) {
  if (overlap == 0.0) return 0.0;
  const double p = overlap / n_cand, r = overlap / n_ref;
  return 2.0 * p * r / (p + r);
}

std::size_t lcs(const Tok& a, const Tok& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_n(std::string_view candidate, std::string_view reference, std::size_t n) {
  if (n < 1) throw ContractError("rouge_n: n must be positive");
  const Tok c = metric_tokens(candidate), r = metric_tokens(reference);
  if (c == r) return 1.0;
  if (c.size() < n || r.size() < n) return 0.0;
  const auto cg = ngram_counts(c, n), rg = ngram_counts(r, n);
  return f1(static_cast<double>(clipped_overlap(cg, rg)), static_cast<double>(c.size() + 1 - n),
            static_cast<double>(r.size() + 1 - n));
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  const Tok c = metric_tokens(candidate), r = metric_tokens(reference);
  if (c == r) return 1.0;
  if (c.empty() || r.empty()) return 0.0;
  return f1(static_cast<double>(lcs(c, r)), static_cast<double>(c.size()), static_cast<double>(r.size()));
}

double bleu_n(std::string_view candidate, std::string_view reference, std::size_t max_n) {
  if (max_n < 1) throw ContractError("bleu_n: max_n must be positive");
  const Tok c = metric_tokens(candidate), r = metric_tokens(reference);
  if (c.empty()) return 0.0;
  double log_sum = 0.0;
  std::size_t orders = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    if (c.size() < n) break;
    const double total = static_cast<double>(c.size() + 1 - n);
    const auto matches = static_cast<double>(clipped_overlap(ngram_counts(c, n), ngram_counts(r, n)));
    const double p = matches > 0.0 ? matches / total : 1.0 / (2.0 * total);
    log_sum += std::log(p);
    ++orders;
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(r.size()) / static_cast<double>(c.size())));
  return std::clamp(bp * std::exp(log_sum / static_cast<double>(orders)), 0.0, 1.0);
}

std::vector<double> sentence_embedding(std::string_view text, const TransformerModel& encoder, const Vocab& vocab) {
  const Tokens ids = vocab.encode_content(text);
  if (ids.empty()) throw ContractError("embedding_cosine: empty text");
  NoGradScope no_grad;
  const std::size_t d = encoder.config().d_model, ctx = encoder.config().max_seq_len;
  std::vector<double> pooled(d, 0.0);
  for (std::size_t start = 0; start < ids.size(); start += ctx) {
    std::span<const TokenId> chunk(ids.data() + start, std::min(ctx, ids.size() - start));
    Tensor a = forward_prefix(encoder, chunk, encoder.config().n_layers);
    for (std::size_t p = 0; p < chunk.size(); ++p) {
      for (std::size_t k = 0; k < d; ++k) pooled[k] += a.at(p, k);
    }
  }
  for (auto& v : pooled) v /= static_cast<double>(ids.size());
  return pooled;
}

double embedding_cosine(std::string_view candidate, std::string_view reference, const TransformerModel& encoder,
                        const Vocab& vocab) {
  return cosine(sentence_embedding(candidate, encoder, vocab), sentence_embedding(reference, encoder, vocab));
}

NormalizedPii normalize_pii(std::string_view value) {
  NormalizedPii out;
  for (char ch : value) {
    if (std::isalnum(static_cast<unsigned char>(ch))) out.canonical.push_back(ch);
  }
  return out;
}

bool pii_recovered(std::string_view generation, std::string_view true_value) {
  const auto truth = normalize_pii(true_value).canonical;
  if (truth.empty()) return false;
  return normalize_pii(generation).canonical.find(truth) != std::string::npos;
}

double asr_exact_match(std::span<const std::string> generations, std::span<const PiiRecord> records, PiiType target) {
  if (generations.size() != records.size()) throw ContractError("asr: generation and record counts differ");
  if (records.empty()) throw ContractError("asr: no records");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < records.size(); ++i) hits += pii_recovered(generations[i], records[i].value(target));
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double asr_exact_match(std::span<const std::string> generations, std::span<const PiiRecord> records,
                       std::string_view target_type) {
  return asr_exact_match(generations, records, pii_type_from_string(target_type));
}

void MetricReport::validate() const {
  auto in01 = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!std::isfinite(ppl) || ppl < 1.0) throw MetricError("PPL " + std::to_string(ppl) + " is below 1");
  for (double v : {rouge1, rouge2, rougeL, bleu1, bleu2, bleu4}) {
    if (!in01(v)) throw MetricError("ROUGE/BLEU value " + std::to_string(v) + " outside [0, 1]");
  }
  if (!std::isfinite(cos) || cos < -1.0 || cos > 1.0) throw MetricError("COS outside [-1, 1]");
  for (const auto& [type, v] : asr) {
    if (!in01(v)) throw MetricError("ASR for " + type + " outside [0, 1]");
  }
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"PPL", ppl},       {"ROUGE-1", rouge1}, {"ROUGE-2", rouge2}, {"ROUGE-L", rougeL},
                   {"BLEU-1", bleu1},  {"BLEU-2", bleu2},   {"BLEU-4", bleu4},   {"COS", cos}};
  j["ASR"] = nlohmann::json::object();
  for (const auto& [type, v] : asr) j["ASR"][type] = v;
  return j;
}

TextScores score_texts(std::span<const std::string> candidates, std::span<const std::string> references,
                       const TransformerModel* encoder, const Vocab* vocab) {
  if (candidates.size() != references.size()) throw ContractError("score_texts: size mismatch");
  TextScores s;
  if (candidates.empty()) return s;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& r = references[i];
    s.rouge1 += rouge_n(c, r, 1);
    s.rouge2 += rouge_n(c, r, 2);
    s.rougeL += rouge_l(c, r);
    s.bleu1 += bleu_n(c, r, 1);
    s.bleu2 += bleu_n(c, r, 2);
    s.bleu4 += bleu_n(c, r, 4);
    if (encoder && vocab && !vocab->encode_content(c).empty() && !vocab->encode_content(r).empty()) {
      s.cos += embedding_cosine(c, r, *encoder, *vocab);
    }
  }
  const double n = static_cast<double>(candidates.size());
  for (double* v : {&s.rouge1, &s.rouge2, &s.rougeL, &s.bleu1, &s.bleu2, &s.bleu4, &s.cos}) *v /= n;
  return s;
}

}  // namespace aia
