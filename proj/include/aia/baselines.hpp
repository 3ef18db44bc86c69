#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aia/model.hpp"
#include "aia/pii.hpp"
#include "aia/vocab.hpp"

namespace aia {

inline constexpr const char* kDefaultQueryTemplate = "the {type} of {name} is";

// Substitutes {type} and {name}.
std::string render_query(std::string_view query_template, const PiiRecord& record, PiiType target);

// The record's other attribute values (never the target, never the name)
// followed by the query.
std::string true_prefix_prompt(const PiiRecord& record, PiiType target,
                               std::string_view query_template = kDefaultQueryTemplate);

std::vector<std::string> baseline_true_prefix(const TransformerModel& victim, std::span<const PiiRecord> records,
                                              PiiType target, const Vocab& vocab, std::size_t max_new_tokens = 40,
                                              std::string_view query_template = kDefaultQueryTemplate);

struct SoftPrompt {
  Tensor embeddings;  // [length x d_model]
  std::size_t pairs_used = 0;
  std::size_t epochs = 0;
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;
};

struct SptOptions {
  std::size_t prompt_length = 10;
  std::size_t epochs = 5;
  std::size_t min_pairs = 64;
  std::size_t batch_size = 8;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  std::size_t max_new_tokens = 40;
  std::string query_template = kDefaultQueryTemplate;
};

struct SptResult {
  SoftPrompt prompt;
  std::vector<std::string> generations;  // one per evaluation record
};

// Optimizes only the soft prompt; the victim is never updated.
SptResult baseline_spt(const TransformerModel& victim, std::span<const PiiRecord> train_pairs,
                       std::span<const PiiRecord> eval_records, PiiType target, const Vocab& vocab,
                       const SptOptions& options = {});

// Logits for [soft prompt ; embedded ids].
Tensor forward_with_prefix(const TransformerModel& model, const Tensor& soft_prompt, std::span<const TokenId> ids);
Tokens generate_with_soft_prompt(const TransformerModel& model, const Tensor& soft_prompt, const Tokens& prompt,
                                 std::size_t max_new_tokens);

}  // namespace aia
