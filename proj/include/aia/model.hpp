#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aia/ops.hpp"
#include "aia/optim.hpp"

namespace aia {

struct Window;

// Sublayer conventions:
//   A: post-norm, learned positions, GELU MLP, biases everywhere
//   B: pre-norm, learned positions, GELU MLP, biases everywhere, final norm
//   C: pre-norm, rotary positions, gated SiLU MLP, no biases, final norm
enum class Architecture { A, B, C };

const char* to_string(Architecture arch);
Architecture architecture_from_string(std::string_view tag);

struct ModelConfig {
  std::size_t n_layers = 12;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 160;
  Architecture arch = Architecture::B;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// The attack model shares the decoder-block hyperparameters; its d_model must
// equal the width of the activations it inverts.
using AttackModelConfig = ModelConfig;

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

inline constexpr double kNormEps = 1e-5;

struct BlockParams {
  Tensor ln1_g, ln1_b;
  Tensor w_qkv, b_qkv;  // b_qkv undefined for arch C
  Tensor w_o, b_o;      // b_o undefined for arch C
  Tensor ln2_g, ln2_b;
  Tensor w_fc, b_fc, w_proj, b_proj;  // arch A/B
  Tensor w_gate, w_up, w_down;        // arch C

  void append_named(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const;
  BlockParams clone() const;
};

struct EmbeddingParams {
  Tensor tokens;     // [V x d]
  Tensor positions;  // [max_seq_len x d], undefined for arch C
};

struct HeadParams {
  Tensor ln_g, ln_b;  // undefined for arch A
  Tensor weight;      // [d x V]
};

BlockParams init_block(const ModelConfig& c, std::mt19937_64& rng);

Tensor embed_forward(const ModelConfig& c, const EmbeddingParams& p, std::span<const TokenId> ids);
// Adds learned positions (arch A/B) to already-embedded rows.
Tensor position_forward(const ModelConfig& c, const Tensor& positions, const Tensor& x);
Tensor block_forward(const ModelConfig& c, const BlockParams& p, const Tensor& x);
Tensor head_forward(const ModelConfig& c, const HeadParams& p, const Tensor& x);

class TransformerModel {
 public:
  TransformerModel() = default;
  TransformerModel(ModelConfig config, EmbeddingParams embedding, std::vector<BlockParams> blocks, HeadParams head);

  const ModelConfig& config() const noexcept { return config_; }
  const EmbeddingParams& embedding() const noexcept { return embedding_; }
  const std::vector<BlockParams>& blocks() const noexcept { return blocks_; }
  const HeadParams& head() const noexcept { return head_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  std::uint64_t parameter_hash() const;
  void set_trainable(bool on);

  TransformerModel clone() const;

 private:
  ModelConfig config_;
  EmbeddingParams embedding_;
  std::vector<BlockParams> blocks_;
  HeadParams head_;
};

// Closed-form parameter count for a configuration.
std::size_t expected_parameter_count(const ModelConfig& c);

TransformerModel init_model(const ModelConfig& config, std::uint64_t seed);

// Activation after block j (1-based); j = 0 is the embedding output.
Tensor forward_prefix(const TransformerModel& model, std::span<const TokenId> tokens, std::size_t j);

struct ForwardResult {
  Tensor logits;                    // [n x V]
  std::vector<Tensor> activations;  // activations[j-1] is the output of block j
};
ForwardResult forward_full(const TransformerModel& model, std::span<const TokenId> tokens);

// Decoder blocks and an lm_head with no token embedding; consumes activations.
class AttackModel {
 public:
  AttackModel() = default;
  AttackModel(AttackModelConfig config, Tensor positions, std::vector<BlockParams> blocks, HeadParams head);

  const AttackModelConfig& config() const noexcept { return config_; }
  const Tensor& positions() const noexcept { return positions_; }
  const std::vector<BlockParams>& blocks() const noexcept { return blocks_; }
  const HeadParams& head() const noexcept { return head_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::uint64_t parameter_hash() const;
  AttackModel clone() const;

 private:
  AttackModelConfig config_;
  Tensor positions_;  // undefined for arch C
  std::vector<BlockParams> blocks_;
  HeadParams head_;
};

AttackModel init_attack_model(const AttackModelConfig& config, std::uint64_t seed);

// activations [n x d_model] -> logits [n x V]
Tensor forward_attack(const AttackModel& model, const Tensor& activations);

// Position-wise argmax (lowest id wins ties) over at most max_len positions,
// stopping before the first EOS.
Tokens decode_greedy(const AttackModel& model, const Tensor& activations, std::size_t max_len);
Tokens greedy_from_logits(const Tensor& logits, std::size_t max_len);

// Next-token cross-entropy over `batch` (mean of per-window means), one
// backward pass per window, then one AdamW update.
double finetune_step(TransformerModel& model, std::span<const Window> batch, OptimizerState& state);
double window_loss(const TransformerModel& model, const Window& window);

// Greedy continuation of `prompt` with the language model (no cache).
Tokens generate_greedy(const TransformerModel& model, const Tokens& prompt, std::size_t max_new_tokens);

}  // namespace aia
