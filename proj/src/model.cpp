#include "aia/model.hpp"

#include <algorithm>

#include "aia/corpus.hpp"
#include "aia/error.hpp"
#include "aia/vocab.hpp"

namespace aia {

const char* to_string(Architecture arch) {
  switch (arch) {
    case Architecture::A: return "arch-A";
    case Architecture::B: return "arch-B";
    case Architecture::C: return "arch-C";
  }
  return "?";
}

Architecture architecture_from_string(std::string_view tag) {
  if (tag == "arch-A" || tag == "A") return Architecture::A;
  if (tag == "arch-B" || tag == "B") return Architecture::B;
  if (tag == "arch-C" || tag == "C") return Architecture::C;
  throw ConfigError("unknown architecture tag '" + std::string(tag) + "'");
}

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0) {
    throw ContractError("model config: dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw ContractError("model config: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                        std::to_string(n_heads));
  }
  if (max_seq_len < 2) throw ContractError("model config: max_seq_len must be at least 2");
  if (arch == Architecture::C && (d_model / n_heads) % 2 != 0) {
    throw ContractError("model config: rotary positions need an even head dimension");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},     {"d_model", c.d_model},         {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},   {"max_seq_len", c.max_seq_len},
          {"architecture", to_string(c.arch)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.arch = architecture_from_string(j.at("architecture").get<std::string>());
  return c;
}

namespace {

Tensor normal(Shape shape, std::mt19937_64& rng, double std_dev = 0.02) {
  std::normal_distribution<double> dist(0.0, std_dev);
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.mutable_data()) v = dist(rng);
  return t;
}

Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

void add_named(std::vector<std::pair<std::string, Tensor>>& out, std::string name, const Tensor& t) {
  if (t.defined()) out.emplace_back(std::move(name), t);
}

Tensor clone_param(const Tensor& t) { return t.defined() ? t.clone(t.requires_grad()) : Tensor(); }

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

Tensor attention(const ModelConfig& c, const BlockParams& p, const Tensor& x) {
  Tensor qkv = linear(x, p.w_qkv, p.b_qkv);
  Tensor a = causal_attention(qkv, c.n_heads, c.arch == Architecture::C);
  return linear(a, p.w_o, p.b_o);
}

Tensor mlp(const ModelConfig& c, const BlockParams& p, const Tensor& x) {
  if (c.arch == Architecture::C) {
    return matmul(mul(silu(matmul(x, p.w_gate)), matmul(x, p.w_up)), p.w_down);
  }
  return linear(gelu(linear(x, p.w_fc, p.b_fc)), p.w_proj, p.b_proj);
}

std::uint64_t hash_named(const std::vector<std::pair<std::string, Tensor>>& named) {
  std::uint64_t h = 14695981039346656037ULL;
  for (const auto& [name, t] : named) {
    h = hash_bytes(name, h);
    h = hash_values(t.data(), h);
  }
  return h;
}

}  // namespace

BlockParams init_block(const ModelConfig& c, std::mt19937_64& rng) {
  const std::size_t d = c.d_model, ff = c.d_ff;
  const bool gated = c.arch == Architecture::C;
  BlockParams p;
  p.ln1_g = ones({d});
  p.ln1_b = zeros({d});
  p.w_qkv = normal({d, 3 * d}, rng);
  if (!gated) p.b_qkv = zeros({3 * d});
  p.w_o = normal({d, d}, rng);
  if (!gated) p.b_o = zeros({d});
  p.ln2_g = ones({d});
  p.ln2_b = zeros({d});
  if (gated) {
    p.w_gate = normal({d, ff}, rng);
    p.w_up = normal({d, ff}, rng);
    p.w_down = normal({ff, d}, rng);
  } else {
    p.w_fc = normal({d, ff}, rng);
    p.b_fc = zeros({ff});
    p.w_proj = normal({ff, d}, rng);
    p.b_proj = zeros({d});
  }
  return p;
}

void BlockParams::append_named(const std::string& prefix, std::vector<std::pair<std::string, Tensor>>& out) const {
  add_named(out, prefix + "ln1.gamma", ln1_g);
  add_named(out, prefix + "ln1.beta", ln1_b);
  add_named(out, prefix + "attn.qkv.weight", w_qkv);
  add_named(out, prefix + "attn.qkv.bias", b_qkv);
  add_named(out, prefix + "attn.out.weight", w_o);
  add_named(out, prefix + "attn.out.bias", b_o);
  add_named(out, prefix + "ln2.gamma", ln2_g);
  add_named(out, prefix + "ln2.beta", ln2_b);
  add_named(out, prefix + "mlp.fc.weight", w_fc);
  add_named(out, prefix + "mlp.fc.bias", b_fc);
  add_named(out, prefix + "mlp.proj.weight", w_proj);
  add_named(out, prefix + "mlp.proj.bias", b_proj);
  add_named(out, prefix + "mlp.gate.weight", w_gate);
  add_named(out, prefix + "mlp.up.weight", w_up);
  add_named(out, prefix + "mlp.down.weight", w_down);
}

BlockParams BlockParams::clone() const {
  BlockParams p;
  p.ln1_g = clone_param(ln1_g);
  p.ln1_b = clone_param(ln1_b);
  p.w_qkv = clone_param(w_qkv);
  p.b_qkv = clone_param(b_qkv);
  p.w_o = clone_param(w_o);
  p.b_o = clone_param(b_o);
  p.ln2_g = clone_param(ln2_g);
  p.ln2_b = clone_param(ln2_b);
  p.w_fc = clone_param(w_fc);
  p.b_fc = clone_param(b_fc);
  p.w_proj = clone_param(w_proj);
  p.b_proj = clone_param(b_proj);
  p.w_gate = clone_param(w_gate);
  p.w_up = clone_param(w_up);
  p.w_down = clone_param(w_down);
  return p;
}

Tensor position_forward(const ModelConfig& c, const Tensor& positions, const Tensor& x) {
  if (c.arch == Architecture::C) return x;
  return add_positional(x, positions);
}

Tensor embed_forward(const ModelConfig& c, const EmbeddingParams& p, std::span<const TokenId> ids) {
  if (ids.size() > c.max_seq_len) {
    throw ContractError("sequence of " + std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                        std::to_string(c.max_seq_len));
  }
  return position_forward(c, p.positions, embedding(p.tokens, ids));
}

Tensor block_forward(const ModelConfig& c, const BlockParams& p, const Tensor& x) {
  if (c.arch == Architecture::A) {
    Tensor h = layer_norm(add(x, attention(c, p, x)), p.ln1_g, p.ln1_b, kNormEps);
    return layer_norm(add(h, mlp(c, p, h)), p.ln2_g, p.ln2_b, kNormEps);
  }
  Tensor h = add(x, attention(c, p, layer_norm(x, p.ln1_g, p.ln1_b, kNormEps)));
  return add(h, mlp(c, p, layer_norm(h, p.ln2_g, p.ln2_b, kNormEps)));
}

Tensor head_forward(const ModelConfig& c, const HeadParams& p, const Tensor& x) {
  if (c.arch == Architecture::A) return matmul(x, p.weight);
  return matmul(layer_norm(x, p.ln_g, p.ln_b, kNormEps), p.weight);
}

TransformerModel::TransformerModel(ModelConfig config, EmbeddingParams embedding, std::vector<BlockParams> blocks,
                                   HeadParams head)
    : config_(config), embedding_(std::move(embedding)), blocks_(std::move(blocks)), head_(std::move(head)) {
  config_.validate();
  if (blocks_.size() != config_.n_layers) throw ContractError("model: block count does not match n_layers");
}

std::vector<std::pair<std::string, Tensor>> TransformerModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  add_named(out, "embedding.tokens", embedding_.tokens);
  add_named(out, "embedding.positions", embedding_.positions);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].append_named("block" + std::to_string(i + 1) + ".", out);
  add_named(out, "head.ln.gamma", head_.ln_g);
  add_named(out, "head.ln.beta", head_.ln_b);
  add_named(out, "head.weight", head_.weight);
  return out;
}

std::vector<Tensor> TransformerModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [_, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t TransformerModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

std::uint64_t TransformerModel::parameter_hash() const { return hash_named(named_parameters()); }

void TransformerModel::set_trainable(bool on) {
  for (auto& t : parameters()) t.set_requires_grad(on);
}

TransformerModel TransformerModel::clone() const {
  EmbeddingParams e{clone_param(embedding_.tokens), clone_param(embedding_.positions)};
  std::vector<BlockParams> b;
  for (const auto& blk : blocks_) b.push_back(blk.clone());
  HeadParams h{clone_param(head_.ln_g), clone_param(head_.ln_b), clone_param(head_.weight)};
  return TransformerModel(config_, std::move(e), std::move(b), std::move(h));
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, ff = c.d_ff, V = c.vocab_size, L = c.max_seq_len;
  std::size_t per_block = 0;
  std::size_t total = V * d + d * V;  // token embedding + lm_head
  switch (c.arch) {
    case Architecture::A:
    case Architecture::B:
      per_block = 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d + (d * ff + ff) + (ff * d + d);
      total += L * d;
      if (c.arch == Architecture::B) total += 2 * d;
      break;
    case Architecture::C:
      per_block = 2 * d + 3 * d * d + d * d + 2 * d + 3 * d * ff;
      total += 2 * d;
      break;
  }
  return total + c.n_layers * per_block;
}

TransformerModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;
  EmbeddingParams e;
  e.tokens = normal({config.vocab_size, d}, rng);
  if (config.arch != Architecture::C) e.positions = normal({config.max_seq_len, d}, rng);
  std::vector<BlockParams> blocks;
  for (std::size_t i = 0; i < config.n_layers; ++i) blocks.push_back(init_block(config, rng));
  HeadParams h;
  if (config.arch != Architecture::A) {
    h.ln_g = ones({d});
    h.ln_b = zeros({d});
  }
  h.weight = normal({d, config.vocab_size}, rng);
  return TransformerModel(config, std::move(e), std::move(blocks), std::move(h));
}

Tensor forward_prefix(const TransformerModel& model, std::span<const TokenId> tokens, std::size_t j) {
  const auto& c = model.config();
  if (j > c.n_layers) {
    throw IndexError("forward_prefix: layer " + std::to_string(j) + " outside [0, " + std::to_string(c.n_layers) +
                     "]");
  }
  Tensor x = embed_forward(c, model.embedding(), tokens);
  for (std::size_t i = 0; i < j; ++i) x = block_forward(c, model.blocks()[i], x);
  return x;
}

ForwardResult forward_full(const TransformerModel& model, std::span<const TokenId> tokens) {
  const auto& c = model.config();
  ForwardResult r;
  Tensor x = embed_forward(c, model.embedding(), tokens);
  for (const auto& b : model.blocks()) {
    x = block_forward(c, b, x);
    r.activations.push_back(x);
  }
  r.logits = head_forward(c, model.head(), x);
  return r;
}

AttackModel::AttackModel(AttackModelConfig config, Tensor positions, std::vector<BlockParams> blocks, HeadParams head)
    : config_(config), positions_(std::move(positions)), blocks_(std::move(blocks)), head_(std::move(head)) {
  config_.validate();
  if (blocks_.size() != config_.n_layers) throw ContractError("attack model: block count does not match n_layers");
}

std::vector<std::pair<std::string, Tensor>> AttackModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  add_named(out, "positions", positions_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].append_named("block" + std::to_string(i + 1) + ".", out);
  add_named(out, "head.ln.gamma", head_.ln_g);
  add_named(out, "head.ln.beta", head_.ln_b);
  add_named(out, "head.weight", head_.weight);
  return out;
}

std::vector<Tensor> AttackModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [_, t] : named_parameters()) out.push_back(t);
  return out;
}

std::uint64_t AttackModel::parameter_hash() const { return hash_named(named_parameters()); }

AttackModel AttackModel::clone() const {
  std::vector<BlockParams> b;
  for (const auto& blk : blocks_) b.push_back(blk.clone());
  HeadParams h{clone_param(head_.ln_g), clone_param(head_.ln_b), clone_param(head_.weight)};
  return AttackModel(config_, clone_param(positions_), std::move(b), std::move(h));
}

AttackModel init_attack_model(const AttackModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Tensor positions;
  if (config.arch != Architecture::C) positions = normal({config.max_seq_len, config.d_model}, rng);
  std::vector<BlockParams> blocks;
  for (std::size_t i = 0; i < config.n_layers; ++i) blocks.push_back(init_block(config, rng));
  HeadParams h;
  if (config.arch != Architecture::A) {
    h.ln_g = ones({config.d_model});
    h.ln_b = zeros({config.d_model});
  }
  h.weight = normal({config.d_model, config.vocab_size}, rng);
  return AttackModel(config, std::move(positions), std::move(blocks), std::move(h));
}

Tensor forward_attack(const AttackModel& model, const Tensor& activations) {
  const auto& c = model.config();
  if (activations.ndim() != 2 || activations.dim(1) != c.d_model) {
    throw ShapeError("forward_attack: activations " + shape_to_string(activations.shape()) +
                     " do not match attack width " + std::to_string(c.d_model));
  }
  if (activations.dim(0) > c.max_seq_len) {
    throw ContractError("forward_attack: " + std::to_string(activations.dim(0)) + " positions exceed max_seq_len");
  }
  Tensor x = position_forward(c, model.positions(), activations);
  for (const auto& b : model.blocks()) x = block_forward(c, b, x);
  return head_forward(c, model.head(), x);
}

Tokens greedy_from_logits(const Tensor& logits, std::size_t max_len) {
  const std::size_t n = std::min(logits.rows(), max_len), v = logits.cols();
  Tokens out;
  for (std::size_t p = 0; p < n; ++p) {
    auto row = logits.data().subspan(p * v, v);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == Vocab::kEos) break;
    out.push_back(best);
  }
  return out;
}

Tokens decode_greedy(const AttackModel& model, const Tensor& activations, std::size_t max_len) {
  if (max_len < 1) throw ContractError("decode_greedy: max_len must be at least 1");
  NoGradScope no_grad;
  return greedy_from_logits(forward_attack(model, activations), max_len);
}

double window_loss(const TransformerModel& model, const Window& window) {
  NoGradScope no_grad;
  const auto& c = model.config();
  Tensor x = embed_forward(c, model.embedding(), window.input);
  for (const auto& b : model.blocks()) x = block_forward(c, b, x);
  return softmax_cross_entropy(head_forward(c, model.head(), x), window.target).item();
}

double finetune_step(TransformerModel& model, std::span<const Window> batch, OptimizerState& state) {
  if (batch.empty()) throw ContractError("finetune_step: empty batch");
  auto params = model.parameters();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& w : batch) {
    Tape tape;
    TapeScope scope(tape);
    const auto& c = model.config();
    Tensor x = embed_forward(c, model.embedding(), w.input);
    for (const auto& b : model.blocks()) x = block_forward(c, b, x);
    Tensor scaled = scale(softmax_cross_entropy(head_forward(c, model.head(), x), w.target), inv);
    loss += scaled.item();
    tape.backward(scaled);
  }
  adamw_step(params, state);
  zero_grads(params);
  return loss;
}

Tokens generate_greedy(const TransformerModel& model, const Tokens& prompt, std::size_t max_new_tokens) {
  if (prompt.empty()) throw ContractError("generate_greedy: empty prompt");
  NoGradScope no_grad;
  const std::size_t ctx = model.config().max_seq_len;
  Tokens seq = prompt;
  Tokens out;
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    const std::size_t start = seq.size() > ctx ? seq.size() - ctx : 0;
    std::span<const TokenId> window(seq.data() + start, seq.size() - start);
    Tensor logits = forward_full(model, window).logits;
    const std::size_t v = logits.cols();
    auto row = logits.data().subspan((logits.rows() - 1) * v, v);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == Vocab::kEos) break;
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

}  // namespace aia
