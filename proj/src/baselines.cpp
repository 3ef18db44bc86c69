#include "aia/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "aia/error.hpp"

namespace aia {

std::string render_query(std::string_view query_template, const PiiRecord& record, PiiType target) {
  std::string out(query_template);
  auto replace = [&](std::string_view key, const std::string& value) {
    for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size())) {
      out.replace(pos, key.size(), value);
    }
  };
  replace("{type}", to_string(target));
  replace("{name}", record.name);
  return out;
}

std::string true_prefix_prompt(const PiiRecord& record, PiiType target, std::string_view query_template) {
  std::string prompt;
  for (auto t : kAllPiiTypes) {
    if (t == target || t == PiiType::Name) continue;
    prompt += record.value(t);
    prompt += ", ";
  }
  return prompt + render_query(query_template, record, target);
}

std::vector<std::string> baseline_true_prefix(const TransformerModel& victim, std::span<const PiiRecord> records,
                                              PiiType target, const Vocab& vocab, std::size_t max_new_tokens,
                                              std::string_view query_template) {
  std::vector<std::string> out;
  for (const auto& r : records) {
    const Tokens prompt = vocab.encode_content(true_prefix_prompt(r, target, query_template));
    out.push_back(vocab.decode(generate_greedy(victim, prompt, max_new_tokens)));
  }
  return out;
}

Tensor forward_with_prefix(const TransformerModel& model, const Tensor& soft_prompt, std::span<const TokenId> ids) {
  const auto& c = model.config();
  if (soft_prompt.ndim() != 2 || soft_prompt.dim(1) != c.d_model) {
    throw ShapeError("soft prompt " + shape_to_string(soft_prompt.shape()) + " does not match model width");
  }
  if (soft_prompt.rows() + ids.size() > c.max_seq_len) throw ContractError("soft prompt plus tokens exceed max_seq_len");
  Tensor x = ids.empty() ? soft_prompt : concat_rows(soft_prompt, embedding(model.embedding().tokens, ids));
  x = position_forward(c, model.embedding().positions, x);
  for (const auto& b : model.blocks()) x = block_forward(c, b, x);
  return head_forward(c, model.head(), x);
}

Tokens generate_with_soft_prompt(const TransformerModel& model, const Tensor& soft_prompt, const Tokens& prompt,
                                 std::size_t max_new_tokens) {
  NoGradScope no_grad;
  const std::size_t room = model.config().max_seq_len - soft_prompt.rows();
  Tokens seq = prompt, out;
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    const std::size_t start = seq.size() > room ? seq.size() - room : 0;
    std::span<const TokenId> ids(seq.data() + start, seq.size() - start);
    Tensor logits = forward_with_prefix(model, soft_prompt, ids);
    const std::size_t v = logits.cols();
    auto row = logits.data().subspan((logits.rows() - 1) * v, v);
    const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == Vocab::kEos) break;
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

SptResult baseline_spt(const TransformerModel& victim, std::span<const PiiRecord> train_pairs,
                       std::span<const PiiRecord> eval_records, PiiType target, const Vocab& vocab,
                       const SptOptions& options) {
  if (train_pairs.size() < options.min_pairs) {
    throw ContractError("SPT needs at least " + std::to_string(options.min_pairs) + " training pairs, got " +
                        std::to_string(train_pairs.size()));
  }
  const auto& c = victim.config();
  if (options.prompt_length < 1 || options.prompt_length >= c.max_seq_len) {
    throw ContractError("SPT: prompt length must lie in [1, max_seq_len)");
  }
  const std::uint64_t victim_hash = victim.parameter_hash();
  TransformerModel frozen = victim.clone();
  frozen.set_trainable(false);

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  std::vector<double> init(options.prompt_length * c.d_model);
  for (auto& v : init) v = normal(rng);
  SptResult result;
  SoftPrompt& sp = result.prompt;
  sp.embeddings = Tensor::from({options.prompt_length, c.d_model}, std::move(init), true);
  sp.pairs_used = train_pairs.size();
  sp.epochs = options.epochs;

  std::vector<Tensor> params{sp.embeddings};
  AdamWOptions opt;
  opt.learning_rate = options.learning_rate;
  auto state = make_optimizer_state(params, opt);
  const std::size_t room = c.max_seq_len - options.prompt_length;
  const std::size_t batch = std::max<std::size_t>(1, options.batch_size);

  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      double step_total = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const PiiRecord& r = train_pairs[order[k]];
        Tokens query = vocab.encode_content(render_query(options.query_template, r, target));
        const Tokens value = vocab.encode_content(" " + r.value(target));
        if (value.size() > room) throw ContractError("SPT: target value longer than the context");
        const std::size_t keep = std::min(query.size(), room - value.size());
        Tokens ids(query.end() - static_cast<std::ptrdiff_t>(keep), query.end());
        ids.insert(ids.end(), value.begin(), value.end());
        Tape tape;
        TapeScope scope(tape);
        Tensor logits = forward_with_prefix(frozen, sp.embeddings, ids);
        const std::size_t first = options.prompt_length + keep - 1;
        Tensor loss = scale(softmax_cross_entropy(slice_rows(logits, first, first + value.size()), value), inv);
        step_total += loss.item() / inv;
        tape.backward(loss);
      }
      adamw_step(params, state);
      zero_grads(params);
      sp.step_loss.push_back(step_total / static_cast<double>(end - start));
      epoch_total += step_total;
    }
    sp.epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  sp.embeddings.set_requires_grad(false);

  for (const auto& r : eval_records) {
    const Tokens query = vocab.encode_content(render_query(options.query_template, r, target));
    result.generations.push_back(
        vocab.decode(generate_with_soft_prompt(frozen, sp.embeddings, query, options.max_new_tokens)));
  }
  if (victim.parameter_hash() != victim_hash || frozen.parameter_hash() != victim_hash) {
    throw ContractError("SPT: victim parameters changed");
  }
  return result;
}

}  // namespace aia
