#include <gtest/gtest.h>

#include "aia/baselines.hpp"
#include "aia/error.hpp"
#include "aia/metrics.hpp"
#include "aia/optim.hpp"
#include "helpers.hpp"

using namespace aia;

namespace {

struct PiiWorld {
  std::vector<PiiRecord> records;
  Vocab vocab;
  ModelConfig config;
};

PiiWorld pii_world(std::size_t n, std::uint64_t seed) {
  PiiWorld w;
  w.records = generate_pii_dataset(n, seed);
  w.vocab = Vocab(utf8_decode(pii_charset()));
  w.config = aia::test::tiny_config(Architecture::C, 2);
  w.config.d_model = 32;
  w.config.n_heads = 4;
  w.config.d_ff = 64;
  w.config.max_seq_len = 256;
  w.config.vocab_size = w.vocab.size();
  return w;
}

}  // namespace

TEST(TruePrefix, PromptHygiene) {
  const auto recs = generate_pii_dataset(20, 3);
  for (const auto& r : recs) {
    const auto p = true_prefix_prompt(r, PiiType::Email);
    EXPECT_NE(p.find(r.phone), std::string::npos);
    EXPECT_EQ(p.find(r.email), std::string::npos);
    EXPECT_TRUE(p.ends_with("the email of " + r.name + " is"));
    const auto q = true_prefix_prompt(r, PiiType::Phone);
    EXPECT_EQ(q.find(r.phone), std::string::npos);
    EXPECT_NE(q.find(r.email), std::string::npos);
  }
  EXPECT_EQ(render_query("{name}: {type} {type}", recs[0], PiiType::Ssn), recs[0].name + ": ssn ssn");
}

TEST(Baselines, UntrainedVictimLeaksNothing) {
  const auto w = pii_world(12, 4);
  const auto victim = init_model(w.config, 5);
  const auto tp = baseline_true_prefix(victim, w.records, PiiType::Email, w.vocab, 30);
  EXPECT_DOUBLE_EQ(asr_exact_match(tp, w.records, PiiType::Email), 0.0);
  SptOptions o;
  o.min_pairs = 4;
  o.epochs = 1;
  o.max_new_tokens = 30;
  const std::span<const PiiRecord> all(w.records);
  const auto spt = baseline_spt(victim, all.first(4), all.subspan(4), PiiType::Email, w.vocab, o);
  EXPECT_DOUBLE_EQ(asr_exact_match(spt.generations, all.subspan(4), PiiType::Email), 0.0);
}

TEST(Baselines, OverfitVictimLeaksThroughTruePrefix) {
  const auto w = pii_world(5, 6);
  auto victim = init_model(w.config, 7);
  std::vector<Window> windows;
  for (std::size_t i = 0; i < w.records.size(); ++i) {
    const auto& r = w.records[i];
    const auto doc = true_prefix_prompt(r, PiiType::Email) + " " + r.email + ".";
    for (auto& win : make_windows(w.vocab.encode_content(doc), w.config.max_seq_len, i)) windows.push_back(win);
  }
  AdamWOptions o;
  o.learning_rate = 1e-2;
  auto st = make_optimizer_state(victim.parameters(), o);
  for (int step = 0; step < 150; ++step) finetune_step(victim, windows, st);
  const auto tp = baseline_true_prefix(victim, w.records, PiiType::Email, w.vocab, 40);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) hits += pii_recovered(tp[i], w.records[i].email);
  EXPECT_GE(hits, 1u);
}

TEST(Spt, FrozenVictimAndPromptShape) {
  const auto w = pii_world(40, 8);
  const auto victim = init_model(w.config, 9);
  const auto hash = victim.parameter_hash();
  SptOptions o;
  o.min_pairs = 32;
  o.epochs = 10;
  o.learning_rate = 3e-2;
  o.max_new_tokens = 5;
  const std::span<const PiiRecord> all(w.records);
  const auto r = baseline_spt(victim, all.first(32), all.subspan(32), PiiType::Phone, w.vocab, o);
  EXPECT_EQ(victim.parameter_hash(), hash);
  EXPECT_EQ(r.prompt.embeddings.shape(), (Shape{10, w.config.d_model}));
  EXPECT_EQ(r.prompt.pairs_used, 32u);
  EXPECT_EQ(r.generations.size(), 8u);
  ASSERT_EQ(r.prompt.epoch_loss.size(), 10u);
  std::size_t rises = 0;
  for (std::size_t e = 1; e < r.prompt.epoch_loss.size(); ++e) rises += r.prompt.epoch_loss[e] > r.prompt.epoch_loss[e - 1];
  EXPECT_LE(rises, 1u);
  EXPECT_LT(r.prompt.epoch_loss.back(), r.prompt.epoch_loss.front());
}

TEST(Spt, NeedsEnoughPairs) {
  const auto w = pii_world(10, 10);
  const auto victim = init_model(w.config, 11);
  const std::span<const PiiRecord> all(w.records);
  EXPECT_THROW(baseline_spt(victim, all.first(5), all.subspan(5), PiiType::Email, w.vocab, {}), ContractError);
}

TEST(Spt, EmbeddingRowsAsPromptMatchPlainForward) {
  for (auto arch : {Architecture::B, Architecture::C}) {
    auto w = pii_world(1, 12);
    w.config.arch = arch;
    const auto m = init_model(w.config, 13);
    const Tokens head = w.vocab.encode_content("abc"), tail = w.vocab.encode_content(" 123");
    Tokens all = head;
    all.insert(all.end(), tail.begin(), tail.end());
    const Tensor prompt = embedding(m.embedding().tokens, head);
    EXPECT_TRUE(forward_with_prefix(m, prompt, tail).bitwise_equal(forward_full(m, all).logits)) << to_string(arch);
    EXPECT_THROW(forward_with_prefix(m, Tensor::zeros({2, 3}), tail), ShapeError);
  }
}
