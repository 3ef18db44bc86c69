#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "aia/attack.hpp"
#include "aia/error.hpp"
#include "aia/pipeline.hpp"
#include "helpers.hpp"

using namespace aia;

namespace {

struct World {
  Corpus corpus;
  Vocab vocab;
  TransformerModel shadow;
};

World world(std::size_t docs, std::uint64_t seed, std::size_t layers = 3) {
  Corpus c = aia::test::toy_corpus(docs, seed);
  std::vector<Corpus> cs{c};
  Vocab v = build_vocab(cs);
  auto cfg = aia::test::tiny_config(Architecture::B, layers);
  cfg.d_model = 16;
  cfg.d_ff = 32;
  cfg.max_seq_len = 24;
  cfg.vocab_size = v.size();
  return {c, v, init_model(cfg, seed)};
}

AttackModelConfig attack_config(const TransformerModel& shadow, std::size_t layers = 1) {
  AttackModelConfig c = shadow.config();
  c.n_layers = layers;
  return c;
}

}  // namespace

TEST(Shadow, PairsAreDefinitional) {
  const auto w = world(5, 1);
  const auto before = w.shadow.parameter_hash();
  const auto ds = build_shadow_dataset(w.shadow, w.corpus, w.vocab, 2);
  EXPECT_EQ(w.shadow.parameter_hash(), before);
  EXPECT_EQ(ds.shadow, fingerprint(w.shadow));
  EXPECT_EQ(ds.layer_cut, 2u);
  EXPECT_EQ(ds.pairs.size(), make_corpus_windows(w.corpus, w.vocab, 24).size());
  for (const auto& p : ds.pairs) {
    EXPECT_EQ(p.activation.rows(), p.labels.size());
    EXPECT_TRUE(p.activation.bitwise_equal(forward_prefix(w.shadow, p.labels, 2)));
    for (auto id : p.labels) EXPECT_GE(id, static_cast<TokenId>(Vocab::kReserved));
  }
}

TEST(Shadow, Errors) {
  const auto w = world(3, 2);
  EXPECT_THROW(build_shadow_dataset(w.shadow, w.corpus, w.vocab, 4), IndexError);
  EXPECT_THROW(build_shadow_dataset(w.shadow, Corpus("e", CorpusRole::Public, {}), w.vocab, 1), ContractError);
}

TEST(Shadow, SaveLoadRoundTrip) {
  const auto w = world(4, 3);
  const auto ds = build_shadow_dataset(w.shadow, w.corpus, w.vocab, 1);
  const auto dir = std::filesystem::temp_directory_path() / "aia_shadow_test";
  std::filesystem::remove_all(dir);
  save_shadow_dataset(dir, ds);
  const auto back = load_shadow_dataset(dir);
  ASSERT_EQ(back.pairs.size(), ds.pairs.size());
  EXPECT_EQ(back.shadow, ds.shadow);
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    EXPECT_TRUE(back.pairs[i].activation.bitwise_equal(ds.pairs[i].activation));
    EXPECT_EQ(back.pairs[i].labels, ds.pairs[i].labels);
  }
  std::filesystem::remove_all(dir);
}

TEST(AttackTraining, InitialLossNearLogV) {
  const auto w = world(6, 4);
  const auto ds = build_shadow_dataset(w.shadow, w.corpus, w.vocab, 2);
  AttackTrainOptions o;
  o.max_epochs = 0;
  const auto r = train_attack_model(ds, attack_config(w.shadow), o);
  ASSERT_EQ(r.train_loss.size(), 1u);
  const double lv = std::log(static_cast<double>(w.vocab.size()));
  EXPECT_NEAR(r.train_loss[0], lv, 0.1 * lv);
}

TEST(AttackTraining, FullBatchLossIgnoresPairOrder) {
  const auto w = world(6, 5);
  auto ds = build_shadow_dataset(w.shadow, w.corpus, w.vocab, 2);
  const auto att = init_attack_model(attack_config(w.shadow), 6);
  double forward = 0.0, backward = 0.0;
  for (const auto& p : ds.pairs) forward += attack_pair_loss(att, p.activation, p.labels);
  for (auto it = ds.pairs.rbegin(); it != ds.pairs.rend(); ++it) backward += attack_pair_loss(att, it->activation, it->labels);
  EXPECT_NEAR(forward, backward, 1e-12 * std::abs(forward));
}

TEST(AttackTraining, OverfitsSinglePair) {
  const auto w = world(1, 7);
  auto ds = build_shadow_dataset(w.shadow, w.corpus, w.vocab, 2);
  ds.pairs.resize(1);
  AttackTrainOptions o;
  o.max_epochs = 200;
  o.learning_rate = 1e-2;
  o.holdout_fraction = 0.0;
  o.patience = 0;
  const auto r = train_attack_model(ds, attack_config(w.shadow), o);
  EXPECT_LT(r.train_loss.back(), r.train_loss.front());
  const auto text = reconstruct_one(r.model, ds.pairs[0].activation, w.vocab);
  EXPECT_EQ(text, w.vocab.decode(ds.pairs[0].labels));
  ActivationRecord rec{0, 0, ds.pairs[0].activation, ds.pairs[0].labels.size()};
  const std::vector<ActivationRecord> recs{rec, rec};
  const auto out = reconstruct(r.model, recs, w.vocab);
  EXPECT_EQ(out[0], out[1]);
  EXPECT_EQ(out[0], text);
  EXPECT_TRUE(reconstruct(r.model, {}, w.vocab).empty());
}

TEST(AttackTraining, SplitAndBestEpoch) {
  const auto w = world(12, 8);
  const auto ds = build_shadow_dataset(w.shadow, w.corpus, w.vocab, 1);
  AttackTrainOptions o;
  o.max_epochs = 6;
  o.learning_rate = 5e-3;
  o.batch_size = 4;
  o.seed = 3;
  std::size_t calls = 0;
  o.on_epoch = [&](std::size_t, double, double) { ++calls; };
  const auto a = train_attack_model(ds, attack_config(w.shadow), o);
  const std::size_t calls_a = calls;
  const auto b = train_attack_model(ds, attack_config(w.shadow), o);
  EXPECT_EQ(a.model.parameter_hash(), b.model.parameter_hash());
  EXPECT_EQ(a.train_pairs.size() + a.heldout_pairs.size(), ds.pairs.size());
  EXPECT_FALSE(a.heldout_pairs.empty());
  EXPECT_EQ(a.train_loss.size(), a.heldout_loss.size());
  EXPECT_EQ(calls_a, a.train_loss.size());
  const auto best = std::min_element(a.heldout_loss.begin(), a.heldout_loss.end()) - a.heldout_loss.begin();
  EXPECT_EQ(a.best_epoch, static_cast<std::size_t>(best));
}

TEST(AttackTraining, WidthMismatch) {
  const auto w = world(3, 9);
  const auto ds = build_shadow_dataset(w.shadow, w.corpus, w.vocab, 1);
  auto c = attack_config(w.shadow);
  c.d_model = 8;
  EXPECT_THROW(train_attack_model(ds, c, {}), ShapeError);
}

TEST(Reconstruction, RecordWindowAndJsonLines) {
  std::vector<StepPlan> schedule{{0, {5, 2}}, {0, {7}}};
  EXPECT_EQ(record_window({0, 1, {}, 0}, schedule), 2u);
  EXPECT_EQ(record_window({1, 0, {}, 0}, schedule), 7u);
  EXPECT_THROW(record_window({1, 1, {}, 0}, schedule), IndexError);
  const auto path = std::filesystem::temp_directory_path() / "aia_rec_test.jsonl";
  const std::vector<ReconstructionLine> lines{{0, 3, "hello \"world\""}, {1, 4, "caf\xC3\xA9"}};
  write_reconstructions(path, lines);
  const auto back = read_reconstructions(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].text, lines[0].text);
  EXPECT_EQ(back[1].iteration, 4u);
  std::filesystem::remove(path);
}
