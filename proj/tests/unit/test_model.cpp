#include <gtest/gtest.h>

#include <cmath>

#include "aia/attack.hpp"
#include "aia/checkpoint.hpp"
#include "aia/error.hpp"
#include "aia/optim.hpp"
#include "helpers.hpp"

using namespace aia;
using aia::test::grad_check;
using aia::test::max_rel_error;
using aia::test::tiny_config;

namespace {

// Parameter count by enumeration of the tensors each architecture owns.
std::size_t enumerate_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, ff = c.d_ff, V = c.vocab_size, L = c.max_seq_len;
  std::size_t n = V * d;
  if (c.arch != Architecture::C) n += L * d;
  std::size_t block = 2 * d + d * 3 * d + d * d + 2 * d;
  if (c.arch == Architecture::C) {
    block += 3 * d * ff;
  } else {
    block += 3 * d + d + d * ff + ff + ff * d + d;
  }
  n += c.n_layers * block;
  if (c.arch != Architecture::A) n += 2 * d;
  return n + d * V;
}

const std::array<Architecture, 3> kArchs{Architecture::A, Architecture::B, Architecture::C};

}  // namespace

TEST(ModelInit, DeterministicInSeed) {
  for (auto arch : kArchs) {
    auto c = tiny_config(arch);
    EXPECT_EQ(init_model(c, 5).parameter_hash(), init_model(c, 5).parameter_hash());
    EXPECT_NE(init_model(c, 5).parameter_hash(), init_model(c, 6).parameter_hash());
  }
}

TEST(ModelInit, ParameterCountMatchesEnumeration) {
  for (auto arch : kArchs) {
    auto c = tiny_config(arch);
    c.vocab_size = 10;
    const auto m = init_model(c, 1);
    EXPECT_EQ(m.parameter_count(), enumerate_count(c)) << to_string(arch);
    EXPECT_EQ(expected_parameter_count(c), enumerate_count(c)) << to_string(arch);
  }
}

TEST(ModelInit, HeadDivisibility) {
  auto c = tiny_config();
  c.d_model = 7;
  EXPECT_THROW(init_model(c, 1), ContractError);
}

TEST(ModelInit, ArchitectureTags) {
  for (auto arch : kArchs) EXPECT_EQ(architecture_from_string(to_string(arch)), arch);
  EXPECT_THROW(architecture_from_string("arch-D"), ConfigError);
}

TEST(Forward, PrefixCompositionAndBoundary) {
  for (auto arch : kArchs) {
    const auto m = init_model(tiny_config(arch), 3);
    const Tokens ids{4, 5, 6, 7, 8};
    const auto full = forward_full(m, ids);
    ASSERT_EQ(full.activations.size(), 2u);
    const auto top = forward_prefix(m, ids, 2);
    EXPECT_TRUE(head_forward(m.config(), m.head(), top).bitwise_equal(full.logits));
    const auto one = forward_prefix(m, ids, 1);
    EXPECT_TRUE(block_forward(m.config(), m.blocks()[1], one).bitwise_equal(full.activations[1]));
    EXPECT_TRUE(forward_prefix(m, ids, 0).bitwise_equal(embed_forward(m.config(), m.embedding(), ids)));
    EXPECT_THROW(forward_prefix(m, ids, 3), IndexError);
  }
}

TEST(Forward, CausalAndNormalized) {
  for (auto arch : kArchs) {
    const auto m = init_model(tiny_config(arch), 4);
    const Tokens a{4, 9, 5}, b{4, 9, 5, 11};
    const auto la = forward_full(m, a).logits, lb = forward_full(m, b).logits;
    for (std::size_t i = 0; i < la.numel(); ++i) EXPECT_NEAR(la[i], lb[i], 1e-12);
    const auto p = row_softmax(lb);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) s += p.at(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Forward, FullModelGradientMatchesFiniteDifferences) {
  for (auto arch : kArchs) {
    auto m = init_model(tiny_config(arch), 7);
    Window w{0, 0, {4, 5, 6, 7, 8, 9}, {5, 6, 7, 8, 9, 2}};
    auto probes = grad_check(m.parameters(), [&] {
      const auto& c = m.config();
      Tensor x = embed_forward(c, m.embedding(), w.input);
      for (const auto& b : m.blocks()) x = block_forward(c, b, x);
      return softmax_cross_entropy(head_forward(c, m.head(), x), w.target);
    }, 12, 100 + static_cast<int>(arch));
    EXPECT_LT(max_rel_error(probes), 1e-5) << to_string(arch);
  }
}

TEST(AttackModelTest, ShapesDeterminismGradients) {
  for (auto arch : kArchs) {
    auto c = tiny_config(arch);
    auto att = init_attack_model(c, 9);
    auto act = aia::test::random_tensor({5, c.d_model}, 10, false);
    auto l1 = forward_attack(att, act), l2 = forward_attack(att, act);
    EXPECT_EQ(l1.shape(), (Shape{5, c.vocab_size}));
    EXPECT_TRUE(l1.bitwise_equal(l2));
    const Tokens labels{4, 5, 6, 7, 8};
    auto probes = grad_check(att.parameters(), [&] { return softmax_cross_entropy(forward_attack(att, act), labels); },
                             5, 11);
    EXPECT_LT(max_rel_error(probes), 1e-5) << to_string(arch);
    for (const auto& p : att.parameters()) EXPECT_TRUE(p.has_grad());
  }
}

TEST(Decode, EosStopAndTieRule) {
  auto logits = Tensor::from({3, 5}, {0, 0, 0, 0, 9,  //
                                      0, 0, 9, 0, 0,  //
                                      1, 1, 0, 0, 0});
  EXPECT_EQ(greedy_from_logits(logits, 3), (Tokens{4}));
  auto tie = Tensor::from({1, 6}, {0, 0, 0, 7, 7, 0});
  EXPECT_EQ(greedy_from_logits(tie, 1), (Tokens{3}));
}

TEST(Finetune, InitialLossNearLogV) {
  auto c = tiny_config();
  c.vocab_size = 40;
  auto m = init_model(c, 12);
  Window w{0, 0, {4, 10, 20, 30, 39}, {10, 20, 30, 39, 2}};
  EXPECT_NEAR(window_loss(m, w), std::log(40.0), 0.1 * std::log(40.0));
}

TEST(Finetune, OverfitsOneSentenceAndZeroLrIsInert) {
  auto c = tiny_config();
  c.d_model = 16;
  c.d_ff = 32;
  const Vocab vocab(U"abcdefghijklmnopqrstuvwxyz .");
  c.vocab_size = vocab.size();
  auto m = init_model(c, 13);
  const auto windows = make_windows(vocab.encode_content("the cat sat."), c.max_seq_len);

  auto frozen = m.clone();
  AdamWOptions zero;
  zero.learning_rate = 0.0;
  auto zst = make_optimizer_state(frozen.parameters(), zero);
  finetune_step(frozen, windows, zst);
  EXPECT_EQ(frozen.parameter_hash(), m.parameter_hash());

  AdamWOptions o;
  o.learning_rate = 1e-2;
  auto st = make_optimizer_state(m.parameters(), o);
  double loss = 0.0;
  for (int i = 0; i < 50; ++i) loss = finetune_step(m, windows, st);
  EXPECT_LT(window_loss(m, windows[0]), 0.1);
  EXPECT_LT(loss, 0.2);
}

TEST(Checkpoint, RoundTripBitwise) {
  const auto dir = std::filesystem::temp_directory_path() / "aia_ckpt_test";
  std::filesystem::create_directories(dir);
  for (auto arch : kArchs) {
    const auto m = init_model(tiny_config(arch), 14);
    save_model(dir / "m.ckpt", m, {{"note", "x"}});
    const auto back = load_model(dir / "m.ckpt");
    EXPECT_EQ(back.config(), m.config());
    EXPECT_EQ(back.parameter_hash(), m.parameter_hash());
    const auto att = init_attack_model(tiny_config(arch), 15);
    save_attack_model(dir / "a.ckpt", att);
    EXPECT_EQ(load_attack_model(dir / "a.ckpt").parameter_hash(), att.parameter_hash());
  }
  EXPECT_THROW(load_model(dir / "missing.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Generate, GreedyIsDeterministic) {
  const auto m = init_model(tiny_config(), 16);
  const Tokens prompt{4, 5, 6};
  const auto a = generate_greedy(m, prompt, 20), b = generate_greedy(m, prompt, 20);
  EXPECT_EQ(a, b);
  EXPECT_LE(a.size(), 20u);
}
