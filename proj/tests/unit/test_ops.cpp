#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "aia/error.hpp"
#include "aia/optim.hpp"
#include "helpers.hpp"

using namespace aia;
using aia::test::grad_check;
using aia::test::max_rel_error;
using aia::test::random_tensor;

namespace {

void expect_values(const Tensor& t, std::vector<double> want, double tol = 0.0) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], tol) << "entry " << i;
}

constexpr double kTol = 1e-5;

}  // namespace

TEST(Matmul, IdentityAndHandExample) {
  auto eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto a = Tensor::from({2, 2}, {1, 2, 3, 4});
  expect_values(matmul(eye, a), {1, 2, 3, 4});
  expect_values(matmul(a, Tensor::from({2, 2}, {5, 6, 7, 8})), {19, 22, 43, 50});
}

TEST(Matmul, InnerDimensionMismatch) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(LayerNorm, Examples) {
  auto one = Tensor::full({3}, 1.0), zero = Tensor::zeros({3});
  expect_values(layer_norm(Tensor::from({1, 3}, {1, 1, 1}), one, zero, 1e-5), {0, 0, 0});
  const double r = std::sqrt(1.5);
  expect_values(layer_norm(Tensor::from({1, 3}, {1, 2, 3}), one, zero, 0.0), {-r, 0, r}, 1e-12);
  expect_values(layer_norm(Tensor::from({1, 3}, {1, 2, 3}), zero, Tensor::full({3}, 5.0), 1e-5), {5, 5, 5});
}

TEST(CrossEntropy, Examples) {
  EXPECT_NEAR(softmax_cross_entropy(Tensor::zeros({1, 4}), Tokens{2}).item(), std::log(4.0), 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(Tensor::from({1, 3}, {30, 0, 0}), Tokens{0}).item(), 0.0, 1e-12);
  EXPECT_NEAR(softmax_cross_entropy(Tensor::from({1, 2}, {2, 0}), Tokens{1}).item(), std::log1p(std::exp(2.0)),
              1e-12);
  EXPECT_NEAR(std::log1p(std::exp(2.0)), 2.1269, 1e-4);
}

TEST(CrossEntropy, RejectsBadTargets) {
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({2, 3}), Tokens{0}), ShapeError);
  EXPECT_THROW(softmax_cross_entropy(Tensor::zeros({1, 3}), Tokens{3}), IndexError);
}

TEST(Autodiff, LinearAndQuadratic) {
  auto x = Tensor::from({3}, {0.5, -1.0, 2.0}, true);
  {
    Tape tape;
    TapeScope s(tape);
    tape.backward(sum(x));
  }
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));
  auto y = Tensor::from({2}, {1, 2}, true);
  {
    Tape tape;
    TapeScope s(tape);
    tape.backward(sum(mul(y, y)));
  }
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Autodiff, NoGradScopeRecordsNothing) {
  auto x = random_tensor({2, 2}, 1);
  Tape tape;
  TapeScope s(tape);
  {
    NoGradScope ng;
    auto y = matmul(x, x);
    EXPECT_TRUE(tape.empty());
  }
  auto z = matmul(x, x);
  EXPECT_FALSE(tape.empty());
}

TEST(Autodiff, TapeClearedAfterBackward) {
  auto x = random_tensor({2, 2}, 2);
  Tape tape;
  TapeScope s(tape);
  auto loss = sum(mul(x, x));
  tape.backward(loss);
  EXPECT_TRUE(tape.empty());
}

// Finite-difference checks, one per differentiable op. Every loss is reduced
// through a fixed random projection so all output entries carry weight.
class OpGradient : public ::testing::Test {
 protected:
  static Tensor project(const Tensor& y, std::uint64_t seed) {
    auto w = random_tensor(y.shape(), seed, false);
    return sum(mul(y, w));
  }
};

TEST_F(OpGradient, Matmul) {
  auto a = random_tensor({3, 4}, 10), b = random_tensor({4, 5}, 11);
  auto p = grad_check({a, b}, [&] { return project(matmul(a, b), 12); }, 0, 0);
  EXPECT_LT(max_rel_error(p), kTol);
}

TEST_F(OpGradient, AddAddBiasMulScale) {
  auto a = random_tensor({3, 4}, 20), b = random_tensor({3, 4}, 21), bias = random_tensor({4}, 22);
  auto p = grad_check({a, b, bias},
                      [&] { return project(scale(mul(add_bias(add(a, b), bias), a), -0.7), 23); }, 0, 0);
  EXPECT_LT(max_rel_error(p), kTol);
}

TEST_F(OpGradient, LayerNorm) {
  auto x = random_tensor({3, 6}, 30), g = random_tensor({6}, 31), b = random_tensor({6}, 32);
  auto p = grad_check({x, g, b}, [&] { return project(layer_norm(x, g, b, 1e-5), 33); }, 0, 0);
  EXPECT_LT(max_rel_error(p), kTol);
}

TEST_F(OpGradient, GeluSilu) {
  auto x = random_tensor({4, 5}, 40);
  auto p = grad_check({x}, [&] { return project(add(gelu(x), silu(x)), 41); }, 0, 0);
  EXPECT_LT(max_rel_error(p), kTol);
}

TEST_F(OpGradient, CausalAttention) {
  for (bool rotary : {false, true}) {
    auto qkv = random_tensor({5, 12}, 50 + rotary);
    auto p = grad_check({qkv}, [&] { return project(causal_attention(qkv, 2, rotary), 52); }, 0, 0);
    EXPECT_LT(max_rel_error(p), kTol) << "rotary=" << rotary;
  }
}

TEST_F(OpGradient, EmbeddingPositionalConcatSlice) {
  auto table = random_tensor({7, 4}, 60), pos = random_tensor({6, 4}, 61), pre = random_tensor({2, 4}, 62);
  const Tokens ids{3, 0, 3, 6};
  auto p = grad_check({table, pos, pre},
                      [&] {
                        auto x = concat_rows(pre, add_positional(embedding(table, ids), pos));
                        return project(slice_rows(x, 1, 5), 63);
                      },
                      0, 0);
  EXPECT_LT(max_rel_error(p), kTol);
}

TEST_F(OpGradient, SoftmaxCrossEntropy) {
  auto logits = random_tensor({4, 6}, 70, true, 2.0);
  auto p = grad_check({logits}, [&] { return softmax_cross_entropy(logits, Tokens{0, 5, 2, 2}); }, 0, 0);
  EXPECT_LT(max_rel_error(p), kTol);
}

TEST(SliceRows, BoundsAndValues) {
  auto x = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  expect_values(slice_rows(x, 1, 3), {3, 4, 5, 6});
  EXPECT_THROW(slice_rows(x, 2, 4), IndexError);
  EXPECT_THROW(slice_rows(x, 2, 1), IndexError);
}

TEST(RowSoftmax, RowsSumToOne) {
  auto p = row_softmax(random_tensor({5, 9}, 80, false, 5.0));
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 9; ++c) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(AdamW, ZeroGradientIsFixedPoint) {
  auto w = Tensor::from({2}, {0.3, -1.2}, true);
  std::vector<Tensor> params{w};
  auto st = make_optimizer_state(params, {});
  w.mutable_grad();
  adamw_step(params, st);
  expect_values(w, {0.3, -1.2});
}

TEST(AdamW, FirstStepHandValue) {
  auto w = Tensor::from({1}, {1.0}, true);
  std::vector<Tensor> params{w};
  AdamWOptions o;
  o.learning_rate = 0.1;
  auto st = make_optimizer_state(params, o);
  w.mutable_grad()[0] = 1.0;
  adamw_step(params, st);
  EXPECT_NEAR(w[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(w[0], 0.9, 1e-8);
}

TEST(AdamW, DecoupledDecay) {
  auto w = Tensor::from({1}, {2.0}, true);
  std::vector<Tensor> params{w};
  AdamWOptions o;
  o.learning_rate = 0.1;
  o.weight_decay = 0.1;
  auto st = make_optimizer_state(params, o);
  adamw_step(params, st);
  EXPECT_DOUBLE_EQ(w[0], 2.0 * (1.0 - 0.01));
}

TEST(AdamW, StateMismatch) {
  std::vector<Tensor> params{Tensor::zeros({2}, true)};
  auto st = make_optimizer_state(params, {});
  std::vector<Tensor> other{Tensor::zeros({3}, true)};
  EXPECT_THROW(adamw_step(other, st), ShapeError);
}

TEST(Tensor, CloneIsDeepAndHashStable) {
  auto a = random_tensor({3, 3}, 90, false);
  auto b = a.clone();
  EXPECT_FALSE(a.same_storage(b));
  EXPECT_TRUE(a.bitwise_equal(b));
  EXPECT_EQ(hash_values(a.data()), hash_values(b.data()));
  b.mutable_data()[0] += 1.0;
  EXPECT_FALSE(a.bitwise_equal(b));
}
