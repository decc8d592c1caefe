#include <gtest/gtest.h>

#include <cmath>

#include "dxlm/ldrscm/dense_stack.hpp"
#include "support/test_utils.hpp"

using namespace dxlm;
using namespace dxlm::dense;
using dxlm::testing::random_tensor;

using TD = Tensor<double>;

namespace {

tx::BlockConfig small_block(std::size_t d = 8) {
  tx::BlockConfig c;
  c.d_model = d;
  c.n_heads = 2;
  c.ffn_mult = 2;
  c.fusion_mult = 2;
  c.kernels = {3, 5};
  c.init_std = 0.3;
  return c;
}

}  // namespace

TEST(AlphaBank, InitialWeightsAreUniform) {
  auto bank = AlphaBank<double>::make(4);
  for (std::size_t l = 0; l < 4; ++l) {
    auto a = normalized_alphas(bank, l);
    ASSERT_EQ(a.numel(), l + 1);
    for (double v : a.data()) EXPECT_NEAR(v, 1.0 / static_cast<double>(l + 1), 1e-15);
  }
  auto a3 = normalized_alphas(bank, 3);
  for (double v : a3.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_EQ(normalized_alphas(bank, 0).data()[0], 1.0);
}

TEST(AlphaBank, SoftmaxOfLogits) {
  auto bank = AlphaBank<double>::make(2);
  bank.raw_logits[1].mutable_data()[1] = std::log(3.0);
  auto a = normalized_alphas(bank, 1);
  EXPECT_NEAR(a.data()[0], 0.25, 1e-12);
  EXPECT_NEAR(a.data()[1], 0.75, 1e-12);
}

TEST(AlphaBank, OutOfRangeLayerThrows) {
  auto bank = AlphaBank<double>::make(3);
  EXPECT_THROW(normalized_alphas(bank, 3), IndexError);
}

TEST(StackForward, ZeroLayerReturnsInput) {
  Rng rng(1);
  auto h0 = random_tensor<double>({2, 5, 4}, rng);
  auto bank = AlphaBank<double>::make(2);
  LayerFn<double> zero = [](std::size_t, const TD& h) { return scale(h, 0.0); };
  for (auto s : {ResidualStrategy::LearnableDense, ResidualStrategy::FixedDense,
                 ResidualStrategy::Standard}) {
    auto out = stack_forward<double>(h0, 2, s, bank, zero);
    ASSERT_EQ(out.taps.size(), 3u);
    for (std::size_t i = 0; i < h0.numel(); ++i) {
      EXPECT_NEAR(out.final.data()[i], h0.data()[i], 1e-15);
    }
  }
}

TEST(StackForward, HandComputedDenseSum) {
  // Layer(H) = 2H: H1 = 2H0 + H0 = 3H0, H2 = 6H0 + (H0 + 3H0)/2 = 8H0.
  auto h0 = TD::from_data({1, 1, 2}, {1.0, -2.0});
  auto bank = AlphaBank<double>::make(2);
  LayerFn<double> twice = [](std::size_t, const TD& h) { return scale(h, 2.0); };
  auto out = stack_forward<double>(h0, 2, ResidualStrategy::LearnableDense, bank, twice);
  EXPECT_NEAR(out.taps[1].data()[0], 3.0, 1e-15);
  EXPECT_NEAR(out.final.data()[0], 8.0, 1e-15);
  EXPECT_NEAR(out.final.data()[1], -16.0, 1e-15);
  // Standard: H2 = 3 * 3H0 = 9H0.
  auto std_out = stack_forward<double>(h0, 2, ResidualStrategy::Standard, bank, twice);
  EXPECT_NEAR(std_out.final.data()[0], 9.0, 1e-15);
}

TEST(StackForward, StandardMatchesPlainResidualLoop) {
  Rng rng(2);
  auto stack = Stack<double>::make(small_block(), 3, ResidualStrategy::Standard, rng);
  auto h0 = random_tensor<double>({2, 6, 8}, rng);
  auto out = stack_forward(h0, stack);
  TD ref = h0;
  for (std::size_t l = 0; l < 3; ++l) ref = add(tx::block_forward(ref, stack.blocks[l]), ref);
  for (std::size_t i = 0; i < ref.numel(); ++i) {
    EXPECT_NEAR(out.final.data()[i], ref.data()[i], 1e-12);
  }
}

TEST(StackForward, DepthOneStrategiesAgree) {
  Rng rng(3);
  auto block = small_block();
  Rng r1(9), r2(9), r3(9);
  auto a = Stack<double>::make(block, 1, ResidualStrategy::LearnableDense, r1);
  auto b = Stack<double>::make(block, 1, ResidualStrategy::FixedDense, r2);
  auto c = Stack<double>::make(block, 1, ResidualStrategy::Standard, r3);
  auto h0 = random_tensor<double>({1, 7, 8}, rng);
  auto ya = stack_forward(h0, a).final;
  auto yb = stack_forward(h0, b).final;
  auto yc = stack_forward(h0, c).final;
  for (std::size_t i = 0; i < ya.numel(); ++i) {
    EXPECT_EQ(ya.data()[i], yb.data()[i]);
    EXPECT_EQ(ya.data()[i], yc.data()[i]);
  }
}

TEST(StackForward, LearnableEqualsFixedAtInitBitwise) {
  Rng r1(11), r2(11), rng(5);
  auto a = Stack<float>::make(small_block(), 4, ResidualStrategy::LearnableDense, r1);
  auto b = Stack<float>::make(small_block(), 4, ResidualStrategy::FixedDense, r2);
  auto h0 = random_tensor<float>({2, 6, 8}, rng);
  auto ya = stack_forward(h0, a).final;
  auto yb = stack_forward(h0, b).final;
  for (std::size_t i = 0; i < ya.numel(); ++i) EXPECT_EQ(ya.data()[i], yb.data()[i]);
}

TEST(StackForward, TapsCountGrowsWithDepth) {
  Rng rng(4);
  for (std::size_t depth : {1u, 2u, 5u}) {
    auto stack = Stack<double>::make(small_block(), depth, ResidualStrategy::LearnableDense, rng);
    auto out = stack_forward(random_tensor<double>({1, 4, 8}, rng), stack);
    EXPECT_EQ(out.taps.size(), depth + 1);
  }
}

TEST(StackForward, ShortAlphaBankRejected) {
  auto bank = AlphaBank<double>::make(1);
  LayerFn<double> id = [](std::size_t, const TD& h) { return h; };
  EXPECT_THROW(stack_forward<double>(TD::zeros({1, 1, 1}), 2, ResidualStrategy::LearnableDense,
                                     bank, id),
               ContractError);
}

TEST(StackForward, ParseStrategy) {
  EXPECT_EQ(parse_strategy("learnable_dense"), ResidualStrategy::LearnableDense);
  EXPECT_EQ(parse_strategy("fixed_dense"), ResidualStrategy::FixedDense);
  EXPECT_EQ(parse_strategy("standard"), ResidualStrategy::Standard);
  EXPECT_THROW(parse_strategy("highway"), ConfigError);
  EXPECT_EQ(to_string(ResidualStrategy::FixedDense), "fixed_dense");
}

TEST(AlphaGradReport, MatchesFiniteDifferences) {
  Rng rng(6);
  auto stack = Stack<double>::make(small_block(), 3, ResidualStrategy::LearnableDense, rng);
  // Perturb the logits away from the symmetric point.
  for (auto& a : stack.alphas.raw_logits) {
    for (auto& v : a.mutable_data()) v = rng.normal(0.0, 0.5);
  }
  auto h0 = random_tensor<double>({2, 6, 8}, rng);
  auto w = random_tensor<double>({2, 6, 8}, rng);
  auto loss = [&] { return sum(mul(stack_forward(h0, stack).final, w)); };
  auto rows = alpha_grad_report<double>(stack, loss);
  ASSERT_EQ(rows.size(), 1u + 2u + 3u);
  for (const auto& r : rows) {
    const double err =
        std::abs(r.analytic_grad - r.fd_grad) / std::max(1.0, std::abs(r.fd_grad));
    EXPECT_LT(err, 1e-5) << "layer " << r.layer << " index " << r.alpha_index;
  }
  EXPECT_EQ(rows.back().layer, 2u);
  EXPECT_EQ(rows.back().alpha_index, 2u);
}

TEST(AlphaGradReport, EmptyWithoutLearnableSkips) {
  Rng rng(7);
  auto stack = Stack<double>::make(small_block(), 2, ResidualStrategy::Standard, rng);
  auto h0 = random_tensor<double>({1, 4, 8}, rng);
  auto loss = [&] { return sum(stack_forward(h0, stack).final); };
  EXPECT_TRUE(alpha_grad_report<double>(stack, loss).empty());
}

TEST(AlphaGradReport, ConstantLossGivesZeroGradients) {
  Rng rng(8);
  auto stack = Stack<double>::make(small_block(), 2, ResidualStrategy::LearnableDense, rng);
  auto h0 = random_tensor<double>({1, 4, 8}, rng);
  auto loss = [&] { return scale(sum(stack_forward(h0, stack).final), 0.0); };
  for (const auto& r : alpha_grad_report<double>(stack, loss)) {
    EXPECT_EQ(r.analytic_grad, 0.0);
    EXPECT_EQ(r.fd_grad, 0.0);
  }
}

TEST(AlphaGradReport, SumOfLogitGradsIsZero) {
  // Softmax is shift invariant, so each layer's logit gradients sum to zero.
  Rng rng(10);
  auto stack = Stack<double>::make(small_block(), 3, ResidualStrategy::LearnableDense, rng);
  auto h0 = random_tensor<double>({1, 5, 8}, rng);
  auto w = random_tensor<double>({1, 5, 8}, rng);
  auto loss = [&] { return sum(mul(stack_forward(h0, stack).final, w)); };
  auto rows = alpha_grad_report<double>(stack, loss);
  std::vector<double> per_layer(3, 0.0);
  for (const auto& r : rows) per_layer[r.layer] += r.analytic_grad;
  for (double s : per_layer) EXPECT_NEAR(s, 0.0, 1e-12);
}

TEST(Stack, CollectsAlphaLogits) {
  Rng rng(12);
  auto stack = Stack<double>::make(small_block(), 2, ResidualStrategy::LearnableDense, rng);
  nn::ParamList<double> params;
  stack.collect(params, "");
  EXPECT_EQ(params.back().name, "alpha.layer1");
  EXPECT_EQ(params.back().tensor.numel(), 2u);
  auto fixed = Stack<double>::make(small_block(), 2, ResidualStrategy::FixedDense, rng);
  nn::ParamList<double> fp;
  fixed.collect(fp, "");
  EXPECT_EQ(fp.size() + 2, params.size());
}
