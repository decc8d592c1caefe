#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <string>

#include "dxlm/numcore/gemm.hpp"
#include "dxlm/numcore/grad_check.hpp"
#include "dxlm/numcore/ops.hpp"
#include "support/test_utils.hpp"

using namespace dxlm;
using dxlm::testing::constant;
using dxlm::testing::probe_loss;
using dxlm::testing::random_tensor;

using TD = Tensor<double>;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto eye = constant<double>({2, 2}, {1, 0, 0, 1});
  auto a = constant<double>({2, 2}, {1.5, -2, 3.25, 4});
  auto c = matmul(eye, a);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c.data()[i], a.data()[i]);
}

TEST(Matmul, HandSummation) {
  auto a = constant<double>({2, 2}, {1, 2, 3, 4});
  auto b = constant<double>({2, 1}, {1, 1});
  auto c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.data()[0], 3.0);
  EXPECT_EQ(c.data()[1], 7.0);
}

TEST(Matmul, ZerosAnnihilate) {
  Rng rng(3);
  auto c = matmul(TD::zeros({2, 3}), random_tensor<double>({3, 4}, rng));
  ASSERT_EQ(c.shape(), (Shape{2, 4}));
  for (double v : c.data()) EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(TD::zeros({2, 3}), TD::zeros({4, 5}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,5]"), std::string::npos);
  }
}

TEST(Matmul, BatchedMatchesPerSliceProducts) {
  Rng rng(5);
  auto a = random_tensor<double>({3, 2, 4}, rng);
  auto b = random_tensor<double>({3, 4, 5}, rng);
  auto c = matmul(a, b);
  for (std::size_t s = 0; s < 3; ++s) {
    auto cs = matmul(slice(a, 0, s, 1), slice(b, 0, s, 1));
    for (std::size_t i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(c.data()[s * 10 + i], cs.data()[i]);
  }
}

TEST(Broadcast, OnlyLeadingBatchDimensions) {
  auto x = TD::zeros({2, 3, 4});
  EXPECT_NO_THROW(add(x, TD::zeros({3, 4})));
  EXPECT_NO_THROW(add(x, TD::scalar(1.0)));
  EXPECT_THROW(add(x, TD::zeros({2, 1, 4})), ShapeError);
  EXPECT_THROW(add(x, TD::zeros({3})), ShapeError);
}

TEST(Softmax, UniformOnEqualInputs) {
  auto y = softmax(constant<double>({3}, {0, 0, 0}), 0);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, StableForLargeMagnitudes) {
  auto y = softmax(constant<double>({2}, {1000, 1000}), -1);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.5);
}

TEST(Softmax, ClosedFormLn3) {
  auto y = softmax(constant<double>({2}, {0, std::log(3.0)}), 0);
  EXPECT_NEAR(y.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(y.data()[1], 0.75, 1e-15);
}

TEST(Softmax, NonFiniteInputRaises) {
  auto x = constant<double>({2}, {0, std::numeric_limits<double>::infinity()});
  EXPECT_THROW(softmax(x, 0), NumericError);
}

TEST(Softmax, SumsToOneAlongEveryAxis) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor<double>({3, 4, 5}, rng, 1e3);
    for (int axis = 0; axis < 3; ++axis) {
      auto y = softmax(x, axis);
      auto s = sum(y, axis);
      for (double v : s.data()) EXPECT_NEAR(v, 1.0, 1e-6);
      for (double v : y.data()) EXPECT_GE(v, 0.0);
    }
  }
}

TEST(Sigmoid, ReferenceValues) {
  auto y = sigmoid(constant<double>({2}, {0.0, 2.0}));
  EXPECT_EQ(y.data()[0], 0.5);
  EXPECT_NEAR(y.data()[1], 0.880797077977882, 1e-6);
}

TEST(Sigmoid, Symmetry) {
  Rng rng(2);
  auto x = random_tensor<double>({50}, rng, 5.0);
  auto y = sigmoid(x);
  auto z = sigmoid(scale(x, -1.0));
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_NEAR(y.data()[i] + z.data()[i], 1.0, 1e-15);
    EXPECT_GT(y.data()[i], 0.0);
    EXPECT_LT(y.data()[i], 1.0);
  }
}

TEST(NanPolicy, OpNameInError) {
  try {
    log(constant<double>({2}, {1.0, -1.0}));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
}

TEST(Backward, SumGivesOnes) {
  auto w = constant<double>({2, 3}, {1, 2, 3, 4, 5, 6});
  w.set_requires_grad(true);
  sum(w).backward();
  for (double g : w.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceW) {
  Rng rng(4);
  auto w = random_tensor<double>({5}, rng, 1.0, true);
  sum(mul(w, w)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(w.grad()[i], 2.0 * w.data()[i]);
}

TEST(Backward, NonScalarLossRejected) {
  auto w = TD::zeros({3}, true);
  EXPECT_THROW(scale(w, 2.0).backward(), ContractError);
}

TEST(Backward, SharedTensorAccumulatesBothPaths) {
  Rng rng(8);
  auto w = random_tensor<double>({4}, rng, 1.0, true);
  auto p = random_tensor<double>({4}, rng);
  auto q = random_tensor<double>({4}, rng);
  // w feeds two branches of one graph.
  add(sum(mul(exp(w), p)), sum(mul(sigmoid(w), q))).backward();
  std::vector<double> combined(w.grad().begin(), w.grad().end());

  auto w1 = w.detach();
  w1.set_requires_grad(true);
  sum(mul(exp(w1), p)).backward();
  auto w2 = w.detach();
  w2.set_requires_grad(true);
  sum(mul(sigmoid(w2), q)).backward();
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(combined[i], w1.grad()[i] + w2.grad()[i], 1e-14);
  }
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto w = TD::full({3}, 2.0, true);
  NoGradGuard guard;
  auto y = sum(mul(w, w));
  EXPECT_FALSE(y.requires_grad());
}

TEST(GradCheck, ExactQuadratic) {
  Rng rng(1);
  auto w = random_tensor<double>({3, 4}, rng, 1.0, true);
  const double err = grad_check<double>([&] { return sum(mul(w, w)); }, {w});
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, NonDeterministicFunctionRejected) {
  auto w = TD::full({2}, 1.0, true);
  int calls = 0;
  auto fn = [&] { return scale(sum(w), static_cast<double>(++calls)); };
  EXPECT_THROW(grad_check<double>(fn, {w}), DeterminismError);
}

TEST(GradCheck, HardBranchPassesDeterminismButFlagsKink) {
  auto w = TD::zeros({1}, true);
  auto fn = [&] {
    // |w| through a discrete branch on the parameter value.
    return w.data()[0] >= 0.0 ? sum(scale(w, 5.0)) : sum(scale(w, -5.0));
  };
  double err = 0.0;
  EXPECT_NO_THROW(err = grad_check<double>(fn, {w}));
  EXPECT_GT(err, 1.0);
}

// Every registered op, wrapped in a random-weight probe loss, must agree with
// central differences on small random tensors.
struct OpCase {
  std::string name;
  std::function<TD(const TD&, const TD&)> op;  // (x, y) -> result
  Shape x_shape, y_shape;
  bool positive_x = false;
};

class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, EveryOpMatchesFiniteDifferences) {
  const std::vector<OpCase> cases = {
      {"add", [](const TD& x, const TD& y) { return add(x, y); }, {2, 3, 4}, {2, 3, 4}},
      {"add_broadcast", [](const TD& x, const TD& y) { return add(x, y); }, {2, 3, 4}, {3, 4}},
      {"sub", [](const TD& x, const TD& y) { return sub(y, x); }, {3, 4}, {2, 3, 4}},
      {"mul", [](const TD& x, const TD& y) { return mul(x, y); }, {4, 5}, {4, 5}},
      {"mul_scalar", [](const TD& x, const TD& y) { return mul(x, y); }, {3, 5}, {}},
      {"scale", [](const TD& x, const TD&) { return scale(x, -1.7); }, {5}, {1}},
      {"matmul", [](const TD& x, const TD& y) { return matmul(x, y); }, {2, 3, 4}, {4, 5}},
      {"matmul_batched", [](const TD& x, const TD& y) { return matmul(x, y); }, {2, 3, 4}, {2, 4, 2}},
      {"matmul_left_shared", [](const TD& x, const TD& y) { return matmul(x, y); }, {3, 4}, {2, 4, 2}},
      {"transpose", [](const TD& x, const TD&) { return transpose(x); }, {2, 3, 4}, {1}},
      {"swap_axes", [](const TD& x, const TD&) { return swap_axes(x, 0, 2); }, {2, 3, 4}, {1}},
      {"reshape", [](const TD& x, const TD&) { return reshape(x, {4, 3, 2}); }, {2, 3, 4}, {1}},
      {"slice", [](const TD& x, const TD&) { return slice(x, 1, 1, 2); }, {2, 4, 3}, {1}},
      {"concat", [](const TD& x, const TD& y) { return concat<double>({x, y, x}, 1); }, {2, 2, 3}, {2, 1, 3}},
      {"sum_all", [](const TD& x, const TD&) { return sum(x); }, {3, 4}, {1}},
      {"sum_axis", [](const TD& x, const TD&) { return sum(x, 1); }, {3, 4, 2}, {1}},
      {"mean_all", [](const TD& x, const TD&) { return mean(x); }, {3, 4}, {1}},
      {"mean_axis", [](const TD& x, const TD&) { return mean(x, -1); }, {3, 4, 5}, {1}},
      {"exp", [](const TD& x, const TD&) { return exp(x); }, {3, 4}, {1}},
      {"log", [](const TD& x, const TD&) { return log(x); }, {3, 4}, {1}, true},
      {"sigmoid", [](const TD& x, const TD&) { return sigmoid(x); }, {3, 4}, {1}},
      {"softmax_last", [](const TD& x, const TD&) { return softmax(x, -1); }, {2, 3, 5}, {1}},
      {"softmax_mid", [](const TD& x, const TD&) { return softmax(x, 1); }, {2, 3, 5}, {1}},
  };
  const int seed = GetParam();
  for (const auto& c : cases) {
    Rng rng(static_cast<std::uint64_t>(seed) * 100 + 7);
    auto x = random_tensor<double>(c.x_shape, rng, 1.0, true);
    if (c.positive_x) {
      for (auto& v : x.mutable_data()) v = 0.5 + std::abs(v);
    }
    auto y = random_tensor<double>(c.y_shape, rng, 1.0, true);
    const auto out_shape = c.op(x, y).shape();
    auto w = random_tensor<double>(out_shape, rng);
    const double err = grad_check<double>([&] { return probe_loss(c.op(x, y), w); }, {x, y});
    EXPECT_LT(err, 1e-5) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OpGradient, ::testing::Range(0, 5));

TEST(EmbeddingGather, RowsMatchDirectIndexing) {
  Rng rng(9);
  auto table = random_tensor<double>({7, 3}, rng);
  auto ids = dxlm::testing::random_ids(2, 5, 7, rng);
  auto e = embedding_gather(table, ids);
  ASSERT_EQ(e.shape(), (Shape{2, 5, 3}));
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_EQ(e.data()[r * 3 + j], table.data()[static_cast<std::size_t>(ids.ids[r]) * 3 + j]);
}

TEST(EmbeddingGather, GradientCheck) {
  Rng rng(10);
  auto table = random_tensor<double>({6, 4}, rng, 1.0, true);
  TokenIds ids(2, 4, {1, 3, 3, 0, 5, 1, 1, 2});
  auto w = random_tensor<double>({2, 4, 4}, rng);
  EXPECT_LT(grad_check<double>([&] { return probe_loss(embedding_gather(table, ids), w); }, {table}),
            1e-5);
}

TEST(EmbeddingGather, OutOfVocabularyNamesIdAndPosition) {
  auto table = TD::zeros({4, 2});
  try {
    embedding_gather(table, TokenIds(1, 3, {0, 9, 1}));
    FAIL() << "expected VocabularyError";
  } catch (const VocabularyError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("id 9"), std::string::npos);
    EXPECT_NE(msg.find("(0,1)"), std::string::npos);
  }
}

TEST(Determinism, SameSeedBitIdenticalForward) {
  auto run = [] {
    Rng rng(1234);
    auto a = random_tensor<float>({4, 8}, rng);
    auto b = random_tensor<float>({8, 3}, rng);
    auto y = softmax(matmul(a, b), -1);
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, ShapeInvariantEnforced) {
  EXPECT_THROW(TD::from_data({2, 2}, {1, 2, 3}), ShapeError);
  auto t = TD::zeros({2, 2}, true);
  EXPECT_FALSE(t.has_grad());
  sum(t).backward();
  EXPECT_EQ(t.grad().size(), t.numel());
}

namespace {

// Row-major reference product in long double.
template <typename T>
double gemm_error(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, Rng& rng) {
  std::vector<T> a(m * k), b(k * n), c(m * n, T(0.5));
  for (auto& v : a) v = static_cast<T>(rng.normal(0.0, 1.0));
  for (auto& v : b) v = static_cast<T>(rng.normal(0.0, 1.0));
  const std::size_t lda = ta ? m : k, ldb = tb ? k : n;
  const std::vector<T> c0 = c;
  blas::gemm<T>(ta, tb, m, n, k, T(2), a.data(), lda, b.data(), ldb, T(0.25), c.data(), n);
  double worst = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0;
      for (std::size_t p = 0; p < k; ++p) {
        s += static_cast<long double>(ta ? a[p * lda + i] : a[i * lda + p]) *
             static_cast<long double>(tb ? b[j * ldb + p] : b[p * ldb + j]);
      }
      const long double want = 2 * s + 0.25L * c0[i * n + j];
      worst = std::max(worst, static_cast<double>(std::abs(want - c[i * n + j]) / std::sqrt(k)));
    }
  }
  return worst;
}

}  // namespace

TEST(Gemm, MatchesReferenceAcrossShapes) {
  Rng rng(17);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      for (std::size_t m : {1u, 16u, 67u}) {
        for (std::size_t n : {1u, 64u, 200u, 256u, 515u}) {
          for (std::size_t k : {1u, 128u, 257u}) {
            EXPECT_LT(gemm_error<double>(ta, tb, m, n, k, rng), 1e-12)
                << "double ta=" << ta << " tb=" << tb << " " << m << "x" << n << "x" << k;
            EXPECT_LT(gemm_error<float>(ta, tb, m, n, k, rng), 1e-5)
                << "float ta=" << ta << " tb=" << tb << " " << m << "x" << n << "x" << k;
          }
        }
      }
    }
  }
}
