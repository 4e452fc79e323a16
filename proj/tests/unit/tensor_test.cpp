// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gtest/gtest.h"
#include "lava/check/gradcheck.hpp"
#include "lava/core/ltf.hpp"
#include "lava/core/ops.hpp"
#include "support/test_util.hpp"

namespace lava {
namespace {

using testing::bitwise_equal;
using testing::random_tensor;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
  Tensor m = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor c = matmul(eye, m);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandMultiplied) {
  Tensor c = matmul(Tensor::matrix(2, 2, {1, 0, 0, 0}), Tensor::matrix(2, 2, {0, 1, 1, 0}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{0, 1, 0, 0}));
}

TEST(Matmul, RejectsInnerDimensionMismatch) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(matmul(Tensor::zeros({3}), Tensor::zeros({3, 1})), DimensionError);
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor a = random_tensor({5, 7}, rng);
  Tensor b = random_tensor({7, 3}, rng);
  auto r = check::gradcheck([&] { return sum(matmul(a, b)); }, {a, b});
  EXPECT_LT(r.max_error, 1e-6) << r.worst;
}

TEST(Matmul, AssociativeWithinTolerance) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(5), k = 1 + rng.below(5), p = 1 + rng.below(5), n = 1 + rng.below(5);
    Tensor a = random_tensor({m, k}, rng, false);
    Tensor b = random_tensor({k, p}, rng, false);
    Tensor c = random_tensor({p, n}, rng, false);
    Tensor left = matmul(matmul(a, b), c);
    Tensor right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.numel(); ++i) EXPECT_NEAR(left[i], right[i], 1e-9);
  }
}

TEST(Matmul, LargeBlockedProductMatchesNaiveLoop) {
  Rng rng(5);
  Tensor a = random_tensor({37, 300}, rng, false);
  Tensor b = random_tensor({300, 601}, rng, false);
  Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 37; i += 6) {
    for (std::size_t j = 0; j < 601; j += 50) {
      double s = 0.0;
      for (std::size_t t = 0; t < 300; ++t) s += a.at(i, t) * b.at(t, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-12);
    }
  }
}

TEST(Softmax, SymmetricRow) {
  Tensor y = softmax_rows(Tensor::matrix(1, 2, {0, 0}));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tensor y = softmax_rows(Tensor::matrix(1, 3, {1000, 1000, 1000}));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  Rng rng(17);
  Tensor x = random_tensor({4, 6}, rng);
  Tensor w = random_tensor({4, 6}, rng, false);
  auto r = check::gradcheck([&] { return sum(mul(softmax_rows(x), w)); }, {x});
  EXPECT_LT(r.max_error, 1e-6) << r.worst;
}

TEST(Softmax, RowsAreDistributions) {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor y = softmax_rows(random_tensor({3, 9}, rng, false, -20, 20));
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_GT(y.at(i, j), 0.0);
        EXPECT_LT(y.at(i, j), 1.0);
        s += y.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(L2Normalize, ThreeFourFive) {
  Tensor y = l2_normalize_rows(Tensor::matrix(1, 2, {3, 4}));
  EXPECT_NEAR(y[0], 0.6, 1e-15);
  EXPECT_NEAR(y[1], 0.8, 1e-15);
}

TEST(L2Normalize, UnitVectorIsFixedPoint) {
  Tensor y = l2_normalize_rows(Tensor::matrix(1, 3, {0, 1, 0}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{0, 1, 0}));
}

TEST(L2Normalize, ZeroRowIsDegenerate) {
  EXPECT_THROW(l2_normalize_rows(Tensor::matrix(2, 2, {1, 0, 0, 0})), DegenerateVectorError);
}

TEST(Backward, ProductRule) {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = Tensor::scalar(3.0, true);
  Tensor loss = mul(x, y);
  loss.backward();
  EXPECT_EQ(x.grad()[0], 3.0);
  EXPECT_EQ(y.grad()[0], 2.0);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::zeros({2, 3}, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, RejectsNonScalarRoot) {
  Tensor x = Tensor::zeros({2, 3}, true);
  EXPECT_THROW(scale(x, 2.0).backward(), GraphError);
}

TEST(Backward, SecondCallWithoutResetIsAnError) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tensor loss = sum(mul(x, x));
  loss.backward();
  EXPECT_THROW(loss.backward(), GraphError);
  loss.reset_backward();
  EXPECT_NO_THROW(loss.backward());
  EXPECT_EQ(x.grad(), (std::vector<double>{2, 4}));
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor y = mul(x, x);
  add(y, y).backward();  // d/dx 2x^2 = 4x
  EXPECT_EQ(x.grad()[0], 12.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::scalar(3.0, true);
  NoGradGuard guard;
  Tensor y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(NumericGuard, NonFiniteResultsAreRejected) {
  EXPECT_THROW(log(Tensor::vector({0.0})), NumericError);
  EXPECT_THROW(exp(Tensor::vector({1000.0})), NumericError);
  EXPECT_THROW(Tensor::vector({std::nan("")}), NumericError);
}

TEST(Shapes, NoImplicitBroadcasting) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3})), DimensionError);
  EXPECT_THROW(add_row_bias(Tensor::zeros({2, 3}), Tensor::zeros({2})), DimensionError);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Ops, MeanRowsHandComputed) {
  Tensor m = mean_rows(Tensor::matrix(2, 2, {1, 3, 3, 1}));
  EXPECT_EQ(std::vector<double>(m.data().begin(), m.data().end()), (std::vector<double>{2, 2}));
}

TEST(Ops, LogsumexpIsStable) {
  Tensor v = logsumexp(Tensor::vector({1000.0, 1000.0}));
  EXPECT_NEAR(v.item(), 1000.0 + std::log(2.0), 1e-12);
}

TEST(Ops, CrossEntropyUniformLogits) {
  Tensor l = cross_entropy(Tensor::zeros({2, 4}), {0, 3});
  EXPECT_NEAR(l.item(), std::log(4.0), 1e-15);
}

TEST(Ops, ConcatVectorsKeepsOrderAndRoutesGradients) {
  Tensor a = Tensor::vector({1.0, 2.0}, true);
  Tensor b = Tensor::vector({3.0, 4.0, 5.0}, true);
  Tensor c = concat(a, b);
  ASSERT_EQ(c.shape(), (Shape{5}));
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4, 5}));
  sum(mul(c, Tensor::vector({1.0, 2.0, 3.0, 4.0, 5.0}))).backward();
  EXPECT_EQ(a.grad(), (std::vector<double>{1, 2}));
  EXPECT_EQ(b.grad(), (std::vector<double>{3, 4, 5}));
}

// Every differentiable op, 20 random instances each.
TEST(GradientProperty, EveryOpOnTwentyRandomInstances) {
  using Builder = std::function<Tensor(const std::vector<Tensor>&)>;
  struct Case {
    const char* name;
    std::function<std::vector<Tensor>(Rng&)> inputs;
    Builder f;
  };
  Rng wrng(99);
  auto W = [&](Shape s) { return random_tensor(std::move(s), wrng, false); };
  const Tensor w34 = W({3, 4}), w32 = W({3, 2}), w33 = W({3, 3}), w43 = W({4, 3}), w4 = W({4}),
               w36 = W({3, 6}), w3 = W({3}), w26 = W({2, 6}), w53 = W({5, 3}), w56 = W({5, 6});
  std::vector<Case> cases = {
      {"matmul", [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; },
       [&](const auto& in) { return sum(mul(matmul(in[0], in[1]), w32)); }},
      {"matmul_nt", [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(matmul_nt(in[0], in[1], 0.7), w33)); }},
      {"transpose", [](Rng& r) { return std::vector{random_tensor({4, 3}, r)}; },
       [&](const auto& in) { return sum(mul(transpose(in[0]), w34)); }},
      {"add", [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(add(in[0], in[1]), w34)); }},
      {"sub", [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(sub(in[0], in[1]), w34)); }},
      {"mul", [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(mul(in[0], in[1]), w34)); }},
      {"scale", [](Rng& r) { return std::vector{random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(scale(in[0], -1.3), w34)); }},
      {"add_row_bias", [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({4}, r)}; },
       [&](const auto& in) { return sum(mul(add_row_bias(in[0], in[1]), w34)); }},
      {"relu",
       [](Rng& r) {
         auto x = random_tensor({3, 4}, r);
         for (double& v : x.mutable_data()) v += v > 0 ? 0.05 : -0.05;  // keep away from the kink
         return std::vector{x};
       },
       [&](const auto& in) { return sum(mul(relu(in[0]), w34)); }},
      {"exp", [](Rng& r) { return std::vector{random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(exp(in[0]), w34)); }},
      {"log", [](Rng& r) { return std::vector{random_tensor({3, 4}, r, true, 0.5, 2.0)}; },
       [&](const auto& in) { return sum(mul(log(in[0]), w34)); }},
      {"mean_rows", [](Rng& r) { return std::vector{random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(mean_rows(in[0]), w4)); }},
      {"softmax_rows", [](Rng& r) { return std::vector{random_tensor({3, 6}, r, true, -3, 3)}; },
       [&](const auto& in) { return sum(mul(softmax_rows(in[0]), w36)); }},
      {"l2_normalize_rows", [](Rng& r) { return std::vector{random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(l2_normalize_rows(in[0]), w34)); }},
      {"layer_norm_rows",
       [](Rng& r) { return std::vector{random_tensor({3, 4}, r), random_tensor({4}, r), random_tensor({4}, r)}; },
       [&](const auto& in) { return sum(mul(layer_norm_rows(in[0], in[1], in[2]), w34)); }},
      {"attention",
       [](Rng& r) { return std::vector{random_tensor({5, 6}, r), random_tensor({4, 6}, r), random_tensor({4, 6}, r)}; },
       [&](const auto& in) { return sum(mul(attention(in[0], in[1], in[2], 2), w56)); }},
      {"gather_rows", [](Rng& r) { return std::vector{random_tensor({3, 3}, r)}; },
       [&](const auto& in) { return sum(mul(gather_rows(in[0], {2, 0, 2, 1}), w43)); }},
      {"scatter_rows", [](Rng& r) { return std::vector{random_tensor({3, 3}, r)}; },
       [&](const auto& in) { return sum(mul(scatter_rows(in[0], {4, 0, 2}, 5), w53)); }},
      {"stack_rows", [](Rng& r) { return std::vector{random_tensor({3}, r), random_tensor({3}, r)}; },
       [&](const auto& in) { return sum(mul(stack_rows({in[0], in[1], in[0]}), w33)); }},
      {"concat", [](Rng& r) { return std::vector{random_tensor({2, 2}, r), random_tensor({2, 4}, r)}; },
       [&](const auto& in) { return sum(mul(concat(in[0], in[1]), w26)); }},
      {"row_scale", [](Rng& r) { return std::vector{random_tensor({3, 4}, r)}; },
       [&](const auto& in) { return sum(mul(row_scale(in[0], {0.5, -2.0, 1.5}), w34)); }},
      {"diag", [](Rng& r) { return std::vector{random_tensor({3, 3}, r)}; },
       [&](const auto& in) { return sum(mul(diag(in[0]), w3)); }},
      {"logsumexp", [](Rng& r) { return std::vector{random_tensor({3, 3}, r, true, -4, 4)}; },
       [&](const auto& in) { return logsumexp(in[0]); }},
      {"cross_entropy", [](Rng& r) { return std::vector{random_tensor({3, 4}, r, true, -3, 3)}; },
       [&](const auto& in) { return cross_entropy(in[0], {1, 3, 0}); }},
  };
  for (const auto& c : cases) {
    Rng rng(1000);
    double worst = 0.0;
    for (int instance = 0; instance < 20; ++instance) {
      auto inputs = c.inputs(rng);
      auto r = check::gradcheck([&] { return c.f(inputs); }, inputs);
      worst = std::max(worst, r.max_error);
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}

TEST(GradientProperty, CorruptedRuleIsDetected) {
  Rng rng(8);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w = random_tensor({3, 4}, rng, false);
  FaultInjection fault("softmax_rows");
  auto r = check::gradcheck([&] { return sum(mul(softmax_rows(x), w)); }, {x});
  EXPECT_FALSE(r.passed);
}

TEST(Determinism, RepeatedComputationIsBitwiseIdentical) {
  auto run = [] {
    Rng rng(77);
    Tensor a = random_tensor({6, 5}, rng);
    Tensor b = random_tensor({5, 6}, rng);
    Tensor loss = logsumexp(softmax_rows(matmul(a, b)));
    loss.backward();
    auto g = a.grad();
    g.push_back(loss.item());
    return g;
  };
  EXPECT_TRUE(bitwise_equal(run(), run()));
}

class LtfTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("lava_ltf_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(LtfTest, RoundTripIsBitwise) {
  Rng rng(4);
  for (const Shape& s : {Shape{}, Shape{7}, Shape{3, 5}, Shape{2, 3, 4}, Shape{0, 3}}) {
    Tensor t = random_tensor(s, rng, false, -1e6, 1e6);
    ltf::save(dir_ / "t.ltf", t);
    Tensor back = ltf::load(dir_ / "t.ltf");
    EXPECT_EQ(back.shape(), t.shape());
    EXPECT_TRUE(bitwise_equal(back.data(), t.data()));
  }
}

TEST_F(LtfTest, HeaderLayoutIsLittleEndian) {
  auto bytes = ltf::encode(Tensor::matrix(1, 2, {1.0, -2.0}));
  ASSERT_EQ(bytes.size(), 8u + 16u + 16u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "LTF1");
  EXPECT_EQ(bytes[4], 0);  // f64
  EXPECT_EQ(bytes[5], 2);  // rank
  EXPECT_EQ(bytes[6], 0);
  EXPECT_EQ(bytes[7], 0);
  EXPECT_EQ(bytes[8], 1);  // dim0 = 1, LE
  EXPECT_EQ(bytes[16], 2);
  EXPECT_EQ(bytes[24 + 7], 0x3f);  // 1.0 = 0x3ff0000000000000
  EXPECT_EQ(bytes[24 + 6], 0xf0);
}

TEST_F(LtfTest, CorruptedMagicNamesThePath) {
  auto bytes = ltf::encode(Tensor::vector({1, 2, 3}));
  bytes[0] = 'X';
  ltf::write_file(dir_ / "bad.ltf", bytes);
  try {
    ltf::load(dir_ / "bad.ltf");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.ltf"), std::string::npos);
  }
}

TEST_F(LtfTest, RejectsBadDtypeAndTruncation) {
  auto bytes = ltf::encode(Tensor::vector({1, 2, 3}));
  auto bad_dtype = bytes;
  bad_dtype[4] = 9;
  EXPECT_THROW(ltf::decode(bad_dtype, "x"), FormatError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(ltf::decode(truncated, "x"), FormatError);
  EXPECT_THROW(ltf::decode(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 5), "x"), FormatError);
}

TEST_F(LtfTest, MissingFileIsIoError) { EXPECT_THROW(ltf::load(dir_ / "nope.ltf"), IoError); }

}  // namespace
}  // namespace lava
