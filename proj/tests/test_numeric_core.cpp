// Copyright 2026 The LCT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "lct/autodiff.hpp"
#include "lct/gradcheck.hpp"
#include "lct/tensor.hpp"
#include "test_util.hpp"

namespace lct {
namespace {

using testing::op_gradcheck;
using testing::random_tensor;

constexpr double kOpTolerance = 1e-6;

TEST(Tensor, ShapeAndStorage) {
  Tensor2D t(3, 4, 1.5);
  EXPECT_EQ(t.rows(), 3u);
  EXPECT_EQ(t.cols(), 4u);
  EXPECT_EQ(t.size(), 12u);
  for (double v : t.data()) EXPECT_EQ(v, 1.5);
  EXPECT_THROW(Tensor2D(2, 2, std::vector<double>{1, 2, 3}), ConfigError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  std::mt19937_64 rng(1);
  const Tensor2D x = random_tensor(2, 5, rng);
  EXPECT_EQ(matmul(Tensor2D{{1, 0}, {0, 1}}, x), x);
}

TEST(Matmul, RowTimesColumn) {
  const Tensor2D out = matmul(Tensor2D{{1, 2}}, Tensor2D{{3}, {4}});
  ASSERT_EQ(out.rows(), 1u);
  ASSERT_EQ(out.cols(), 1u);
  EXPECT_EQ(out[0], 11.0);
}

TEST(Matmul, DimensionMismatchIsConfigError) {
  EXPECT_THROW(matmul(Tensor2D(2, 3), Tensor2D(2, 3)), ConfigError);
  EXPECT_THROW(matmul_nt(Tensor2D(2, 3), Tensor2D(2, 4)), ConfigError);
  EXPECT_THROW(matmul_tn(Tensor2D(2, 3), Tensor2D(3, 3)), ConfigError);
}

TEST(Matmul, VariantsAgreeWithTranspose) {
  std::mt19937_64 rng(2);
  const Tensor2D a = random_tensor(3, 4, rng), b = random_tensor(5, 4, rng), c = random_tensor(3, 2, rng);
  const Tensor2D nt = matmul_nt(a, b), ref_nt = matmul(a, transpose(b));
  const Tensor2D tn = matmul_tn(a, c), ref_tn = matmul(transpose(a), c);
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt[i], ref_nt[i], 1e-12);
  for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_NEAR(tn[i], ref_tn[i], 1e-12);
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  const double err = op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::matmul(t, v[0], v[1]); },
                                  {random_tensor(3, 4, rng), random_tensor(4, 2, rng)});
  EXPECT_LT(err, kOpTolerance);
}

TEST(Softmax, SingleColumnIsAllOnes) {
  const Tensor2D s = softmax_rows(Tensor2D{{3.0}, {-7.0}, {0.0}}, 0.07);
  for (double v : s.data()) EXPECT_EQ(v, 1.0);
}

TEST(Softmax, EqualLogitsAreUniform) {
  const Tensor2D s = softmax_rows(Tensor2D{{0, 0, 0, 0}}, 0.07);
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, TinyTemperatureIsArgmax) {
  const Tensor2D s = softmax_rows(Tensor2D{{5, 0}}, 1e-6);
  EXPECT_GT(s(0, 0), 1.0 - 1e-6);
}

TEST(Softmax, NonPositiveTemperatureIsConfigError) {
  EXPECT_THROW(softmax_rows(Tensor2D{{1, 2}}, 0.0), ConfigError);
  EXPECT_THROW(softmax_rows(Tensor2D{{1, 2}}, -1.0), ConfigError);
}

TEST(Softmax, RowsAreStochasticAndInOpenInterval) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor2D s = softmax_rows(random_tensor(6, 7, rng, 0.3), 0.07);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double sum = 0.0;
      for (double v : s.row(i)) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, HugeLogitsStayFinite) {
  const Tensor2D s = softmax_rows(Tensor2D{{1e6, 1e6 - 1.0, -1e6}}, 0.07);
  EXPECT_TRUE(s.all_finite());
  EXPECT_NEAR(s(0, 0) + s(0, 1) + s(0, 2), 1.0, 1e-12);
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const double err = op_gradcheck(
      [](GradTape& t, const std::vector<Var>& v) { return ad::softmax_rows(t, v[0], 0.7); },
      {random_tensor(4, 5, rng)});
  EXPECT_LT(err, kOpTolerance);
}

TEST(Sigmoid, KnownValues) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  EXPECT_GT(sigmoid(40.0), 1.0 - 1e-12);
  EXPECT_GE(sigmoid(-800.0), 0.0);
  EXPECT_TRUE(std::isfinite(sigmoid(-800.0)));
  EXPECT_TRUE(std::isfinite(sigmoid(800.0)));
}

TEST(Sigmoid, ReflectionIdentity) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = normal(rng);
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15);
  }
}

TEST(Autodiff, ElementwiseOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Tensor2D x = random_tensor(3, 4, rng);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::tanh(t, v[0]); }, {x}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::sigmoid(t, v[0]); }, {x}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::one_minus(t, v[0]); }, {x}),
            kOpTolerance);
}

TEST(Autodiff, StructuralOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(8);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::matmul_nt(t, v[0], v[1]); },
                         {random_tensor(3, 4, rng), random_tensor(5, 4, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::add_row(t, v[0], v[1]); },
                         {random_tensor(3, 4, rng), random_tensor(1, 4, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck(
                [](GradTape& t, const std::vector<Var>& v) { return ad::affine_scalar(t, v[0], v[1], v[2]); },
                {random_tensor(6, 1, rng), random_tensor(1, 1, rng), random_tensor(1, 1, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::residual_gate(t, v[0], v[1]); },
                         {random_tensor(5, 3, rng), random_tensor(5, 1, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::segment_mean(t, v[0], 3); },
                         {random_tensor(6, 4, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::mean_rows(t, v[0]); },
                         {random_tensor(5, 2, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck(
                [](GradTape& t, const std::vector<Var>& v) { return ad::gather_rows(t, v[0], {2, 0, 2, 1}); },
                {random_tensor(3, 4, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::concat_cols(t, {v[0], v[1]}); },
                         {random_tensor(3, 2, rng), random_tensor(3, 5, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::segment_dot(t, v[0], v[1], 3); },
                         {random_tensor(6, 4, rng), random_tensor(2, 4, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck(
                [](GradTape& t, const std::vector<Var>& v) { return ad::prototype_aggregate(t, v[0], v[1]); },
                {random_tensor(5, 4, rng), random_tensor(1, 4, rng)}),
            kOpTolerance);
}

TEST(PrototypeAggregate, MatchesRowDotProduct) {
  std::mt19937_64 rng(21);
  const Tensor2D s = random_tensor(6, 5, rng), w = random_tensor(1, 5, rng);
  const Tensor2D agg = prototype_aggregate(s, w);
  ASSERT_EQ(agg.rows(), 6u);
  ASSERT_EQ(agg.cols(), 1u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(agg[i], dot(s.row(i), w.row(0)), 1e-14);
  EXPECT_THROW(prototype_aggregate(s, Tensor2D(1, 4)), ConfigError);
}

TEST(PrototypeAggregate, JointColumnPermutationIsBitwiseInvariant) {
  std::mt19937_64 rng(22);
  const Tensor2D s = random_tensor(7, 6, rng), w = random_tensor(1, 6, rng);
  const std::size_t perm[] = {4, 1, 5, 0, 3, 2};
  Tensor2D ps(7, 6), pw(1, 6);
  for (std::size_t k = 0; k < 6; ++k) {
    pw[k] = w[perm[k]];
    for (std::size_t i = 0; i < 7; ++i) ps(i, k) = s(i, perm[k]);
  }
  EXPECT_EQ(prototype_aggregate(ps, pw), prototype_aggregate(s, w));
  EXPECT_EQ(softmax_rows(ps, 0.3)(2, 0), softmax_rows(s, 0.3)(2, 4));
}

TEST(Autodiff, LossOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(0.05, 0.95);
  Tensor2D probs(3, 4), targets(3, 4);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = unit(rng);
    targets[i] = (i % 3 == 0) ? 1.0 : 0.0;
  }
  EXPECT_LT(op_gradcheck([&](GradTape& t, const std::vector<Var>& v) { return ad::bce_mean(t, v[0], targets); },
                         {probs}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::squared_cosine(t, v[0], v[1]); },
                         {random_tensor(1, 6, rng), random_tensor(1, 6, rng)}),
            kOpTolerance);
  EXPECT_LT(op_gradcheck([](GradTape& t, const std::vector<Var>& v) { return ad::add_scaled(t, v[0], v[1], 0.1); },
                         {random_tensor(1, 1, rng), random_tensor(1, 1, rng)}),
            kOpTolerance);
}

TEST(Autodiff, BceMatchesScalarOracle) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor2D probs(4, 6), targets(4, 6);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    probs[i] = unit(rng);
    targets[i] = unit(rng) < 0.3 ? 1.0 : 0.0;
  }
  double oracle = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::min(std::max(probs[i], 1e-12), 1.0 - 1e-12);
    oracle += targets[i] > 0.5 ? -std::log(p) : -std::log1p(-p);
  }
  oracle /= static_cast<double>(probs.size());
  GradTape t;
  EXPECT_NEAR(t.value(ad::bce_mean(t, t.constant(probs), targets))[0], oracle, 1e-12);
}

TEST(Autodiff, ConstantsNeverReceiveGradients) {
  GradTape t;
  Var a = t.constant(Tensor2D{{1, 2}});
  Var w = t.parameter(Tensor2D{{3}, {4}});
  Var out = ad::matmul(t, a, w);
  t.backward(out);
  EXPECT_EQ(t.grad(a), nullptr);
  ASSERT_NE(t.grad(w), nullptr);
  EXPECT_EQ((*t.grad(w))[0], 1.0);
  EXPECT_EQ((*t.grad(w))[1], 2.0);
}

TEST(Autodiff, BackwardTwiceGivesSameGradients) {
  std::mt19937_64 rng(11);
  GradTape t;
  Var x = t.parameter(random_tensor(3, 3, rng));
  Var pooled = ad::mean_rows(t, ad::tanh(t, ad::matmul(t, x, x)));
  Var scalar = ad::matmul_nt(t, pooled, t.constant(Tensor2D(1, 3, 1.0)));
  t.backward(scalar);
  const Tensor2D first = *t.grad(x);
  t.backward(scalar);
  EXPECT_EQ(*t.grad(x), first);
}

TEST(Autodiff, SharedInputAccumulates) {
  GradTape t;
  Var x = t.parameter(Tensor2D{{2.0}});
  Var y = ad::matmul(t, x, x);  // x^2
  t.backward(y);
  EXPECT_EQ((*t.grad(x))[0], 4.0);
}

TEST(Autodiff, BackwardRejectsNonScalarLoss) {
  GradTape t;
  Var x = t.parameter(Tensor2D(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), ConfigError);
}

TEST(Autodiff, SquaredCosineExactCases) {
  GradTape t;
  Var u = t.constant(Tensor2D{{1, 0, 0}});
  EXPECT_EQ(t.value(ad::squared_cosine(t, u, t.constant(Tensor2D{{0, 5, 0}})))[0], 0.0);
  EXPECT_EQ(t.value(ad::squared_cosine(t, u, t.constant(Tensor2D{{-3, 0, 0}})))[0], 1.0);
  EXPECT_EQ(t.value(ad::squared_cosine(t, u, t.constant(Tensor2D{{0, 0, 0}})))[0], 0.0);
}

TEST(Autodiff, AddScaledIsExactArithmetic) {
  GradTape t;
  const double a = 0.5, b = 0.2, lambda = 0.1;
  Var s = ad::add_scaled(t, t.constant(Tensor2D(1, 1, a)), t.constant(Tensor2D(1, 1, b)), lambda);
  EXPECT_EQ(t.value(s)[0], a + lambda * b);
  EXPECT_NEAR(t.value(s)[0], 0.52, 1e-15);
}

TEST(Gradcheck, QuadraticAtThree) {
  Tensor2D x(1, 1, 3.0), g(1, 1);
  auto closure = [&](bool with_grad) {
    if (with_grad) g[0] = 2.0 * x[0];
    return x[0] * x[0];
  };
  const std::vector<ParamRef> refs{{"x", &x, &g}};
  const GradcheckReport r = gradcheck(closure, refs);
  EXPECT_LT(r.max_rel_error, 1e-9);
  EXPECT_EQ(x[0], 3.0);
}

TEST(Gradcheck, ZeroGradientParameterReportsZero) {
  Tensor2D x(1, 2, 1.0), g(1, 2);
  auto closure = [&](bool with_grad) {
    if (with_grad) {
      g[0] = 2.0 * x[0];
      g[1] = 0.0;
    }
    return x[0] * x[0];
  };
  const std::vector<ParamRef> refs{{"x", &x, &g}};
  const GradcheckReport r = gradcheck(closure, refs);
  EXPECT_EQ(r.entries.front().max_rel_error, r.max_rel_error);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(Gradcheck, DetectsWrongGradient) {
  Tensor2D x(1, 1, 3.0), g(1, 1);
  auto closure = [&](bool with_grad) {
    if (with_grad) g[0] = 5.0;
    return x[0] * x[0];
  };
  const std::vector<ParamRef> refs{{"x", &x, &g}};
  EXPECT_FALSE(gradcheck(closure, refs).passed(1e-4));
}

TEST(Gradcheck, NonFiniteLossAborts) {
  Tensor2D x(1, 1, 3.0), g(1, 1);
  auto closure = [&](bool) { return std::nan(""); };
  const std::vector<ParamRef> refs{{"x", &x, &g}};
  EXPECT_THROW(gradcheck(closure, refs), std::runtime_error);
}

TEST(Determinism, RepeatedOpsAreBitwiseEqual) {
  std::mt19937_64 rng(12);
  const Tensor2D a = random_tensor(7, 5, rng), b = random_tensor(9, 5, rng);
  EXPECT_EQ(softmax_rows(matmul_nt(a, b), 0.07), softmax_rows(matmul_nt(a, b), 0.07));
}

}  // namespace
}  // namespace lct
