// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "bimsmt/autograd.hpp"
#include "bimsmt/optim.hpp"
#include "support/gradcheck.hpp"

namespace bimsmt {
namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

TEST(Tensor, ShapeAndAccess) {
  Tensor m = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.at(1, 2), 6.0);
  EXPECT_EQ(Tensor::vector({1, 2}).cols(), 1u);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1.0}), DimensionError);
}

TEST(Matmul, IdentityTimesVector) {
  Tape tape;
  Var i = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  Var x = tape.constant(Tensor::matrix(2, 1, {3, 4}));
  Var y = matmul(i, x);
  EXPECT_EQ(y.value(), Tensor::matrix(2, 1, {3, 4}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(7);
  const Tensor a = random_matrix(2, 3, rng);
  const Tensor b = random_matrix(3, 2, rng);
  Tape tape;
  const Tensor c = matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-12);
    }
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 2}));
  EXPECT_THROW(matmul(a, b), DimensionError);
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  Rng rng(3);
  const Tensor b = random_matrix(3, 2, rng);
  Tape tape;
  Var a = tape.variable(random_matrix(2, 3, rng));
  tape.backward(sum(matmul(a, tape.constant(b))));
  const Tensor g = tape.gradient(a);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(g.at(i, k), b.at(k, 0) + b.at(k, 1), 1e-15);
}

TEST(Elementwise, SigmoidAndTanhAtZero) {
  Tape tape;
  Var z = tape.constant(Tensor::vector({0.0}));
  EXPECT_EQ(sigmoid(z).value()[0], 0.5);
  EXPECT_EQ(tanh(z).value()[0], 0.0);
}

TEST(Elementwise, SigmoidDerivativeMatchesFiniteDifference) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({0.0}));
  tape.backward(sum(sigmoid(x)));
  const double h = 1e-6;
  const double fd = (1.0 / (1.0 + std::exp(-h)) - 1.0 / (1.0 + std::exp(h))) / (2 * h);
  EXPECT_NEAR(tape.gradient(x)[0], 0.25, 1e-15);
  EXPECT_NEAR(tape.gradient(x)[0], fd, 1e-9);
}

TEST(Softmax, SingleElementIsOne) {
  Tape tape;
  EXPECT_EQ(softmax(tape.constant(Tensor::vector({-17.5}))).value()[0], 1.0);
}

TEST(Softmax, EqualLogitsSplitEvenly) {
  Tape tape;
  const Tensor p = softmax(tape.constant(Tensor::vector({0.0, 0.0}))).value();
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], 0.5);
}

TEST(Softmax, MatchesHighPrecisionOracle) {
  // 50-digit decimal evaluation of exp(x_i) / sum exp(x_j).
  const double oracle[3] = {9.00305731703804580e-2, 2.44728471054797652e-1,
                            6.65240955774821890e-1};
  Tape tape;
  const Tensor p = softmax(tape.constant(Tensor::vector({1, 2, 3}))).value();
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], oracle[i], 1e-12);
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tape tape;
  const Tensor p = softmax(tape.constant(Tensor::vector({1000.0, 1000.0, -1000.0}))).value();
  EXPECT_NEAR(p[0], 0.5, 1e-15);
  EXPECT_TRUE(p.all_finite());
}

TEST(Backward, SquareHasGradientSix) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({3.0}));
  tape.backward(sum(mul(x, x)));
  EXPECT_EQ(tape.gradient(x)[0], 6.0);
}

TEST(Backward, TwoCallsWithoutResetDoubleParameterGradients) {
  Rng rng(11);
  ParameterSet ps;
  Parameter& w = ps.add("w", {2, 2}, Init::kUniform, rng);
  Tape tape;
  Var x = tape.constant(Tensor::vector({0.3, -0.7}));
  Var loss = sum(tanh(matmul(tape.parameter(w), x)));
  tape.backward(loss);
  const Tensor once = w.grad;
  tape.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(w.grad[i], 2.0 * once[i]);
}

TEST(Backward, NonScalarLossIsRejected) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(Backward, NonRecordingTapeRefusesBackward) {
  Tape tape(false);
  Var x = tape.variable(Tensor::vector({1.0}));
  EXPECT_THROW(tape.backward(sum(x)), ContractError);
}

TEST(Backward, NonFiniteValueRaisesNumericError) {
  Tape tape;
  Var x = tape.variable(Tensor::vector({1e308}));
  EXPECT_THROW(scale(x, 1e10), NumericError);
}

TEST(Backward, OpLibraryMatchesFiniteDifferences) {
  // Touches every differentiable op in one scalar.
  Rng rng(5);
  ParameterSet ps;
  Parameter& w = ps.add("w", {3, 4}, Init::kUniform, rng);
  Parameter& b = ps.add("b", {3}, Init::kUniform, rng);
  Parameter& v = ps.add("v", {4}, Init::kUniform, rng);
  Parameter& q = ps.add("q", {3}, Init::kUniform, rng);
  for (auto& [_, p] : ps)
    for (auto& x : p.value.data()) x *= 10.0;
  auto loss = [&](Tape& t) {
    Var h = tanh(affine(t.parameter(w), t.parameter(v), t.parameter(b)));
    Var g = sigmoid(add(h, t.parameter(q)));
    Var m = columns({h, g, one_minus(g)});
    Var a = softmax(matmul(transpose(m), t.parameter(q)));
    Var c = matmul(m, a);
    Var mixed = convex_combine(g, c, scale(h, 0.5));
    Var cat = concat({mixed, sub(h, c)});
    Var r = row(reshape(cat, {2, 3}), 1);
    return add(add(nll(cat, 2), dot(r, r)), sum(mul(c, c)));
  };
  auto res = testing::check_gradients({&w, &b, &v, &q}, loss);
  EXPECT_TRUE(res.ok()) << res.failures << " failures, worst " << res.worst;
}

TEST(ConvexCombine, EqualInputsReturnedExactly) {
  Tape tape;
  Var a = tape.constant(Tensor::vector({0.1, -2.0}));
  Var alpha = tape.constant(Tensor::vector({0.3, 0.999}));
  EXPECT_EQ(convex_combine(alpha, a, a).value(), a.value());
}

TEST(Sgd, SingleUpdate) {
  Tensor p = Tensor::vector({1.0});
  sgd_update(p, Tensor::vector({1.0}), 0.1);
  EXPECT_DOUBLE_EQ(p[0], 0.9);
}

TEST(Sgd, BaseScheduleDecaysAfterFifthEpoch) {
  const SgdSchedule s = SgdSchedule::base();
  EXPECT_EQ(s.lr(5), 0.1);
  EXPECT_EQ(s.lr(6), 0.1 * 0.5);
  EXPECT_EQ(s.lr(7), 0.1 * 0.5 * 0.5);
  EXPECT_DOUBLE_EQ(s.lr(7), 0.025);
  EXPECT_DOUBLE_EQ(s.lr(6), 0.05);
}

TEST(Sgd, ContextualScheduleDecaysAfterFirstEpoch) {
  const SgdSchedule s = SgdSchedule::contextual();
  EXPECT_EQ(s.lr(1), 0.08);
  EXPECT_DOUBLE_EQ(s.lr(2), 0.072);
  EXPECT_DOUBLE_EQ(s.lr(3), 0.0648);
}

TEST(Sgd, ClippingBoundsGlobalNorm) {
  Rng rng(1);
  ParameterSet ps;
  Parameter& p = ps.add("p", {2}, Init::kZeros, rng);
  p.grad = Tensor::vector({30.0, 40.0});
  const double norm = sgd_step(ps, SgdSchedule{1.0, 1.0, 0, 1}, 1, 5.0);
  EXPECT_DOUBLE_EQ(norm, 50.0);
  EXPECT_DOUBLE_EQ(p.value[0], -3.0);
  EXPECT_DOUBLE_EQ(p.value[1], -4.0);
  EXPECT_EQ(p.grad[0], 0.0);
}

TEST(Sgd, InvalidScheduleRejected) {
  EXPECT_THROW((SgdSchedule{-0.1, 0.5, 5, 15}.validate()), ConfigError);
  EXPECT_THROW((SgdSchedule{0.1, 0.0, 5, 15}.validate()), ConfigError);
}

TEST(Dropout, RateZeroAndEvalModeAreIdentity) {
  Rng rng(2);
  Tape tape;
  Var x = tape.constant(Tensor::vector({1.0, 2.0, 3.0}));
  EXPECT_EQ(dropout(x, 0.0, true, rng).value(), x.value());
  EXPECT_EQ(dropout(x, 0.2, false, rng).value(), x.value());
}

TEST(Dropout, SurvivorFractionFollowsRate) {
  Rng rng(99);
  Tape tape(false);
  Var x = tape.constant(Tensor({1000000}, 1.0));
  const Tensor y = dropout(x, 0.2, true, rng).value();
  std::size_t kept = 0;
  for (double v : y.data()) kept += v != 0.0;
  EXPECT_NEAR(static_cast<double>(kept) / 1e6, 0.8, 0.01);
}

TEST(Dropout, RateOutsideRangeRejected) {
  Rng rng(2);
  Tape tape;
  Var x = tape.constant(Tensor::vector({1.0}));
  EXPECT_THROW(dropout(x, 1.0, true, rng), ConfigError);
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, "init"), derive_seed(1, "init"));
  EXPECT_NE(derive_seed(1, "init"), derive_seed(1, "split"));
  EXPECT_NE(derive_seed(1, "init"), derive_seed(2, "init"));
}

}  // namespace
}  // namespace bimsmt
