#include <cmath>

#include <gtest/gtest.h>

#include "msda/adam.hpp"
#include "msda/errors.hpp"
#include "test_util.hpp"

namespace msda {
namespace {

TEST(AdamTest, FirstStepMovesByLearningRateTimesSign) {
  Parameter p("w", Tensor::matrix(1, 3, {0.5, -0.5, 2.0}), false);
  Adam adam({&p}, {0.01, 0.9, 0.999, 0.0, 0.0});
  p.grad = Tensor::matrix(1, 3, {3.0, -0.2, 1e-3});
  adam.step();
  EXPECT_NEAR(p.value[0], 0.49, 1e-12);
  EXPECT_NEAR(p.value[1], -0.49, 1e-12);
  EXPECT_NEAR(p.value[2], 1.99, 1e-12);
  EXPECT_EQ(adam.step_count(), 1);
}

TEST(AdamTest, MatchesReferenceRecurrenceOverManySteps) {
  Rng rng(3);
  const AdamOptions o{0.05, 0.8, 0.99, 1e-8, 0.1};
  Parameter p("w", testing::random_tensor({4}, rng));
  Adam adam({&p}, o);
  std::vector<double> ref(p.value.values()), m(4, 0.0), v(4, 0.0);
  for (int t = 1; t <= 30; ++t) {
    p.grad = testing::random_tensor({4}, rng);
    adam.step();
    for (std::size_t i = 0; i < 4; ++i) {
      const double g = p.grad[i];
      m[i] = o.beta1 * m[i] + (1 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1 - o.beta2) * g * g;
      const double mh = m[i] / (1 - std::pow(o.beta1, t));
      const double vh = v[i] / (1 - std::pow(o.beta2, t));
      ref[i] -= o.lr * mh / (std::sqrt(vh) + o.eps);
      ref[i] -= o.lr * o.weight_decay * ref[i];
    }
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(p.value[i], ref[i], 1e-12);
}

TEST(AdamTest, WeightDecaySkipsExemptParameters) {
  Parameter decayed("a", Tensor::matrix(1, 1, {1.0}), true);
  Parameter exempt("b", Tensor::matrix(1, 1, {1.0}), false);
  Adam adam({&decayed, &exempt}, {0.1, 0.9, 0.999, 1e-8, 0.5});
  adam.zero_grad();
  adam.step();
  EXPECT_NEAR(decayed.value[0], 1.0 - 0.1 * 0.5, 1e-12);
  EXPECT_EQ(exempt.value[0], 1.0);
}

TEST(AdamTest, MomentsStartAtZeroWithParameterShapes) {
  Parameter p("w", Tensor({2, 3}, 1.0));
  Adam adam({&p}, {});
  ASSERT_EQ(adam.first_moments().size(), 1u);
  EXPECT_EQ(adam.first_moments()[0].shape(), (Shape{2, 3}));
  for (double x : adam.second_moments()[0].values()) EXPECT_EQ(x, 0.0);
}

TEST(AdamTest, RejectsMismatchedGradient) {
  Parameter p("w", Tensor({2, 2}));
  Adam adam({&p}, {});
  p.grad = Tensor({3});
  EXPECT_THROW(adam.step(), ContractError);
}

TEST(AdamTest, ZeroGradientWithoutDecayLeavesParametersUnchanged) {
  Parameter p("w", Tensor::matrix(1, 2, {0.3, -4.0}));
  Adam adam({&p}, {0.1, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 10; ++i) {
    adam.zero_grad();
    adam.step();
  }
  EXPECT_EQ(p.value[0], 0.3);
  EXPECT_EQ(p.value[1], -4.0);
}

TEST(AdamTest, ConstantGradientMovesAgainstItsSign) {
  Parameter p("w", Tensor::matrix(1, 2, {0.0, 0.0}));
  Adam adam({&p}, {0.01, 0.9, 0.999, 1e-8, 0.0});
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 200; ++i) {
    p.grad = Tensor::matrix(1, 2, {2.5, -0.1});
    adam.step();
    EXPECT_LT(p.value[0], prev0);
    EXPECT_GT(p.value[1], prev1);
    prev0 = p.value[0];
    prev1 = p.value[1];
  }
}

TEST(AdamTest, MinimisesScalarQuadratic) {
  Parameter p("x", Tensor({1}, std::vector<double>{1.0}));
  Adam adam({&p}, {1e-2, 0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 2000; ++i) {
    p.grad = p.value;  // d(x^2/2)/dx
    adam.step();
  }
  EXPECT_LT(std::abs(p.value[0]), 1e-3);
}

}  // namespace
}  // namespace msda
