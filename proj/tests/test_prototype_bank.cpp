#include <cmath>

#include <gtest/gtest.h>

#include "msda/errors.hpp"
#include "msda/prototype_bank.hpp"
#include "test_util.hpp"

namespace msda {
namespace {

PrototypeEstimate full_estimate(const Tensor& values) {
  const std::size_t n = values.dim(0);
  return {values, std::vector<bool>(n, true), std::vector<std::size_t>(n, 1)};
}

TEST(PrototypeBankTest, SlotsAreDomainMajor) {
  PrototypeBank bank(3, 4, 2, PrototypeMode::Ema);
  EXPECT_EQ(bank.slots(), 12u);
  EXPECT_EQ(bank.slot(0, 0), 0u);
  EXPECT_EQ(bank.slot(1, 0), 4u);
  EXPECT_EQ(bank.slot(2, 3), 11u);
  EXPECT_EQ(bank.coords(7), (std::pair<int, int>{1, 3}));
  EXPECT_THROW(bank.slot(3, 0), ContractError);
}

TEST(PrototypeBankTest, SingletonEstimateIsTheEmbedding) {
  const Tensor z = Tensor::matrix(1, 3, {0.3, -1.0, 2.0});
  const int slot[] = {2};
  const auto e = estimate_batch_prototypes(z, slot, 4);
  EXPECT_TRUE(e.present[2]);
  EXPECT_FALSE(e.present[0]);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(e.values.at(2, j), z.at(0, j));
}

TEST(PrototypeBankTest, OpposedEmbeddingsAverageToZero) {
  const Tensor z = Tensor::matrix(2, 2, {1.5, -0.5, -1.5, 0.5});
  const int slots[] = {0, 0};
  const auto e = estimate_batch_prototypes(z, slots, 1);
  EXPECT_EQ(e.counts[0], 2u);
  EXPECT_EQ(e.values.at(0, 0), 0.0);
  EXPECT_EQ(e.values.at(0, 1), 0.0);
}

TEST(PrototypeBankTest, UnlabeledRowsAreIgnored) {
  const Tensor z = Tensor::matrix(2, 1, {4.0, 100.0});
  const int slots[] = {0, -1};
  const auto e = estimate_batch_prototypes(z, slots, 1);
  EXPECT_EQ(e.values.at(0, 0), 4.0);
}

TEST(PrototypeBankTest, EmaErrorContractsByBetaEachStep) {
  Rng rng(5);
  PrototypeBank bank(2, 3, 4, PrototypeMode::Ema, 0.7);
  const Tensor target = testing::random_tensor({6, 4}, rng);
  bank.ema_update(full_estimate(testing::random_tensor({6, 4}, rng)));
  double prev = max_abs_diff(bank.values(), target);
  for (int t = 0; t < 50; ++t) {
    Tensor before = bank.values();
    bank.ema_update(full_estimate(target));
    for (std::size_t i = 0; i < before.size(); ++i) {
      const double expected = 0.7 * (before[i] - target[i]);
      EXPECT_NEAR(bank.values()[i] - target[i], expected, 1e-12);
    }
    const double err = max_abs_diff(bank.values(), target);
    EXPECT_NEAR(err, 0.7 * prev, 1e-12);
    prev = err;
  }
}

TEST(PrototypeBankTest, FirstSightingCopiesAndAbsentSlotsStay) {
  PrototypeBank bank(1, 2, 1, PrototypeMode::Ema, 0.7);
  PrototypeEstimate e{Tensor::matrix(2, 1, {5.0, 9.0}), {true, false}, {1, 0}};
  bank.ema_update(e);
  EXPECT_EQ(bank.values().at(0, 0), 5.0);
  EXPECT_EQ(bank.values().at(1, 0), 0.0);
  EXPECT_TRUE(bank.initialized()[0]);
  EXPECT_FALSE(bank.initialized()[1]);
  bank.ema_update({Tensor::matrix(2, 1, {1.0, 9.0}), {true, true}, {1, 1}});
  EXPECT_NEAR(bank.values().at(0, 0), 0.7 * 5.0 + 0.3 * 1.0, 1e-15);
  EXPECT_EQ(bank.values().at(1, 0), 9.0);
}

TEST(PrototypeBankTest, ModesGuardTheirOperations) {
  Rng rng(1);
  PrototypeBank learn = PrototypeBank::learnable(2, 2, 3, rng);
  EXPECT_THROW(learn.ema_update(full_estimate(Tensor({4, 3}))), ContractError);
  EXPECT_FALSE(learn.parameter().decay);
  PrototypeBank ema(2, 2, 3, PrototypeMode::Ema);
  EXPECT_THROW(ema.parameter(), ContractError);
  EXPECT_THROW(PrototypeBank(2, 2, 3, PrototypeMode::Ema, 1.0), ConfigError);
}

TEST(PrototypeBankTest, LearnableInitHasRequestedVariance) {
  Rng rng(2);
  PrototypeBank bank = PrototypeBank::learnable(20, 10, 50, rng, 0.01);
  double s = 0, s2 = 0;
  for (double v : bank.values().values()) {
    s += v;
    s2 += v * v;
  }
  const double n = static_cast<double>(bank.values().size());
  EXPECT_NEAR(s / n, 0.0, 0.005);
  EXPECT_NEAR(s2 / n, 0.01, 0.001);
}

TEST(PrototypeBankTest, RefreshedPrototypesMixHistoryAndEstimate) {
  PrototypeBank bank(1, 3, 2, PrototypeMode::Ema, 0.7);
  bank.ema_update({Tensor::matrix(3, 2, {1, 1, 2, 2, 3, 3}), {true, true, false}, {1, 1, 0}});
  const Tensor z = Tensor::matrix(3, 2, {0.0, 2.0, 4.0, 6.0, 8.0, 8.0});
  const int slots[] = {0, 0, 2};
  Tape tape;
  Var zv = tape.variable(z);
  Var c = refreshed_prototypes(zv, bank, slots, true);
  const Tensor& v = c.value();
  EXPECT_NEAR(v.at(0, 0), 0.7 * 1 + 0.3 * 2.0, 1e-15);  // present, initialised
  EXPECT_NEAR(v.at(0, 1), 0.7 * 1 + 0.3 * 4.0, 1e-15);
  EXPECT_EQ(v.at(1, 0), 2.0);                           // absent: history
  EXPECT_EQ(v.at(2, 0), 8.0);                           // uninitialised: estimate
  tape.backward(sum(c));
  const Tensor g = tape.grad(zv);
  EXPECT_NEAR(g.at(0, 0), 0.15, 1e-15);
  EXPECT_NEAR(g.at(2, 1), 1.0, 1e-15);

  Tape frozen;
  Var zf = frozen.variable(z);
  frozen.backward(sum(refreshed_prototypes(zf, bank, slots, false)));
  const Tensor frozen_grad = frozen.grad(zf);
  for (double x : frozen_grad.values()) EXPECT_EQ(x, 0.0);
}

TEST(PrototypeBankTest, RandomBatchMatchesNaiveClassMeans) {
  Rng rng(11);
  for (int it = 0; it < 50; ++it) {
    const int n = testing::random_int(rng, 1, 30), slots = testing::random_int(rng, 1, 8);
    const Tensor z = testing::random_tensor({static_cast<std::size_t>(n), 3}, rng);
    std::vector<int> s(static_cast<std::size_t>(n));
    for (auto& v : s) v = testing::random_int(rng, -1, slots - 1);
    const auto e = estimate_batch_prototypes(z, s, static_cast<std::size_t>(slots));
    for (int k = 0; k < slots; ++k) {
      double sum[3] = {0, 0, 0};
      int count = 0;
      for (int i = 0; i < n; ++i)
        if (s[static_cast<std::size_t>(i)] == k) {
          ++count;
          for (std::size_t j = 0; j < 3; ++j) sum[j] += z.at(static_cast<std::size_t>(i), j);
        }
      const auto ku = static_cast<std::size_t>(k);
      EXPECT_EQ(e.present[ku], count > 0);
      EXPECT_EQ(e.counts[ku], static_cast<std::size_t>(count));
      if (count > 0)
        for (std::size_t j = 0; j < 3; ++j)
          EXPECT_NEAR(e.values.at(ku, j), sum[j] / count, 1e-14);
    }
  }
}

TEST(PrototypeBankTest, EmaArithmeticAndFixedPoint) {
  PrototypeBank bank(1, 1, 1, PrototypeMode::Ema, 0.7);
  bank.ema_update(full_estimate(Tensor::matrix(1, 1, {1.0})));
  bank.ema_update(full_estimate(Tensor::matrix(1, 1, {0.0})));
  EXPECT_NEAR(bank.values()[0], 0.7, 1e-15);
  bank.ema_update(full_estimate(Tensor::matrix(1, 1, {0.7})));
  EXPECT_NEAR(bank.values()[0], 0.7, 1e-15);
}

TEST(PrototypeBankTest, EmaFollowsClosedFormRecurrence) {
  Rng rng(12);
  const double beta = 0.7;
  PrototypeBank bank(2, 2, 3, PrototypeMode::Ema, beta);
  const Tensor c0 = testing::random_tensor({4, 3}, rng);
  const Tensor target = testing::random_tensor({4, 3}, rng);
  bank.ema_update(full_estimate(c0));
  for (int t = 1; t <= 40; ++t) {
    bank.ema_update(full_estimate(target));
    for (std::size_t i = 0; i < target.size(); ++i)
      EXPECT_NEAR(bank.values()[i], target[i] + std::pow(beta, t) * (c0[i] - target[i]), 1e-12);
  }
}

}  // namespace
}  // namespace msda
