#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "semiseg/difficulty.hpp"
#include "semiseg/error.hpp"
#include "semiseg/losses.hpp"
#include "semiseg/volume.hpp"

using namespace semiseg;

namespace {

double v(const torch::Tensor& t) { return t.item<double>(); }

}  // namespace

// -- hand cases --------------------------------------------------------------------

TEST(Losses, DiceCeUniformOnBalancedTarget) {
  auto p = torch::full({1, 2, 1, 1, 2}, 0.5, torch::kFloat64);
  auto y = one_hot_encode(torch::tensor({0, 1}, torch::kInt64).view({1, 1, 1, 2}), 2, torch::kFloat64);
  // 0.5 * (ln 2 + 1 - (0.5 + 1e-5) / (1 + 1e-5))
  const double dice = (1.0 + 1e-5) / (2.0 + 1e-5);
  EXPECT_NEAR(v(dice_ce(p, y)), 0.5 * (std::log(2.0) + 1.0 - dice), 1e-12);
  EXPECT_NEAR(v(dice_ce(p, y)), 0.5966, 1e-4);
}

TEST(Losses, DiceCePerfectPredictionIsNearZero) {
  auto y = one_hot_encode(torch::tensor({0, 1, 2, 1}, torch::kInt64).view({1, 1, 2, 2}), 3, torch::kFloat64);
  EXPECT_NEAR(v(dice_ce(y, y)), 0.0, 1e-9);
}

TEST(Losses, SoftDiceHandCase) {
  auto p = torch::tensor({0.6, 0.4}, torch::kFloat64).view({1, 2, 1, 1, 1});
  auto q = torch::tensor({0.5, 0.5}, torch::kFloat64).view({1, 2, 1, 1, 1});
  const double ref = 1 - 0.5 * ((0.6 + 1e-5) / (0.61 + 1e-5) + (0.4 + 1e-5) / (0.41 + 1e-5));
  EXPECT_NEAR(v(soft_dice(p, q)), ref, 1e-12);
  EXPECT_NEAR(v(soft_dice(p, q)), 0.0204, 1e-4);
}

TEST(Losses, RecIsOneAgainstZeroStudent) {
  Rng rng(1);
  auto t = rng.normal_tensor({2, 3, 2, 2, 2}, torch::kFloat64);
  EXPECT_NEAR(v(loss_rec(torch::zeros_like(t), t)), 1.0, 1e-15);
  EXPECT_EQ(v(loss_rec(t, t)), 0.0);
}

TEST(Losses, TotalWeightsComponents) {
  auto c = LossComponents::zeros(torch::TensorOptions().dtype(torch::kFloat64));
  for (auto* t : {&c.deno, &c.diff, &c.u, &c.mix, &c.mic, &c.kd, &c.rec, &c.corr}) *t = torch::ones({}, torch::kFloat64);
  LossWeights w;
  EXPECT_NEAR(v(total_loss(c, w)), 6.5, 1e-15);
  w.unlabeled = 0.5;
  EXPECT_NEAR(v(total_loss(c, w)), 7.0, 1e-15);
  w.alpha = -1;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(Losses, HardLabelLossesMatchOneHot) {
  Rng rng(2);
  auto p = oracle::random_probs(rng, {2, 3, 3, 3, 3});
  auto lab = oracle::random_labels(rng, {2, 3, 3, 3}, 3);
  auto y = one_hot_encode(lab, 3, torch::kFloat64);
  const double ref = v(dice_ce(p, y));
  EXPECT_EQ(v(loss_u(p, lab)), ref);
  EXPECT_EQ(v(loss_mix(p, lab)), ref);
  EXPECT_EQ(v(loss_mic(p, lab)), ref);
  EXPECT_NEAR(ref, oracle::dice_ce_hard(p, lab), 1e-12);
}

TEST(Losses, ShapeErrors) {
  auto a = torch::rand({1, 2, 2, 2, 2}, torch::kFloat64);
  EXPECT_THROW(dice_ce(a, torch::rand({1, 3, 2, 2, 2}, torch::kFloat64)), ValidationError);
  EXPECT_THROW(dice_ce(torch::rand({0, 2, 2, 2, 2}), torch::rand({0, 2, 2, 2, 2})), ValidationError);
  EXPECT_THROW(loss_diff(a, a, torch::ones({3})), ValidationError);
  EXPECT_THROW(loss_u(a, torch::full({1, 2, 2, 2}, 5, torch::kInt64)), ValidationError);
}

// -- randomized agreement with the brute-force oracles --------------------------------

TEST(Losses, RandomInstancesMatchOracles) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto K = rng.uniform_int(2, 4);
    const auto B = rng.uniform_int(1, 3);
    auto sp = oracle::random_spatial(rng, 2, 4);
    std::vector<std::int64_t> shape{B, K, sp[0], sp[1], sp[2]};
    auto p = oracle::random_probs(rng, shape);
    auto q = oracle::random_probs(rng, shape);
    auto r = oracle::random_probs(rng, shape);
    auto lab = oracle::random_labels(rng, {B, sp[0], sp[1], sp[2]}, K);
    auto y = one_hot_encode(lab, K, torch::kFloat64);
    std::vector<double> w;
    for (std::int64_t k = 0; k < K; ++k) w.push_back(0.1 + 2 * rng.uniform());
    auto wt = torch::tensor(w, torch::kFloat64);
    auto z1 = rng.normal_tensor(shape, torch::kFloat64);
    auto z2 = rng.normal_tensor(shape, torch::kFloat64);

    EXPECT_LT(oracle::rel_err(v(dice_ce(p, y)), oracle::dice_ce(p, y)), 1e-10);
    EXPECT_LT(oracle::rel_err(v(dice_ce(p, q)), oracle::dice_ce(p, q)), 1e-10);
    EXPECT_LT(oracle::rel_err(v(loss_diff(p, y, wt)), oracle::loss_diff(p, y, w)), 1e-10);
    EXPECT_LT(oracle::rel_err(v(loss_rec(z1, z2)), oracle::loss_rec(z1, z2)), 1e-10);
    EXPECT_LT(oracle::rel_err(v(soft_dice(p, q)), oracle::soft_dice(p, q)), 1e-10);
    EXPECT_LT(oracle::rel_err(v(loss_kd(p, q, r)), oracle::loss_kd(p, q, r)), 1e-10);
  }
}

TEST(Losses, TeacherSideIsDetached) {
  Rng rng(4);
  auto s = rng.normal_tensor({1, 2, 2, 2, 2}, torch::kFloat64).requires_grad_();
  auto t = rng.normal_tensor({1, 2, 2, 2, 2}, torch::kFloat64).requires_grad_();
  loss_rec(s, t).backward();
  EXPECT_TRUE(s.grad().defined());
  EXPECT_FALSE(t.grad().defined());
  auto x = torch::softmax(t, 1), ps = torch::softmax(t * 2, 1);
  auto s2 = s.detach().requires_grad_();
  loss_kd(torch::softmax(s2, 1), x, ps).backward();
  EXPECT_TRUE(s2.grad().defined());
  EXPECT_EQ(t.grad().defined(), false);
}

// -- difficulty tracker ------------------------------------------------------------

TEST(Difficulty, HandTracedSequence) {
  DifficultyTracker tr(1, {50, 0.2, 0.1});
  EXPECT_FALSE(tr.warm());
  tr.update({0.5});
  EXPECT_EQ(tr.weights()[0], 1.0);
  tr.update({0.4});
  tr.update({0.6});
  EXPECT_NEAR(tr.du()[0], 0.02231, 1e-4);
  EXPECT_NEAR(tr.dl()[0], 0.08109, 1e-4);
  EXPECT_NEAR(tr.difficulty()[0], 0.2751, 1e-4);
  auto ref = oracle::drs({0.5, 0.4, 0.6}, 50);
  EXPECT_NEAR(tr.du()[0], ref.du, 1e-15);
  EXPECT_NEAR(tr.dl()[0], ref.dl, 1e-15);
}

TEST(Difficulty, SignGatingAndWindow) {
  Rng rng(5);
  const std::int64_t K = 3, window = 5;
  DifficultyTracker tr(K, {window, 0.2, 0.1});
  std::vector<std::vector<double>> seq(static_cast<std::size_t>(K));
  for (int step = 0; step < 30; ++step) {
    std::vector<double> lam;
    for (std::int64_t k = 0; k < K; ++k) {
      lam.push_back(0.05 + 0.9 * rng.uniform());
      seq[static_cast<std::size_t>(k)].push_back(lam.back());
    }
    tr.update(lam);
    EXPECT_LE(tr.history().size(), static_cast<std::size_t>(window + 1));
    for (std::int64_t k = 0; k < K; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      EXPECT_GE(tr.du()[kk], 0.0);
      EXPECT_GE(tr.dl()[kk], 0.0);
      auto ref = oracle::drs(seq[kk], window);
      EXPECT_NEAR(tr.du()[kk], ref.du, 1e-12);
      EXPECT_NEAR(tr.dl()[kk], ref.dl, 1e-12);
      EXPECT_GE(tr.weights()[kk], 0.1);
    }
  }
}

TEST(Difficulty, MonotoneRiseGivesFloorWeight) {
  DifficultyTracker tr(2, {10, 0.2, 0.1});
  tr.update({0.2, 0.3});
  tr.update({0.4, 0.5});
  tr.update({0.6, 0.7});
  EXPECT_EQ(tr.du()[0], 0.0);
  EXPECT_EQ(tr.difficulty()[0], 0.0);
  EXPECT_EQ(tr.weights()[0], 0.1);
  EXPECT_EQ(tr.weights()[1], 0.1);
}

TEST(Difficulty, WeightFormula) {
  DifficultyTracker tr(2, {10, 0.5, 0.01});
  tr.update({0.5, 0.5});
  tr.update({0.4, 0.6});
  tr.update({0.6, 0.3});
  // Latest lambda (0.6, 0.3): base_k = 2 (1 - lambda_k) / 1.1.
  for (std::size_t k = 0; k < 2; ++k) {
    const double latest = k == 0 ? 0.6 : 0.3;
    const double base = 2 * (1 - latest) / 1.1;
    const double expect = std::max(base * std::pow(tr.difficulty()[k], 0.5), 0.01);
    EXPECT_NEAR(tr.weights()[k], expect, 1e-14);
  }
  DifficultyOptions constant{10, 0.5, 0.01};
  constant.weighting = LambdaWeighting::Constant;
  DifficultyTracker tc(2, constant);
  tc.update({0.5, 0.5});
  tc.update({0.4, 0.6});
  tc.update({0.6, 0.3});
  EXPECT_NEAR(tc.weights()[1], std::max(std::pow(tc.difficulty()[1], 0.5), 0.01), 1e-14);
}

TEST(Difficulty, SerializeRoundTrip) {
  DifficultyTracker tr(3);
  tr.update({0.1, 0.2, 0.3});
  tr.update({0.15, 0.1, 0.35});
  auto back = DifficultyTracker::deserialize(tr.serialize(), tr.options());
  EXPECT_EQ(back.history(), tr.history());
  EXPECT_EQ(back.weights(), tr.weights());
  EXPECT_THROW(DifficultyTracker::deserialize("garbage", tr.options()), std::exception);
}

TEST(Difficulty, PerClassDicePooledOverBatch) {
  auto y = one_hot_encode(torch::tensor({0, 1, 1, 0}, torch::kInt64).view({2, 1, 1, 2}), 2, torch::kFloat64);
  auto d = per_class_dice(y, y);
  EXPECT_NEAR(d[0], 1.0, 1e-12);
  EXPECT_NEAR(d[1], 1.0, 1e-12);
  auto half = torch::full_like(y, 0.5);
  auto h = per_class_dice(half, y);
  EXPECT_NEAR(h[0], (2 * 1.0 + 1e-5) / (2 + 2 + 1e-5), 1e-12);
}

TEST(Difficulty, LossDiffUsesWeights) {
  Rng rng(6);
  auto p = oracle::random_probs(rng, {2, 3, 2, 2, 2});
  auto y = one_hot_encode(oracle::random_labels(rng, {2, 2, 2, 2}, 3), 3, torch::kFloat64);
  auto per = dice_ce_per_class(p, y);
  auto w = torch::tensor({1.0, 0.0, 2.0}, torch::kFloat64);
  EXPECT_NEAR(v(loss_diff(p, y, w)), v((per * w).mean()), 1e-14);
  EXPECT_NEAR(v(loss_diff(p, y, torch::zeros({3}))), 0.0, 1e-15);
}
