#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "semiseg/error.hpp"
#include "semiseg/label_propagation.hpp"

using namespace semiseg;

namespace {

CorrelationFeatures random_features(Rng& rng, std::int64_t B, std::int64_t D, std::int64_t P) {
  return {rng.normal_tensor({B, D, P}, torch::kFloat64), rng.normal_tensor({B, D, P}, torch::kFloat64)};
}

}  // namespace

TEST(Correlation, MatchesOracleAndIsRowStochastic) {
  Rng rng(1);
  auto f = random_features(rng, 2, 5, 7);
  auto c = correlation_map(f).matrix;
  ASSERT_EQ(c.sizes(), (std::vector<std::int64_t>{2, 7, 7}));
  EXPECT_TRUE(torch::allclose(c.sum(-1), torch::ones({2, 7}, torch::kFloat64), 0, 1e-12));
  for (std::int64_t b = 0; b < 2; ++b) {
    auto ref = oracle::correlation(f.e1[b], f.e2[b]);
    for (std::int64_t i = 0; i < 7; ++i)
      for (std::int64_t j = 0; j < 7; ++j)
        EXPECT_NEAR(c[b][i][j].item<double>(), ref[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], 1e-12);
  }
}

TEST(Correlation, OutsideScalingDividesRows) {
  Rng rng(2);
  auto f = random_features(rng, 1, 4, 6);
  auto inside = correlation_map(f, CorrelationScaling::InsideSoftmax).matrix;
  auto outside = correlation_map(f, CorrelationScaling::OutsideSoftmax).matrix;
  EXPECT_TRUE(torch::allclose(outside.sum(-1), torch::full({1, 6}, 0.5, torch::kFloat64), 0, 1e-12));
  auto logits = torch::bmm(f.e1.transpose(1, 2), f.e2);
  EXPECT_TRUE(torch::allclose(outside, torch::softmax(logits, -1) / 2.0, 0, 1e-14));
  EXPECT_FALSE(torch::allclose(inside * 0.5, outside));
}

TEST(Correlation, IdentityAndUniformMaps) {
  Rng rng(3);
  auto pred = rng.normal_tensor({2, 3, 5}, torch::kFloat64);
  CorrelationMap eye{torch::eye(5, torch::kFloat64).expand({2, 5, 5})};
  EXPECT_TRUE(propagate(pred, eye).equal(pred));
  CorrelationMap uniform{torch::full({2, 5, 5}, 0.2, torch::kFloat64)};
  auto out = propagate(pred, uniform);
  EXPECT_TRUE(torch::allclose(out, pred.mean(2, true).expand_as(pred), 0, 1e-14));
  // Zero features give the uniform map.
  CorrelationFeatures zero{torch::zeros({1, 3, 4}, torch::kFloat64), torch::zeros({1, 3, 4}, torch::kFloat64)};
  EXPECT_TRUE(torch::allclose(correlation_map(zero).matrix, torch::full({1, 4, 4}, 0.25, torch::kFloat64)));
}

TEST(Correlation, PropagateOrientationAndLinearity) {
  Rng rng(4);
  auto c = correlation_map(random_features(rng, 1, 3, 4));
  auto a = rng.normal_tensor({1, 2, 4}, torch::kFloat64);
  auto b = rng.normal_tensor({1, 2, 4}, torch::kFloat64);
  auto out = propagate(a, c);
  for (std::int64_t k = 0; k < 2; ++k)
    for (std::int64_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::int64_t j = 0; j < 4; ++j) s += c.matrix[0][i][j].item<double>() * a[0][k][j].item<double>();
      EXPECT_NEAR(out[0][k][i].item<double>(), s, 1e-14);
    }
  auto lin = propagate(2.5 * a - 0.5 * b, c);
  EXPECT_TRUE(torch::allclose(lin, 2.5 * propagate(a, c) - 0.5 * propagate(b, c), 0, 1e-12));
  EXPECT_THROW(propagate(rng.normal_tensor({1, 2, 5}, torch::kFloat64), c), ValidationError);
}

TEST(Correlation, PoolingScoresAndLabels) {
  auto s = torch::arange(64, torch::kFloat64).view({1, 1, 4, 4, 4});
  auto pooled = pool_scores(s, {2, 2, 2});
  ASSERT_EQ(pooled.sizes(), (std::vector<std::int64_t>{1, 1, 8}));
  // First cell averages indices {0,1,4,5,16,17,20,21}.
  EXPECT_DOUBLE_EQ(pooled[0][0][0].item<double>(), (0 + 1 + 4 + 5 + 16 + 17 + 20 + 21) / 8.0);

  auto labels = torch::zeros({1, 4, 4, 4}, torch::kInt64);
  labels.index_put_({0, torch::indexing::Slice(0, 2), torch::indexing::Slice(0, 2), torch::indexing::Slice(0, 1)}, 2);
  labels.index_put_({0, torch::indexing::Slice(2, 4), torch::indexing::Slice(), torch::indexing::Slice()}, 1);
  auto pl = pool_labels(labels, 3, {2, 2, 2});
  // Cell 0 is a 4/4 tie between classes 0 and 2 -> 0.
  EXPECT_EQ(pl[0][0].item<std::int64_t>(), 0);
  EXPECT_EQ(pl[0][4].item<std::int64_t>(), 1);
  EXPECT_EQ(pl[0][7].item<std::int64_t>(), 1);
}

TEST(Correlation, LossMatchesOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto K = rng.uniform_int(2, 4), P = rng.uniform_int(2, 16), B = rng.uniform_int(1, 3);
    auto z = rng.normal_tensor({B, K, P}, torch::kFloat64);
    auto t = oracle::random_labels(rng, {B, P}, K);
    EXPECT_LT(oracle::rel_err(loss_corr_u(z, t).item<double>(), oracle::loss_corr_u(z, t)), 1e-10);
    auto z2 = rng.normal_tensor({B, K, P}, torch::kFloat64);
    auto t2 = oracle::random_labels(rng, {B, P}, K);
    EXPECT_NEAR(loss_corr(z, t, z2, t2).item<double>(), oracle::loss_corr_u(z, t) + oracle::loss_corr_u(z2, t2), 1e-10);
  }
  EXPECT_THROW(loss_corr_u(torch::zeros({1, 2, 4}), torch::zeros({1, 3}, torch::kInt64)), ValidationError);
}

TEST(Correlation, HeadFeaturesFromNetwork) {
  auto cfg = fixtures::tiny_net(2);
  torch::manual_seed(0);
  ModelBundle b(cfg);
  b->to(torch::kFloat64);
  auto x = torch::rand({2, 1, 4, 4, 4}, torch::kFloat64);
  auto f = correlation_features(*b, x);
  auto map = correlation_map(f);
  EXPECT_TRUE(torch::allclose(map.matrix.sum(-1), torch::ones({2, f.e1.size(2)}, torch::kFloat64), 0, 1e-12));
}
