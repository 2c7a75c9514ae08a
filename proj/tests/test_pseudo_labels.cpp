#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "semiseg/error.hpp"
#include "semiseg/pseudo_labels.hpp"

using namespace semiseg;

namespace {

TeacherPrediction teacher(torch::Tensor p, TeacherSource s = TeacherSource::ReparamSmooth) {
  return {std::move(p), s};
}

// (1, K, 1, 1, N) from per-voxel vectors.
torch::Tensor voxels(const std::vector<std::vector<double>>& cols) {
  const auto K = static_cast<std::int64_t>(cols.front().size());
  const auto N = static_cast<std::int64_t>(cols.size());
  auto t = torch::empty({1, K, 1, 1, N}, torch::kFloat64);
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t k = 0; k < K; ++k) t[0][k][0][0][n] = cols[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
  return t;
}

}  // namespace

TEST(PseudoLabels, EntropyInBits) {
  auto p = voxels({{1, 0, 0}, {0.5, 0.5, 0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}});
  auto h = entropy_map(p);
  EXPECT_NEAR(h[0][0][0][0].item<double>(), 0.0, 1e-15);
  EXPECT_NEAR(h[0][0][0][1].item<double>(), 1.0, 1e-12);
  EXPECT_NEAR(h[0][0][0][2].item<double>(), std::log2(3.0), 1e-12);
}

TEST(PseudoLabels, EnsembleHandCases) {
  // Certain teacher against a one-bit teacher: weights 1 and 1/2.
  auto e = ensemble_predictions(teacher(voxels({{1, 0}})), teacher(voxels({{0.5, 0.5}})));
  EXPECT_NEAR(e.probs[0][0][0][0][0].item<double>(), 5.0 / 6.0, 1e-12);
  EXPECT_NEAR(e.probs[0][1][0][0][0].item<double>(), 1.0 / 6.0, 1e-12);
  EXPECT_EQ(e.hard[0][0][0][0].item<std::int64_t>(), 0);
  // Identical teachers pass through.
  auto q = voxels({{0.2, 0.3, 0.5}});
  auto same = ensemble_predictions(teacher(q), teacher(q));
  EXPECT_TRUE(torch::allclose(same.probs, q, 0, 1e-15));
  // Natural-base variant: weights 1 and e^-1.
  auto en = ensemble_predictions(teacher(voxels({{1, 0}})), teacher(voxels({{0.5, 0.5}})), EntropyWeightBase::E);
  const double w = std::exp(-1.0);
  EXPECT_NEAR(en.probs[0][0][0][0][0].item<double>(), (1 + 0.5 * w) / (1 + w), 1e-12);
}

TEST(PseudoLabels, EnsembleMatchesOracleAndInvariants) {
  Rng rng(11);
  const std::int64_t K = 4, N = 1000;
  auto q1 = oracle::random_probs(rng, {1, K, 1, 1, N});
  auto q2 = oracle::random_probs(rng, {1, K, 1, 1, N});
  auto e = ensemble_predictions(teacher(q1), teacher(q2, TeacherSource::MeanTeacher));
  auto a1 = oracle::Array::of(q1), a2 = oracle::Array::of(q2), ap = oracle::Array::of(e.probs);
  for (std::int64_t n = 0; n < N; ++n) {
    std::vector<double> v1, v2;
    for (std::int64_t k = 0; k < K; ++k) {
      v1.push_back(a1.at(0, k, n));
      v2.push_back(a2.at(0, k, n));
    }
    auto ref = oracle::ensemble(v1, v2);
    const double h1 = oracle::entropy_bits(v1), h2 = oracle::entropy_bits(v2);
    double s = 0;
    for (std::int64_t k = 0; k < K; ++k) {
      const double p = ap.at(0, k, n);
      const auto kk = static_cast<std::size_t>(k);
      ASSERT_NEAR(p, ref[kk], 1e-12);
      ASSERT_GE(p, std::min(v1[kk], v2[kk]) - 1e-12);
      ASSERT_LE(p, std::max(v1[kk], v2[kk]) + 1e-12);
      // Lower entropy pulls harder.
      if (h1 < h2) {
        ASSERT_LE(std::abs(p - v1[kk]), std::abs(p - v2[kk]) + 1e-12);
      }
      if (h2 < h1) {
        ASSERT_LE(std::abs(p - v2[kk]), std::abs(p - v1[kk]) + 1e-12);
      }
      s += p;
    }
    ASSERT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(PseudoLabels, EnsembleShapeMismatch) {
  EXPECT_THROW(ensemble_predictions(teacher(voxels({{1, 0}})), teacher(voxels({{1, 0, 0}}))),
               ValidationError);
}

TEST(PseudoLabels, HardenBreaksTiesLow) {
  auto h = harden(voxels({{0.5, 0.5}, {0.2, 0.8}, {0.4, 0.3}}));
  EXPECT_EQ(h[0][0][0][0].item<std::int64_t>(), 0);
  EXPECT_EQ(h[0][0][0][1].item<std::int64_t>(), 1);
  EXPECT_EQ(h[0][0][0][2].item<std::int64_t>(), 0);
}

TEST(PseudoLabels, GumbelSoftmaxDefinition) {
  Rng rng(2);
  auto s = rng.normal_tensor({2, 3, 2, 2, 2}, torch::kFloat64);
  auto g = rng.gumbel_tensor({2, 3, 2, 2, 2}, torch::kFloat64);
  auto out = gumbel_softmax(s, g, 0.5);
  EXPECT_TRUE(torch::allclose(out, torch::softmax((s + g) / 0.5, 1), 0, 1e-14));
  EXPECT_THROW(gumbel_softmax(s, g, 0.0), ValidationError);
  // Low temperature approaches a one-hot of the perturbed argmax.
  auto cold = gumbel_softmax(s, g, 1e-3);
  EXPECT_TRUE(cold.argmax(1).equal((s + g).argmax(1)));
  EXPECT_GT(std::get<0>(cold.max(1)).min().item<double>(), 0.99);
}

TEST(PseudoLabels, GumbelArgmaxFollowsSoftmax) {
  // argmax(s + g) is a draw from softmax(s).
  Rng rng(5);
  const std::int64_t N = 40000;
  auto s = torch::tensor({0.0, 1.0, -1.0}, torch::kFloat64).view({1, 3, 1, 1, 1}).expand({1, 3, 1, 1, N});
  auto g = rng.gumbel_tensor({1, 3, 1, 1, N}, torch::kFloat64);
  auto draws = (s + g).argmax(1).flatten();
  auto target = torch::softmax(torch::tensor({0.0, 1.0, -1.0}, torch::kFloat64), 0);
  for (int k = 0; k < 3; ++k) {
    const double frac = draws.eq(k).sum().item<double>() / N;
    EXPECT_NEAR(frac, target[k].item<double>(), 0.01);
  }
}

TEST(PseudoLabels, BlurPreservesConstantsAndMass) {
  auto c = torch::full({1, 2, 5, 5, 5}, 0.25, torch::kFloat64);
  EXPECT_TRUE(torch::allclose(gaussian_blur3d(c, 1.0, 3), c, 0, 1e-14));
  Rng rng(3);
  auto p = oracle::random_probs(rng, {1, 3, 6, 6, 6});
  auto b = gaussian_blur3d(p, 1.0, 3);
  // Linear and channelwise, so per-voxel sums stay at one.
  EXPECT_TRUE(torch::allclose(b.sum(1), torch::ones({1, 6, 6, 6}, torch::kFloat64), 0, 1e-12));
  EXPECT_TRUE(gaussian_blur3d(p, 0.0, 3).equal(p));
  EXPECT_THROW(gaussian_blur3d(p, 1.0, 4), ValidationError);
}

TEST(PseudoLabels, BlurKernelByHand) {
  // A single spike spreads as the outer product of the 1D kernel.
  auto x = torch::zeros({1, 1, 5, 5, 5}, torch::kFloat64);
  x[0][0][2][2][2] = 1.0;
  auto y = gaussian_blur3d(x, 1.0, 3);
  const double e = std::exp(-0.5);
  const double w0 = 1.0 / (1 + 2 * e), w1 = e / (1 + 2 * e);
  EXPECT_NEAR(y[0][0][2][2][2].item<double>(), w0 * w0 * w0, 1e-14);
  EXPECT_NEAR(y[0][0][1][2][2].item<double>(), w1 * w0 * w0, 1e-14);
  EXPECT_NEAR(y[0][0][1][3][1].item<double>(), w1 * w1 * w1, 1e-14);
  EXPECT_NEAR(y[0][0][0][2][2].item<double>(), 0.0, 1e-14);
}

TEST(PseudoLabels, ReparamSmoothWithoutBlur) {
  Rng rng(4);
  auto pxi = oracle::random_probs(rng, {1, 3, 4, 4, 4});
  auto psi = rng.normal_tensor({1, 3, 4, 4, 4}, torch::kFloat64);
  auto g = rng.gumbel_tensor({1, 3, 4, 4, 4}, torch::kFloat64);
  ReparamSmoothOptions opt;
  opt.blur_sigma = 0.0;
  auto t1 = reparameterize_smooth(pxi, psi, g, opt);
  auto expect = 0.5 * (torch::softmax(pxi + g, 1) + torch::softmax(psi, 1));
  EXPECT_TRUE(torch::allclose(t1.probs, expect, 0, 1e-14));
  EXPECT_EQ(t1.source, TeacherSource::ReparamSmooth);
  opt.gumbel_on_psi = true;
  auto alt = reparameterize_smooth(pxi, psi, g, opt);
  EXPECT_TRUE(torch::allclose(alt.probs, 0.5 * (torch::softmax(pxi, 1) + torch::softmax(psi + g, 1)), 0, 1e-14));
}

TEST(PseudoLabels, ReparamSmoothIsNormalised) {
  Rng rng(6);
  auto pxi = oracle::random_probs(rng, {2, 3, 6, 6, 6});
  auto psi = rng.normal_tensor({2, 3, 6, 6, 6}, torch::kFloat64);
  auto t1 = reparameterize_smooth(pxi, psi, ReparamSmoothOptions{}, rng);
  EXPECT_TRUE(torch::allclose(t1.probs.sum(1), torch::ones({2, 6, 6, 6}, torch::kFloat64), 0, 1e-12));
  EXPECT_GE(t1.probs.min().item<double>(), 0.0);
  EXPECT_THROW(reparameterize_smooth(pxi, psi.narrow(1, 0, 2), ReparamSmoothOptions{}, rng), ValidationError);
  auto nan = psi.clone();
  nan[0][0][0][0][0] = std::nan("");
  EXPECT_THROW(reparameterize_smooth(pxi, nan, ReparamSmoothOptions{}, rng), ValidationError);
}
