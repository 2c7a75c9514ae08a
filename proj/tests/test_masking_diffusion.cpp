#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "semiseg/diffusion.hpp"
#include "semiseg/error.hpp"
#include "semiseg/masking.hpp"

using namespace semiseg;

// -- CutMix -------------------------------------------------------------------------

TEST(CutMix, BoxFractionWithinRangeAndInsideVolume) {
  Rng rng(1);
  const Shape3 shape{16, 12, 8};
  for (int i = 0; i < 200; ++i) {
    auto m = make_cutmix_mask(shape, {0.2, 0.5}, rng);
    const double frac = m.mask.sum().item<double>() / static_cast<double>(shape.voxels());
    EXPECT_GE(frac, 0.2);
    EXPECT_LE(frac, 0.5);
    EXPECT_DOUBLE_EQ(frac, static_cast<double>(m.region.volume()) / shape.voxels());
    const auto dims = shape.dims();
    for (int a = 0; a < 3; ++a) {
      EXPECT_GE(m.region.origin[a], 0);
      EXPECT_LE(m.region.origin[a] + m.region.extent[a], dims[a]);
    }
    // Mask is exactly the box.
    auto box = torch::zeros({shape.l, shape.w, shape.h});
    using torch::indexing::Slice;
    box.index_put_({Slice(m.region.origin[0], m.region.origin[0] + m.region.extent[0]),
                    Slice(m.region.origin[1], m.region.origin[1] + m.region.extent[1]),
                    Slice(m.region.origin[2], m.region.origin[2] + m.region.extent[2])},
                   1.0);
    ASSERT_TRUE(m.mask.equal(box));
  }
}

TEST(CutMix, RejectsTinyVolumesAndBadRanges) {
  Rng rng(1);
  EXPECT_THROW(make_cutmix_mask({3, 8, 8}, {0.2, 0.5}, rng), ValidationError);
  EXPECT_THROW(make_cutmix_mask({8, 8, 8}, {0.6, 0.5}, rng), ValidationError);
}

TEST(CutMix, MixesImagesAndLabels) {
  Rng rng(2);
  auto xi = torch::rand({1, 1, 8, 8, 8});
  auto xj = torch::rand({1, 1, 8, 8, 8});
  auto yi = torch::zeros({1, 8, 8, 8}, torch::kInt64);
  auto yj = torch::ones({1, 8, 8, 8}, torch::kInt64);
  auto m = make_cutmix_mask({8, 8, 8}, {0.2, 0.5}, rng);
  auto [x, y] = apply_cutmix(xi, xj, yi, yj, m.mask);
  EXPECT_TRUE(torch::allclose(x, (1 - m.mask) * xi + m.mask * xj));
  EXPECT_TRUE(y.equal(m.mask.to(torch::kInt64).unsqueeze(0)));
  // Soft targets mix arithmetically.
  auto pi = torch::rand({1, 2, 8, 8, 8});
  auto pj = torch::rand({1, 2, 8, 8, 8});
  auto [x2, p] = apply_cutmix(xi, xj, pi, pj, m.mask);
  EXPECT_TRUE(torch::allclose(p, (1 - m.mask) * pi + m.mask * pj));
  EXPECT_THROW(apply_cutmix(xi, xj, yi, yj, torch::ones({4, 8, 8})), ValidationError);
}

// -- Patch masks ---------------------------------------------------------------------

TEST(PatchMask, BlockConstantAndBinary) {
  Rng rng(3);
  for (std::int64_t patch : {1, 2, 4}) {
    auto pm = make_patch_mask({8, 8, 8}, 0.5, patch, rng);
    EXPECT_TRUE((pm.mask.eq(0) | pm.mask.eq(1)).all().item<bool>());
    auto blocks = pm.mask.view({8 / patch, patch, 8 / patch, patch, 8 / patch, patch});
    auto first = blocks.index({torch::indexing::Slice(), 0, torch::indexing::Slice(), 0,
                               torch::indexing::Slice(), 0});
    EXPECT_TRUE(blocks.eq(first.view({8 / patch, 1, 8 / patch, 1, 8 / patch, 1})).all().item<bool>());
  }
}

TEST(PatchMask, KeptFractionTracksRatio) {
  Rng rng(4);
  for (double r : {0.0, 0.3, 0.9}) {
    double kept = 0;
    for (int i = 0; i < 50; ++i) kept += make_patch_mask({16, 16, 16}, r, 2, rng).mask.mean().item<double>();
    EXPECT_NEAR(kept / 50, 1 - r, 0.02);
  }
  EXPECT_DOUBLE_EQ(make_patch_mask({8, 8, 8}, 1.0, 2, rng).mask.sum().item<double>(), 0.0);
}

TEST(PatchMask, RejectsIndivisibleShape) {
  Rng rng(5);
  EXPECT_THROW(make_patch_mask({8, 8, 6}, 0.5, 4, rng), ValidationError);
  EXPECT_THROW(make_patch_mask({8, 8, 8}, 0.5, 0, rng), ValidationError);
}

TEST(PatchMask, ApplyBroadcastsAndDefaultsScale) {
  Rng rng(6);
  auto pm = make_patch_mask({4, 4, 4}, 0.5, 2, rng);
  auto x = torch::rand({2, 1, 4, 4, 4});
  EXPECT_TRUE(apply_patch_mask(x, pm.mask).equal(x * pm.mask));
  EXPECT_THROW(apply_patch_mask(x, torch::ones({4, 4, 2})), ValidationError);
  EXPECT_EQ(default_patch_size({32, 32, 32}), 2);
  EXPECT_EQ(default_patch_size({64, 48, 96}), 3);
  EXPECT_EQ(default_patch_size({8, 8, 8}), 1);
}

// -- Diffusion -----------------------------------------------------------------------

TEST(Diffusion, LinearScheduleIsDecreasingFromOne) {
  auto s = DiffusionSchedule::linear(1000, 1e-4, 0.02, 10);
  ASSERT_EQ(s.alpha_bar.size(), 1000u);
  EXPECT_EQ(s.alpha_bar[0], 1.0);
  EXPECT_NEAR(s.alpha_bar[1], 1 - 1e-4, 1e-15);
  for (std::size_t t = 1; t < s.alpha_bar.size(); ++t) EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
  // Product of (1 - beta_t) by hand.
  double prod = 1.0;
  for (int t = 1; t < 1000; ++t) prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 998.0);
  EXPECT_NEAR(s.alpha_bar.back(), prod, 1e-15);
  EXPECT_LT(s.alpha_bar.back(), 1e-3);
}

TEST(Diffusion, DdimTimestepsDescendFromLast) {
  auto s = DiffusionSchedule::linear(1000, 1e-4, 0.02, 10);
  auto ts = s.ddim_timesteps();
  ASSERT_EQ(ts.size(), 10u);
  EXPECT_EQ(ts.front(), 999);
  EXPECT_EQ(ts.back(), 99);
  for (std::size_t i = 1; i < ts.size(); ++i) EXPECT_EQ(ts[i - 1] - ts[i], 100);
}

TEST(Diffusion, InvalidSchedulesRejected) {
  EXPECT_THROW(DiffusionSchedule::linear(1), ConfigError);
  EXPECT_THROW(DiffusionSchedule::linear(10, 1e-4, 0.02, 11), ConfigError);
  EXPECT_THROW(DiffusionSchedule::from_alpha_bar({1.0, 0.5, 0.7}, 1).validate(), ConfigError);
  EXPECT_THROW(DiffusionSchedule::from_alpha_bar({0.9, 0.5}, 1).validate(), ConfigError);
}

TEST(Diffusion, ForwardMatchesClosedForm) {
  auto s = DiffusionSchedule::linear(100, 1e-4, 0.02, 5);
  Rng rng(7);
  auto y0 = one_hot_encode(torch::randint(0, 3, {2, 4, 4, 4}, torch::kInt64), 3, torch::kFloat64);
  auto eps = rng.normal_tensor({2, 3, 4, 4, 4}, torch::kFloat64);
  auto t = torch::tensor({10, 90}, torch::kInt64);
  auto yt = diffusion_forward(y0, t, eps, s);
  for (int b = 0; b < 2; ++b) {
    const double a = s.alpha_bar[b == 0 ? 10 : 90];
    auto expect = std::sqrt(a) * y0[b] + std::sqrt(1 - a) * eps[b];
    EXPECT_TRUE(torch::allclose(yt[b], expect, 0, 1e-12));
    EXPECT_TRUE(torch::allclose(diffusion_forward(y0[b], b == 0 ? 10 : 90, eps[b], s), expect, 0, 1e-12));
  }
  EXPECT_TRUE(diffusion_forward(y0, torch::zeros({2}, torch::kInt64), eps, s).equal(y0));
  EXPECT_THROW(diffusion_forward(y0, torch::tensor({0, 100}, torch::kInt64), eps, s), ValidationError);
  EXPECT_THROW(diffusion_forward(y0, 0, eps.narrow(0, 0, 1), s), ValidationError);
}

TEST(Diffusion, DdimOutputsDistributionsDeterministically) {
  auto net = fixtures::tiny_net(3);
  torch::manual_seed(0);
  ModelBundle bundle(net);
  bundle->to(torch::kFloat64);
  auto s = DiffusionSchedule::linear(50, 1e-4, 0.02, 3);
  Rng rng(8);
  auto x = rng.uniform_tensor({2, 1, 4, 4, 4}, torch::kFloat64);
  auto noise = rng.normal_tensor({2, 3, 4, 4, 4}, torch::kFloat64);
  auto p1 = ddim_pseudo_predict(x, *bundle, s, noise);
  auto p2 = ddim_pseudo_predict(x, *bundle, s, noise);
  EXPECT_TRUE(p1.equal(p2));
  EXPECT_EQ(p1.sizes(), noise.sizes());
  EXPECT_TRUE(torch::allclose(p1.sum(1), torch::ones({2, 4, 4, 4}, torch::kFloat64)));
  EXPECT_FALSE(p1.requires_grad());
  EXPECT_THROW(ddim_pseudo_predict(x, *bundle, s, noise.narrow(1, 0, 2)), ValidationError);
}

TEST(Diffusion, SingleStepDdimIsOneDecoderPass) {
  auto net = fixtures::tiny_net(2);
  torch::manual_seed(1);
  ModelBundle bundle(net);
  bundle->to(torch::kFloat64);
  auto s = DiffusionSchedule::linear(20, 1e-4, 0.02, 1);
  Rng rng(9);
  auto x = rng.uniform_tensor({1, 1, 4, 4, 4}, torch::kFloat64);
  auto noise = rng.normal_tensor({1, 2, 4, 4, 4}, torch::kFloat64);
  auto p = ddim_pseudo_predict(x, *bundle, s, noise);
  torch::NoGradGuard ng;
  auto direct = torch::softmax(
      forward_labeled_diffusion(*bundle, x, noise, torch::full({1}, 19, torch::kInt64)), 1);
  EXPECT_TRUE(torch::allclose(p, direct, 0, 1e-12));
}
