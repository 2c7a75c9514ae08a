#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "semiseg/evaluation.hpp"
#include "semiseg/metrics.hpp"

using namespace semiseg;
using torch::indexing::Slice;

namespace {

torch::Tensor cube(std::int64_t edge, std::array<std::int64_t, 3> origin, std::int64_t size,
                   std::int64_t label = 1) {
  auto g = torch::zeros({edge, edge, edge}, torch::kInt64);
  g.index_put_({Slice(origin[0], origin[0] + size), Slice(origin[1], origin[1] + size),
                Slice(origin[2], origin[2] + size)},
               label);
  return g;
}

}  // namespace

TEST(Metrics, OverlappingCubes) {
  auto a = cube(10, {1, 1, 1}, 4);
  auto b = cube(10, {3, 1, 1}, 4);
  auto o = dice_jaccard(a, b, 2);
  EXPECT_DOUBLE_EQ(o[1].dice, 0.5);
  EXPECT_NEAR(o[1].jaccard, 1.0 / 3.0, 1e-15);
}

TEST(Metrics, DiceJaccardIdentityOnRandomGrids) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    auto p = oracle::random_labels(rng, {6, 5, 4}, 3);
    auto g = oracle::random_labels(rng, {6, 5, 4}, 3);
    for (const auto& o : dice_jaccard(p, g, 3)) EXPECT_NEAR(o.dice, 2 * o.jaccard / (1 + o.jaccard), 1e-12);
  }
}

TEST(Metrics, EmptyClassConventions) {
  auto z = torch::zeros({4, 4, 4}, torch::kInt64);
  auto o = dice_jaccard(z, z, 3);
  EXPECT_EQ(o[1].dice, 1.0);
  EXPECT_EQ(o[2].jaccard, 1.0);
  auto one = cube(4, {0, 0, 0}, 2);
  EXPECT_EQ(dice_jaccard(one, z, 2)[1].dice, 0.0);
  EXPECT_FALSE(surface_distances(z.eq(1), one.eq(1)).defined());
}

TEST(Metrics, BoundaryOfCube) {
  auto b = boundary_voxels(cube(6, {1, 1, 1}, 4).eq(1));
  EXPECT_EQ(b.size(), 64u - 8u);
  // Voxels on the grid edge are boundary too.
  EXPECT_EQ(boundary_voxels(torch::ones({3, 3, 3}, torch::kBool)).size(), 26u);
  auto ref = oracle::boundary(cube(6, {1, 1, 1}, 4).eq(1));
  EXPECT_EQ(b.size(), ref.size());
}

TEST(Metrics, PercentileInterpolates) {
  EXPECT_DOUBLE_EQ(percentile({1, 2, 3, 4}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 100), 4);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0), 1);
  EXPECT_NEAR(percentile({0, 10}, 95), 9.5, 1e-12);
}

TEST(Metrics, ShiftedCubesMatchBruteForce) {
  for (std::int64_t shift = 0; shift <= 3; ++shift) {
    auto a = cube(12, {2, 2, 2}, 5).eq(1);
    auto b = cube(12, {2 + shift, 2, 3}, 5).eq(1);
    auto s = surface_distances(a, b);
    auto ref = oracle::surface(a, b);
    EXPECT_NEAR(s.hd95, ref.hd95, 1e-9);
    EXPECT_NEAR(s.asd, ref.asd, 1e-9);
    EXPECT_NEAR(s.hd100, ref.hd100, 1e-9);
  }
  auto a = cube(12, {2, 2, 2}, 5).eq(1);
  auto same = surface_distances(a, a);
  EXPECT_EQ(same.hd95, 0.0);
  EXPECT_EQ(same.asd, 0.0);
}

TEST(Metrics, RandomShapesMatchBruteForce) {
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    auto a = rng.uniform_tensor({7, 6, 5}, torch::kFloat64) > 0.6;
    auto b = rng.uniform_tensor({7, 6, 5}, torch::kFloat64) > 0.5;
    auto s = surface_distances(a, b);
    auto ref = oracle::surface(a, b);
    EXPECT_NEAR(s.hd95, ref.hd95, 1e-9);
    EXPECT_NEAR(s.asd, ref.asd, 1e-9);
  }
}

TEST(Metrics, ScoreSampleSkipsBackground) {
  auto gt = cube(8, {1, 1, 1}, 3, 1) + cube(8, {5, 5, 5}, 2, 2);
  auto m = score_sample(gt, gt, 3);
  ASSERT_EQ(m.dice.size(), 2u);
  EXPECT_EQ(m.mean_dice, 1.0);
  EXPECT_EQ(m.mean_hd95, 0.0);
  auto pred = cube(8, {1, 1, 1}, 3, 1);
  auto miss = score_sample(pred, gt, 3);
  EXPECT_EQ(miss.dice[1], 0.0);
  EXPECT_EQ(miss.undefined_classes, (std::vector<std::int64_t>{2}));
  EXPECT_EQ(miss.mean_hd95, 0.0);  // class 2 skipped
  EXPECT_DOUBLE_EQ(miss.mean_dice, 0.5);
}

TEST(Evaluation, AggregateAcrossRepeats) {
  std::vector<MetricRow> rows;
  for (std::int64_t r = 0; r < 2; ++r) {
    for (int s = 0; s < 2; ++s) {
      MetricRow row;
      row.repeat = r;
      row.sample_id = "s" + std::to_string(s);
      row.metrics.dice = {0.5 + 0.2 * static_cast<double>(r) + 0.1 * s};
      row.metrics.jaccard = {0.3};
      row.metrics.hd95 = {s == 0 ? kUndefinedDistance : 2.0 + static_cast<double>(r)};
      row.metrics.asd = {1.0};
      row.metrics.mean_dice = row.metrics.dice[0];
      row.metrics.mean_jaccard = 0.3;
      row.metrics.mean_hd95 = row.metrics.hd95[0];
      row.metrics.mean_asd = 1.0;
      rows.push_back(row);
    }
  }
  auto s = aggregate(rows, 2);
  // Per-repeat means 0.55 and 0.75.
  EXPECT_NEAR(s.dice[0].mean, 0.65, 1e-12);
  EXPECT_NEAR(s.dice[0].std, std::sqrt(0.02), 1e-12);
  EXPECT_NEAR(s.hd95[0].mean, 2.5, 1e-12);
  EXPECT_NEAR(s.mean_dice.mean, 0.65, 1e-12);
}

TEST(Evaluation, SplitScoringAndCsvRoundTrip) {
  fixtures::TempDir dir("eval");
  auto m = fixtures::small_dataset(dir / "data", 2);
  auto cfg = fixtures::small_run_config(dir / "data", dir / "run");
  cfg.max_iterations = 1;
  auto res = run_training(cfg, m);
  auto report = evaluate_split(m, "test", {res.export_path, res.checkpoint});
  EXPECT_EQ(report.repeats, 2);
  EXPECT_EQ(report.rows.size(), 2 * m.split("test").labeled.size());
  for (const auto& r : report.rows) {
    EXPECT_EQ(r.domain_id, 2);
    EXPECT_GE(r.metrics.mean_dice, 0.0);
    EXPECT_LE(r.metrics.mean_dice, 1.0);
  }
  // Export and checkpoint deploy the same decoder.
  EXPECT_EQ(report.rows[0].metrics.dice, report.rows[report.rows.size() / 2].metrics.dice);
  write_metrics_csv(report, dir / "metrics.csv");
  write_summary_csv(report, dir / "summary.csv");
  auto back = read_metrics_csv(dir / "metrics.csv");
  ASSERT_EQ(back.rows.size(), report.rows.size());
  EXPECT_NEAR(back.summary.mean_dice.mean, report.summary.mean_dice.mean, 1e-12);
  EXPECT_NE(fixtures::read_file(dir / "summary.csv").find("metric,class,mean,std,repeats"), std::string::npos);
  EXPECT_THROW(evaluate_split(m, "test", {dir / "nope.pt"}), std::exception);
}

TEST(Evaluation, InferReturnsLabels) {
  auto cfg = fixtures::tiny_net(3);
  torch::manual_seed(0);
  InferenceModel m(cfg);
  auto labels = infer(*m, torch::rand({8, 8, 8}));
  EXPECT_EQ(labels.sizes(), (std::vector<std::int64_t>{8, 8, 8}));
  EXPECT_GE(labels.min().item<std::int64_t>(), 0);
  EXPECT_LT(labels.max().item<std::int64_t>(), 3);
}
