#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include <torch/torch.h>

namespace semiseg {

struct Overlap {
  double dice = 0.0;
  double jaccard = 0.0;
};

/// Per-class Dice and Jaccard of two integer label grids, classes 0..K-1.
/// A class absent from both grids scores 1; absent from exactly one scores 0.
std::vector<Overlap> dice_jaccard(const torch::Tensor& pred, const torch::Tensor& gt,
                                  std::int64_t num_classes);

using Voxel = std::array<std::int64_t, 3>;

/// Foreground voxels with at least one six-connected background neighbour.
/// Voxels outside the grid count as background.
std::vector<Voxel> boundary_voxels(const torch::Tensor& mask);

inline constexpr double kUndefinedDistance = std::numeric_limits<double>::quiet_NaN();

struct SurfaceDistance {
  double hd95 = kUndefinedDistance;
  double asd = kUndefinedDistance;
  double hd100 = kUndefinedDistance;
  bool defined() const { return hd95 == hd95; }
};

/// Distances (voxel units) between the boundaries of two boolean masks.
/// HD95 is the linearly interpolated 95th percentile of the pooled distances
/// in both directions; ASD is the mean of the two directed mean distances.
/// Undefined (NaN) when either mask is empty.
SurfaceDistance surface_distances(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask);

/// Linear-interpolation percentile of unsorted values, q in [0, 100].
double percentile(std::vector<double> values, double q);

/// All metrics of one predicted grid against its ground truth.
struct SampleMetrics {
  std::vector<double> dice, jaccard, hd95, asd;  // foreground classes 1..K-1
  double mean_dice = 0.0, mean_jaccard = 0.0, mean_hd95 = 0.0, mean_asd = 0.0;
  /// Foreground classes whose surface distance was undefined.
  std::vector<std::int64_t> undefined_classes;
};

SampleMetrics score_sample(const torch::Tensor& pred, const torch::Tensor& gt,
                           std::int64_t num_classes);

}  // namespace semiseg
