#pragma once

#include <array>
#include <cstdint>
#include <utility>

#include <torch/torch.h>

#include "semiseg/rng.hpp"
#include "semiseg/volume.hpp"

namespace semiseg {

/// Axis-aligned box [origin, origin + extent) in voxel coordinates.
struct Box3 {
  std::array<std::int64_t, 3> origin{};
  std::array<std::int64_t, 3> extent{};

  std::int64_t volume() const { return extent[0] * extent[1] * extent[2]; }
};

/// Binary box mask for cross-set CutMix; `mask` is float32 (L, W, H) in {0, 1}.
struct CutMixMask {
  torch::Tensor mask;
  Box3 region;
};

struct FractionRange {
  double lo = 0.2;
  double hi = 0.5;
};

/// Random box whose volume fraction lies in `range`, placed uniformly.
///
/// A target fraction is drawn uniformly from the range; among all box extents
/// with a feasible volume, one whose volume is closest to the target is chosen
/// uniformly at random. Throws ValidationError when no box extent fits.
CutMixMask make_cutmix_mask(const Shape3& shape, FractionRange range, Rng& rng);

/// x_mix = (1 - M) * x_i + M * x_j over the trailing three dims.
///
/// Floating targets mix arithmetically; integer targets (hard labels) take
/// y_j inside the box and y_i elsewhere.
std::pair<torch::Tensor, torch::Tensor> apply_cutmix(const torch::Tensor& x_i,
                                                     const torch::Tensor& x_j,
                                                     const torch::Tensor& y_i,
                                                     const torch::Tensor& y_j,
                                                     const torch::Tensor& mask);

/// Block-constant patch mask; one U(0,1) draw per patch, kept iff v > ratio.
struct PatchMask {
  torch::Tensor mask;  // float32 (L, W, H) in {0, 1}
  double ratio = 0.5;
  std::int64_t patch = 1;
};

/// Draws patches in row-major patch order. Throws ValidationError unless
/// every dim is divisible by `patch`.
PatchMask make_patch_mask(const Shape3& shape, double ratio, std::int64_t patch, Rng& rng);

/// mask * x, broadcasting the (L, W, H) mask over leading dims.
torch::Tensor apply_patch_mask(const torch::Tensor& x, const torch::Tensor& mask);

/// Patch edge for a shape: 1/16 of the smallest extent, at least 1.
std::int64_t default_patch_size(const Shape3& shape);

}  // namespace semiseg
