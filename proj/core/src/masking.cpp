#include "semiseg/masking.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "semiseg/error.hpp"

namespace semiseg {

CutMixMask make_cutmix_mask(const Shape3& shape, FractionRange range, Rng& rng) {
  const auto dims = shape.dims();
  for (auto d : dims) {
    if (d < 4) {
      throw ValidationError("make_cutmix_mask: every dim must be >= 4, got " + shape.str());
    }
  }
  if (range.lo > range.hi || range.lo < 0.0 || range.hi > 1.0) {
    throw ValidationError("make_cutmix_mask: fraction range must satisfy 0 <= lo <= hi <= 1");
  }
  const double total = static_cast<double>(shape.voxels());
  const double vmin = range.lo * total;
  const double vmax = range.hi * total;
  const double target = range.lo == range.hi ? vmin : vmin + (vmax - vmin) * rng.uniform();

  // Exact enumeration of box extents; tiny at the volume sizes used here.
  std::vector<std::array<std::int64_t, 3>> best;
  double best_gap = std::numeric_limits<double>::infinity();
  constexpr double tol = 1e-9;
  for (std::int64_t a = 1; a <= dims[0]; ++a) {
    for (std::int64_t b = 1; b <= dims[1]; ++b) {
      for (std::int64_t c = 1; c <= dims[2]; ++c) {
        const double v = static_cast<double>(a * b * c);
        if (v < vmin - tol || v > vmax + tol) {
          continue;
        }
        const double gap = std::abs(v - target);
        if (gap < best_gap - tol) {
          best_gap = gap;
          best.clear();
        }
        if (gap <= best_gap + tol) {
          best.push_back({a, b, c});
        }
      }
    }
  }
  if (best.empty()) {
    throw ValidationError("make_cutmix_mask: no box in " + shape.str() +
                          " has a volume fraction in [" + std::to_string(range.lo) + ", " +
                          std::to_string(range.hi) + "]");
  }
  const auto extent = best[static_cast<std::size_t>(
      rng.uniform_int(0, static_cast<std::int64_t>(best.size()) - 1))];

  CutMixMask out;
  out.region.extent = extent;
  out.mask = torch::zeros({shape.l, shape.w, shape.h}, torch::kFloat32);
  for (int axis = 0; axis < 3; ++axis) {
    out.region.origin[axis] = rng.uniform_int(0, dims[axis] - extent[axis]);
  }
  using torch::indexing::Slice;
  const auto& o = out.region.origin;
  out.mask.index_put_({Slice(o[0], o[0] + extent[0]), Slice(o[1], o[1] + extent[1]),
                       Slice(o[2], o[2] + extent[2])},
                      1.0);
  return out;
}

std::pair<torch::Tensor, torch::Tensor> apply_cutmix(const torch::Tensor& x_i,
                                                     const torch::Tensor& x_j,
                                                     const torch::Tensor& y_i,
                                                     const torch::Tensor& y_j,
                                                     const torch::Tensor& mask) {
  if (x_i.sizes() != x_j.sizes() || y_i.sizes() != y_j.sizes() ||
      spatial_shape(x_i) != spatial_shape(mask) || spatial_shape(y_i) != spatial_shape(mask)) {
    throw ValidationError("apply_cutmix: spatial shapes of inputs, targets and mask differ");
  }
  auto mix = [&mask](const torch::Tensor& a, const torch::Tensor& b) {
    if (a.is_floating_point()) {
      auto m = mask.to(a.dtype());
      return (1 - m) * a + m * b;
    }
    return torch::where(mask > 0.5, b, a);
  };
  return {mix(x_i, x_j), mix(y_i, y_j)};
}

PatchMask make_patch_mask(const Shape3& shape, double ratio, std::int64_t patch, Rng& rng) {
  if (patch < 1) {
    throw ValidationError("make_patch_mask: patch size must be >= 1");
  }
  for (auto d : shape.dims()) {
    if (d % patch != 0) {
      throw ValidationError("make_patch_mask: shape " + shape.str() +
                            " is not divisible by patch size " + std::to_string(patch));
    }
  }
  const std::int64_t pl = shape.l / patch, pw = shape.w / patch, ph = shape.h / patch;
  auto draws = rng.uniform_tensor({pl, pw, ph}, torch::kFloat64);
  auto coarse = (draws > ratio).to(torch::kFloat32);
  auto full = coarse.repeat_interleave(patch, 0).repeat_interleave(patch, 1).repeat_interleave(patch, 2);
  return {full.contiguous(), ratio, patch};
}

torch::Tensor apply_patch_mask(const torch::Tensor& x, const torch::Tensor& mask) {
  if (spatial_shape(x) != spatial_shape(mask)) {
    throw ValidationError("apply_patch_mask: mask shape " + spatial_shape(mask).str() +
                          " differs from volume shape " + spatial_shape(x).str());
  }
  return x * mask.to(x.dtype());
}

std::int64_t default_patch_size(const Shape3& shape) {
  const auto smallest = std::min({shape.l, shape.w, shape.h});
  return std::max<std::int64_t>(1, smallest / 16);
}

}  // namespace semiseg
