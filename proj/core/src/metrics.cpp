#include "semiseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semiseg/error.hpp"

namespace semiseg {

namespace {

void check_grids(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.dim() != 3 || !a.sizes().equals(b.sizes())) {
    throw ValidationError("metrics expect two label grids of equal (L, W, H) shape");
  }
}

double nan_mean(const std::vector<double>& v) {
  double sum = 0.0;
  int n = 0;
  for (double x : v) {
    if (!std::isnan(x)) {
      sum += x;
      ++n;
    }
  }
  return n == 0 ? kUndefinedDistance : sum / n;
}

}  // namespace

std::vector<Overlap> dice_jaccard(const torch::Tensor& pred, const torch::Tensor& gt,
                                  std::int64_t num_classes) {
  check_grids(pred, gt);
  auto p = pred.to(torch::kInt64).contiguous();
  auto g = gt.to(torch::kInt64).contiguous();
  std::vector<Overlap> out(static_cast<std::size_t>(num_classes));
  for (std::int64_t k = 0; k < num_classes; ++k) {
    auto pk = p.eq(k);
    auto gk = g.eq(k);
    const double inter = pk.logical_and(gk).sum().item<double>();
    const double np = pk.sum().item<double>();
    const double ng = gk.sum().item<double>();
    auto& o = out[static_cast<std::size_t>(k)];
    if (np + ng == 0.0) {
      o = {1.0, 1.0};
    } else {
      o.dice = 2.0 * inter / (np + ng);
      o.jaccard = inter / (np + ng - inter);
    }
  }
  return out;
}

std::vector<Voxel> boundary_voxels(const torch::Tensor& mask) {
  if (mask.dim() != 3) {
    throw ValidationError("boundary_voxels expects an (L, W, H) mask");
  }
  auto m = mask.to(torch::kBool).contiguous();
  const auto L = m.size(0), W = m.size(1), H = m.size(2);
  const bool* data = m.data_ptr<bool>();
  auto at = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
    if (i < 0 || j < 0 || k < 0 || i >= L || j >= W || k >= H) {
      return false;
    }
    return data[(i * W + j) * H + k];
  };
  std::vector<Voxel> out;
  for (std::int64_t i = 0; i < L; ++i) {
    for (std::int64_t j = 0; j < W; ++j) {
      for (std::int64_t k = 0; k < H; ++k) {
        if (!at(i, j, k)) {
          continue;
        }
        if (!at(i - 1, j, k) || !at(i + 1, j, k) || !at(i, j - 1, k) || !at(i, j + 1, k) ||
            !at(i, j, k - 1) || !at(i, j, k + 1)) {
          out.push_back({i, j, k});
        }
      }
    }
  }
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) {
    return kUndefinedDistance;
  }
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

// Distance from each point of `from` to its nearest point of `to`.
std::vector<double> directed(const std::vector<Voxel>& from, const std::vector<Voxel>& to) {
  auto as_tensor = [](const std::vector<Voxel>& v) {
    auto t = torch::empty({static_cast<std::int64_t>(v.size()), 3}, torch::kFloat64);
    auto acc = t.accessor<double, 2>();
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (int d = 0; d < 3; ++d) {
        acc[static_cast<std::int64_t>(i)][d] = static_cast<double>(v[i][static_cast<std::size_t>(d)]);
      }
    }
    return t;
  };
  auto a = as_tensor(from);
  auto b = as_tensor(to);
  std::vector<double> out;
  out.reserve(from.size());
  constexpr std::int64_t kChunk = 1024;
  for (std::int64_t s = 0; s < a.size(0); s += kChunk) {
    auto chunk = a.slice(0, s, std::min(s + kChunk, a.size(0)));
    // Squared distances of integer coordinates are exact in float64.
    auto d2 = (chunk.unsqueeze(1) - b.unsqueeze(0)).pow(2).sum(-1);
    auto nearest = std::get<0>(d2.min(1)).sqrt().contiguous();
    const double* p = nearest.data_ptr<double>();
    out.insert(out.end(), p, p + nearest.size(0));
  }
  return out;
}

}  // namespace

SurfaceDistance surface_distances(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask) {
  check_grids(pred_mask, gt_mask);
  const auto bp = boundary_voxels(pred_mask);
  const auto bg = boundary_voxels(gt_mask);
  SurfaceDistance out;
  if (bp.empty() || bg.empty()) {
    return out;
  }
  auto d_pg = directed(bp, bg);
  auto d_gp = directed(bg, bp);
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  out.asd = 0.5 * (mean(d_pg) + mean(d_gp));
  std::vector<double> pool = d_pg;
  pool.insert(pool.end(), d_gp.begin(), d_gp.end());
  out.hd100 = *std::max_element(pool.begin(), pool.end());
  out.hd95 = percentile(std::move(pool), 95.0);
  return out;
}

SampleMetrics score_sample(const torch::Tensor& pred, const torch::Tensor& gt, std::int64_t num_classes) {
  SampleMetrics m;
  const auto overlap = dice_jaccard(pred, gt, num_classes);
  for (std::int64_t k = 1; k < num_classes; ++k) {
    const auto& o = overlap[static_cast<std::size_t>(k)];
    m.dice.push_back(o.dice);
    m.jaccard.push_back(o.jaccard);
    const auto sd = surface_distances(pred.eq(k), gt.eq(k));
    if (!sd.defined()) {
      m.undefined_classes.push_back(k);
    }
    m.hd95.push_back(sd.hd95);
    m.asd.push_back(sd.asd);
  }
  m.mean_dice = nan_mean(m.dice);
  m.mean_jaccard = nan_mean(m.jaccard);
  m.mean_hd95 = nan_mean(m.hd95);
  m.mean_asd = nan_mean(m.asd);
  return m;
}

}  // namespace semiseg
