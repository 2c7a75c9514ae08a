#pragma once

// Brute-force reference implementations used by the unit and acceptance
// tests. They read tensors into plain vectors and loop over voxels directly.

#include <array>
#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "semiseg/rng.hpp"

namespace oracle {

/// Dense copy of a tensor as doubles with its shape.
struct Array {
  std::vector<double> v;
  std::vector<std::int64_t> shape;

  static Array of(const torch::Tensor& t);
  /// (B, K, N) view sizes.
  std::int64_t batch() const { return shape[0]; }
  std::int64_t channels() const { return shape[1]; }
  std::int64_t voxels() const;
  double at(std::int64_t b, std::int64_t k, std::int64_t n) const {
    return v[static_cast<std::size_t>((b * channels() + k) * voxels() + n)];
  }
};

constexpr double kSmooth = 1e-5;
constexpr double kFloor = 1e-7;

double dice_ce_sample(const Array& p, const Array& y, std::int64_t b);
double dice_ce(const torch::Tensor& probs, const torch::Tensor& target);
double dice_ce_hard(const torch::Tensor& probs, const torch::Tensor& labels);
/// Mean over samples and classes of w_k * one-vs-rest DiceCE_k.
double loss_diff(const torch::Tensor& probs, const torch::Tensor& target, const std::vector<double>& w);
double loss_rec(const torch::Tensor& student, const torch::Tensor& teacher);
double soft_dice(const torch::Tensor& p, const torch::Tensor& q);
double loss_kd(const torch::Tensor& theta, const torch::Tensor& xi, const torch::Tensor& psi);
/// Softmax over K at each pooled position, then DiceCE against (B, P) labels.
double loss_corr_u(const torch::Tensor& propagated_logits, const torch::Tensor& pooled_labels);

/// -sum p log2 p for one probability vector.
double entropy_bits(const std::vector<double>& p);
/// (w1 q1 + w2 q2) / (w1 + w2) with w = 2^(-H).
std::vector<double> ensemble(const std::vector<double>& q1, const std::vector<double>& q2);

struct DrsState {
  double du = 0.0, dl = 0.0, d = 0.0;
};
/// Windowed accumulators over a lambda sequence (last `window` transitions).
DrsState drs(const std::vector<double>& lambda, std::int64_t window, double floor = 1e-4);

using Voxel = std::array<std::int64_t, 3>;
/// Foreground voxels with a six-neighbour outside the mask.
std::vector<Voxel> boundary(const torch::Tensor& mask);

struct Surface {
  double hd95 = 0.0, asd = 0.0, hd100 = 0.0;
};
/// Definitional double loop over both boundaries.
Surface surface(const torch::Tensor& a, const torch::Tensor& b);

/// C[i][j] = softmax_j(sum_d e1[d][i] e2[d][j] / sqrt(D)) for one sample.
std::vector<std::vector<double>> correlation(const torch::Tensor& e1, const torch::Tensor& e2);

// -- random instances ---------------------------------------------------------

torch::Tensor random_probs(semiseg::Rng& rng, std::vector<std::int64_t> shape,
                           torch::Dtype dtype = torch::kFloat64);
torch::Tensor random_labels(semiseg::Rng& rng, std::vector<std::int64_t> shape, std::int64_t classes);
/// Random edge in [lo, hi] for each spatial dim.
std::vector<std::int64_t> random_spatial(semiseg::Rng& rng, std::int64_t lo, std::int64_t hi);

/// |a - b| / max(|a|, |b|, floor)
double rel_err(double a, double b, double floor = 1e-12);

}  // namespace oracle
