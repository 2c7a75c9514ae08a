#pragma once

#include <optional>

#include <torch/torch.h>

#include "semiseg/rng.hpp"

namespace semiseg {

/// Which teacher produced a probability map.
enum class TeacherSource { ReparamSmooth, MeanTeacher };

/// Per-voxel class probabilities (B, K, L, W, H) from one teacher.
struct TeacherPrediction {
  torch::Tensor probs;
  TeacherSource source = TeacherSource::ReparamSmooth;
};

/// Entropy-weighted fusion of the two teachers.
struct EnsembledPrediction {
  torch::Tensor probs;       // (B, K, L, W, H)
  torch::Tensor hard;        // (B, L, W, H) int64, argmax of probs
  torch::Tensor entropy_t1;  // (B, L, W, H), bits
  torch::Tensor entropy_t2;  // (B, L, W, H), bits
};

struct ReparamSmoothOptions {
  double tau = 1.0;
  /// Gaussian blur sigma; 0 disables the blur.
  double blur_sigma = 1.0;
  std::int64_t blur_kernel = 3;
  /// Apply the Gumbel perturbation to the psi logits instead of the
  /// diffusion map (the alternative reading of the RS formula).
  bool gumbel_on_psi = false;
};

/// softmax((scores + gumbel) / tau) over the channel dim.
torch::Tensor gumbel_softmax(const torch::Tensor& scores, const torch::Tensor& gumbel, double tau);

/// Channelwise separable Gaussian blur over the three spatial dims with
/// replicate padding.
torch::Tensor gaussian_blur3d(const torch::Tensor& maps, double sigma, std::int64_t kernel);

/// Teacher-1: 0.5 * (GumbelSoftmax(p_xi) + Softmax(psi_logits)), blurred and
/// renormalised per voxel. `gumbel` holds the perturbation explicitly so that
/// callers (and tests) can pin it; throws ValidationError if a voxel cannot be
/// normalised.
TeacherPrediction reparameterize_smooth(const torch::Tensor& p_xi, const torch::Tensor& psi_logits,
                                        const torch::Tensor& gumbel,
                                        const ReparamSmoothOptions& options);
TeacherPrediction reparameterize_smooth(const torch::Tensor& p_xi, const torch::Tensor& psi_logits,
                                        const ReparamSmoothOptions& options, Rng& rng);

/// H = -sum_k p_k log2 p_k over dim 1, with 0 log 0 = 0.
torch::Tensor entropy_map(const torch::Tensor& probs);

/// Base of the trust weight w = base^(-H) with H in bits.
enum class EntropyWeightBase {
  /// w = 2^(-H): a one-bit teacher gets half the weight of a certain one.
  Two,
  /// w = e^(-H) applied to the bit entropy.
  E,
};

/// p = (w1 q1 + w2 q2) / (w1 + w2) per voxel with w = base^(-H).
EnsembledPrediction ensemble_predictions(const TeacherPrediction& t1, const TeacherPrediction& t2,
                                         EntropyWeightBase base = EntropyWeightBase::Two);

/// Per-voxel argmax over dim 1; ties resolve to the lowest class index.
torch::Tensor harden(const torch::Tensor& probs);

}  // namespace semiseg
