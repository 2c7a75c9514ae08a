#pragma once

#include <torch/torch.h>

namespace semiseg {

/// Smoothing constant used by every Dice term.
inline constexpr double kDiceSmooth = 1e-5;
/// Probabilities are clamped to [kProbFloor, 1] before logarithms.
inline constexpr double kProbFloor = 1e-7;

/// Per-sample DiceCE, 0.5 * (CE + (1 - mean_k Dice_k)), returned as (B,).
/// `probs` and `target` are (B, K, ...) with matching shapes.
torch::Tensor dice_ce_per_sample(const torch::Tensor& probs, const torch::Tensor& target);

/// Batch mean of dice_ce_per_sample. Throws ValidationError on shape mismatch
/// or an empty batch.
torch::Tensor dice_ce(const torch::Tensor& probs, const torch::Tensor& target);

/// One-vs-rest DiceCE per class: (B, K) of 0.5 * (BCE_k + 1 - Dice_k).
torch::Tensor dice_ce_per_class(const torch::Tensor& probs, const torch::Tensor& target);

/// Denoising loss: mean DiceCE of the diffusion prediction against labels.
torch::Tensor loss_deno(const torch::Tensor& probs_xi, const torch::Tensor& target_onehot);

/// Difficulty-aware supervised loss: mean over samples and classes of
/// w_k * DiceCE_k. `class_weights` is (K,).
torch::Tensor loss_diff(const torch::Tensor& probs_psi, const torch::Tensor& target_onehot,
                        const torch::Tensor& class_weights);

/// Unlabeled-flow loss against a hard pseudo-label (B, L, W, H).
torch::Tensor loss_u(const torch::Tensor& probs_theta, const torch::Tensor& pseudo_hard);
/// CutMix consistency against the mixed hard pseudo-label.
torch::Tensor loss_mix(const torch::Tensor& probs_mix, const torch::Tensor& mixed_hard);
/// Masked-image consistency: prediction on the masked volume against the
/// full-volume pseudo-label, over all voxels.
torch::Tensor loss_mic(const torch::Tensor& probs_masked, const torch::Tensor& pseudo_hard);

/// Mean over samples of ||student - teacher||^2 / ||teacher||^2 on logits.
/// The teacher is detached; the denominator is floored at kDiceSmooth.
torch::Tensor loss_rec(const torch::Tensor& student_logits, const torch::Tensor& teacher_logits);

/// Per-sample soft Dice loss (B,): 1 - mean_k (2 sum pq + e) / (sum p^2 + sum q^2 + e).
torch::Tensor soft_dice_per_sample(const torch::Tensor& p, const torch::Tensor& q);
torch::Tensor soft_dice(const torch::Tensor& p, const torch::Tensor& q);

/// Distillation from the diffusion and psi maps into the theta prediction.
torch::Tensor loss_kd(const torch::Tensor& probs_theta, const torch::Tensor& probs_xi,
                      const torch::Tensor& probs_psi);

/// Nonnegative multipliers of the optional objectives.
struct LossWeights {
  double alpha = 2.0;  // masked consistency
  double beta = 0.1;   // distillation
  double gamma = 0.2;  // masked reconstruction
  double eta = 1.2;    // correlation
  /// Weight of the plain unlabeled loss; 0 keeps the objective to the seven
  /// listed terms.
  double unlabeled = 0.0;

  void validate() const;
};

/// Scalar loss terms of one iteration. Disabled terms hold a zero scalar.
struct LossComponents {
  torch::Tensor deno, diff, u, mix, mic, kd, rec, corr;

  static LossComponents zeros(const torch::TensorOptions& options);
};

/// deno + diff + mix + alpha mic + beta kd + gamma rec + eta corr (+ unlabeled * u).
torch::Tensor total_loss(const LossComponents& c, const LossWeights& w);

}  // namespace semiseg
