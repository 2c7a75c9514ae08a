#include "semiseg/losses.hpp"

#include <cmath>

#include "semiseg/error.hpp"
#include "semiseg/volume.hpp"

namespace semiseg {

namespace {

void check_pair(const torch::Tensor& probs, const torch::Tensor& target, const char* who) {
  if (probs.sizes() != target.sizes()) {
    throw ValidationError(std::string(who) + ": prediction and target shapes differ");
  }
  if (probs.dim() < 3 || probs.size(0) == 0) {
    throw ValidationError(std::string(who) + ": expected a non-empty (B, K, ...) batch");
  }
}

// (B, K, N) views.
torch::Tensor flat(const torch::Tensor& t) { return t.reshape({t.size(0), t.size(1), -1}); }

torch::Tensor hard_target(const torch::Tensor& hard, const torch::Tensor& like) {
  return one_hot_encode(hard, like.size(1), like.scalar_type());
}

}  // namespace

torch::Tensor dice_ce_per_sample(const torch::Tensor& probs, const torch::Tensor& target) {
  check_pair(probs, target, "dice_ce");
  auto p = flat(probs);
  auto y = flat(target.to(probs.scalar_type()));
  auto ce = -(y * p.clamp_min(kProbFloor).log()).sum(1).mean(1);
  auto inter = (p * y).sum(2);
  auto denom = p.sum(2) + y.sum(2);
  auto dice = ((2.0 * inter + kDiceSmooth) / (denom + kDiceSmooth)).mean(1);
  return 0.5 * (ce + (1.0 - dice));
}

torch::Tensor dice_ce(const torch::Tensor& probs, const torch::Tensor& target) {
  return dice_ce_per_sample(probs, target).mean();
}

torch::Tensor dice_ce_per_class(const torch::Tensor& probs, const torch::Tensor& target) {
  check_pair(probs, target, "dice_ce_per_class");
  auto p = flat(probs);
  auto y = flat(target.to(probs.scalar_type()));
  auto bce = -(y * p.clamp_min(kProbFloor).log() + (1.0 - y) * (1.0 - p).clamp_min(kProbFloor).log())
                  .mean(2);
  auto dice = (2.0 * (p * y).sum(2) + kDiceSmooth) / (p.sum(2) + y.sum(2) + kDiceSmooth);
  return 0.5 * (bce + (1.0 - dice));
}

torch::Tensor loss_deno(const torch::Tensor& probs_xi, const torch::Tensor& target_onehot) {
  return dice_ce(probs_xi, target_onehot);
}

torch::Tensor loss_diff(const torch::Tensor& probs_psi, const torch::Tensor& target_onehot,
                        const torch::Tensor& class_weights) {
  auto per_class = dice_ce_per_class(probs_psi, target_onehot);
  if (class_weights.dim() != 1 || class_weights.size(0) != per_class.size(1)) {
    throw ValidationError("loss_diff: need one weight per class");
  }
  return (per_class * class_weights.to(per_class.scalar_type()).unsqueeze(0)).mean();
}

torch::Tensor loss_u(const torch::Tensor& probs_theta, const torch::Tensor& pseudo_hard) {
  return dice_ce(probs_theta, hard_target(pseudo_hard, probs_theta));
}

torch::Tensor loss_mix(const torch::Tensor& probs_mix, const torch::Tensor& mixed_hard) {
  return dice_ce(probs_mix, hard_target(mixed_hard, probs_mix));
}

torch::Tensor loss_mic(const torch::Tensor& probs_masked, const torch::Tensor& pseudo_hard) {
  return dice_ce(probs_masked, hard_target(pseudo_hard, probs_masked));
}

torch::Tensor loss_rec(const torch::Tensor& student_logits, const torch::Tensor& teacher_logits) {
  check_pair(student_logits, teacher_logits, "loss_rec");
  auto s = student_logits.reshape({student_logits.size(0), -1});
  auto t = teacher_logits.detach().reshape({teacher_logits.size(0), -1});
  auto num = (s - t).square().sum(1);
  auto den = t.square().sum(1).clamp_min(kDiceSmooth);
  return (num / den).mean();
}

torch::Tensor soft_dice_per_sample(const torch::Tensor& p, const torch::Tensor& q) {
  check_pair(p, q, "soft_dice");
  auto a = flat(p);
  auto b = flat(q);
  auto score = (2.0 * (a * b).sum(2) + kDiceSmooth) /
               (a.square().sum(2) + b.square().sum(2) + kDiceSmooth);
  return 1.0 - score.mean(1);
}

torch::Tensor soft_dice(const torch::Tensor& p, const torch::Tensor& q) {
  return soft_dice_per_sample(p, q).mean();
}

torch::Tensor loss_kd(const torch::Tensor& probs_theta, const torch::Tensor& probs_xi,
                      const torch::Tensor& probs_psi) {
  return (soft_dice_per_sample(probs_theta, probs_xi.detach()) +
          soft_dice_per_sample(probs_theta, probs_psi.detach()))
      .mean();
}

void LossWeights::validate() const {
  for (double w : {alpha, beta, gamma, eta, unlabeled}) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
}

LossComponents LossComponents::zeros(const torch::TensorOptions& options) {
  auto z = [&] { return torch::zeros({}, options); };
  return {z(), z(), z(), z(), z(), z(), z(), z()};
}

torch::Tensor total_loss(const LossComponents& c, const LossWeights& w) {
  auto total = c.deno + c.diff + c.mix + w.alpha * c.mic + w.beta * c.kd + w.gamma * c.rec +
               w.eta * c.corr;
  if (w.unlabeled != 0.0) {
    total = total + w.unlabeled * c.u;
  }
  return total;
}

}  // namespace semiseg
