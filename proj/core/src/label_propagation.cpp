#include "semiseg/label_propagation.hpp"

#include <cmath>

#include "semiseg/error.hpp"
#include "semiseg/losses.hpp"
#include "semiseg/volume.hpp"

namespace semiseg {

CorrelationMap correlation_map(const CorrelationFeatures& f, CorrelationScaling scaling) {
  if (f.e1.sizes() != f.e2.sizes() || f.e1.dim() != 3) {
    throw ValidationError("correlation_map: e1 and e2 must share shape (B, D, P)");
  }
  const double scale = std::sqrt(static_cast<double>(f.e1.size(1)));
  auto logits = torch::bmm(f.e1.transpose(1, 2), f.e2);
  if (scaling == CorrelationScaling::InsideSoftmax) {
    return {torch::softmax(logits / scale, -1)};
  }
  return {torch::softmax(logits, -1) / scale};
}

torch::Tensor propagate(const torch::Tensor& pred, const CorrelationMap& map) {
  const auto& c = map.matrix;
  if (pred.dim() != 3 || c.dim() != 3 || pred.size(0) != c.size(0) || pred.size(2) != c.size(1) ||
      c.size(1) != c.size(2)) {
    throw ValidationError("propagate: prediction (B, K, P) does not match map (B, P, P)");
  }
  return torch::bmm(pred, c.transpose(1, 2));
}

torch::Tensor pool_scores(const torch::Tensor& scores, const std::vector<std::int64_t>& grid) {
  return torch::adaptive_avg_pool3d(scores, grid).flatten(2);
}

torch::Tensor pool_labels(const torch::Tensor& labels, std::int64_t num_classes,
                          const std::vector<std::int64_t>& grid) {
  auto hot = one_hot_encode(labels, num_classes, torch::kFloat64);
  auto votes = torch::adaptive_avg_pool3d(hot, grid).flatten(2);
  return torch::argmax(votes, 1);
}

torch::Tensor loss_corr_u(const torch::Tensor& propagated_logits, const torch::Tensor& pooled_target) {
  if (pooled_target.dim() != 2 || pooled_target.size(0) != propagated_logits.size(0) ||
      pooled_target.size(1) != propagated_logits.size(2)) {
    throw ValidationError("loss_corr: pooled target must be (B, P)");
  }
  auto target = torch::one_hot(pooled_target.to(torch::kInt64), propagated_logits.size(1))
                    .to(propagated_logits.scalar_type())
                    .transpose(1, 2);
  return dice_ce(torch::softmax(propagated_logits, 1), target);
}

torch::Tensor loss_corr(const torch::Tensor& propagated_u, const torch::Tensor& target_u,
                        const torch::Tensor& propagated_l, const torch::Tensor& target_l) {
  return loss_corr_u(propagated_u, target_u) + loss_corr_u(propagated_l, target_l);
}

}  // namespace semiseg
