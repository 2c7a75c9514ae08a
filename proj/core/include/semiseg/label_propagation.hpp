#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "semiseg/network.hpp"

namespace semiseg {

/// Row-stochastic pairwise similarity (B, P, P) over pooled positions.
struct CorrelationMap {
  torch::Tensor matrix;
};

enum class CorrelationScaling {
  /// softmax(e1^T e2 / sqrt(D)); rows sum to one.
  InsideSoftmax,
  /// softmax(e1^T e2) / sqrt(D), the literal placement; rows sum to 1/sqrt(D).
  OutsideSoftmax,
};

CorrelationMap correlation_map(const CorrelationFeatures& features,
                               CorrelationScaling scaling = CorrelationScaling::InsideSoftmax);

/// out[:, i] = sum_j C[i, j] * pred[:, j]; pred is (B, K, P).
torch::Tensor propagate(const torch::Tensor& pred, const CorrelationMap& map);

/// Average-pools (B, K, L, W, H) scores onto `grid` and flattens to (B, K, P).
torch::Tensor pool_scores(const torch::Tensor& scores, const std::vector<std::int64_t>& grid);

/// Majority vote of integer labels (B, L, W, H) per pooled cell, lowest class
/// index on ties; returns (B, P) int64.
torch::Tensor pool_labels(const torch::Tensor& labels, std::int64_t num_classes,
                          const std::vector<std::int64_t>& grid);

/// DiceCE of softmax(propagated logits) (B, K, P) against pooled hard labels (B, P).
torch::Tensor loss_corr_u(const torch::Tensor& propagated_logits, const torch::Tensor& pooled_target);

/// Unlabeled plus labeled correlation terms.
torch::Tensor loss_corr(const torch::Tensor& propagated_u, const torch::Tensor& target_u,
                        const torch::Tensor& propagated_l, const torch::Tensor& target_l);

}  // namespace semiseg
