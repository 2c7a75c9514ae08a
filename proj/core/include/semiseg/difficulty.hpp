#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace semiseg {

/// How the per-class base factor of the difficulty weight is formed.
enum class LambdaWeighting {
  /// K * (1 - lambda_k) / sum_j (1 - lambda_j)
  InverseDice,
  Constant,
};

struct DifficultyOptions {
  std::int64_t window = 50;
  double alpha = 0.2;
  double w_min = 0.1;
  double lambda_floor = 1e-4;
  LambdaWeighting weighting = LambdaWeighting::InverseDice;
};

/// Windowed per-class Dice dynamics driving the difficulty-aware weights.
///
/// History holds at most `window + 1` Dice vectors, i.e. `window` transitions.
/// For each transition with delta = lambda_e - lambda_{e-1}:
///   du += min(delta, 0) * ln(lambda_e / lambda_{e-1})
///   dl += max(delta, 0) * ln(lambda_e / lambda_{e-1})
/// and d = du / dl (0 when dl = 0). The weight is
/// max(w_lambda * d^alpha, w_min), or 1 for every class until two Dice
/// vectors have been seen.
class DifficultyTracker {
 public:
  DifficultyTracker(std::int64_t num_classes, DifficultyOptions options = {});

  /// Appends one per-class Dice vector and refreshes du, dl, d and the weights.
  void update(const std::vector<double>& lambda);

  bool warm() const { return history_.size() >= 2; }
  std::int64_t num_classes() const { return num_classes_; }
  const DifficultyOptions& options() const { return options_; }
  const std::deque<std::vector<double>>& history() const { return history_; }
  const std::vector<double>& du() const { return du_; }
  const std::vector<double>& dl() const { return dl_; }
  const std::vector<double>& difficulty() const { return d_; }
  const std::vector<double>& weights() const { return weights_; }
  torch::Tensor weight_tensor(torch::Dtype dtype = torch::kFloat32) const;

  /// Whitespace-separated text form for checkpoints.
  std::string serialize() const;
  static DifficultyTracker deserialize(const std::string& text, DifficultyOptions options);

 private:
  void recompute();

  std::int64_t num_classes_;
  DifficultyOptions options_;
  std::deque<std::vector<double>> history_;
  std::vector<double> du_, dl_, d_, weights_;
};

/// Per-class soft Dice of a probability batch (B, K, ...) against a one-hot
/// target, pooled over the batch. Detached, returned as doubles.
std::vector<double> per_class_dice(const torch::Tensor& probs, const torch::Tensor& target_onehot);

}  // namespace semiseg
