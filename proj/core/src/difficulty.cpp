#include "semiseg/difficulty.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "semiseg/error.hpp"
#include "semiseg/losses.hpp"

namespace semiseg {

DifficultyTracker::DifficultyTracker(std::int64_t num_classes, DifficultyOptions options)
    : num_classes_(num_classes), options_(options) {
  if (num_classes < 1 || options.window < 1 || options.alpha <= 0.0 || options.w_min < 0.0) {
    throw ConfigError("invalid difficulty tracker options");
  }
  const auto k = static_cast<std::size_t>(num_classes);
  du_.assign(k, 0.0);
  dl_.assign(k, 0.0);
  d_.assign(k, 0.0);
  weights_.assign(k, 1.0);
}

void DifficultyTracker::update(const std::vector<double>& lambda) {
  if (static_cast<std::int64_t>(lambda.size()) != num_classes_) {
    throw ValidationError("DifficultyTracker::update: expected one Dice value per class");
  }
  std::vector<double> floored(lambda.size());
  for (std::size_t k = 0; k < lambda.size(); ++k) {
    floored[k] = std::clamp(lambda[k], options_.lambda_floor, 1.0);
  }
  history_.push_back(std::move(floored));
  while (static_cast<std::int64_t>(history_.size()) > options_.window + 1) {
    history_.pop_front();
  }
  recompute();
}

void DifficultyTracker::recompute() {
  const auto K = static_cast<std::size_t>(num_classes_);
  std::fill(du_.begin(), du_.end(), 0.0);
  std::fill(dl_.begin(), dl_.end(), 0.0);
  for (std::size_t e = 1; e < history_.size(); ++e) {
    const auto& prev = history_[e - 1];
    const auto& cur = history_[e];
    for (std::size_t k = 0; k < K; ++k) {
      const double delta = cur[k] - prev[k];
      const double log_ratio = std::log(cur[k] / prev[k]);
      du_[k] += std::min(delta, 0.0) * log_ratio;
      dl_[k] += std::max(delta, 0.0) * log_ratio;
    }
  }
  for (std::size_t k = 0; k < K; ++k) {
    d_[k] = dl_[k] > 0.0 ? du_[k] / dl_[k] : 0.0;
  }
  if (!warm()) {
    std::fill(weights_.begin(), weights_.end(), 1.0);
    return;
  }
  const auto& latest = history_.back();
  double miss_total = 0.0;
  for (double v : latest) {
    miss_total += 1.0 - v;
  }
  for (std::size_t k = 0; k < K; ++k) {
    double base = 1.0;
    if (options_.weighting == LambdaWeighting::InverseDice) {
      base = miss_total > 0.0 ? static_cast<double>(K) * (1.0 - latest[k]) / miss_total : 1.0;
    }
    const double raw = base * std::pow(d_[k], options_.alpha);
    weights_[k] = std::isfinite(raw) ? std::max(raw, options_.w_min) : options_.w_min;
  }
}

torch::Tensor DifficultyTracker::weight_tensor(torch::Dtype dtype) const {
  return torch::tensor(weights_, torch::kFloat64).to(dtype);
}

std::string DifficultyTracker::serialize() const {
  std::ostringstream out;
  out << std::setprecision(17) << num_classes_ << ' ' << history_.size();
  for (const auto& row : history_) {
    for (double v : row) {
      out << ' ' << v;
    }
  }
  return out.str();
}

DifficultyTracker DifficultyTracker::deserialize(const std::string& text, DifficultyOptions options) {
  std::istringstream in(text);
  std::int64_t k = 0;
  std::size_t rows = 0;
  in >> k >> rows;
  if (in.fail()) {
    throw ConfigError("malformed difficulty tracker state");
  }
  DifficultyTracker tracker(k, options);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row(static_cast<std::size_t>(k));
    for (auto& v : row) {
      in >> v;
    }
    if (in.fail()) {
      throw ConfigError("malformed difficulty tracker state");
    }
    tracker.history_.push_back(row);
  }
  tracker.recompute();
  return tracker;
}

std::vector<double> per_class_dice(const torch::Tensor& probs, const torch::Tensor& target_onehot) {
  torch::NoGradGuard no_grad;
  auto p = probs.detach().to(torch::kFloat64).transpose(0, 1).reshape({probs.size(1), -1});
  auto y = target_onehot.to(torch::kFloat64).transpose(0, 1).reshape({probs.size(1), -1});
  auto dice = (2.0 * (p * y).sum(1) + kDiceSmooth) / (p.sum(1) + y.sum(1) + kDiceSmooth);
  return std::vector<double>(dice.data_ptr<double>(), dice.data_ptr<double>() + dice.numel());
}

}  // namespace semiseg
