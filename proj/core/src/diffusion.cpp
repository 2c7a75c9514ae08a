#include "semiseg/diffusion.hpp"

#include <cmath>

#include "semiseg/error.hpp"

namespace semiseg {

DiffusionSchedule DiffusionSchedule::linear(std::int64_t steps, double beta_start, double beta_end,
                                            std::int64_t ddim_steps) {
  if (steps < 2) {
    throw ConfigError("diffusion schedule needs at least two steps");
  }
  DiffusionSchedule s;
  s.steps = steps;
  s.ddim_steps = ddim_steps;
  s.alpha_bar.resize(static_cast<std::size_t>(steps));
  s.alpha_bar[0] = 1.0;
  for (std::int64_t t = 1; t < steps; ++t) {
    const double beta =
        beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / static_cast<double>(steps - 2);
    s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - beta);
  }
  s.validate();
  return s;
}

DiffusionSchedule DiffusionSchedule::from_alpha_bar(std::vector<double> alpha_bar,
                                                    std::int64_t ddim_steps) {
  DiffusionSchedule s;
  s.steps = static_cast<std::int64_t>(alpha_bar.size());
  s.alpha_bar = std::move(alpha_bar);
  s.ddim_steps = ddim_steps;
  return s;
}

void DiffusionSchedule::validate() const {
  if (static_cast<std::int64_t>(alpha_bar.size()) != steps || steps < 1) {
    throw ConfigError("diffusion schedule length mismatch");
  }
  if (alpha_bar.front() != 1.0) {
    throw ConfigError("diffusion schedule must start at alpha_bar_0 = 1");
  }
  for (std::size_t t = 0; t < alpha_bar.size(); ++t) {
    if (!(alpha_bar[t] > 0.0) || alpha_bar[t] > 1.0 || (t > 0 && alpha_bar[t] > alpha_bar[t - 1])) {
      throw ConfigError("alpha_bar must be positive and nonincreasing");
    }
  }
  if (ddim_steps < 1 || ddim_steps > steps) {
    throw ConfigError("ddim_steps must lie in [1, T]");
  }
}

std::vector<std::int64_t> DiffusionSchedule::ddim_timesteps() const {
  std::vector<std::int64_t> out;
  for (std::int64_t k = ddim_steps; k >= 1; --k) {
    out.push_back(k * steps / ddim_steps - 1);
  }
  return out;
}

namespace {

torch::Tensor gather_alpha(const DiffusionSchedule& schedule, const torch::Tensor& t,
                           const torch::Tensor& like) {
  auto table = torch::tensor(schedule.alpha_bar, torch::kFloat64);
  auto a = table.index_select(0, t.to(torch::kInt64)).to(like.scalar_type());
  std::vector<std::int64_t> view(static_cast<std::size_t>(like.dim()), 1);
  view[0] = t.size(0);
  return a.view(view);
}

}  // namespace

torch::Tensor diffusion_forward(const torch::Tensor& y0, const torch::Tensor& t,
                                const torch::Tensor& eps, const DiffusionSchedule& schedule) {
  if (y0.sizes() != eps.sizes()) {
    throw ValidationError("diffusion_forward: noise shape differs from label shape");
  }
  if (t.dim() != 1 || t.size(0) != y0.size(0)) {
    throw ValidationError("diffusion_forward: need one time step per batch item");
  }
  if (t.numel() > 0 &&
      (t.min().item<std::int64_t>() < 0 || t.max().item<std::int64_t>() >= schedule.steps)) {
    throw ValidationError("diffusion_forward: time step outside [0, T)");
  }
  auto a = gather_alpha(schedule, t, y0);
  return a.sqrt() * y0 + (1.0 - a).sqrt() * eps;
}

torch::Tensor diffusion_forward(const torch::Tensor& y0, std::int64_t t, const torch::Tensor& eps,
                                const DiffusionSchedule& schedule) {
  if (t < 0 || t >= schedule.steps) {
    throw ValidationError("diffusion_forward: time step " + std::to_string(t) + " outside [0, " +
                          std::to_string(schedule.steps) + ")");
  }
  if (y0.sizes() != eps.sizes()) {
    throw ValidationError("diffusion_forward: noise shape differs from label shape");
  }
  const double a = schedule.alpha_bar[static_cast<std::size_t>(t)];
  return std::sqrt(a) * y0 + std::sqrt(1.0 - a) * eps;
}

torch::Tensor ddim_pseudo_predict(const torch::Tensor& x_u, ModelBundleImpl& bundle,
                                  const DiffusionSchedule& schedule,
                                  const torch::Tensor& start_noise) {
  if (schedule.ddim_steps < 1) {
    throw ValidationError("ddim_pseudo_predict: ddim_steps must be >= 1");
  }
  const auto K = bundle.config().num_classes;
  if (start_noise.dim() != 5 || start_noise.size(1) != K || start_noise.size(0) != x_u.size(0) ||
      start_noise.sizes().slice(2) != x_u.sizes().slice(2)) {
    throw ValidationError("ddim_pseudo_predict: start noise must be (B, K, L, W, H)");
  }
  torch::NoGradGuard no_grad;
  auto y = start_noise.to(x_u.scalar_type());
  const auto times = schedule.ddim_timesteps();
  torch::Tensor logits;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const auto t = times[i];
    auto t_batch = torch::full({x_u.size(0)}, t, torch::kInt64);
    logits = forward_labeled_diffusion(bundle, x_u, y, t_batch);
    auto x0 = torch::softmax(logits, 1);
    const double a_t = schedule.alpha_bar[static_cast<std::size_t>(t)];
    const double a_prev =
        i + 1 < times.size() ? schedule.alpha_bar[static_cast<std::size_t>(times[i + 1])] : 1.0;
    auto eps = (y - std::sqrt(a_t) * x0) / std::sqrt(std::max(1.0 - a_t, 1e-12));
    y = std::sqrt(a_prev) * x0 + std::sqrt(1.0 - a_prev) * eps;
  }
  return torch::softmax(logits, 1);
}

torch::Tensor ddim_pseudo_predict(const torch::Tensor& x_u, ModelBundleImpl& bundle,
                                  const DiffusionSchedule& schedule, Rng& rng) {
  auto shape = x_u.sizes().vec();
  shape[1] = bundle.config().num_classes;
  auto noise = rng.normal_tensor(shape, x_u.scalar_type());
  return ddim_pseudo_predict(x_u, bundle, schedule, noise);
}

}  // namespace semiseg
