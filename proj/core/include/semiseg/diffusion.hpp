#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "semiseg/network.hpp"
#include "semiseg/rng.hpp"

namespace semiseg {

/// Cumulative signal levels alpha_bar_t for t in [0, T), alpha_bar_0 = 1.
struct DiffusionSchedule {
  std::int64_t steps = 1000;
  std::vector<double> alpha_bar;
  std::int64_t ddim_steps = 10;

  /// Linear beta schedule; beta_t for t = 1..T-1 spaced in [beta_start, beta_end].
  static DiffusionSchedule linear(std::int64_t steps = 1000, double beta_start = 1e-4,
                                  double beta_end = 0.02, std::int64_t ddim_steps = 10);
  /// Schedule with caller-supplied alpha_bar (tests, limiting cases).
  static DiffusionSchedule from_alpha_bar(std::vector<double> alpha_bar, std::int64_t ddim_steps);

  void validate() const;
  /// Descending time steps visited by the DDIM sampler, starting at T-1.
  std::vector<std::int64_t> ddim_timesteps() const;
};

/// y_t = sqrt(a_t) * y0 + sqrt(1 - a_t) * eps with a_t = alpha_bar[t].
/// `t` holds one step per batch item (B,); y0 and eps are (B, K, ...).
torch::Tensor diffusion_forward(const torch::Tensor& y0, const torch::Tensor& t,
                                const torch::Tensor& eps, const DiffusionSchedule& schedule);
torch::Tensor diffusion_forward(const torch::Tensor& y0, std::int64_t t, const torch::Tensor& eps,
                                const DiffusionSchedule& schedule);

/// Deterministic (eta = 0) DDIM sampling through the diffusion flow, starting
/// from `start_noise` (B, K, L, W, H). The decoder predicts the clean label;
/// its softmax is the x0 estimate at every step. Returns softmax of the final
/// prediction. Runs without gradient.
torch::Tensor ddim_pseudo_predict(const torch::Tensor& x_u, ModelBundleImpl& bundle,
                                  const DiffusionSchedule& schedule,
                                  const torch::Tensor& start_noise);
/// Draws the start noise from `rng`.
torch::Tensor ddim_pseudo_predict(const torch::Tensor& x_u, ModelBundleImpl& bundle,
                                  const DiffusionSchedule& schedule, Rng& rng);

}  // namespace semiseg
