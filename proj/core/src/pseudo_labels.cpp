#include "semiseg/pseudo_labels.hpp"

#include <cmath>

#include "semiseg/error.hpp"

namespace semiseg {

torch::Tensor gumbel_softmax(const torch::Tensor& scores, const torch::Tensor& gumbel, double tau) {
  if (!(tau > 0.0)) {
    throw ValidationError("gumbel_softmax: temperature must be positive");
  }
  return torch::softmax((scores + gumbel.to(scores.scalar_type())) / tau, 1);
}

torch::Tensor gaussian_blur3d(const torch::Tensor& maps, double sigma, std::int64_t kernel) {
  if (sigma <= 0.0 || kernel <= 1) {
    return maps;
  }
  if (kernel % 2 == 0) {
    throw ValidationError("gaussian_blur3d: kernel size must be odd");
  }
  const auto radius = kernel / 2;
  auto offsets = torch::arange(-radius, radius + 1, torch::kFloat64);
  auto weights = torch::exp(-offsets.square() / (2.0 * sigma * sigma));
  weights = (weights / weights.sum()).to(maps.scalar_type());

  const auto B = maps.size(0), C = maps.size(1);
  auto h = maps.reshape({B * C, 1, maps.size(2), maps.size(3), maps.size(4)});
  // One 1D pass per axis.
  const std::vector<std::vector<std::int64_t>> views = {
      {1, 1, kernel, 1, 1}, {1, 1, 1, kernel, 1}, {1, 1, 1, 1, kernel}};
  const std::vector<std::vector<std::int64_t>> pads = {
      {0, 0, 0, 0, radius, radius}, {0, 0, radius, radius, 0, 0}, {radius, radius, 0, 0, 0, 0}};
  for (int axis = 0; axis < 3; ++axis) {
    h = torch::nn::functional::pad(
        h, torch::nn::functional::PadFuncOptions(pads[static_cast<std::size_t>(axis)]).mode(torch::kReplicate));
    h = torch::conv3d(h, weights.view(views[static_cast<std::size_t>(axis)]));
  }
  return h.reshape(maps.sizes());
}

TeacherPrediction reparameterize_smooth(const torch::Tensor& p_xi, const torch::Tensor& psi_logits,
                                        const torch::Tensor& gumbel,
                                        const ReparamSmoothOptions& options) {
  if (p_xi.sizes() != psi_logits.sizes() || gumbel.sizes() != p_xi.sizes()) {
    throw ValidationError("reparameterize_smooth: map shapes differ");
  }
  torch::Tensor mixed;
  if (options.gumbel_on_psi) {
    mixed = 0.5 * (torch::softmax(p_xi, 1) + gumbel_softmax(psi_logits, gumbel, options.tau));
  } else {
    mixed = 0.5 * (gumbel_softmax(p_xi, gumbel, options.tau) + torch::softmax(psi_logits, 1));
  }
  auto blurred = gaussian_blur3d(mixed, options.blur_sigma, options.blur_kernel);
  auto total = blurred.sum(1, true);
  if (!(total > 0).all().item<bool>() || !torch::isfinite(total).all().item<bool>()) {
    throw ValidationError("reparameterize_smooth: a voxel has no probability mass to normalise");
  }
  return {blurred / total, TeacherSource::ReparamSmooth};
}

TeacherPrediction reparameterize_smooth(const torch::Tensor& p_xi, const torch::Tensor& psi_logits,
                                        const ReparamSmoothOptions& options, Rng& rng) {
  auto gumbel = rng.gumbel_tensor(p_xi.sizes(), p_xi.scalar_type());
  return reparameterize_smooth(p_xi, psi_logits, gumbel, options);
}

torch::Tensor entropy_map(const torch::Tensor& probs) {
  // xlogy gives 0 for p = 0.
  return -torch::xlogy(probs, probs).sum(1) / std::log(2.0);
}

EnsembledPrediction ensemble_predictions(const TeacherPrediction& t1, const TeacherPrediction& t2,
                                         EntropyWeightBase base) {
  if (t1.probs.sizes() != t2.probs.sizes()) {
    throw ValidationError("ensemble_predictions: teacher maps differ in shape");
  }
  EnsembledPrediction out;
  out.entropy_t1 = entropy_map(t1.probs);
  out.entropy_t2 = entropy_map(t2.probs);
  const double log_base = base == EntropyWeightBase::Two ? std::log(2.0) : 1.0;
  auto w1 = torch::exp(-log_base * out.entropy_t1).unsqueeze(1);
  auto w2 = torch::exp(-log_base * out.entropy_t2).unsqueeze(1);
  out.probs = (w1 * t1.probs + w2 * t2.probs) / (w1 + w2);
  out.hard = harden(out.probs);
  return out;
}

torch::Tensor harden(const torch::Tensor& probs) {
  // torch::argmax returns the first maximal index.
  return torch::argmax(probs, 1);
}

}  // namespace semiseg
