#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <torch/torch.h>

namespace semiseg {

/// Seedable random source shared by data generation, masking and training.
///
/// Everything stochastic in the library draws from an explicit Rng so that a
/// run is a pure function of its seeds. The state serializes to text for
/// checkpoints. Distributions are implemented here rather than through
/// <random> so that streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();

  /// Tensors filled element by element in row-major order.
  torch::Tensor normal_tensor(at::IntArrayRef shape, torch::Dtype dtype = torch::kFloat32);
  torch::Tensor uniform_tensor(at::IntArrayRef shape, torch::Dtype dtype = torch::kFloat32);
  /// Standard Gumbel(0, 1) samples, -log(-log u).
  torch::Tensor gumbel_tensor(at::IntArrayRef shape, torch::Dtype dtype = torch::kFloat32);

  std::string state() const;
  void set_state(const std::string& state);

  /// Independent child stream, deterministic in (this stream, salt).
  Rng fork(std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer, used to derive per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace semiseg
