#include "semiseg/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

namespace semiseg {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  // 53 random mantissa bits.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) {
    throw std::invalid_argument("Rng::uniform_int: empty range");
  }
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) {
    return static_cast<std::int64_t>(engine_());
  }
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t draw = engine_();
  while (draw >= limit) {
    draw = engine_();
  }
  return lo + static_cast<std::int64_t>(draw % span);
}

double Rng::normal() {
  // Box-Muller, one value per call so the stream never carries a cached half.
  double u1 = uniform();
  while (u1 <= 0.0) {
    u1 = uniform();
  }
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

namespace {

template <typename Fn>
torch::Tensor fill(at::IntArrayRef shape, torch::Dtype dtype, Fn&& draw) {
  auto out = torch::empty(shape, torch::TensorOptions().dtype(torch::kFloat64));
  auto* data = out.data_ptr<double>();
  const auto n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    data[i] = draw();
  }
  return out.to(dtype);
}

}  // namespace

torch::Tensor Rng::normal_tensor(at::IntArrayRef shape, torch::Dtype dtype) {
  return fill(shape, dtype, [this] { return normal(); });
}

torch::Tensor Rng::uniform_tensor(at::IntArrayRef shape, torch::Dtype dtype) {
  return fill(shape, dtype, [this] { return uniform(); });
}

torch::Tensor Rng::gumbel_tensor(at::IntArrayRef shape, torch::Dtype dtype) {
  return fill(shape, dtype, [this] {
    double u = uniform();
    while (u <= 0.0) {
      u = uniform();
    }
    return -std::log(-std::log(u));
  });
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  if (in.fail()) {
    throw std::invalid_argument("Rng::set_state: malformed state string");
  }
}

Rng Rng::fork(std::uint64_t salt) { return Rng(mix_seed(engine_(), salt)); }

}  // namespace semiseg
