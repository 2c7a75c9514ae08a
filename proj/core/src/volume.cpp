#include "semiseg/volume.hpp"

#include <sstream>

#include "semiseg/error.hpp"

namespace semiseg {

std::string Shape3::str() const {
  std::ostringstream out;
  out << '(' << l << ", " << w << ", " << h << ')';
  return out.str();
}

Shape3 spatial_shape(const torch::Tensor& t) {
  if (t.dim() < 3) {
    throw ValidationError("expected a tensor with at least three spatial dims");
  }
  const auto d = t.dim();
  return {t.size(d - 3), t.size(d - 2), t.size(d - 1)};
}

void validate_sample(const VolumeSample& sample, std::int64_t num_classes) {
  if (!sample.image.defined() || sample.image.dim() != 3) {
    throw ValidationError("sample '" + sample.sample_id + "': image must be a 3D grid");
  }
  if (sample.image.numel() > 0 &&
      (sample.image.min().item<double>() < 0.0 || sample.image.max().item<double>() > 1.0)) {
    throw ValidationError("sample '" + sample.sample_id + "': intensities outside [0, 1]");
  }
  if (!sample.label) {
    return;
  }
  const auto& label = *sample.label;
  if (label.dim() != 3 || spatial_shape(label) != sample.shape()) {
    throw ValidationError("sample '" + sample.sample_id + "': label shape " +
                          spatial_shape(label).str() + " differs from image shape " +
                          sample.shape().str());
  }
  if (label.numel() > 0 &&
      (label.min().item<std::int64_t>() < 0 || label.max().item<std::int64_t>() >= num_classes)) {
    throw ValidationError("sample '" + sample.sample_id + "': label value outside [0, K)");
  }
}

torch::Tensor one_hot_encode(const torch::Tensor& label, std::int64_t num_classes,
                             torch::Dtype dtype) {
  if (num_classes < 1) {
    throw ValidationError("one_hot_encode: K must be positive");
  }
  auto as_long = label.to(torch::kInt64);
  if (as_long.numel() > 0) {
    const auto lo = as_long.min().item<std::int64_t>();
    const auto hi = as_long.max().item<std::int64_t>();
    if (lo < 0 || hi >= num_classes) {
      throw ValidationError("one_hot_encode: class " + std::to_string(hi >= num_classes ? hi : lo) +
                            " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  // (..., L, W, H, K) -> move K in front of the spatial dims.
  auto hot = torch::one_hot(as_long, num_classes).to(dtype);
  return hot.movedim(-1, -4).contiguous();
}

}  // namespace semiseg
