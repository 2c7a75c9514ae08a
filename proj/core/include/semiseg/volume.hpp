#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include <torch/torch.h>

namespace semiseg {

/// Spatial extent (L, W, H) of a volume.
struct Shape3 {
  std::int64_t l = 0;
  std::int64_t w = 0;
  std::int64_t h = 0;

  std::int64_t voxels() const { return l * w * h; }
  std::array<std::int64_t, 3> dims() const { return {l, w, h}; }
  std::vector<std::int64_t> vec() const { return {l, w, h}; }
  std::string str() const;

  friend bool operator==(const Shape3&, const Shape3&) = default;
};

Shape3 spatial_shape(const torch::Tensor& t);

/// One 3D image with an optional integer label map.
///
/// `image` is float32 (L, W, H) with intensities in [0, 1]; `label`, when
/// present, is int64 (L, W, H) with values in {0..K-1}.
struct VolumeSample {
  torch::Tensor image;
  std::optional<torch::Tensor> label;
  int domain_id = 0;
  std::string sample_id;

  Shape3 shape() const { return spatial_shape(image); }
  bool labeled() const { return label.has_value(); }
};

/// Checks the VolumeSample invariants; throws ValidationError.
void validate_sample(const VolumeSample& sample, std::int64_t num_classes);

/// (..., L, W, H) integer labels -> (..., K, L, W, H) one-hot of `dtype`.
/// Throws ValidationError if any value lies outside [0, K).
torch::Tensor one_hot_encode(const torch::Tensor& label, std::int64_t num_classes,
                             torch::Dtype dtype = torch::kFloat32);

}  // namespace semiseg
