#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "semiseg/config.hpp"
#include "semiseg/rng.hpp"
#include "semiseg/volume.hpp"

namespace semiseg {

/// Label-preserving intensity shift applied per domain.
struct DomainTransform {
  double gamma = 1.0;
  double bias_field_strength = 0.0;
  double noise_sigma = 0.0;
  bool contrast_inversion = false;

  friend bool operator==(const DomainTransform&, const DomainTransform&) = default;
};

/// Applies `transform` to an image in [0, 1]; the result is clamped to [0, 1].
torch::Tensor apply_domain_transform(const torch::Tensor& image, const DomainTransform& transform,
                                     Rng& rng);

struct DataConfig {
  std::int64_t num_classes = 3;
  Shape3 shape{32, 32, 32};
  std::int64_t samples_per_domain = 20;
  std::vector<DomainTransform> domains{
      {1.0, 0.10, 0.03, false},
      {0.7, 0.30, 0.06, false},
      {1.6, 0.20, 0.05, false},
  };
  double labeled_fraction = 0.1;
  std::vector<std::int64_t> test_domains{2};
  bool class_imbalance = false;
  /// Logistic sharpness of blob boundaries in the image (label is hard).
  double edge_sharpness = 8.0;

  void validate() const;
  static DataConfig from_config(const KeyValueConfig& kv);
  static const std::vector<ConfigKeyDoc>& schema();
};

struct SampleEntry {
  std::string id;
  int domain_id = 0;
  std::string image_file;
  std::string label_file;

  friend bool operator==(const SampleEntry&, const SampleEntry&) = default;
};

struct SplitEntry {
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;

  friend bool operator==(const SplitEntry&, const SplitEntry&) = default;
};

/// Index of a generated dataset; serialized as `manifest.json`.
struct DatasetManifest {
  std::int64_t num_classes = 0;
  Shape3 shape;
  std::uint64_t seed = 0;
  std::vector<DomainTransform> domains;
  std::vector<SampleEntry> samples;
  std::map<std::string, SplitEntry> splits;
  /// Directory holding the sample files; not serialized.
  std::filesystem::path root;

  const SampleEntry& sample(const std::string& id) const;
  const SplitEntry& split(const std::string& name) const;

  /// Structural equality, ignoring `root`.
  bool same_content(const DatasetManifest& other) const;
};

inline constexpr const char* kManifestFile = "manifest.json";

/// Draws one volume (image before domain shift + label). Pure in (config, rng).
VolumeSample generate_volume(const DataConfig& config, Rng& rng);

/// Generates, persists and indexes the whole dataset under `out_dir`.
DatasetManifest generate_dataset(const DataConfig& config, std::uint64_t seed,
                                 const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
/// Loads and validates; throws ConfigError if a referenced file is missing or
/// a split's labeled and unlabeled ids overlap.
DatasetManifest load_manifest(const std::filesystem::path& dir);

/// Reads one sample; `with_label` false drops the label even if on disk.
VolumeSample load_sample(const DatasetManifest& manifest, const std::string& id, bool with_label);

/// Labeled volumes in `labeled`, unlabeled volumes (labels stripped) in `unlabeled`.
struct Batch {
  std::vector<VolumeSample> labeled;
  std::vector<VolumeSample> unlabeled;
};

/// Uniform draw without replacement within one batch from a split.
Batch sample_batch(const DatasetManifest& manifest, const std::string& split, Rng& rng,
                   std::int64_t num_labeled = 2, std::int64_t num_unlabeled = 2);

/// Id-only variant of sample_batch, used for frequency checks and by callers
/// holding volumes in memory.
std::pair<std::vector<std::string>, std::vector<std::string>> sample_batch_ids(
    const DatasetManifest& manifest, const std::string& split, Rng& rng,
    std::int64_t num_labeled, std::int64_t num_unlabeled);

/// Raw little-endian file helpers.
void write_f32(const std::filesystem::path& path, const torch::Tensor& data);
torch::Tensor read_f32(const std::filesystem::path& path, const Shape3& shape);
void write_u8(const std::filesystem::path& path, const torch::Tensor& data);
torch::Tensor read_u8(const std::filesystem::path& path, const Shape3& shape);

}  // namespace semiseg
