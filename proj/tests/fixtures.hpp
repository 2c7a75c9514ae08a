#pragma once

#include <filesystem>
#include <string>

#include "semiseg/synth_data.hpp"
#include "semiseg/training.hpp"

namespace fixtures {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

/// Two-class network small enough for finite differences (under 1000 parameters).
semiseg::NetConfig tiny_net(std::int64_t num_classes = 2);

/// Training config for 4^3 volumes with the tiny network.
semiseg::TrainConfig tiny_train_config();

/// Random batch of 4^3 volumes.
semiseg::BatchTensors tiny_batch(std::uint64_t seed, std::int64_t nl = 2, std::int64_t nu = 2,
                                 std::int64_t num_classes = 2, torch::Dtype dtype = torch::kFloat64,
                                 std::int64_t edge = 4);

/// Small 16^3 dataset: 3 domains x `per_domain` samples, half labeled.
semiseg::DatasetManifest small_dataset(const std::filesystem::path& dir, std::int64_t per_domain = 4,
                                       std::int64_t num_classes = 2, std::uint64_t seed = 3);

/// Training config for `small_dataset` runs.
semiseg::TrainConfig small_run_config(const std::filesystem::path& data, const std::filesystem::path& out);

std::string read_file(const std::filesystem::path& path);

}  // namespace fixtures
