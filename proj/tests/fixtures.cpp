#include "fixtures.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace fixtures {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("semiseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

semiseg::NetConfig tiny_net(std::int64_t num_classes) {
  semiseg::NetConfig n;
  n.num_classes = num_classes;
  n.base_width = 2;
  n.stages = 2;
  n.convs_per_stage = 0;
  n.time_dim = 4;
  n.feat_dim = 2;
  n.corr_pool = 2;
  return n;
}

semiseg::TrainConfig tiny_train_config() {
  semiseg::TrainConfig c;
  c.net = tiny_net();
  c.diffusion_steps = 50;
  c.ddim_steps = 2;
  c.patch_size = 2;
  c.max_iterations = 10;
  c.gamma_ema = 0.9;
  return c;
}

semiseg::BatchTensors tiny_batch(std::uint64_t seed, std::int64_t nl, std::int64_t nu,
                                 std::int64_t num_classes, torch::Dtype dtype, std::int64_t edge) {
  semiseg::Rng rng(seed);
  semiseg::BatchTensors b;
  b.x_l = rng.uniform_tensor({nl, 1, edge, edge, edge}, dtype);
  auto labels = torch::empty({nl, edge, edge, edge}, torch::kInt64);
  auto* d = labels.data_ptr<std::int64_t>();
  for (std::int64_t i = 0; i < labels.numel(); ++i) {
    d[i] = rng.uniform_int(0, num_classes - 1);
  }
  b.y_l = labels;
  b.x_u = rng.uniform_tensor({nu, 1, edge, edge, edge}, dtype);
  return b;
}

semiseg::DatasetManifest small_dataset(const fs::path& dir, std::int64_t per_domain,
                                       std::int64_t num_classes, std::uint64_t seed) {
  semiseg::DataConfig cfg;
  cfg.num_classes = num_classes;
  cfg.shape = {16, 16, 16};
  cfg.samples_per_domain = per_domain;
  cfg.labeled_fraction = 0.5;
  return semiseg::generate_dataset(cfg, seed, dir);
}

semiseg::TrainConfig small_run_config(const fs::path& data, const fs::path& out) {
  semiseg::TrainConfig c;
  c.data_dir = data.string();
  c.out_dir = out.string();
  c.net = tiny_net();
  c.net.base_width = 4;
  c.diffusion_steps = 100;
  c.ddim_steps = 2;
  c.max_iterations = 6;
  return c;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fixtures
