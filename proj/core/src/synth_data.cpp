#include "semiseg/synth_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "semiseg/error.hpp"

namespace semiseg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

const std::vector<ConfigKeyDoc>& DataConfig::schema() {
  static const std::vector<ConfigKeyDoc> keys = {
      {"num_classes", "3", "class count K including background"},
      {"shape", "[32, 32, 32]", "volume extent (L, W, H); each dim >= 16 and divisible by 16"},
      {"samples_per_domain", "20", "volumes generated per domain"},
      {"labeled_fraction", "0.1", "fraction of training volumes flagged labeled"},
      {"test_domains", "[2]", "domain ids held out as the 'test' split"},
      {"class_imbalance", "false", "shrink the last two classes"},
      {"edge_sharpness", "8.0", "logistic sharpness of blob boundaries in the image"},
      {"domain_gamma", "[1.0, 0.7, 1.6]", "per-domain intensity exponent"},
      {"domain_bias", "[0.1, 0.3, 0.2]", "per-domain bias field strength"},
      {"domain_noise", "[0.03, 0.06, 0.05]", "per-domain Gaussian noise sigma"},
      {"domain_invert", "[false, false, false]", "per-domain contrast inversion"},
  };
  return keys;
}

void DataConfig::validate() const {
  if (num_classes < 2) {
    throw ConfigError("num_classes must be >= 2");
  }
  for (auto d : shape.dims()) {
    if (d < 16 || d % 16 != 0) {
      throw ConfigError("shape " + shape.str() + " invalid: each dim must be >= 16 and divisible by 16");
    }
  }
  if (num_classes > 255) {
    throw ConfigError("num_classes must fit in an 8-bit label");
  }
  if (samples_per_domain < 1 || domains.empty()) {
    throw ConfigError("need at least one domain and one sample per domain");
  }
  if (labeled_fraction < 0.0 || labeled_fraction > 1.0) {
    throw ConfigError("labeled_fraction must lie in [0, 1]");
  }
  for (auto d : test_domains) {
    if (d < 0 || d >= static_cast<std::int64_t>(domains.size())) {
      throw ConfigError("test domain " + std::to_string(d) + " does not exist");
    }
  }
  for (const auto& t : domains) {
    if (t.gamma <= 0 || t.bias_field_strength < 0 || t.noise_sigma < 0) {
      throw ConfigError("domain transform requires gamma > 0, bias >= 0, noise >= 0");
    }
  }
}

DataConfig DataConfig::from_config(const KeyValueConfig& kv) {
  kv.check_known(schema());
  DataConfig cfg;
  cfg.num_classes = kv.get_int("num_classes", cfg.num_classes);
  auto dims = kv.get_int_list("shape", cfg.shape.vec());
  if (dims.size() != 3) {
    throw ConfigError("shape must have three entries");
  }
  cfg.shape = {dims[0], dims[1], dims[2]};
  cfg.samples_per_domain = kv.get_int("samples_per_domain", cfg.samples_per_domain);
  cfg.labeled_fraction = kv.get_double("labeled_fraction", cfg.labeled_fraction);
  cfg.test_domains = kv.get_int_list("test_domains", cfg.test_domains);
  cfg.class_imbalance = kv.get_bool("class_imbalance", cfg.class_imbalance);
  cfg.edge_sharpness = kv.get_double("edge_sharpness", cfg.edge_sharpness);

  std::vector<double> gamma, bias, noise;
  std::vector<bool> invert;
  for (const auto& d : cfg.domains) {
    gamma.push_back(d.gamma);
    bias.push_back(d.bias_field_strength);
    noise.push_back(d.noise_sigma);
    invert.push_back(d.contrast_inversion);
  }
  gamma = kv.get_double_list("domain_gamma", gamma);
  bias = kv.get_double_list("domain_bias", bias);
  noise = kv.get_double_list("domain_noise", noise);
  invert = kv.get_bool_list("domain_invert", std::vector<bool>(gamma.size(), false));
  if (bias.size() != gamma.size() || noise.size() != gamma.size() ||
      invert.size() != gamma.size()) {
    throw ConfigError("domain_gamma, domain_bias, domain_noise and domain_invert must have equal length");
  }
  cfg.domains.clear();
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    cfg.domains.push_back({gamma[i], bias[i], noise[i], static_cast<bool>(invert[i])});
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

torch::Tensor coordinate(const Shape3& s, int axis) {
  const std::int64_t n = s.dims()[axis];
  auto line = torch::arange(n, torch::kFloat64);
  std::vector<std::int64_t> view{1, 1, 1};
  view[axis] = n;
  return line.view(view).expand({s.l, s.w, s.h});
}

torch::Tensor smooth_field(const Shape3& s, Rng& rng) {
  // Sum of three low-frequency plane waves, scaled to [-1, 1].
  auto field = torch::zeros({s.l, s.w, s.h}, torch::kFloat64);
  for (int term = 0; term < 3; ++term) {
    auto phase = torch::full({s.l, s.w, s.h}, 2.0 * std::numbers::pi * rng.uniform(),
                             torch::kFloat64);
    for (int axis = 0; axis < 3; ++axis) {
      const double freq = 0.5 * rng.uniform();
      phase = phase + 2.0 * std::numbers::pi * freq * coordinate(s, axis) / s.dims()[axis];
    }
    field = field + torch::cos(phase);
  }
  return field / 3.0;
}

}  // namespace

torch::Tensor apply_domain_transform(const torch::Tensor& image, const DomainTransform& t,
                                     Rng& rng) {
  const auto s = spatial_shape(image);
  auto out = image.to(torch::kFloat64).clamp(0.0, 1.0).pow(t.gamma);
  if (t.bias_field_strength > 0) {
    out = out * (1.0 + t.bias_field_strength * smooth_field(s, rng));
  }
  if (t.contrast_inversion) {
    out = 1.0 - out;
  }
  if (t.noise_sigma > 0) {
    out = out + t.noise_sigma * rng.normal_tensor({s.l, s.w, s.h}, torch::kFloat64);
  }
  return out.clamp(0.0, 1.0).to(torch::kFloat32);
}

VolumeSample generate_volume(const DataConfig& config, Rng& rng) {
  const auto& s = config.shape;
  const auto K = config.num_classes;
  const auto dims = s.dims();
  torch::Tensor coords[3] = {coordinate(s, 0), coordinate(s, 1), coordinate(s, 2)};

  for (int attempt = 0;; ++attempt) {
    const double background = 0.08 + 0.06 * rng.uniform();
    auto image = torch::full({s.l, s.w, s.h}, background, torch::kFloat64);
    auto label = torch::zeros({s.l, s.w, s.h}, torch::kInt64);
    for (std::int64_t k = 1; k < K; ++k) {
      double scale = 1.0;
      if (config.class_imbalance) {
        if (k == K - 1) {
          scale = 0.3;
        } else if (k == K - 2) {
          scale = 0.6;
        }
      }
      auto rho2 = torch::zeros({s.l, s.w, s.h}, torch::kFloat64);
      for (int axis = 0; axis < 3; ++axis) {
        const double extent = static_cast<double>(dims[axis]);
        const double radius = std::max(1.0, (0.10 + 0.25 * rng.uniform()) * extent * scale);
        const double center = (0.3 + 0.4 * rng.uniform()) * extent;
        rho2 = rho2 + ((coords[axis] - center) / radius).square();
      }
      auto rho = rho2.sqrt();
      const double level =
          (K == 2 ? 0.7 : 0.35 + 0.55 * static_cast<double>(k - 1) / static_cast<double>(K - 2)) +
          0.1 * (rng.uniform() - 0.5);
      auto membership = torch::sigmoid(config.edge_sharpness * (1.0 - rho));
      image = (1.0 - membership) * image + membership * level;
      label = torch::where(rho < 1.0, torch::full_like(label, k), label);
    }
    image = image + 0.02 * rng.normal_tensor({s.l, s.w, s.h}, torch::kFloat64);

    auto counts = torch::bincount(label.flatten(), {}, K);
    const bool all_present = (counts > 0).all().item<bool>();
    if (all_present || attempt >= 50) {
      VolumeSample sample;
      sample.image = image.clamp(0.0, 1.0).to(torch::kFloat32);
      sample.label = label;
      return sample;
    }
  }
}

// ---------------------------------------------------------------------------
// Raw files

namespace {

template <typename T>
void write_raw(const fs::path& path, const torch::Tensor& data) {
  auto flat = data.contiguous();
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw RuntimeFailure("cannot write " + path.string());
  }
  const auto* ptr = flat.data_ptr<T>();
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(ptr), static_cast<std::streamsize>(flat.numel() * sizeof(T)));
  } else {
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(ptr[i]);
      std::reverse(bytes.begin(), bytes.end());
      out.write(bytes.data(), sizeof(T));
    }
  }
}

template <typename T>
torch::Tensor read_raw(const fs::path& path, const Shape3& shape, torch::Dtype dtype) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("missing sample file " + path.string());
  }
  auto out = torch::empty({shape.l, shape.w, shape.h}, dtype);
  auto* ptr = out.data_ptr<T>();
  const auto bytes = static_cast<std::streamsize>(out.numel() * sizeof(T));
  in.read(reinterpret_cast<char*>(ptr), bytes);
  if (in.gcount() != bytes) {
    throw ConfigError("sample file " + path.string() + " is truncated");
  }
  if constexpr (std::endian::native != std::endian::little) {
    for (std::int64_t i = 0; i < out.numel(); ++i) {
      auto b = std::bit_cast<std::array<char, sizeof(T)>>(ptr[i]);
      std::reverse(b.begin(), b.end());
      ptr[i] = std::bit_cast<T>(b);
    }
  }
  return out;
}

}  // namespace

void write_f32(const fs::path& path, const torch::Tensor& data) {
  write_raw<float>(path, data.to(torch::kFloat32));
}

torch::Tensor read_f32(const fs::path& path, const Shape3& shape) {
  return read_raw<float>(path, shape, torch::kFloat32);
}

void write_u8(const fs::path& path, const torch::Tensor& data) {
  write_raw<std::uint8_t>(path, data.to(torch::kUInt8));
}

torch::Tensor read_u8(const fs::path& path, const Shape3& shape) {
  return read_raw<std::uint8_t>(path, shape, torch::kUInt8);
}

// ---------------------------------------------------------------------------
// Manifest

const SampleEntry& DatasetManifest::sample(const std::string& id) const {
  auto it = std::find_if(samples.begin(), samples.end(),
                         [&](const SampleEntry& e) { return e.id == id; });
  if (it == samples.end()) {
    throw ConfigError("manifest has no sample '" + id + "'");
  }
  return *it;
}

const SplitEntry& DatasetManifest::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) {
    throw ConfigError("manifest has no split '" + name + "'");
  }
  return it->second;
}

bool DatasetManifest::same_content(const DatasetManifest& o) const {
  return num_classes == o.num_classes && shape == o.shape && seed == o.seed &&
         domains == o.domains && samples == o.samples && splits == o.splits;
}

DatasetManifest generate_dataset(const DataConfig& config, std::uint64_t seed,
                                 const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  manifest.num_classes = config.num_classes;
  manifest.shape = config.shape;
  manifest.seed = seed;
  manifest.domains = config.domains;
  manifest.root = out_dir;

  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::uint64_t index = 0;
  for (std::size_t d = 0; d < config.domains.size(); ++d) {
    for (std::int64_t n = 0; n < config.samples_per_domain; ++n, ++index) {
      Rng rng(mix_seed(seed, index));
      auto sample = generate_volume(config, rng);
      auto shifted = apply_domain_transform(sample.image, config.domains[d], rng);

      char id[32];
      std::snprintf(id, sizeof(id), "d%zu_s%04llu", d, static_cast<unsigned long long>(index));
      SampleEntry entry{id, static_cast<int>(d), std::string(id) + "_image.f32",
                        std::string(id) + "_label.u8"};
      write_f32(out_dir / entry.image_file, shifted);
      write_u8(out_dir / entry.label_file, *sample.label);
      manifest.samples.push_back(entry);

      const bool held_out = std::find(config.test_domains.begin(), config.test_domains.end(),
                                      static_cast<std::int64_t>(d)) != config.test_domains.end();
      (held_out ? test_ids : train_ids).push_back(entry.id);
    }
  }

  // Labeled subset of the training pool, chosen by a seed-derived shuffle.
  Rng split_rng(mix_seed(seed, 0xfeedULL));
  for (std::size_t i = train_ids.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(split_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(train_ids[i - 1], train_ids[j]);
  }
  auto num_labeled = static_cast<std::size_t>(
      std::llround(config.labeled_fraction * static_cast<double>(train_ids.size())));
  if (config.labeled_fraction > 0 && !train_ids.empty()) {
    num_labeled = std::max<std::size_t>(num_labeled, 1);
  }
  num_labeled = std::min(num_labeled, train_ids.size());
  SplitEntry train;
  train.labeled.assign(train_ids.begin(), train_ids.begin() + static_cast<std::ptrdiff_t>(num_labeled));
  train.unlabeled.assign(train_ids.begin() + static_cast<std::ptrdiff_t>(num_labeled), train_ids.end());
  std::sort(train.labeled.begin(), train.labeled.end());
  std::sort(train.unlabeled.begin(), train.unlabeled.end());
  manifest.splits["train"] = train;
  if (!test_ids.empty()) {
    manifest.splits["test"] = SplitEntry{test_ids, {}};
  }

  save_manifest(manifest, out_dir);
  return manifest;
}

void save_manifest(const DatasetManifest& m, const fs::path& dir) {
  json j;
  j["format"] = "semiseg-manifest";
  j["version"] = 1;
  j["num_classes"] = m.num_classes;
  j["shape"] = m.shape.vec();
  j["seed"] = m.seed;
  j["domains"] = json::array();
  for (std::size_t d = 0; d < m.domains.size(); ++d) {
    const auto& t = m.domains[d];
    j["domains"].push_back({{"id", d},
                            {"gamma", t.gamma},
                            {"bias_field_strength", t.bias_field_strength},
                            {"noise_sigma", t.noise_sigma},
                            {"contrast_inversion", t.contrast_inversion}});
  }
  j["samples"] = json::array();
  for (const auto& s : m.samples) {
    j["samples"].push_back(
        {{"id", s.id}, {"domain", s.domain_id}, {"image", s.image_file}, {"label", s.label_file}});
  }
  j["splits"] = json::object();
  for (const auto& [name, split] : m.splits) {
    j["splits"][name] = {{"labeled", split.labeled}, {"unlabeled", split.unlabeled}};
  }
  fs::create_directories(dir);
  std::ofstream out(dir / kManifestFile);
  if (!out) {
    throw RuntimeFailure("cannot write manifest in " + dir.string());
  }
  out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const fs::path& dir) {
  const auto path = dir / kManifestFile;
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("missing manifest " + path.string());
  }
  DatasetManifest m;
  try {
    json j = json::parse(in);
    if (j.value("format", "") != "semiseg-manifest" || j.value("version", 0) != 1) {
      throw ConfigError(path.string() + ": unsupported manifest format");
    }
    m.num_classes = j.at("num_classes").get<std::int64_t>();
    auto dims = j.at("shape").get<std::vector<std::int64_t>>();
    if (dims.size() != 3) {
      throw ConfigError(path.string() + ": shape must have three entries");
    }
    m.shape = {dims[0], dims[1], dims[2]};
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& d : j.at("domains")) {
      m.domains.push_back({d.at("gamma").get<double>(), d.at("bias_field_strength").get<double>(),
                           d.at("noise_sigma").get<double>(), d.at("contrast_inversion").get<bool>()});
    }
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(), s.at("domain").get<int>(),
                           s.at("image").get<std::string>(), s.at("label").get<std::string>()});
    }
    for (const auto& [name, split] : j.at("splits").items()) {
      m.splits[name] = {split.at("labeled").get<std::vector<std::string>>(),
                        split.at("unlabeled").get<std::vector<std::string>>()};
    }
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  m.root = dir;

  for (const auto& s : m.samples) {
    for (const auto& file : {s.image_file, s.label_file}) {
      if (!fs::exists(dir / file)) {
        throw ConfigError("manifest references missing file " + (dir / file).string());
      }
    }
  }
  for (const auto& [name, split] : m.splits) {
    std::set<std::string> labeled(split.labeled.begin(), split.labeled.end());
    for (const auto& id : split.unlabeled) {
      if (labeled.contains(id)) {
        throw ConfigError("split '" + name + "' lists '" + id + "' as both labeled and unlabeled");
      }
    }
    for (const auto& id : split.labeled) {
      (void)m.sample(id);
    }
    for (const auto& id : split.unlabeled) {
      (void)m.sample(id);
    }
  }
  return m;
}

VolumeSample load_sample(const DatasetManifest& m, const std::string& id, bool with_label) {
  const auto& entry = m.sample(id);
  VolumeSample sample;
  sample.sample_id = id;
  sample.domain_id = entry.domain_id;
  sample.image = read_f32(m.root / entry.image_file, m.shape);
  if (with_label) {
    sample.label = read_u8(m.root / entry.label_file, m.shape).to(torch::kInt64);
  }
  validate_sample(sample, m.num_classes);
  return sample;
}

// ---------------------------------------------------------------------------
// Batching

namespace {

std::vector<std::string> draw_without_replacement(const std::vector<std::string>& pool,
                                                  std::int64_t count, Rng& rng) {
  // Partial Fisher-Yates over an index copy.
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = i;
  }
  std::vector<std::string> out;
  for (std::int64_t i = 0; i < count; ++i) {
    auto j = static_cast<std::size_t>(rng.uniform_int(i, static_cast<std::int64_t>(idx.size()) - 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
    out.push_back(pool[idx[static_cast<std::size_t>(i)]]);
  }
  return out;
}

}  // namespace

std::pair<std::vector<std::string>, std::vector<std::string>> sample_batch_ids(
    const DatasetManifest& manifest, const std::string& split_name, Rng& rng,
    std::int64_t num_labeled, std::int64_t num_unlabeled) {
  const auto& split = manifest.split(split_name);
  if (static_cast<std::int64_t>(split.labeled.size()) < num_labeled ||
      static_cast<std::int64_t>(split.unlabeled.size()) < num_unlabeled) {
    throw ValidationError("split '" + split_name + "' has " + std::to_string(split.labeled.size()) +
                          " labeled and " + std::to_string(split.unlabeled.size()) +
                          " unlabeled samples; batch needs " + std::to_string(num_labeled) + " + " +
                          std::to_string(num_unlabeled));
  }
  auto labeled = draw_without_replacement(split.labeled, num_labeled, rng);
  auto unlabeled = draw_without_replacement(split.unlabeled, num_unlabeled, rng);
  return {labeled, unlabeled};
}

Batch sample_batch(const DatasetManifest& manifest, const std::string& split, Rng& rng,
                   std::int64_t num_labeled, std::int64_t num_unlabeled) {
  auto [labeled_ids, unlabeled_ids] =
      sample_batch_ids(manifest, split, rng, num_labeled, num_unlabeled);
  Batch batch;
  for (const auto& id : labeled_ids) {
    batch.labeled.push_back(load_sample(manifest, id, true));
  }
  for (const auto& id : unlabeled_ids) {
    batch.unlabeled.push_back(load_sample(manifest, id, false));
  }
  return batch;
}

}  // namespace semiseg
