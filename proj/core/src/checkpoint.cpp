#include <fstream>

#include "semiseg/error.hpp"
#include "semiseg/training.hpp"

namespace semiseg {

namespace fs = std::filesystem;

namespace {

constexpr const char* kCheckpointFormat = "semiseg-checkpoint";
constexpr const char* kExportFormat = "semiseg-inference";

void write_string(torch::serialize::OutputArchive& ar, const std::string& key, const std::string& value) {
  ar.write(key, c10::IValue(value));
}

void write_int(torch::serialize::OutputArchive& ar, const std::string& key, std::int64_t value) {
  ar.write(key, c10::IValue(value));
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  if (!ar.try_read(key, v) || !v.isString()) {
    throw ConfigError("archive entry '" + key + "' is missing or not a string");
  }
  return v.toStringRef();
}

std::int64_t read_int(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  if (!ar.try_read(key, v) || !v.isInt()) {
    throw ConfigError("archive entry '" + key + "' is missing or not an integer");
  }
  return v.toInt();
}

void load_archive(torch::serialize::InputArchive& ar, const fs::path& path) {
  if (!fs::exists(path)) {
    throw ConfigError("archive not found: " + path.string());
  }
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw ConfigError("cannot read archive " + path.string() + ": " + e.what_without_backtrace());
  }
}

void expect_format(torch::serialize::InputArchive& ar, const char* format, const fs::path& path) {
  const auto found = read_string(ar, "format");
  if (found != format) {
    throw ConfigError(path.string() + " is a '" + found + "' archive, expected '" + format + "'");
  }
}

torch::Dtype parameter_dtype(const torch::nn::Module& module) {
  auto params = module.parameters();
  return params.empty() ? torch::kFloat32 : params.front().scalar_type();
}

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& path) {
  torch::serialize::OutputArchive ar;
  write_string(ar, "format", kCheckpointFormat);
  write_int(ar, "version", kCheckpointVersion);
  write_string(ar, "config_text", state.config.canonical());
  write_int(ar, "config_hash", static_cast<std::int64_t>(state.config.hash()));
  write_string(ar, "net", state.config.net.to_json());
  write_string(ar, "decoder", export_decoder(state.config) == DecoderChoice::Theta ? "theta" : "psi");
  write_string(ar, "dtype", std::string(c10::toString(parameter_dtype(*state.bundle))));
  ar.write("alpha_bar", torch::tensor(state.schedule.alpha_bar, torch::kFloat64));

  torch::serialize::OutputArchive model;
  state.bundle->save(model);
  ar.write("bundle", model);
  torch::serialize::OutputArchive opt;
  state.optimizer->save(opt);
  ar.write("optimizer", opt);

  write_string(ar, "tracker", state.tracker.serialize());
  write_string(ar, "rng", state.rng.state());
  write_string(ar, "cursor", state.cursor.serialize());
  write_int(ar, "iteration", state.iteration);
  write_int(ar, "max_iterations", state.max_iterations);

  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  // Write then rename so an interrupted save never leaves a truncated file.
  const auto tmp = fs::path(path.string() + ".tmp");
  ar.save_to(tmp.string());
  fs::rename(tmp, path);
}

std::string checkpoint_config_text(const fs::path& path) {
  torch::serialize::InputArchive ar;
  load_archive(ar, path);
  expect_format(ar, kCheckpointFormat, path);
  return read_string(ar, "config_text");
}

TrainState load_checkpoint(const fs::path& path, const TrainConfig& config, bool allow_config_change) {
  torch::serialize::InputArchive ar;
  load_archive(ar, path);
  expect_format(ar, kCheckpointFormat, path);
  const auto version = read_int(ar, "version");
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  const auto stored_hash = static_cast<std::uint64_t>(read_int(ar, "config_hash"));
  if (!allow_config_change && stored_hash != config.hash()) {
    throw ConfigError("checkpoint " + path.string() +
                      " was written with a different configuration; stored:\n" +
                      read_string(ar, "config_text"));
  }
  const auto net = NetConfig::from_json(read_string(ar, "net"));
  if (!(net == config.net)) {
    throw ConfigError("checkpoint network shape differs from the configured one");
  }
  const auto dtype_name = read_string(ar, "dtype");
  const auto dtype = dtype_name == "Double" ? torch::kFloat64 : torch::kFloat32;

  TrainState state = TrainState::create(config, 1, 1, dtype);
  torch::serialize::InputArchive model;
  ar.read("bundle", model);
  state.bundle->load(model);
  torch::serialize::InputArchive opt;
  ar.read("optimizer", opt);
  state.optimizer->load(opt);

  torch::Tensor alpha_bar;
  ar.read("alpha_bar", alpha_bar);
  alpha_bar = alpha_bar.to(torch::kFloat64).contiguous();
  state.schedule = DiffusionSchedule::from_alpha_bar(
      std::vector<double>(alpha_bar.data_ptr<double>(), alpha_bar.data_ptr<double>() + alpha_bar.numel()),
      config.ddim_steps);
  state.tracker = DifficultyTracker::deserialize(read_string(ar, "tracker"), config.drs);
  state.rng.set_state(read_string(ar, "rng"));
  state.cursor.deserialize(read_string(ar, "cursor"));
  state.iteration = read_int(ar, "iteration");
  state.max_iterations = read_int(ar, "max_iterations");
  return state;
}

DecoderChoice export_decoder(const TrainConfig& config) {
  return config.supervised_only ? DecoderChoice::Psi : DecoderChoice::Theta;
}

void save_inference_export(ModelBundleImpl& bundle, DecoderChoice decoder, const fs::path& path) {
  auto model = make_inference_model(bundle, decoder);
  torch::serialize::OutputArchive ar;
  write_string(ar, "format", kExportFormat);
  write_int(ar, "version", kCheckpointVersion);
  write_string(ar, "net", bundle.config().to_json());
  write_string(ar, "decoder", decoder == DecoderChoice::Theta ? "theta" : "psi");
  write_string(ar, "dtype", std::string(c10::toString(parameter_dtype(*model))));
  torch::serialize::OutputArchive weights;
  model->save(weights);
  ar.write("model", weights);
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  ar.save_to(path.string());
}

InferenceModel load_inference_export(const fs::path& path) {
  torch::serialize::InputArchive ar;
  load_archive(ar, path);
  expect_format(ar, kExportFormat, path);
  const auto net = NetConfig::from_json(read_string(ar, "net"));
  InferenceModel model(net);
  if (read_string(ar, "dtype") == "Double") {
    model->to(torch::kFloat64);
  }
  torch::serialize::InputArchive weights;
  ar.read("model", weights);
  model->load(weights);
  model->eval();
  return model;
}

InferenceModel load_inference_model(const fs::path& path) {
  torch::serialize::InputArchive ar;
  load_archive(ar, path);
  const auto format = read_string(ar, "format");
  if (format == kExportFormat) {
    return load_inference_export(path);
  }
  if (format != kCheckpointFormat) {
    throw ConfigError(path.string() + " is neither a checkpoint nor an inference export");
  }
  const auto net = NetConfig::from_json(read_string(ar, "net"));
  ModelBundle bundle(net);
  if (read_string(ar, "dtype") == "Double") {
    bundle->to(torch::kFloat64);
  }
  torch::serialize::InputArchive model;
  ar.read("bundle", model);
  bundle->load(model);
  auto choice = read_string(ar, "decoder") == "psi" ? DecoderChoice::Psi : DecoderChoice::Theta;
  auto out = make_inference_model(*bundle, choice);
  out->eval();
  return out;
}

std::vector<std::string> archive_keys(const fs::path& path) {
  torch::serialize::InputArchive ar;
  load_archive(ar, path);
  return ar.keys();
}

}  // namespace semiseg
