#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "semiseg/config.hpp"
#include "semiseg/difficulty.hpp"
#include "semiseg/diffusion.hpp"
#include "semiseg/label_propagation.hpp"
#include "semiseg/losses.hpp"
#include "semiseg/masking.hpp"
#include "semiseg/network.hpp"
#include "semiseg/pseudo_labels.hpp"
#include "semiseg/rng.hpp"
#include "semiseg/synth_data.hpp"

namespace semiseg {

enum class TeacherMode { Ensemble, ReparamOnly, MeanTeacherOnly };
enum class PseudoLabelSource { Ensemble, XiPsi };

/// Every knob of a training run. Keys and defaults are listed by schema().
struct TrainConfig {
  std::uint64_t seed = 0;
  std::string data_dir = "data";
  std::string out_dir = "runs/default";
  std::string train_split = "train";
  std::string eval_split = "test";

  double lr_init = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::int64_t epochs = 20;
  std::int64_t iterations_per_epoch = 0;  // 0: ceil(unlabeled / unlabeled_per_batch)
  std::int64_t max_iterations = 0;        // 0: epochs * iterations_per_epoch
  std::int64_t labeled_per_batch = 2;
  std::int64_t unlabeled_per_batch = 2;

  double mask_ratio = 0.5;
  std::int64_t patch_size = 0;  // 0: extent / 16
  FractionRange cutmix{0.2, 0.5};
  LossWeights weights;
  double gamma_ema = 0.99;

  std::int64_t diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::int64_t ddim_steps = 10;

  ReparamSmoothOptions rs;
  DifficultyOptions drs;

  bool enable_mic = true;
  bool enable_kd = true;
  bool enable_rec = true;
  bool enable_corr = true;
  bool supervised_only = false;
  TeacherMode teacher_mode = TeacherMode::Ensemble;
  EntropyWeightBase entropy_base = EntropyWeightBase::Two;
  PseudoLabelSource pseudo_source = PseudoLabelSource::Ensemble;
  CorrelationScaling corr_scaling = CorrelationScaling::InsideSoftmax;

  NetConfig net;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const;
  /// Resolved configuration as canonical `key = value` text.
  std::string canonical() const;
  std::uint64_t hash() const { return fnv1a64(canonical()); }

  static TrainConfig from_config(const KeyValueConfig& kv);
  static const std::vector<ConfigKeyDoc>& schema();
};

/// lr_init * (1 - i / I)^0.9, 0 once i >= I.
double lr_schedule(double lr_init, std::int64_t iteration, std::int64_t max_iterations);

/// Batch as dense tensors.
struct BatchTensors {
  torch::Tensor x_l;  // (NL, 1, L, W, H)
  torch::Tensor y_l;  // (NL, L, W, H) int64
  torch::Tensor x_u;  // (NU, 1, L, W, H)

  static BatchTensors from_batch(const Batch& batch, torch::Dtype dtype = torch::kFloat32);
};

/// All random draws of one iteration, taken up front in a fixed order.
struct StepDraws {
  torch::Tensor t_l;           // (NL,) diffusion steps
  torch::Tensor eps_l;         // (NL, K, ...) forward noise
  torch::Tensor ddim_noise;    // (NU, K, ...) sampler start
  torch::Tensor gumbel;        // (NU, K, ...)
  std::vector<std::int64_t> mix_partner;  // index into [labeled..., unlabeled...]
  torch::Tensor mix_masks;     // (NU, L, W, H)
  torch::Tensor patch_masks;   // (NL + NU, L, W, H)
};

StepDraws draw_step(const BatchTensors& batch, const TrainConfig& cfg, Rng& rng);

/// Detached supervision for the student pass.
struct StepTargets {
  torch::Tensor probs_u_xi;       // DDIM map
  torch::Tensor probs_u_psi;      // softmax of psi on unlabeled
  torch::Tensor teacher1;         // reparameterize-and-smooth map
  torch::Tensor teacher2;         // mean-teacher map
  EnsembledPrediction ensemble;
  torch::Tensor pseudo;           // (NU, ...) hard labels used for supervision
  torch::Tensor x_mix;            // (NU, 1, ...)
  torch::Tensor y_mix;            // (NU, ...)
  torch::Tensor x_masked;         // (NL + NU, 1, ...)
  torch::Tensor teacher_logits;   // (NL + NU, K, ...)
  torch::Tensor pooled_u;         // (NU, P)
  torch::Tensor pooled_l;         // (NL, P)
};

/// Builds pseudo-labels, mixed and masked inputs without gradient.
StepTargets build_targets(ModelBundleImpl& bundle, const BatchTensors& batch,
                          const StepDraws& draws, const TrainConfig& cfg,
                          const DiffusionSchedule& schedule);

/// Student losses with gradient. When `update_tracker` is set, the tracker
/// first absorbs the per-class Dice of the diffusion prediction; the current
/// tracker weights then scale the difficulty-aware loss.
LossComponents student_losses(ModelBundleImpl& bundle, const BatchTensors& batch,
                              const StepDraws& draws, const StepTargets* targets,
                              const TrainConfig& cfg, const DiffusionSchedule& schedule,
                              DifficultyTracker& tracker, bool update_tracker);

/// Scalar summary of one iteration.
struct StepReport {
  std::int64_t iteration = 0;
  double lr = 0.0;
  double total = 0.0;
  double deno = 0, diff = 0, u = 0, mix = 0, mic = 0, kd = 0, rec = 0, corr = 0;
  std::vector<double> class_weights;
};

/// Draw order over the labeled and unlabeled pools; each pool is cycled with
/// a reshuffle whenever it is exhausted.
class BatchCursor {
 public:
  BatchCursor() = default;
  BatchCursor(std::int64_t num_labeled, std::int64_t num_unlabeled, std::uint64_t seed);

  /// Indices into the labeled and unlabeled pools for the next batch.
  std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> next(std::int64_t labeled,
                                                                       std::int64_t unlabeled);
  std::string serialize() const;
  void deserialize(const std::string& text);

 private:
  struct Pool {
    std::vector<std::int64_t> order;
    std::size_t position = 0;
  };
  std::int64_t take(Pool& pool);
  void reshuffle(Pool& pool);

  Pool labeled_, unlabeled_;
  Rng rng_;
};

/// Mutable training state; exclusively owned by the loop.
struct TrainState {
  TrainConfig config;
  ModelBundle bundle{nullptr};
  std::unique_ptr<torch::optim::SGD> optimizer;
  DifficultyTracker tracker{2};
  DiffusionSchedule schedule;
  Rng rng;
  BatchCursor cursor;
  std::int64_t iteration = 0;
  std::int64_t max_iterations = 1;

  /// Fresh state: seeded weights, teachers synced, cursor over the pools.
  static TrainState create(const TrainConfig& config, std::int64_t num_labeled,
                           std::int64_t num_unlabeled, torch::Dtype dtype = torch::kFloat32);
};

/// Number of iterations implied by the config for the given pool sizes.
std::int64_t planned_iterations(const TrainConfig& config, std::int64_t num_unlabeled);

/// One optimization step: draws, targets, student losses, SGD update, EMA.
/// Throws RuntimeFailure naming the component if any loss is non-finite.
StepReport train_step(TrainState& state, const BatchTensors& batch);

/// In-memory pools of a training split.
struct TrainingPools {
  std::vector<VolumeSample> labeled;
  std::vector<VolumeSample> unlabeled;

  static TrainingPools load(const DatasetManifest& manifest, const std::string& split);
  Batch gather(const std::vector<std::int64_t>& labeled_idx,
               const std::vector<std::int64_t>& unlabeled_idx) const;
};

struct RunOptions {
  /// Resume from this checkpoint instead of starting fresh.
  std::optional<std::filesystem::path> resume;
  /// Stop (with a checkpoint) after this many total iterations.
  std::optional<std::int64_t> stop_after;
  /// Called after every step.
  std::function<void(const StepReport&)> on_step;
};

struct RunResult {
  std::vector<StepReport> reports;
  std::filesystem::path checkpoint;
  std::filesystem::path export_path;
};

/// Full loop: writes `losses.csv`, periodic and final checkpoints, and the
/// inference export `model_export.pt` under config.out_dir.
RunResult run_training(const TrainConfig& config, const DatasetManifest& manifest,
                       const RunOptions& options = {});

/// Loss log CSV helpers.
std::string loss_csv_header(std::int64_t num_classes);
std::string loss_csv_row(const StepReport& report, const LossWeights& weights);

// -- checkpoints -----------------------------------------------------------

inline constexpr std::int64_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// Restores a state; the stored config hash must match `config`'s unless
/// `allow_config_change` is set.
TrainState load_checkpoint(const std::filesystem::path& path, const TrainConfig& config,
                           bool allow_config_change = false);
/// Reads the configuration text stored in a checkpoint.
std::string checkpoint_config_text(const std::filesystem::path& path);

/// Decoder used for deployment: theta normally, psi for supervised-only runs.
DecoderChoice export_decoder(const TrainConfig& config);
void save_inference_export(ModelBundleImpl& bundle, DecoderChoice decoder,
                           const std::filesystem::path& path);
InferenceModel load_inference_export(const std::filesystem::path& path);
/// Accepts an inference export or a training checkpoint (exported decoder).
InferenceModel load_inference_model(const std::filesystem::path& path);
/// Top-level key names of a serialized archive.
std::vector<std::string> archive_keys(const std::filesystem::path& path);

}  // namespace semiseg
