#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace semiseg {

/// Size knobs of the miniature encoder/decoder topology.
///
/// Stage i (0-based) runs at 1/2^i of the input resolution with
/// (i + 1) * base_width channels.
struct NetConfig {
  std::int64_t num_classes = 3;
  std::int64_t base_width = 8;
  std::int64_t stages = 3;
  std::int64_t convs_per_stage = 1;
  std::int64_t time_dim = 16;
  std::int64_t feat_dim = 16;
  std::int64_t corr_pool = 8;

  std::int64_t width(std::int64_t stage) const { return base_width * (stage + 1); }
  void validate() const;
  std::string to_json() const;
  static NetConfig from_json(const std::string& text);

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

/// Sinusoidal embedding of integer time steps, (B,) -> (B, dim).
torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim,
                                 torch::Dtype dtype = torch::kFloat32);

/// conv3x3x3 -> GroupNorm -> SiLU
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(std::int64_t in, std::int64_t out);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d conv{nullptr};
  torch::nn::GroupNorm norm{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Time-conditioned encoder shared by every flow.
///
/// Input has K + 1 channels: the (noisy) label channels followed by the image.
/// Plain flows feed zeros in the label channels and t = 0.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const NetConfig& cfg);
  /// Multi-scale features, finest first.
  std::vector<torch::Tensor> forward(const torch::Tensor& input, const torch::Tensor& t);

 private:
  NetConfig cfg_;
  ConvBlock stem{nullptr};
  torch::nn::Sequential time_mlp{nullptr};
  torch::nn::ModuleList downs{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::ModuleList time_proj{nullptr};
};
TORCH_MODULE(Encoder);

/// V-Net style decoder: transposed-conv upsampling, additive skips, 1x1x1 head.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const NetConfig& cfg);
  torch::Tensor forward(const std::vector<torch::Tensor>& features);
  /// Zeroes the classification head (weights and bias).
  void zero_head();

 private:
  NetConfig cfg_;
  torch::nn::ModuleList ups{nullptr};
  torch::nn::ModuleList fuse{nullptr};
  torch::nn::Conv3d head{nullptr};
};
TORCH_MODULE(Decoder);

/// Two per-position linear projections of pooled deepest encoder features.
struct CorrelationFeatures {
  torch::Tensor e1;  // (B, D_feat, P)
  torch::Tensor e2;  // (B, D_feat, P)
};

class CorrelationHeadImpl : public torch::nn::Module {
 public:
  explicit CorrelationHeadImpl(const NetConfig& cfg);
  CorrelationFeatures forward(const torch::Tensor& deepest);
  /// Pooled grid for a deepest feature map of extent `spatial`.
  std::vector<std::int64_t> pooled_grid(at::IntArrayRef spatial) const;

 private:
  NetConfig cfg_;
  torch::nn::Conv3d proj1{nullptr};
  torch::nn::Conv3d proj2{nullptr};
};
TORCH_MODULE(CorrelationHead);

/// Student encoder, three decoders, correlation head and the EMA teacher pair.
class ModelBundleImpl : public torch::nn::Module {
 public:
  explicit ModelBundleImpl(const NetConfig& cfg);

  const NetConfig& config() const { return cfg_; }
  /// Parameters the optimizer may update (everything except the teachers).
  std::vector<torch::Tensor> student_parameters() const;
  /// Copies student encoder / theta decoder weights into the teachers.
  void sync_teachers();

  Encoder encoder{nullptr};
  Decoder decoder_xi{nullptr};
  Decoder decoder_psi{nullptr};
  Decoder decoder_theta{nullptr};
  CorrelationHead corr_head{nullptr};
  Encoder teacher_encoder{nullptr};
  Decoder teacher_theta{nullptr};

 private:
  NetConfig cfg_;
};
TORCH_MODULE(ModelBundle);

enum class DecoderChoice { Psi, Theta };

/// Concatenates K zero label channels in front of an image batch (B, 1, ...).
torch::Tensor plain_input(const torch::Tensor& x, std::int64_t num_classes);

/// Diffusion flow: encoder(concat[y_t, x], t) -> diffusion decoder logits.
/// x: (B, 1, L, W, H); y_t: (B, K, L, W, H); t: (B,) int64.
torch::Tensor forward_labeled_diffusion(ModelBundleImpl& bundle, const torch::Tensor& x,
                                        const torch::Tensor& y_t, const torch::Tensor& t);

struct PlainOutput {
  torch::Tensor logits;
  std::vector<torch::Tensor> features;
};

/// Single pass without time conditioning (t = 0). `use_teacher` selects the
/// EMA encoder and theta decoder and is only valid with DecoderChoice::Theta.
PlainOutput forward_plain(ModelBundleImpl& bundle, const torch::Tensor& x, DecoderChoice decoder,
                          bool use_teacher);

/// teacher <- gamma * teacher + (1 - gamma) * student, matched by parameter name.
void ema_update(const torch::nn::Module& student, torch::nn::Module& teacher, double gamma);
/// EMA over both teacher pairs of a bundle.
void ema_update(ModelBundleImpl& bundle, double gamma);

CorrelationFeatures correlation_features(ModelBundleImpl& bundle,
                                         const std::vector<torch::Tensor>& features);
CorrelationFeatures correlation_features(ModelBundleImpl& bundle, const torch::Tensor& x);

/// Deployment model: encoder plus one segmentation decoder.
class InferenceModelImpl : public torch::nn::Module {
 public:
  explicit InferenceModelImpl(const NetConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);
  const NetConfig& config() const { return cfg_; }

  Encoder encoder{nullptr};
  Decoder decoder{nullptr};

 private:
  NetConfig cfg_;
};
TORCH_MODULE(InferenceModel);

/// Copies the student encoder and the chosen decoder into a fresh model.
InferenceModel make_inference_model(ModelBundleImpl& bundle, DecoderChoice decoder);

std::int64_t count_parameters(const std::vector<torch::Tensor>& params);

}  // namespace semiseg
