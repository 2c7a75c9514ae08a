#include "semiseg/network.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "semiseg/error.hpp"

namespace semiseg {

namespace nn = torch::nn;

void NetConfig::validate() const {
  if (num_classes < 2 || base_width < 1 || stages < 1 || convs_per_stage < 0 || time_dim < 2 ||
      time_dim % 2 != 0 || feat_dim < 1 || corr_pool < 1) {
    throw ConfigError("invalid network configuration " + to_json());
  }
}

std::string NetConfig::to_json() const {
  nlohmann::json j = {{"num_classes", num_classes}, {"base_width", base_width},
                      {"stages", stages},           {"convs_per_stage", convs_per_stage},
                      {"time_dim", time_dim},       {"feat_dim", feat_dim},
                      {"corr_pool", corr_pool}};
  return j.dump();
}

NetConfig NetConfig::from_json(const std::string& text) {
  auto j = nlohmann::json::parse(text);
  NetConfig c;
  c.num_classes = j.at("num_classes").get<std::int64_t>();
  c.base_width = j.at("base_width").get<std::int64_t>();
  c.stages = j.at("stages").get<std::int64_t>();
  c.convs_per_stage = j.at("convs_per_stage").get<std::int64_t>();
  c.time_dim = j.at("time_dim").get<std::int64_t>();
  c.feat_dim = j.at("feat_dim").get<std::int64_t>();
  c.corr_pool = j.at("corr_pool").get<std::int64_t>();
  c.validate();
  return c;
}

torch::Tensor timestep_embedding(const torch::Tensor& t, std::int64_t dim, torch::Dtype dtype) {
  const auto half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, torch::kFloat64) /
                          static_cast<double>(half));
  auto args = t.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1).to(dtype);
}

namespace {

std::int64_t groups_for(std::int64_t channels) { return std::gcd(channels, std::int64_t{4}); }

torch::Tensor broadcast_channels(const torch::Tensor& v) {
  return v.view({v.size(0), v.size(1), 1, 1, 1});
}

}  // namespace

ConvBlockImpl::ConvBlockImpl(std::int64_t in, std::int64_t out) {
  conv = register_module("conv", nn::Conv3d(nn::Conv3dOptions(in, out, 3).padding(1)));
  norm = register_module("norm", nn::GroupNorm(nn::GroupNormOptions(groups_for(out), out)));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  return torch::silu(norm(conv(x)));
}

// ---------------------------------------------------------------------------

EncoderImpl::EncoderImpl(const NetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stem = register_module("stem", ConvBlock(cfg.num_classes + 1, cfg.width(0)));
  time_mlp = register_module(
      "time_mlp", nn::Sequential(nn::Linear(cfg.time_dim, cfg.time_dim), nn::SiLU()));
  downs = register_module("downs", nn::ModuleList());
  blocks = register_module("blocks", nn::ModuleList());
  time_proj = register_module("time_proj", nn::ModuleList());
  for (std::int64_t s = 0; s < cfg.stages; ++s) {
    if (s > 0) {
      downs->push_back(nn::Sequential(
          nn::Conv3d(nn::Conv3dOptions(cfg.width(s - 1), cfg.width(s), 2).stride(2)),
          nn::GroupNorm(nn::GroupNormOptions(groups_for(cfg.width(s)), cfg.width(s))),
          nn::SiLU()));
    }
    for (std::int64_t c = 0; c < cfg.convs_per_stage; ++c) {
      blocks->push_back(ConvBlock(cfg.width(s), cfg.width(s)));
    }
    time_proj->push_back(nn::Linear(cfg.time_dim, cfg.width(s)));
  }
}

std::vector<torch::Tensor> EncoderImpl::forward(const torch::Tensor& input, const torch::Tensor& t) {
  if (input.dim() != 5 || input.size(1) != cfg_.num_classes + 1) {
    throw ValidationError("encoder expects (B, K+1, L, W, H) input with K = " +
                          std::to_string(cfg_.num_classes));
  }
  const auto factor = std::int64_t{1} << (cfg_.stages - 1);
  for (int d = 2; d < 5; ++d) {
    if (input.size(d) % factor != 0) {
      throw ValidationError("encoder input extent must be divisible by " + std::to_string(factor));
    }
  }
  auto emb = time_mlp->forward(timestep_embedding(t, cfg_.time_dim, input.scalar_type()));
  std::vector<torch::Tensor> features;
  auto h = stem->forward(input);
  for (std::int64_t s = 0; s < cfg_.stages; ++s) {
    if (s > 0) {
      h = downs[static_cast<std::size_t>(s - 1)]->as<nn::Sequential>()->forward(h);
    }
    h = h + broadcast_channels(time_proj[static_cast<std::size_t>(s)]->as<nn::Linear>()->forward(emb));
    for (std::int64_t c = 0; c < cfg_.convs_per_stage; ++c) {
      h = h + blocks[static_cast<std::size_t>(s * cfg_.convs_per_stage + c)]->as<ConvBlockImpl>()->forward(h);
    }
    features.push_back(h);
  }
  return features;
}

// ---------------------------------------------------------------------------

DecoderImpl::DecoderImpl(const NetConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  ups = register_module("ups", nn::ModuleList());
  fuse = register_module("fuse", nn::ModuleList());
  for (std::int64_t s = cfg.stages - 1; s >= 1; --s) {
    ups->push_back(
        nn::ConvTranspose3d(nn::ConvTranspose3dOptions(cfg.width(s), cfg.width(s - 1), 2).stride(2)));
    fuse->push_back(ConvBlock(cfg.width(s - 1), cfg.width(s - 1)));
  }
  head = register_module("head", nn::Conv3d(nn::Conv3dOptions(cfg.width(0), cfg.num_classes, 1)));
}

torch::Tensor DecoderImpl::forward(const std::vector<torch::Tensor>& features) {
  if (static_cast<std::int64_t>(features.size()) != cfg_.stages) {
    throw ValidationError("decoder expects one feature map per encoder stage");
  }
  auto h = features.back();
  std::size_t level = 0;
  for (std::int64_t s = cfg_.stages - 1; s >= 1; --s, ++level) {
    h = ups[level]->as<nn::ConvTranspose3d>()->forward(h) + features[static_cast<std::size_t>(s - 1)];
    h = fuse[level]->as<ConvBlockImpl>()->forward(h);
  }
  return head(h);
}

void DecoderImpl::zero_head() {
  torch::NoGradGuard no_grad;
  head->weight.zero_();
  head->bias.zero_();
}

// ---------------------------------------------------------------------------

CorrelationHeadImpl::CorrelationHeadImpl(const NetConfig& cfg) : cfg_(cfg) {
  const auto deepest = cfg.width(cfg.stages - 1);
  proj1 = register_module("proj1", nn::Conv3d(nn::Conv3dOptions(deepest, cfg.feat_dim, 1)));
  proj2 = register_module("proj2", nn::Conv3d(nn::Conv3dOptions(deepest, cfg.feat_dim, 1)));
}

std::vector<std::int64_t> CorrelationHeadImpl::pooled_grid(at::IntArrayRef spatial) const {
  std::vector<std::int64_t> grid;
  for (auto d : spatial) {
    grid.push_back(std::min(d, cfg_.corr_pool));
  }
  return grid;
}

CorrelationFeatures CorrelationHeadImpl::forward(const torch::Tensor& deepest) {
  auto grid = pooled_grid(deepest.sizes().slice(2));
  auto pooled = torch::adaptive_avg_pool3d(deepest, grid);
  auto e1 = proj1(pooled).flatten(2);
  auto e2 = proj2(pooled).flatten(2);
  return {e1, e2};
}

// ---------------------------------------------------------------------------

ModelBundleImpl::ModelBundleImpl(const NetConfig& cfg) : cfg_(cfg) {
  encoder = register_module("encoder", Encoder(cfg));
  decoder_xi = register_module("decoder_xi", Decoder(cfg));
  decoder_psi = register_module("decoder_psi", Decoder(cfg));
  decoder_theta = register_module("decoder_theta", Decoder(cfg));
  corr_head = register_module("corr_head", CorrelationHead(cfg));
  teacher_encoder = register_module("teacher_encoder", Encoder(cfg));
  teacher_theta = register_module("teacher_theta", Decoder(cfg));
  for (auto& p : teacher_encoder->parameters()) {
    p.set_requires_grad(false);
  }
  for (auto& p : teacher_theta->parameters()) {
    p.set_requires_grad(false);
  }
  sync_teachers();
}

std::vector<torch::Tensor> ModelBundleImpl::student_parameters() const {
  std::vector<torch::Tensor> params;
  for (const auto* m : std::initializer_list<const nn::Module*>{
           encoder.get(), decoder_xi.get(), decoder_psi.get(), decoder_theta.get(), corr_head.get()}) {
    auto p = m->parameters();
    params.insert(params.end(), p.begin(), p.end());
  }
  return params;
}

void ModelBundleImpl::sync_teachers() {
  ema_update(*encoder, *teacher_encoder, 0.0);
  ema_update(*decoder_theta, *teacher_theta, 0.0);
}

// ---------------------------------------------------------------------------

torch::Tensor plain_input(const torch::Tensor& x, std::int64_t num_classes) {
  auto sizes = x.sizes().vec();
  sizes[1] = num_classes;
  return torch::cat({torch::zeros(sizes, x.options()), x}, 1);
}

torch::Tensor forward_labeled_diffusion(ModelBundleImpl& bundle, const torch::Tensor& x,
                                        const torch::Tensor& y_t, const torch::Tensor& t) {
  const auto K = bundle.config().num_classes;
  if (y_t.dim() != 5 || y_t.size(1) != K) {
    throw ValidationError("forward_labeled_diffusion: y_t must have K = " + std::to_string(K) +
                          " channels");
  }
  if (x.dim() != 5 || x.size(1) != 1 || x.size(0) != y_t.size(0) ||
      x.sizes().slice(2) != y_t.sizes().slice(2)) {
    throw ValidationError("forward_labeled_diffusion: image and noisy label shapes differ");
  }
  auto features = bundle.encoder->forward(torch::cat({y_t, x}, 1), t);
  return bundle.decoder_xi->forward(features);
}

PlainOutput forward_plain(ModelBundleImpl& bundle, const torch::Tensor& x, DecoderChoice decoder,
                          bool use_teacher) {
  if (use_teacher && decoder != DecoderChoice::Theta) {
    throw ValidationError("forward_plain: the teacher exists only for the theta decoder");
  }
  if (x.dim() != 5 || x.size(1) != 1) {
    throw ValidationError("forward_plain: expected (B, 1, L, W, H) images");
  }
  auto t = torch::zeros({x.size(0)}, torch::kInt64);
  auto input = plain_input(x, bundle.config().num_classes);
  PlainOutput out;
  if (use_teacher) {
    out.features = bundle.teacher_encoder->forward(input, t);
    out.logits = bundle.teacher_theta->forward(out.features);
  } else {
    out.features = bundle.encoder->forward(input, t);
    out.logits = decoder == DecoderChoice::Psi ? bundle.decoder_psi->forward(out.features)
                                               : bundle.decoder_theta->forward(out.features);
  }
  return out;
}

void ema_update(const nn::Module& student, nn::Module& teacher, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) {
    throw ValidationError("ema_update: gamma must lie in [0, 1]");
  }
  torch::NoGradGuard no_grad;
  auto src = student.named_parameters(true);
  auto dst = teacher.named_parameters(true);
  if (src.size() != dst.size()) {
    throw ValidationError("ema_update: student and teacher parameter structures differ");
  }
  for (auto& item : dst) {
    const auto* s = src.find(item.key());
    if (s == nullptr || s->sizes() != item.value().sizes()) {
      throw ValidationError("ema_update: no matching student parameter for '" + item.key() + "'");
    }
    item.value().mul_(gamma).add_(*s, 1.0 - gamma);
  }
}

void ema_update(ModelBundleImpl& bundle, double gamma) {
  ema_update(*bundle.encoder, *bundle.teacher_encoder, gamma);
  ema_update(*bundle.decoder_theta, *bundle.teacher_theta, gamma);
}

CorrelationFeatures correlation_features(ModelBundleImpl& bundle,
                                         const std::vector<torch::Tensor>& features) {
  return bundle.corr_head->forward(features.back());
}

CorrelationFeatures correlation_features(ModelBundleImpl& bundle, const torch::Tensor& x) {
  auto t = torch::zeros({x.size(0)}, torch::kInt64);
  auto features = bundle.encoder->forward(plain_input(x, bundle.config().num_classes), t);
  return correlation_features(bundle, features);
}

// ---------------------------------------------------------------------------

InferenceModelImpl::InferenceModelImpl(const NetConfig& cfg) : cfg_(cfg) {
  encoder = register_module("encoder", Encoder(cfg));
  decoder = register_module("decoder", Decoder(cfg));
}

torch::Tensor InferenceModelImpl::forward(const torch::Tensor& x) {
  auto t = torch::zeros({x.size(0)}, torch::kInt64);
  return decoder->forward(encoder->forward(plain_input(x, cfg_.num_classes), t));
}

InferenceModel make_inference_model(ModelBundleImpl& bundle, DecoderChoice decoder) {
  InferenceModel model(bundle.config());
  model->to(bundle.encoder->parameters().front().scalar_type());
  ema_update(*bundle.encoder, *model->encoder, 0.0);
  ema_update(decoder == DecoderChoice::Psi ? static_cast<nn::Module&>(*bundle.decoder_psi)
                                           : static_cast<nn::Module&>(*bundle.decoder_theta),
             *model->decoder, 0.0);
  return model;
}

std::int64_t count_parameters(const std::vector<torch::Tensor>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) {
    n += p.numel();
  }
  return n;
}

}  // namespace semiseg
