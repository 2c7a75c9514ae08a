#include "semiseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "semiseg/error.hpp"

namespace semiseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

const std::vector<ConfigKeyDoc>& TrainConfig::schema() {
  static const std::vector<ConfigKeyDoc> keys = {
      {"seed", "0", "seed for weights, draws and data order"},
      {"data_dir", "data", "dataset directory holding manifest.json"},
      {"out_dir", "runs/default", "run output directory (relative paths honour SEMISEG_OUTPUT_ROOT)"},
      {"train_split", "train", "split used for training"},
      {"eval_split", "test", "split used by evaluation after training"},
      {"lr_init", "0.01", "initial SGD learning rate"},
      {"momentum", "0.9", "SGD momentum"},
      {"weight_decay", "1e-4", "SGD weight decay"},
      {"epochs", "20", "passes over the unlabeled pool"},
      {"iterations_per_epoch", "0", "0 derives it from the unlabeled pool size"},
      {"max_iterations", "0", "total iterations I; 0 means epochs * iterations_per_epoch"},
      {"labeled_per_batch", "2", "labeled volumes per batch"},
      {"unlabeled_per_batch", "2", "unlabeled volumes per batch"},
      {"mask_ratio", "0.5", "patch mask ratio r"},
      {"patch_size", "0", "patch edge b; 0 means 1/16 of the volume extent"},
      {"cutmix_min", "0.2", "smallest CutMix box volume fraction"},
      {"cutmix_max", "0.5", "largest CutMix box volume fraction"},
      {"alpha", "2.0", "weight of the masked consistency loss"},
      {"beta", "0.1", "weight of the distillation loss"},
      {"gamma", "0.2", "weight of the masked reconstruction loss"},
      {"eta", "1.2", "weight of the correlation loss"},
      {"unlabeled_weight", "0.0", "weight of the plain unlabeled pseudo-label loss"},
      {"gamma_ema", "0.99", "mean-teacher EMA decay"},
      {"diffusion_steps", "1000", "diffusion length T"},
      {"beta_start", "1e-4", "first beta of the linear noise schedule"},
      {"beta_end", "0.02", "last beta of the linear noise schedule"},
      {"ddim_steps", "10", "DDIM sampling steps for pseudo-labels"},
      {"gumbel_tau", "1.0", "Gumbel-Softmax temperature"},
      {"blur_sigma", "1.0", "Gaussian blur sigma (0 disables)"},
      {"blur_kernel", "3", "Gaussian blur kernel edge"},
      {"gumbel_on_psi", "false", "perturb the psi logits instead of the diffusion map"},
      {"drs_window", "50", "difficulty accumulation window tau"},
      {"drs_alpha", "0.2", "difficulty exponent"},
      {"drs_w_min", "0.1", "floor of the difficulty weights"},
      {"drs_lambda_weighting", "inverse_dice", "inverse_dice or constant"},
      {"enable_mic", "true", "masked consistency loss on/off"},
      {"enable_kd", "true", "distillation loss on/off"},
      {"enable_rec", "true", "masked reconstruction loss on/off"},
      {"enable_corr", "true", "correlation loss on/off"},
      {"supervised_only", "false", "train only the denoising and difficulty-aware losses"},
      {"teacher_mode", "ensemble", "ensemble, t1 (reparam-smooth only) or t2 (mean teacher only)"},
      {"ensemble_weight_base", "2", "teacher trust weight base^(-entropy): 2 or e"},
      {"pseudo_label_source", "ensemble", "ensemble or xi_psi (teacher-1 argmax)"},
      {"corr_scaling", "inside", "inside: softmax(x/sqrt(D)); outside: softmax(x)/sqrt(D)"},
      {"checkpoint_every", "0", "periodic checkpoint interval; 0 writes only the final one"},
      {"model.base_width", "8", "channels of the first stage"},
      {"model.stages", "3", "encoder resolution stages"},
      {"model.convs_per_stage", "1", "residual conv blocks per encoder stage"},
      {"model.time_dim", "16", "time embedding width (even)"},
      {"model.feat_dim", "16", "correlation feature width D"},
      {"model.corr_pool", "8", "pooled grid edge for the correlation map"},
  };
  return keys;
}

namespace {

std::string teacher_mode_name(TeacherMode m) {
  switch (m) {
    case TeacherMode::ReparamOnly: return "t1";
    case TeacherMode::MeanTeacherOnly: return "t2";
    default: return "ensemble";
  }
}

}  // namespace

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  kv.check_known(schema());
  TrainConfig c;
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.data_dir = kv.get_string("data_dir", c.data_dir);
  c.out_dir = kv.get_string("out_dir", c.out_dir);
  c.train_split = kv.get_string("train_split", c.train_split);
  c.eval_split = kv.get_string("eval_split", c.eval_split);
  c.lr_init = kv.get_double("lr_init", c.lr_init);
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.epochs = kv.get_int("epochs", c.epochs);
  c.iterations_per_epoch = kv.get_int("iterations_per_epoch", c.iterations_per_epoch);
  c.max_iterations = kv.get_int("max_iterations", c.max_iterations);
  c.labeled_per_batch = kv.get_int("labeled_per_batch", c.labeled_per_batch);
  c.unlabeled_per_batch = kv.get_int("unlabeled_per_batch", c.unlabeled_per_batch);
  c.mask_ratio = kv.get_double("mask_ratio", c.mask_ratio);
  c.patch_size = kv.get_int("patch_size", c.patch_size);
  c.cutmix.lo = kv.get_double("cutmix_min", c.cutmix.lo);
  c.cutmix.hi = kv.get_double("cutmix_max", c.cutmix.hi);
  c.weights.alpha = kv.get_double("alpha", c.weights.alpha);
  c.weights.beta = kv.get_double("beta", c.weights.beta);
  c.weights.gamma = kv.get_double("gamma", c.weights.gamma);
  c.weights.eta = kv.get_double("eta", c.weights.eta);
  c.weights.unlabeled = kv.get_double("unlabeled_weight", c.weights.unlabeled);
  c.gamma_ema = kv.get_double("gamma_ema", c.gamma_ema);
  c.diffusion_steps = kv.get_int("diffusion_steps", c.diffusion_steps);
  c.beta_start = kv.get_double("beta_start", c.beta_start);
  c.beta_end = kv.get_double("beta_end", c.beta_end);
  c.ddim_steps = kv.get_int("ddim_steps", c.ddim_steps);
  c.rs.tau = kv.get_double("gumbel_tau", c.rs.tau);
  c.rs.blur_sigma = kv.get_double("blur_sigma", c.rs.blur_sigma);
  c.rs.blur_kernel = kv.get_int("blur_kernel", c.rs.blur_kernel);
  c.rs.gumbel_on_psi = kv.get_bool("gumbel_on_psi", c.rs.gumbel_on_psi);
  c.drs.window = kv.get_int("drs_window", c.drs.window);
  c.drs.alpha = kv.get_double("drs_alpha", c.drs.alpha);
  c.drs.w_min = kv.get_double("drs_w_min", c.drs.w_min);
  const auto weighting = kv.get_string("drs_lambda_weighting", "inverse_dice");
  if (weighting == "inverse_dice") {
    c.drs.weighting = LambdaWeighting::InverseDice;
  } else if (weighting == "constant") {
    c.drs.weighting = LambdaWeighting::Constant;
  } else {
    throw ConfigError("drs_lambda_weighting must be inverse_dice or constant");
  }
  c.enable_mic = kv.get_bool("enable_mic", c.enable_mic);
  c.enable_kd = kv.get_bool("enable_kd", c.enable_kd);
  c.enable_rec = kv.get_bool("enable_rec", c.enable_rec);
  c.enable_corr = kv.get_bool("enable_corr", c.enable_corr);
  c.supervised_only = kv.get_bool("supervised_only", c.supervised_only);
  const auto mode = kv.get_string("teacher_mode", "ensemble");
  if (mode == "ensemble") {
    c.teacher_mode = TeacherMode::Ensemble;
  } else if (mode == "t1") {
    c.teacher_mode = TeacherMode::ReparamOnly;
  } else if (mode == "t2") {
    c.teacher_mode = TeacherMode::MeanTeacherOnly;
  } else {
    throw ConfigError("teacher_mode must be ensemble, t1 or t2");
  }
  const auto base = kv.get_string("ensemble_weight_base", "2");
  if (base == "2") {
    c.entropy_base = EntropyWeightBase::Two;
  } else if (base == "e") {
    c.entropy_base = EntropyWeightBase::E;
  } else {
    throw ConfigError("ensemble_weight_base must be 2 or e");
  }
  const auto source = kv.get_string("pseudo_label_source", "ensemble");
  if (source == "ensemble") {
    c.pseudo_source = PseudoLabelSource::Ensemble;
  } else if (source == "xi_psi") {
    c.pseudo_source = PseudoLabelSource::XiPsi;
  } else {
    throw ConfigError("pseudo_label_source must be ensemble or xi_psi");
  }
  const auto scaling = kv.get_string("corr_scaling", "inside");
  if (scaling == "inside") {
    c.corr_scaling = CorrelationScaling::InsideSoftmax;
  } else if (scaling == "outside") {
    c.corr_scaling = CorrelationScaling::OutsideSoftmax;
  } else {
    throw ConfigError("corr_scaling must be inside or outside");
  }
  c.checkpoint_every = kv.get_int("checkpoint_every", c.checkpoint_every);
  c.net.base_width = kv.get_int("model.base_width", c.net.base_width);
  c.net.stages = kv.get_int("model.stages", c.net.stages);
  c.net.convs_per_stage = kv.get_int("model.convs_per_stage", c.net.convs_per_stage);
  c.net.time_dim = kv.get_int("model.time_dim", c.net.time_dim);
  c.net.feat_dim = kv.get_int("model.feat_dim", c.net.feat_dim);
  c.net.corr_pool = kv.get_int("model.corr_pool", c.net.corr_pool);
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  auto need = [&bad](bool ok, const char* key) {
    if (!ok) {
      bad.emplace_back(key);
    }
  };
  need(lr_init >= 0, "lr_init");
  need(momentum >= 0, "momentum");
  need(weight_decay >= 0, "weight_decay");
  need(epochs >= 1, "epochs");
  need(iterations_per_epoch >= 0, "iterations_per_epoch");
  need(max_iterations >= 0, "max_iterations");
  need(labeled_per_batch >= 1, "labeled_per_batch");
  need(unlabeled_per_batch >= 1, "unlabeled_per_batch");
  need(mask_ratio >= 0 && mask_ratio <= 1, "mask_ratio");
  need(patch_size >= 0, "patch_size");
  need(cutmix.lo >= 0 && cutmix.lo <= cutmix.hi && cutmix.hi <= 1, "cutmix_min/cutmix_max");
  need(gamma_ema >= 0 && gamma_ema <= 1, "gamma_ema");
  need(diffusion_steps >= 2, "diffusion_steps");
  need(ddim_steps >= 1 && ddim_steps <= diffusion_steps, "ddim_steps");
  need(beta_start > 0 && beta_end >= beta_start && beta_end < 1, "beta_start/beta_end");
  need(rs.tau > 0, "gumbel_tau");
  need(rs.blur_sigma >= 0, "blur_sigma");
  need(rs.blur_kernel >= 1 && rs.blur_kernel % 2 == 1, "blur_kernel");
  need(drs.window >= 1, "drs_window");
  need(drs.alpha > 0, "drs_alpha");
  need(drs.w_min >= 0, "drs_w_min");
  need(checkpoint_every >= 0, "checkpoint_every");
  for (auto [w, key] : {std::pair{weights.alpha, "alpha"}, {weights.beta, "beta"},
                        {weights.gamma, "gamma"}, {weights.eta, "eta"},
                        {weights.unlabeled, "unlabeled_weight"}}) {
    need(std::isfinite(w) && w >= 0, key);
  }
  try {
    net.validate();
  } catch (const ConfigError&) {
    bad.emplace_back("model.*");
  }
  if (!bad.empty()) {
    std::string msg = "invalid configuration values:";
    for (const auto& k : bad) {
      msg += " " + k;
    }
    throw ConfigError(msg);
  }
}

std::string TrainConfig::canonical() const {
  std::ostringstream out;
  out << std::setprecision(17);
  auto b = [](bool v) { return v ? "true" : "false"; };
  out << "seed = " << seed << '\n'
      << "train_split = " << train_split << '\n'
      << "lr_init = " << lr_init << '\n'
      << "momentum = " << momentum << '\n'
      << "weight_decay = " << weight_decay << '\n'
      << "epochs = " << epochs << '\n'
      << "iterations_per_epoch = " << iterations_per_epoch << '\n'
      << "max_iterations = " << max_iterations << '\n'
      << "labeled_per_batch = " << labeled_per_batch << '\n'
      << "unlabeled_per_batch = " << unlabeled_per_batch << '\n'
      << "mask_ratio = " << mask_ratio << '\n'
      << "patch_size = " << patch_size << '\n'
      << "cutmix_min = " << cutmix.lo << '\n'
      << "cutmix_max = " << cutmix.hi << '\n'
      << "alpha = " << weights.alpha << '\n'
      << "beta = " << weights.beta << '\n'
      << "gamma = " << weights.gamma << '\n'
      << "eta = " << weights.eta << '\n'
      << "unlabeled_weight = " << weights.unlabeled << '\n'
      << "gamma_ema = " << gamma_ema << '\n'
      << "diffusion_steps = " << diffusion_steps << '\n'
      << "beta_start = " << beta_start << '\n'
      << "beta_end = " << beta_end << '\n'
      << "ddim_steps = " << ddim_steps << '\n'
      << "gumbel_tau = " << rs.tau << '\n'
      << "blur_sigma = " << rs.blur_sigma << '\n'
      << "blur_kernel = " << rs.blur_kernel << '\n'
      << "gumbel_on_psi = " << b(rs.gumbel_on_psi) << '\n'
      << "drs_window = " << drs.window << '\n'
      << "drs_alpha = " << drs.alpha << '\n'
      << "drs_w_min = " << drs.w_min << '\n'
      << "drs_lambda_weighting = "
      << (drs.weighting == LambdaWeighting::InverseDice ? "inverse_dice" : "constant") << '\n'
      << "enable_mic = " << b(enable_mic) << '\n'
      << "enable_kd = " << b(enable_kd) << '\n'
      << "enable_rec = " << b(enable_rec) << '\n'
      << "enable_corr = " << b(enable_corr) << '\n'
      << "supervised_only = " << b(supervised_only) << '\n'
      << "teacher_mode = " << teacher_mode_name(teacher_mode) << '\n'
      << "ensemble_weight_base = " << (entropy_base == EntropyWeightBase::Two ? "2" : "e") << '\n'
      << "pseudo_label_source = " << (pseudo_source == PseudoLabelSource::XiPsi ? "xi_psi" : "ensemble")
      << '\n'
      << "corr_scaling = "
      << (corr_scaling == CorrelationScaling::InsideSoftmax ? "inside" : "outside") << '\n'
      << "model = " << net.to_json() << '\n';
  return out.str();
}

double lr_schedule(double lr_init, std::int64_t iteration, std::int64_t max_iterations) {
  if (max_iterations <= 0 || iteration >= max_iterations) {
    return 0.0;
  }
  const double progress = static_cast<double>(std::max<std::int64_t>(iteration, 0)) /
                          static_cast<double>(max_iterations);
  return lr_init * std::pow(1.0 - progress, 0.9);
}

// ---------------------------------------------------------------------------
// Batches and draws

BatchTensors BatchTensors::from_batch(const Batch& batch, torch::Dtype dtype) {
  BatchTensors out;
  std::vector<torch::Tensor> xl, yl, xu;
  for (const auto& s : batch.labeled) {
    if (!s.label) {
      throw ValidationError("labeled batch entry '" + s.sample_id + "' has no label");
    }
    xl.push_back(s.image.unsqueeze(0));
    yl.push_back(*s.label);
  }
  for (const auto& s : batch.unlabeled) {
    xu.push_back(s.image.unsqueeze(0));
  }
  if (xl.empty()) {
    throw ValidationError("batch has no labeled samples");
  }
  out.x_l = torch::stack(xl).to(dtype);
  out.y_l = torch::stack(yl).to(torch::kInt64);
  if (!xu.empty()) {
    out.x_u = torch::stack(xu).to(dtype);
  }
  return out;
}

namespace {

std::vector<std::int64_t> with_leading(std::int64_t n, std::int64_t c, const Shape3& s) {
  return {n, c, s.l, s.w, s.h};
}

std::vector<std::int64_t> correlation_grid(const TrainConfig& cfg, const Shape3& s) {
  const auto factor = std::int64_t{1} << (cfg.net.stages - 1);
  return {std::min(s.l / factor, cfg.net.corr_pool), std::min(s.w / factor, cfg.net.corr_pool),
          std::min(s.h / factor, cfg.net.corr_pool)};
}

}  // namespace

StepDraws draw_step(const BatchTensors& batch, const TrainConfig& cfg, Rng& rng) {
  const auto K = cfg.net.num_classes;
  const auto shape = spatial_shape(batch.x_l);
  const auto nl = batch.x_l.size(0);
  const auto nu = batch.x_u.defined() ? batch.x_u.size(0) : 0;
  const auto dtype = batch.x_l.scalar_type();

  StepDraws d;
  std::vector<std::int64_t> steps;
  for (std::int64_t i = 0; i < nl; ++i) {
    steps.push_back(rng.uniform_int(0, cfg.diffusion_steps - 1));
  }
  d.t_l = torch::tensor(steps, torch::kInt64);
  d.eps_l = rng.normal_tensor(with_leading(nl, K, shape), dtype);
  d.ddim_noise = rng.normal_tensor(with_leading(nu, K, shape), dtype);
  d.gumbel = rng.gumbel_tensor(with_leading(nu, K, shape), dtype);

  std::vector<torch::Tensor> boxes;
  for (std::int64_t i = 0; i < nu; ++i) {
    // Any other member of the batch, labeled or unlabeled.
    const auto self = nl + i;
    auto j = rng.uniform_int(0, nl + nu - 2);
    if (j >= self) {
      ++j;
    }
    d.mix_partner.push_back(j);
    boxes.push_back(make_cutmix_mask(shape, cfg.cutmix, rng).mask);
  }
  d.mix_masks = nu > 0 ? torch::stack(boxes) : torch::empty({0, shape.l, shape.w, shape.h});

  const auto patch = cfg.patch_size > 0 ? cfg.patch_size : default_patch_size(shape);
  std::vector<torch::Tensor> patches;
  for (std::int64_t i = 0; i < nl + nu; ++i) {
    patches.push_back(make_patch_mask(shape, cfg.mask_ratio, patch, rng).mask);
  }
  d.patch_masks = torch::stack(patches);
  return d;
}

StepTargets build_targets(ModelBundleImpl& bundle, const BatchTensors& batch,
                          const StepDraws& draws, const TrainConfig& cfg,
                          const DiffusionSchedule& schedule) {
  torch::NoGradGuard no_grad;
  const auto K = cfg.net.num_classes;
  const auto nl = batch.x_l.size(0);
  const auto nu = batch.x_u.size(0);
  const auto shape = spatial_shape(batch.x_l);
  StepTargets tg;

  tg.probs_u_xi = ddim_pseudo_predict(batch.x_u, bundle, schedule, draws.ddim_noise);
  auto psi_logits = forward_plain(bundle, batch.x_u, DecoderChoice::Psi, false).logits;
  tg.probs_u_psi = torch::softmax(psi_logits, 1);
  tg.teacher1 = reparameterize_smooth(tg.probs_u_xi, psi_logits, draws.gumbel, cfg.rs).probs;

  auto all_x = torch::cat({batch.x_l, batch.x_u}, 0);
  tg.teacher_logits = forward_plain(bundle, all_x, DecoderChoice::Theta, true).logits;
  tg.teacher2 = torch::softmax(tg.teacher_logits.slice(0, nl), 1);

  switch (cfg.teacher_mode) {
    case TeacherMode::Ensemble:
      tg.ensemble = ensemble_predictions({tg.teacher1, TeacherSource::ReparamSmooth},
                                         {tg.teacher2, TeacherSource::MeanTeacher}, cfg.entropy_base);
      break;
    case TeacherMode::ReparamOnly:
    case TeacherMode::MeanTeacherOnly: {
      const auto& chosen = cfg.teacher_mode == TeacherMode::ReparamOnly ? tg.teacher1 : tg.teacher2;
      tg.ensemble.probs = chosen;
      tg.ensemble.hard = harden(chosen);
      tg.ensemble.entropy_t1 = entropy_map(tg.teacher1);
      tg.ensemble.entropy_t2 = entropy_map(tg.teacher2);
      break;
    }
  }
  tg.pseudo = cfg.pseudo_source == PseudoLabelSource::XiPsi ? harden(tg.teacher1) : tg.ensemble.hard;

  std::vector<torch::Tensor> xs, ys;
  for (std::int64_t i = 0; i < nu; ++i) {
    const auto j = draws.mix_partner[static_cast<std::size_t>(i)];
    // Ground truth for labeled partners, pseudo-labels otherwise.
    auto x_j = j < nl ? batch.x_l[j] : batch.x_u[j - nl];
    auto y_j = j < nl ? batch.y_l[j] : tg.pseudo[j - nl];
    auto [x_mix, y_mix] = apply_cutmix(batch.x_u[i], x_j, tg.pseudo[i], y_j, draws.mix_masks[i]);
    xs.push_back(x_mix);
    ys.push_back(y_mix);
  }
  tg.x_mix = torch::stack(xs);
  tg.y_mix = torch::stack(ys);
  tg.x_masked = apply_patch_mask(all_x, draws.patch_masks.unsqueeze(1));

  const auto grid = correlation_grid(cfg, shape);
  tg.pooled_u = pool_labels(tg.pseudo, K, grid);
  tg.pooled_l = pool_labels(batch.y_l, K, grid);
  return tg;
}

LossComponents student_losses(ModelBundleImpl& bundle, const BatchTensors& batch,
                              const StepDraws& draws, const StepTargets* targets,
                              const TrainConfig& cfg, const DiffusionSchedule& schedule,
                              DifficultyTracker& tracker, bool update_tracker) {
  const auto K = cfg.net.num_classes;
  const auto dtype = batch.x_l.scalar_type();
  auto comps = LossComponents::zeros(torch::TensorOptions().dtype(dtype));

  auto y0 = one_hot_encode(batch.y_l, K, dtype);
  auto y_t = diffusion_forward(y0, draws.t_l, draws.eps_l, schedule);
  auto probs_xi = torch::softmax(forward_labeled_diffusion(bundle, batch.x_l, y_t, draws.t_l), 1);
  comps.deno = loss_deno(probs_xi, y0);
  if (update_tracker) {
    tracker.update(per_class_dice(probs_xi, y0));
  }

  auto psi_l = forward_plain(bundle, batch.x_l, DecoderChoice::Psi, false);
  comps.diff = loss_diff(torch::softmax(psi_l.logits, 1), y0, tracker.weight_tensor(dtype));

  if (cfg.supervised_only || targets == nullptr) {
    return comps;
  }
  const auto& tg = *targets;
  const auto nl = batch.x_l.size(0);
  const auto nu = batch.x_u.size(0);
  const bool masked = cfg.enable_mic || cfg.enable_rec;

  // One batched theta pass over [x_u, x_mix, masked(x_l), masked(x_u)].
  std::vector<torch::Tensor> inputs{batch.x_u, tg.x_mix};
  if (masked) {
    inputs.push_back(tg.x_masked);
  }
  auto theta = forward_plain(bundle, torch::cat(inputs, 0), DecoderChoice::Theta, false);
  auto logits_u = theta.logits.slice(0, 0, nu);
  auto logits_mix = theta.logits.slice(0, nu, 2 * nu);
  auto probs_u = torch::softmax(logits_u, 1);

  comps.u = loss_u(probs_u, tg.pseudo);
  comps.mix = loss_mix(torch::softmax(logits_mix, 1), tg.y_mix);
  if (masked) {
    auto logits_masked = theta.logits.slice(0, 2 * nu);
    if (cfg.enable_mic) {
      comps.mic = loss_mic(torch::softmax(logits_masked.slice(0, nl), 1), tg.pseudo);
    }
    if (cfg.enable_rec) {
      comps.rec = loss_rec(logits_masked, tg.teacher_logits);
    }
  }
  if (cfg.enable_kd) {
    comps.kd = loss_kd(probs_u, tg.probs_u_xi, tg.probs_u_psi);
  }
  if (cfg.enable_corr) {
    const auto grid = correlation_grid(cfg, spatial_shape(batch.x_l));
    auto deepest_u = theta.features.back().slice(0, 0, nu);
    auto map_u = correlation_map(bundle.corr_head->forward(deepest_u), cfg.corr_scaling);
    auto map_l = correlation_map(bundle.corr_head->forward(psi_l.features.back()), cfg.corr_scaling);
    auto prop_u = propagate(pool_scores(logits_u, grid), map_u);
    auto prop_l = propagate(pool_scores(psi_l.logits, grid), map_l);
    comps.corr = loss_corr(prop_u, tg.pooled_u, prop_l, tg.pooled_l);
  }
  return comps;
}

// ---------------------------------------------------------------------------
// Cursor

BatchCursor::BatchCursor(std::int64_t num_labeled, std::int64_t num_unlabeled, std::uint64_t seed)
    : rng_(seed) {
  for (std::int64_t i = 0; i < num_labeled; ++i) {
    labeled_.order.push_back(i);
  }
  for (std::int64_t i = 0; i < num_unlabeled; ++i) {
    unlabeled_.order.push_back(i);
  }
  reshuffle(labeled_);
  reshuffle(unlabeled_);
}

void BatchCursor::reshuffle(Pool& pool) {
  for (std::size_t i = pool.order.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(pool.order[i - 1], pool.order[j]);
  }
  pool.position = 0;
}

std::int64_t BatchCursor::take(Pool& pool) {
  if (pool.position >= pool.order.size()) {
    reshuffle(pool);
  }
  return pool.order[pool.position++];
}

std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> BatchCursor::next(
    std::int64_t labeled, std::int64_t unlabeled) {
  auto draw = [this](Pool& pool, std::int64_t count) {
    if (count > static_cast<std::int64_t>(pool.order.size())) {
      throw ValidationError("batch asks for " + std::to_string(count) + " samples from a pool of " +
                            std::to_string(pool.order.size()));
    }
    std::vector<std::int64_t> out;
    while (static_cast<std::int64_t>(out.size()) < count) {
      auto idx = take(pool);
      if (std::find(out.begin(), out.end(), idx) != out.end()) {
        // Straddled a reshuffle; defer the repeat to the end of the new pass.
        pool.order.erase(pool.order.begin() + static_cast<std::ptrdiff_t>(pool.position - 1));
        pool.order.push_back(idx);
        --pool.position;
        continue;
      }
      out.push_back(idx);
    }
    return out;
  };
  auto l = draw(labeled_, labeled);
  auto u = draw(unlabeled_, unlabeled);
  return {l, u};
}

std::string BatchCursor::serialize() const {
  std::ostringstream out;
  for (const auto* pool : {&labeled_, &unlabeled_}) {
    out << pool->order.size() << ' ' << pool->position;
    for (auto v : pool->order) {
      out << ' ' << v;
    }
    out << '\n';
  }
  out << rng_.state();
  return out.str();
}

void BatchCursor::deserialize(const std::string& text) {
  std::istringstream in(text);
  for (auto* pool : {&labeled_, &unlabeled_}) {
    std::size_t n = 0;
    in >> n >> pool->position;
    pool->order.assign(n, 0);
    for (auto& v : pool->order) {
      in >> v;
    }
  }
  if (in.fail()) {
    throw ConfigError("malformed batch cursor state");
  }
  std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  rng_.set_state(rest);
}

// ---------------------------------------------------------------------------
// State and steps

std::int64_t planned_iterations(const TrainConfig& config, std::int64_t num_unlabeled) {
  if (config.max_iterations > 0) {
    return config.max_iterations;
  }
  auto per_epoch = config.iterations_per_epoch;
  if (per_epoch <= 0) {
    per_epoch = std::max<std::int64_t>(
        1, (num_unlabeled + config.unlabeled_per_batch - 1) / config.unlabeled_per_batch);
  }
  return config.epochs * per_epoch;
}

TrainState TrainState::create(const TrainConfig& config, std::int64_t num_labeled,
                              std::int64_t num_unlabeled, torch::Dtype dtype) {
  config.validate();
  TrainState s;
  s.config = config;
  torch::manual_seed(config.seed);
  s.bundle = ModelBundle(config.net);
  s.bundle->to(dtype);
  s.optimizer = std::make_unique<torch::optim::SGD>(
      s.bundle->student_parameters(),
      torch::optim::SGDOptions(config.lr_init).momentum(config.momentum).weight_decay(config.weight_decay));
  s.tracker = DifficultyTracker(config.net.num_classes, config.drs);
  s.schedule = DiffusionSchedule::linear(config.diffusion_steps, config.beta_start, config.beta_end,
                                         config.ddim_steps);
  s.rng = Rng(mix_seed(config.seed, 1));
  s.cursor = BatchCursor(num_labeled, num_unlabeled, mix_seed(config.seed, 2));
  s.max_iterations = planned_iterations(config, num_unlabeled);
  return s;
}

namespace {

double scalar(const torch::Tensor& t) { return t.detach().to(torch::kFloat64).item<double>(); }

}  // namespace

StepReport train_step(TrainState& state, const BatchTensors& batch) {
  auto& cfg = state.config;
  auto& bundle = *state.bundle;
  const double lr = lr_schedule(cfg.lr_init, state.iteration, state.max_iterations);
  for (auto& group : state.optimizer->param_groups()) {
    static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
  }

  auto draws = draw_step(batch, cfg, state.rng);
  std::optional<StepTargets> targets;
  if (!cfg.supervised_only) {
    if (!batch.x_u.defined() || batch.x_u.size(0) == 0) {
      throw ValidationError("semi-supervised step needs unlabeled samples");
    }
    try {
      targets = build_targets(bundle, batch, draws, cfg, state.schedule);
    } catch (const ValidationError& e) {
      throw RuntimeFailure("teacher targets failed at iteration " + std::to_string(state.iteration) +
                           ": " + e.what());
    }
  }
  auto comps = student_losses(bundle, batch, draws, targets ? &*targets : nullptr, cfg,
                              state.schedule, state.tracker, true);

  const std::pair<const char*, const torch::Tensor*> named[] = {
      {"deno", &comps.deno}, {"diff", &comps.diff}, {"u", &comps.u},     {"mix", &comps.mix},
      {"mic", &comps.mic},   {"kd", &comps.kd},     {"rec", &comps.rec}, {"corr", &comps.corr}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(scalar(*value))) {
      throw RuntimeFailure("non-finite loss component '" + std::string(name) + "' at iteration " +
                           std::to_string(state.iteration));
    }
  }
  auto total = total_loss(comps, cfg.weights);

  state.optimizer->zero_grad();
  total.backward();
  state.optimizer->step();
  ema_update(bundle, cfg.gamma_ema);

  StepReport r;
  r.iteration = state.iteration;
  r.lr = lr;
  r.total = scalar(total);
  r.deno = scalar(comps.deno);
  r.diff = scalar(comps.diff);
  r.u = scalar(comps.u);
  r.mix = scalar(comps.mix);
  r.mic = scalar(comps.mic);
  r.kd = scalar(comps.kd);
  r.rec = scalar(comps.rec);
  r.corr = scalar(comps.corr);
  r.class_weights = state.tracker.weights();
  ++state.iteration;
  return r;
}

// ---------------------------------------------------------------------------
// Loop

TrainingPools TrainingPools::load(const DatasetManifest& manifest, const std::string& split) {
  const auto& entry = manifest.split(split);
  TrainingPools pools;
  for (const auto& id : entry.labeled) {
    pools.labeled.push_back(load_sample(manifest, id, true));
  }
  for (const auto& id : entry.unlabeled) {
    pools.unlabeled.push_back(load_sample(manifest, id, false));
  }
  return pools;
}

Batch TrainingPools::gather(const std::vector<std::int64_t>& labeled_idx,
                            const std::vector<std::int64_t>& unlabeled_idx) const {
  Batch batch;
  for (auto i : labeled_idx) {
    batch.labeled.push_back(labeled.at(static_cast<std::size_t>(i)));
  }
  for (auto i : unlabeled_idx) {
    batch.unlabeled.push_back(unlabeled.at(static_cast<std::size_t>(i)));
  }
  return batch;
}

std::string loss_csv_header(std::int64_t num_classes) {
  std::string h = "iteration,lr,total,deno,diff,u,mix,mic,kd,rec,corr,alpha,beta,gamma,eta";
  for (std::int64_t k = 0; k < num_classes; ++k) {
    h += ",w_diff_" + std::to_string(k);
  }
  return h;
}

std::string loss_csv_row(const StepReport& r, const LossWeights& w) {
  std::ostringstream out;
  out << std::setprecision(17) << r.iteration << ',' << r.lr << ',' << r.total << ',' << r.deno << ','
      << r.diff << ',' << r.u << ',' << r.mix << ',' << r.mic << ',' << r.kd << ',' << r.rec << ','
      << r.corr << ',' << w.alpha << ',' << w.beta << ',' << w.gamma << ',' << w.eta;
  for (double v : r.class_weights) {
    out << ',' << v;
  }
  return out.str();
}

RunResult run_training(const TrainConfig& config, const DatasetManifest& manifest,
                       const RunOptions& options) {
  TrainConfig cfg = config;
  cfg.net.num_classes = manifest.num_classes;
  cfg.validate();
  const auto pools = TrainingPools::load(manifest, cfg.train_split);
  const auto needed_unlabeled = cfg.supervised_only ? 0 : cfg.unlabeled_per_batch;
  if (static_cast<std::int64_t>(pools.labeled.size()) < cfg.labeled_per_batch ||
      static_cast<std::int64_t>(pools.unlabeled.size()) < needed_unlabeled) {
    throw ValidationError("split '" + cfg.train_split + "' has too few samples for a batch of " +
                          std::to_string(cfg.labeled_per_batch) + " labeled + " +
                          std::to_string(needed_unlabeled) + " unlabeled");
  }

  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir);
  TrainState state = options.resume
                         ? load_checkpoint(*options.resume, cfg)
                         : TrainState::create(cfg, static_cast<std::int64_t>(pools.labeled.size()),
                                              static_cast<std::int64_t>(pools.unlabeled.size()));

  const auto log_path = out_dir / "losses.csv";
  std::ofstream log;
  if (options.resume && fs::exists(log_path)) {
    log.open(log_path, std::ios::app);
  } else {
    log.open(log_path, std::ios::trunc);
    log << loss_csv_header(cfg.net.num_classes) << '\n';
  }

  RunResult result;
  const auto unlabeled_per_batch = cfg.supervised_only ? 0 : cfg.unlabeled_per_batch;
  while (state.iteration < state.max_iterations) {
    if (options.stop_after && state.iteration >= *options.stop_after) {
      break;
    }
    auto [li, ui] = state.cursor.next(cfg.labeled_per_batch, unlabeled_per_batch);
    auto batch = BatchTensors::from_batch(pools.gather(li, ui));
    auto report = train_step(state, batch);
    log << loss_csv_row(report, cfg.weights) << '\n';
    log.flush();
    if (options.on_step) {
      options.on_step(report);
    }
    result.reports.push_back(std::move(report));
    if (cfg.checkpoint_every > 0 && state.iteration % cfg.checkpoint_every == 0 &&
        state.iteration < state.max_iterations) {
      save_checkpoint(state, out_dir / ("checkpoint_" + std::to_string(state.iteration) + ".ckpt"));
    }
  }

  if (state.iteration >= state.max_iterations) {
    result.checkpoint = out_dir / "checkpoint_final.ckpt";
    save_checkpoint(state, result.checkpoint);
    result.export_path = out_dir / "model_export.pt";
    save_inference_export(*state.bundle, export_decoder(cfg), result.export_path);
  } else {
    result.checkpoint = out_dir / ("checkpoint_" + std::to_string(state.iteration) + ".ckpt");
    save_checkpoint(state, result.checkpoint);
  }
  return result;
}

}  // namespace semiseg
