#include "wavecap/wavevae.hpp"

#include <torch/torch.h>

#include <cmath>
#include <sstream>
#include <string>

#include "wavecap/errors.hpp"
#include "wavecap/layers.hpp"
#include "wavecap/wavelet.hpp"

namespace wavecap::wavevae {
namespace F = torch::nn::functional;

WaveVaeConfig WaveVaeConfig::full() { return WaveVaeConfig{}; }

WaveVaeConfig WaveVaeConfig::desk() {
  WaveVaeConfig c;
  c.hidden_dim = 16;
  c.blocks = 2;
  c.codebook_size = 512;
  c.codebook_dim = 16;
  c.image_size = 64;
  c.crop_ratio = 1.0;
  return c;
}

TrunkImpl::TrunkImpl(int64_t width, int64_t blocks, bool downsample) {
  body_ = torch::nn::Sequential();
  const int64_t before = blocks / 2;
  for (int64_t i = 0; i < before; ++i) body_->push_back(layers::ResBlock(width));
  if (downsample) {
    body_->push_back(layers::make_downsample(width));
  } else {
    body_->push_back(layers::Upsample(width));
  }
  for (int64_t i = before; i < blocks; ++i) body_->push_back(layers::ResBlock(width));
  register_module("body", body_);
}

torch::Tensor TrunkImpl::forward(torch::Tensor x) { return body_->forward(x); }

ToImageImpl::ToImageImpl(int64_t width, int64_t channels) {
  act_ = register_module("act", torch::nn::PReLU(torch::nn::PReLUOptions().num_parameters(width)));
  conv_ = register_module("conv", layers::conv3x3(width, channels));
}

torch::Tensor ToImageImpl::forward(const torch::Tensor& x) { return conv_(act_(x)); }

EncoderImpl::EncoderImpl(EncoderSpec spec) : spec_(std::move(spec)) {
  if (spec_.widths.empty()) throw ConfigError("encoder needs at least one stage");
  if (spec_.blocks < 1) throw ConfigError("encoder needs at least one residual block");
  stem = register_module("stem", layers::conv3x3(spec_.d_in, spec_.widths.front()));
  for (size_t i = 0; i < spec_.widths.size(); ++i) {
    const auto tag = std::to_string(i);
    if (i > 0) {
      transitions.push_back(register_module(
          "transition" + tag, layers::conv1x1(spec_.widths[i - 1], spec_.widths[i])));
    }
    trunks.push_back(register_module("trunk" + tag, Trunk(spec_.widths[i], spec_.blocks, /*downsample=*/true)));
  }
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  auto h = stem(x);
  for (size_t i = 0; i < trunks.size(); ++i) {
    if (i > 0) h = transitions[i - 1](h);
    h = trunks[i]->forward(h);
  }
  return h;
}

DecoderImpl::DecoderImpl(DecoderSpec spec) : spec_(std::move(spec)) {
  if (spec_.widths.empty()) throw ConfigError("decoder needs at least one stage");
  if (spec_.blocks < 1) throw ConfigError("decoder needs at least one residual block");
  for (size_t i = 0; i < spec_.widths.size(); ++i) {
    const auto tag = std::to_string(i);
    if (i > 0) {
      transitions.push_back(register_module(
          "transition" + tag, layers::conv1x1(spec_.widths[i - 1], spec_.widths[i])));
    }
    trunks.push_back(register_module("trunk" + tag, Trunk(spec_.widths[i], spec_.blocks, /*downsample=*/false)));
  }
  head = register_module("head", ToImage(spec_.widths.back(), spec_.d_out));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& x) {
  auto h = x;
  for (size_t i = 0; i < trunks.size(); ++i) {
    if (i > 0) h = transitions[i - 1](h);
    h = trunks[i]->forward(h);
  }
  return torch::tanh(head(h));
}

namespace {

// Unit-length code directions, so the quantizer's straight-through gradient
// is projected onto the sphere instead of inflating the projection's scale.
torch::Tensor code_directions(torch::nn::Conv2d& to_code, const torch::Tensor& features) {
  return F::normalize(to_code(features), F::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
}

}  // namespace

Stage1ModelImpl::Stage1ModelImpl(const WaveVaeConfig& cfg, uint64_t seed) : cfg_(cfg) {
  if (cfg.levels < 1) throw ConfigError("stage 1 needs at least one level");
  torch::manual_seed(seed);
  codebook = register_module("codebook", vq::codebook_init(cfg.codebook_size, cfg.codebook_dim, seed));
  for (int k = 1; k <= cfg.levels; ++k) {
    const int64_t width = k * cfg.hidden_dim;
    const auto tag = "level" + std::to_string(k) + "_";
    Level lvl;
    lvl.encoder = register_module(tag + "encoder", Encoder(EncoderSpec{3, {width}, cfg.blocks}));
    lvl.to_code = register_module(tag + "to_code", layers::conv1x1(width, cfg.codebook_dim));
    lvl.from_code = register_module(tag + "from_code", layers::conv1x1(cfg.codebook_dim, width));
    lvl.decoder = register_module(tag + "decoder", Decoder(DecoderSpec{{width}, 3, cfg.blocks}));
    levels.push_back(lvl);
  }
}

Stage2ModelImpl::Stage2ModelImpl(const WaveVaeConfig& cfg, uint64_t seed) : cfg_(cfg) {
  torch::manual_seed(seed);
  std::vector<int64_t> widths;
  for (int k = 1; k <= cfg.levels; ++k) widths.push_back(k * cfg.hidden_dim);
  const int64_t top = widths.back();
  encoder = register_module("encoder", Encoder(EncoderSpec{3, widths, cfg.blocks}));
  to_code = register_module("to_code", layers::conv1x1(top, cfg.codebook_dim));
  from_code = register_module("from_code", layers::conv1x1(cfg.codebook_dim, top));
  decoder = register_module(
      "decoder", Decoder(DecoderSpec{{widths.rbegin(), widths.rend()}, 3, cfg.blocks}));
  codebook = register_module("codebook", vq::codebook_init(cfg.codebook_size, cfg.codebook_dim, seed));
}

Stage1Output stage1_forward(Stage1Model& model, const torch::Tensor& images) {
  const auto& cfg = model->config();
  if (images.dim() != 4 || images.size(1) != 3) {
    throw ShapeError("stage1_forward: expected [B, 3, H, W] images");
  }
  const int64_t factor = int64_t{1} << cfg.levels;
  if (images.size(2) % factor != 0 || images.size(3) % factor != 0) {
    throw ShapeError("stage1_forward: image side must be divisible by " + std::to_string(factor));
  }
  Stage1Output out;
  auto total = torch::zeros({}, images.options());
  auto vq_total = torch::zeros({}, images.options());
  for (int k = 1; k <= cfg.levels; ++k) {
    auto& lvl = model->levels[static_cast<size_t>(k - 1)];
    auto xk = wavelet::lowpass_chain(images, k);
    auto q = vq::quantize(code_directions(lvl.to_code, lvl.encoder(xk)), model->codebook);
    auto xhat = lvl.decoder(lvl.from_code(q.quantized));
    auto l1 = (xhat - xk).abs().mean();
    vq_total = vq_total + q.loss(cfg.beta);
    total = total + l1;
    out.inputs.push_back(xk);
    out.reconstructions.push_back(xhat);
    out.indices.push_back(q.indices);
    out.l1.push_back(l1);
  }
  out.vq_loss = vq_total;
  out.total_loss = total + vq_total;
  return out;
}

TrainState::TrainState(std::vector<torch::Tensor> params, const OptimConfig& cfg,
                       int64_t total_steps, uint64_t seed)
    : schedule(cfg, total_steps), rng(seed) {
  torch::optim::AdamWOptions opts(cfg.lr);
  opts.betas({cfg.beta1, cfg.beta2}).eps(cfg.eps).weight_decay(cfg.weight_decay);
  optimizer = std::make_unique<torch::optim::AdamW>(std::move(params), opts);
}

double TrainState::apply_lr() {
  const double lr = schedule.at(step);
  for (auto& group : optimizer->param_groups()) {
    static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
  }
  return lr;
}

torch::Tensor random_crop(const torch::Tensor& images, double ratio, std::mt19937_64& rng) {
  if (ratio >= 1.0) return images;
  if (ratio <= 0.0) throw ConfigError("crop ratio must be positive");
  const int64_t h = images.size(2);
  const int64_t w = images.size(3);
  const int64_t side = std::max<int64_t>(1, std::llround(ratio * static_cast<double>(std::min(h, w))));
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < images.size(0); ++i) {
    std::uniform_int_distribution<int64_t> oy(0, h - side), ox(0, w - side);
    const int64_t y0 = oy(rng);
    const int64_t x0 = ox(rng);
    using torch::indexing::Slice;
    auto crop = images.index({Slice(i, i + 1), Slice(), Slice(y0, y0 + side), Slice(x0, x0 + side)});
    out.push_back(F::interpolate(crop, F::InterpolateFuncOptions()
                                           .size(std::vector<int64_t>{h, w})
                                           .mode(torch::kBilinear)
                                           .align_corners(false)));
  }
  return torch::cat(out, 0);
}

std::vector<torch::Tensor> stage1_parameters(Stage1Model& model) { return model->parameters(true); }

TrainState make_stage1_state(Stage1Model& model, const OptimConfig& cfg, int64_t total_steps,
                             uint64_t seed) {
  return TrainState(stage1_parameters(model), cfg, total_steps, seed);
}

namespace {

void check_finite(const torch::Tensor& loss, const std::string& snapshot) {
  if (!std::isfinite(loss.item<double>())) {
    throw NonFiniteLossError("non-finite loss: " + snapshot, snapshot);
  }
}

}  // namespace

double stage1_train_step(Stage1Model& model, const torch::Tensor& batch, TrainState& state) {
  model->train();
  state.apply_lr();
  auto input = random_crop(batch, model->config().crop_ratio, state.rng);
  auto out = stage1_forward(model, input);

  std::ostringstream snap;
  snap << "step=" << state.step;
  for (size_t k = 0; k < out.l1.size(); ++k) snap << " l1_" << (k + 1) << "=" << out.l1[k].item<double>();
  snap << " vq=" << out.vq_loss.item<double>();
  check_finite(out.total_loss, snap.str());

  state.optimizer->zero_grad();
  out.total_loss.backward();
  state.optimizer->step();
  model->codebook->renormalize();
  for (const auto& idx : out.indices) model->codebook->record_usage(idx);
  ++state.step;
  return out.total_loss.item<double>();
}

Stage2Model integrate(Stage1Model& stage1) {
  const auto& cfg = stage1->config();
  if (cfg.levels != 3) {
    throw ConfigError("integrate: unsupported configuration, expected 3 stage-1 levels, got " +
                      std::to_string(cfg.levels));
  }
  // Fresh modules (transitions) are seeded off the stage-1 codebook size so
  // the result is a deterministic function of the stage-1 weights.
  Stage2Model out(cfg, static_cast<uint64_t>(cfg.codebook_size) * 7919u + 17u);
  const auto& lv = stage1->levels;
  layers::copy_weights(*out->encoder->stem, *lv[0].encoder->stem);
  layers::copy_weights(*out->decoder->head, *lv[0].decoder->head);
  for (size_t i = 0; i < 3; ++i) {
    layers::copy_weights(*out->encoder->trunks[i], *lv[i].encoder->trunks[0]);
    // Decoder runs coarse to fine: stage i comes from level 3 - i.
    layers::copy_weights(*out->decoder->trunks[i], *lv[2 - i].decoder->trunks[0]);
  }
  layers::copy_weights(*out->to_code, *lv[2].to_code);
  layers::copy_weights(*out->from_code, *lv[2].from_code);
  layers::copy_weights(*out->codebook, *stage1->codebook);
  return out;
}

void calibrate(Stage2Model& model, const torch::Tensor& data, int64_t iters, double lr,
               uint64_t seed) {
  if (iters < 1) throw ConfigError("calibrate: iters must be >= 1");
  torch::manual_seed(seed);
  model->train();
  std::vector<torch::Tensor> params;
  for (auto& p : model->named_parameters(true)) {
    if (p.key().rfind("codebook.", 0) != 0) params.push_back(p.value());
  }
  torch::optim::AdamWOptions opts(lr);
  opts.betas({0.9, 0.999}).eps(1e-8).weight_decay(0.0);
  torch::optim::AdamW opt(params, opts);
  model->codebook->vectors.set_requires_grad(false);
  for (int64_t it = 0; it < iters; ++it) {
    auto q = vq::quantize(code_directions(model->to_code, model->encoder(data)), model->codebook);
    auto xhat = model->decoder(model->from_code(q.quantized));
    auto loss = (xhat - data).abs().mean();
    check_finite(loss, "calibrate iter=" + std::to_string(it));
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  model->codebook->vectors.set_requires_grad(true);
}

torch::Tensor PixelPerceptual::distance(const torch::Tensor& x, const torch::Tensor& x_hat) {
  return (x - x_hat).square().mean();
}

Stage2Losses stage2_loss(Stage2Model& model, disc::UNetDiscriminator* discriminator,
                         PerceptualMetric* perceptual, const Stage2LossWeights& weights,
                         const torch::Tensor& images) {
  if (weights.adversarial > 0.0 && (discriminator == nullptr || !*discriminator)) {
    throw ConfigError("stage2_loss: adversarial weight > 0 requires a discriminator");
  }
  Stage2Losses out;
  auto q = vq::quantize(code_directions(model->to_code, model->encoder(images)), model->codebook);
  auto xhat = model->decoder(model->from_code(q.quantized));
  const auto zero = torch::zeros({}, images.options());

  out.l1 = weights.l1 * (xhat - images).abs().mean();
  out.perceptual = perceptual != nullptr ? weights.perceptual * perceptual->distance(images, xhat) : zero;
  if (weights.adversarial > 0.0) {
    auto& d = *discriminator;
    out.adversarial = weights.adversarial * disc::hinge_generator_loss(d(xhat));
    out.discriminator = disc::hinge_discriminator_loss(d(images), d(xhat.detach()));
  } else {
    out.adversarial = zero;
  }
  out.vq = q.loss(weights.beta);
  out.generator = out.l1 + out.perceptual + out.adversarial + out.vq;
  out.reconstruction = xhat;
  out.indices = q.indices;
  return out;
}

Stage2Trainer make_stage2_trainer(Stage2Model& model, const OptimConfig& cfg,
                                  int64_t total_steps, uint64_t seed) {
  auto gcfg = cfg;
  gcfg.weight_decay = 0.0;  // weight decay only applies to stage 1
  Stage2Trainer t{TrainState(model->parameters(true), gcfg, total_steps, seed), nullptr, nullptr, {},
                  std::make_unique<PixelPerceptual>()};
  const auto& mc = model->config();
  t.weights.l1 = mc.w_l1;
  t.weights.perceptual = mc.w_perc;
  t.weights.adversarial = mc.discriminator.loss_weight;
  t.weights.beta = mc.beta;
  torch::manual_seed(seed + 1);
  t.discriminator = disc::UNetDiscriminator(mc.discriminator);
  torch::optim::AdamWOptions dopts(cfg.lr);
  dopts.betas({cfg.beta1, cfg.beta2}).eps(cfg.eps).weight_decay(0.0);
  t.disc_optimizer = std::make_unique<torch::optim::AdamW>(t.discriminator->parameters(), dopts);
  return t;
}

double stage2_train_step(Stage2Model& model, const torch::Tensor& batch, Stage2Trainer& trainer) {
  model->train();
  trainer.discriminator->train();
  const double lr = trainer.generator.apply_lr();
  auto input = random_crop(batch, model->config().crop_ratio, trainer.generator.rng);
  auto losses = stage2_loss(model, &trainer.discriminator, trainer.perceptual.get(),
                            trainer.weights, input);
  std::ostringstream snap;
  snap << "step=" << trainer.generator.step << " l1=" << losses.l1.item<double>()
       << " perc=" << losses.perceptual.item<double>() << " adv=" << losses.adversarial.item<double>()
       << " vq=" << losses.vq.item<double>();
  check_finite(losses.generator, snap.str());

  trainer.generator.optimizer->zero_grad();
  losses.generator.backward();
  trainer.generator.optimizer->step();
  model->codebook->renormalize();
  model->codebook->record_usage(losses.indices);

  if (losses.discriminator.defined()) {
    for (auto& group : trainer.disc_optimizer->param_groups()) {
      static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
    }
    trainer.disc_optimizer->zero_grad();
    losses.discriminator.backward();
    trainer.disc_optimizer->step();
  }
  ++trainer.generator.step;
  return losses.generator.item<double>();
}

torch::Tensor encode(Stage2Model& model, const torch::Tensor& images) {
  auto x = images.dim() == 3 ? images.unsqueeze(0) : images;
  if (x.dim() != 4 || x.size(1) != 3) throw ShapeError("encode: expected [B, 3, H, W] images");
  const auto f = model->factor();
  if (x.size(2) % f != 0 || x.size(3) % f != 0) {
    throw ShapeError("encode: image side must be divisible by " + std::to_string(f));
  }
  torch::NoGradGuard guard;
  return vq::quantize(code_directions(model->to_code, model->encoder(x)), model->codebook).indices;
}

torch::Tensor decode(Stage2Model& model, const torch::Tensor& tokens) {
  torch::NoGradGuard guard;
  auto emb = vq::lookup(tokens, model->codebook);
  return model->decoder(model->from_code(emb));
}

}  // namespace wavecap::wavevae
