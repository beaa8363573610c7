#pragma once

#include <torch/nn/module.h>
#include <torch/nn/modules/activation.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/pimpl.h>
#include <torch/optim/adamw.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "wavecap/discriminator.hpp"
#include "wavecap/schedule.hpp"
#include "wavecap/vq.hpp"

namespace wavecap::wavevae {

struct WaveVaeConfig {
  int64_t hidden_dim = 64;
  int64_t blocks = 8;  // residual blocks per encoder / decoder, split around the resampler
  int64_t codebook_size = 8192;
  int64_t codebook_dim = 64;
  int levels = 3;
  double beta = 0.25;    // commitment weight
  double w_l1 = 1.0;
  double w_perc = 1.0;
  double crop_ratio = 0.75;
  int64_t image_size = 256;
  disc::DiscriminatorConfig discriminator;

  static WaveVaeConfig full();
  static WaveVaeConfig desk();
};

/// E(f, d_in, d_out): `widths` lists the channel width of each factor-2
/// stage, so f = 2^widths.size() and d_out = widths.back().
struct EncoderSpec {
  int64_t d_in = 3;
  std::vector<int64_t> widths;
  int64_t blocks = 1;

  int64_t factor() const { return int64_t{1} << widths.size(); }
  int64_t d_out() const { return widths.back(); }
};

/// G(f', d_in', d_out'): one factor-2 upsampling stage per width.
struct DecoderSpec {
  std::vector<int64_t> widths;
  int64_t d_out = 3;
  int64_t blocks = 1;

  int64_t factor() const { return int64_t{1} << widths.size(); }
  int64_t d_in() const { return widths.front(); }
};

// One factor-2 stage at fixed width: residual blocks, resampler, residual blocks.
class TrunkImpl : public torch::nn::Module {
 public:
  TrunkImpl(int64_t width, int64_t blocks, bool downsample);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(Trunk);

// Maps stage features to a 3-channel image: PReLU then 3x3 convolution.
class ToImageImpl : public torch::nn::Module {
 public:
  ToImageImpl(int64_t width, int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::PReLU act_{nullptr};
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(ToImage);

/// Encoder chain: a 3x3 stem lifts the d_in-channel input to widths[0],
/// then one downsampling trunk per width, with a 1x1 transition between
/// consecutive widths. With a single width this is the stage-1 encoder
/// E_k(2, 3, w).
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(EncoderSpec spec);
  torch::Tensor forward(const torch::Tensor& x);

  const EncoderSpec& spec() const { return spec_; }

  torch::nn::Conv2d stem{nullptr};             // 3x3, d_in -> widths[0]
  std::vector<Trunk> trunks;
  std::vector<torch::nn::Conv2d> transitions;  // 1x1, widths[i-1] -> widths[i]

 private:
  EncoderSpec spec_;
};
TORCH_MODULE(Encoder);

/// Decoder chain, mirror of EncoderImpl: one upsampling trunk per width with
/// 1x1 transitions between them, then a single head and tanh.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(DecoderSpec spec);
  torch::Tensor forward(const torch::Tensor& x);

  const DecoderSpec& spec() const { return spec_; }

  std::vector<Trunk> trunks;
  std::vector<torch::nn::Conv2d> transitions;  // 1x1, widths[i-1] -> widths[i]
  ToImage head{nullptr};                       // widths.back() -> d_out

 private:
  DecoderSpec spec_;
};
TORCH_MODULE(Decoder);

// Encoder, quantizer interface and decoder for one resolution level.
struct Level {
  Encoder encoder{nullptr};
  torch::nn::Conv2d to_code{nullptr};    // 1x1, encoder width -> codebook dim, L2-normalized per position
  torch::nn::Conv2d from_code{nullptr};  // 1x1, codebook dim -> decoder width
  Decoder decoder{nullptr};
};

/// Multi-level tokenizer trained with DWT low-pass inputs. Level k (1-based)
/// pairs E_k(2, 3, k*hidden_dim) with G_k(2, k*hidden_dim, 3); all levels
/// quantize through one shared codebook.
class Stage1ModelImpl : public torch::nn::Module {
 public:
  Stage1ModelImpl(const WaveVaeConfig& cfg, uint64_t seed);

  const WaveVaeConfig& config() const { return cfg_; }
  std::vector<Level> levels;
  vq::Codebook codebook{nullptr};

 private:
  WaveVaeConfig cfg_;
};
TORCH_MODULE(Stage1Model);

/// Single-level tokenizer E(8, 3, 3*hidden_dim) -> VQ -> G(8, 3*hidden_dim, 3).
class Stage2ModelImpl : public torch::nn::Module {
 public:
  Stage2ModelImpl(const WaveVaeConfig& cfg, uint64_t seed);

  const WaveVaeConfig& config() const { return cfg_; }
  int64_t factor() const { return encoder->spec().factor(); }

  Encoder encoder{nullptr};
  torch::nn::Conv2d to_code{nullptr};
  torch::nn::Conv2d from_code{nullptr};
  Decoder decoder{nullptr};
  vq::Codebook codebook{nullptr};

 private:
  WaveVaeConfig cfg_;
};
TORCH_MODULE(Stage2Model);

struct Stage1Output {
  std::vector<torch::Tensor> inputs;           // x_k per level
  std::vector<torch::Tensor> reconstructions;  // x_hat_k per level
  std::vector<torch::Tensor> indices;          // token grid per level
  std::vector<torch::Tensor> l1;               // per-level mean absolute error
  torch::Tensor vq_loss;                       // summed codebook + beta*commitment terms
  torch::Tensor total_loss;
};

/// Level k consumes lowpass_chain(image, k), encodes at factor 2, quantizes
/// through the shared codebook and decodes. Images are [B, 3, H, W] in
/// [-1, 1] with H, W divisible by 2^levels.
Stage1Output stage1_forward(Stage1Model& model, const torch::Tensor& images);

/// AdamW + warm-up/cosine schedule bound to one model's parameters.
struct TrainState {
  std::unique_ptr<torch::optim::AdamW> optimizer;
  LrSchedule schedule;
  int64_t step = 0;
  std::mt19937_64 rng;

  TrainState(std::vector<torch::Tensor> params, const OptimConfig& cfg, int64_t total_steps,
             uint64_t seed);
  double apply_lr();  // sets the scheduled rate for the current step, returns it
};

/// Random square crop covering crop_ratio of the side at a random offset,
/// resized back to the input size (bilinear). ratio >= 1 is the identity.
torch::Tensor random_crop(const torch::Tensor& images, double ratio, std::mt19937_64& rng);

std::vector<torch::Tensor> stage1_parameters(Stage1Model& model);
TrainState make_stage1_state(Stage1Model& model, const OptimConfig& cfg, int64_t total_steps,
                             uint64_t seed);

/// One optimizer step on the summed stage-1 loss. Throws NonFiniteLossError
/// (with a per-level snapshot) on a non-finite loss. Returns the loss value.
double stage1_train_step(Stage1Model& model, const torch::Tensor& batch, TrainState& state);

/// Builds the single-level model from a trained K=3 stage-1 model. The
/// encoder chains the trunks of E_1..E_3 behind the E_1 stem; the decoder
/// chains the trunks of G_3..G_1 in front of the G_1 head. The 1x1
/// transitions between chained trunks are fresh; only the level-3 code projections
/// survive; the codebook is copied unchanged. Throws ConfigError when the
/// stage-1 model does not have exactly 3 levels.
Stage2Model integrate(Stage1Model& stage1);

/// `iters` steps of L1-only training with the codebook frozen. Throws
/// ConfigError when iters < 1.
void calibrate(Stage2Model& model, const torch::Tensor& data, int64_t iters, double lr,
               uint64_t seed);

/// Feature distance plug-in used for the perceptual term.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual torch::Tensor distance(const torch::Tensor& x, const torch::Tensor& x_hat) = 0;
};

/// Identity features with squared-L2 distance (mean over elements).
class PixelPerceptual final : public PerceptualMetric {
 public:
  torch::Tensor distance(const torch::Tensor& x, const torch::Tensor& x_hat) override;
};

struct Stage2LossWeights {
  double l1 = 1.0;
  double perceptual = 1.0;
  double adversarial = 1.0e-3;
  double beta = 0.25;
};

struct Stage2Losses {
  torch::Tensor generator;
  torch::Tensor discriminator;  // undefined when the adversarial weight is 0
  torch::Tensor l1, perceptual, adversarial, vq;  // weighted components of `generator`
  torch::Tensor reconstruction;
  torch::Tensor indices;
};

/// Generator and discriminator objectives. A null perceptual metric drops the
/// term; a null discriminator is only allowed with adversarial weight 0
/// (ConfigError otherwise).
Stage2Losses stage2_loss(Stage2Model& model, disc::UNetDiscriminator* discriminator,
                         PerceptualMetric* perceptual, const Stage2LossWeights& weights,
                         const torch::Tensor& images);

struct Stage2Trainer {
  TrainState generator;
  std::unique_ptr<torch::optim::AdamW> disc_optimizer;
  disc::UNetDiscriminator discriminator{nullptr};
  Stage2LossWeights weights;
  std::unique_ptr<PerceptualMetric> perceptual;
};

Stage2Trainer make_stage2_trainer(Stage2Model& model, const OptimConfig& cfg,
                                  int64_t total_steps, uint64_t seed);

/// One generator step followed (when adversarial weight > 0) by one
/// discriminator step. Returns the generator loss value.
double stage2_train_step(Stage2Model& model, const torch::Tensor& batch, Stage2Trainer& trainer);

/// Token grid [B, H/8, W/8]; throws ShapeError when the side is not divisible by 8.
torch::Tensor encode(Stage2Model& model, const torch::Tensor& images);
/// Image [B, 3, 8h, 8w] in [-1, 1]; throws IndexError for tokens outside [0, d_Z).
torch::Tensor decode(Stage2Model& model, const torch::Tensor& tokens);

}  // namespace wavecap::wavevae
