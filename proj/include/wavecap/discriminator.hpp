#pragma once

#include <torch/nn/module.h>
#include <torch/nn/pimpl.h>

#include <cstdint>
#include <vector>

namespace wavecap::disc {

// Convolution whose weight is divided by its largest singular value,
// estimated with one power-iteration step per training-mode forward.
class SNConv2dImpl : public torch::nn::Module {
 public:
  SNConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding);
  torch::Tensor forward(const torch::Tensor& x);

  // Weight actually applied by forward(); sigma computed from the current u.
  torch::Tensor normalized_weight();

 private:
  int64_t stride_, padding_;
  torch::Tensor weight_orig_, bias_, u_, v_;
};
TORCH_MODULE(SNConv2d);

struct DiscriminatorConfig {
  int64_t base_channels = 16;
  int64_t depth = 2;             // number of stride-2 stages in the contracting path
  bool spectral_norm = true;     // always on; kept as a field for the descriptor
  double loss_weight = 1.0e-3;   // multiplier on the generator's adversarial term
};

// U-Net discriminator producing a per-pixel realness map [B, 1, H, W]:
// contracting path of stride-2 convolutions, expanding path of bilinear
// upsampling + convolution with additive skips.
class UNetDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit UNetDiscriminatorImpl(const DiscriminatorConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

  const DiscriminatorConfig& config() const { return cfg_; }
  // Every convolution in the network; each is spectrally normalized.
  const std::vector<SNConv2d>& convolutions() const { return convs_; }

 private:
  DiscriminatorConfig cfg_;
  SNConv2d in_{nullptr};
  std::vector<SNConv2d> down_, up_;
  SNConv2d refine_{nullptr}, out_{nullptr};
  std::vector<SNConv2d> convs_;
};
TORCH_MODULE(UNetDiscriminator);

// Hinge losses: D minimizes relu(1 - D(x)) + relu(1 + D(x_hat)); the generator
// minimizes -D(x_hat).
torch::Tensor hinge_discriminator_loss(const torch::Tensor& real_logits,
                                       const torch::Tensor& fake_logits);
torch::Tensor hinge_generator_loss(const torch::Tensor& fake_logits);

}  // namespace wavecap::disc
