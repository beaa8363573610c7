#include "wavecap/discriminator.hpp"

#include <torch/torch.h>

#include <string>

#include "wavecap/errors.hpp"

namespace wavecap::disc {
namespace F = torch::nn::functional;

namespace {
torch::Tensor unit(const torch::Tensor& t) {
  return F::normalize(t, F::NormalizeFuncOptions().dim(0).eps(1e-12));
}
}  // namespace

SNConv2dImpl::SNConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t padding)
    : stride_(stride), padding_(padding) {
  auto conv = torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel));
  weight_orig_ = register_parameter("weight_orig", conv->weight.detach().clone());
  bias_ = register_parameter("bias", conv->bias.detach().clone());
  u_ = register_buffer("u", unit(torch::randn({out})));
  v_ = register_buffer("v", unit(torch::randn({in * kernel * kernel})));
}

torch::Tensor SNConv2dImpl::normalized_weight() {
  auto mat = weight_orig_.reshape({weight_orig_.size(0), -1});
  if (is_training()) {
    torch::NoGradGuard guard;
    v_.copy_(unit(torch::mv(mat.t(), u_)));
    u_.copy_(unit(torch::mv(mat, v_)));
  }
  // Clones keep the autograd graph valid when a later forward updates u/v.
  auto sigma = torch::dot(u_.clone(), torch::mv(mat, v_.clone()));
  return weight_orig_ / sigma;
}

torch::Tensor SNConv2dImpl::forward(const torch::Tensor& x) {
  return F::conv2d(x, normalized_weight(),
                   F::Conv2dFuncOptions().bias(bias_).stride(stride_).padding(padding_));
}

UNetDiscriminatorImpl::UNetDiscriminatorImpl(const DiscriminatorConfig& cfg) : cfg_(cfg) {
  if (cfg.loss_weight <= 0.0) throw ConfigError("discriminator loss_weight must be > 0");
  if (cfg.depth < 1) throw ConfigError("discriminator depth must be >= 1");
  if (!cfg.spectral_norm) throw ConfigError("discriminator requires spectral normalization");
  const int64_t nf = cfg.base_channels;
  in_ = register_module("in", SNConv2d(3, nf, 3, 1, 1));
  convs_.push_back(in_);
  int64_t ch = nf;
  for (int64_t i = 0; i < cfg.depth; ++i) {
    auto c = register_module("down" + std::to_string(i), SNConv2d(ch, ch * 2, 4, 2, 1));
    down_.push_back(c);
    convs_.push_back(c);
    ch *= 2;
  }
  for (int64_t i = 0; i < cfg.depth; ++i) {
    auto c = register_module("up" + std::to_string(i), SNConv2d(ch, ch / 2, 3, 1, 1));
    up_.push_back(c);
    convs_.push_back(c);
    ch /= 2;
  }
  refine_ = register_module("refine", SNConv2d(nf, nf, 3, 1, 1));
  out_ = register_module("out", SNConv2d(nf, 1, 3, 1, 1));
  convs_.push_back(refine_);
  convs_.push_back(out_);
}

torch::Tensor UNetDiscriminatorImpl::forward(const torch::Tensor& x) {
  const auto lrelu = [](const torch::Tensor& t) {
    return F::leaky_relu(t, F::LeakyReLUFuncOptions().negative_slope(0.2));
  };
  std::vector<torch::Tensor> skips;
  auto h = lrelu(in_(x));
  for (auto& d : down_) {
    skips.push_back(h);
    h = lrelu(d(h));
  }
  for (size_t i = 0; i < up_.size(); ++i) {
    h = F::interpolate(h, F::InterpolateFuncOptions()
                              .scale_factor(std::vector<double>{2.0, 2.0})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    h = lrelu(up_[i](h)) + skips[skips.size() - 1 - i];
  }
  return out_(lrelu(refine_(h)));
}

torch::Tensor hinge_discriminator_loss(const torch::Tensor& real_logits,
                                       const torch::Tensor& fake_logits) {
  return torch::relu(1.0 - real_logits).mean() + torch::relu(1.0 + fake_logits).mean();
}

torch::Tensor hinge_generator_loss(const torch::Tensor& fake_logits) { return -fake_logits.mean(); }

}  // namespace wavecap::disc
