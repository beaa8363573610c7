#include "wavecap/layers.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <string>

#include "wavecap/errors.hpp"

namespace wavecap::layers {

torch::nn::Conv2d conv1x1(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

torch::nn::Conv2d conv3x3(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

torch::nn::Conv2d make_downsample(int64_t channels) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 4).stride(2).padding(1));
}

ResBlockImpl::ResBlockImpl(int64_t channels) {
  const int64_t inner = std::max<int64_t>(channels / 2, 4);
  act1_ = register_module("act1", torch::nn::PReLU(torch::nn::PReLUOptions().num_parameters(channels)));
  reduce_ = register_module("reduce", conv1x1(channels, inner));
  act2_ = register_module("act2", torch::nn::PReLU(torch::nn::PReLUOptions().num_parameters(inner)));
  conv_ = register_module("conv", conv3x3(inner, inner));
  act3_ = register_module("act3", torch::nn::PReLU(torch::nn::PReLUOptions().num_parameters(inner)));
  expand_ = register_module("expand", conv1x1(inner, channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  return x + expand_(act3_(conv_(act2_(reduce_(act1_(x))))));
}

UpsampleImpl::UpsampleImpl(int64_t channels) {
  conv_ = register_module("conv", conv3x3(channels, channels * 4));
  shuffle_ = register_module("shuffle", torch::nn::PixelShuffle(2));
}

torch::Tensor UpsampleImpl::forward(const torch::Tensor& x) { return shuffle_(conv_(x)); }

void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src) {
  torch::NoGradGuard guard;
  auto src_params = src.named_parameters(true);
  for (auto& item : dst.named_parameters(true)) {
    const auto* from = src_params.find(item.key());
    if (from == nullptr) throw ShapeError("copy_weights: source lacks parameter " + item.key());
    if (from->sizes() != item.value().sizes()) {
      throw ShapeError("copy_weights: shape mismatch for " + item.key());
    }
    item.value().copy_(*from);
  }
  auto src_buffers = src.named_buffers(true);
  for (auto& item : dst.named_buffers(true)) {
    const auto* from = src_buffers.find(item.key());
    if (from == nullptr) throw ShapeError("copy_weights: source lacks buffer " + item.key());
    if (from->sizes() != item.value().sizes()) {
      throw ShapeError("copy_weights: shape mismatch for buffer " + item.key());
    }
    item.value().copy_(*from);
  }
}

int64_t parameter_count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters(true)) n += p.numel();
  return n;
}

}  // namespace wavecap::layers
