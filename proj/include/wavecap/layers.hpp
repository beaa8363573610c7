#pragma once

#include <torch/nn/module.h>
#include <torch/nn/modules/activation.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/pixelshuffle.h>
#include <torch/nn/pimpl.h>

#include <cstdint>

namespace wavecap::layers {

// Pre-activation bottleneck residual block:
//   x + Conv1x1(PReLU(Conv3x3(PReLU(Conv1x1(PReLU(x))))))
// with the inner width at half the channel count (minimum 4).
class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::PReLU act1_{nullptr}, act2_{nullptr}, act3_{nullptr};
  torch::nn::Conv2d reduce_{nullptr}, conv_{nullptr}, expand_{nullptr};
};
TORCH_MODULE(ResBlock);

// Stride-2 4x4 convolution keeping the channel count.
torch::nn::Conv2d make_downsample(int64_t channels);

// PixelShuffle x2 upsampling: 3x3 conv to 4*channels, then sub-pixel rearrangement.
class UpsampleImpl : public torch::nn::Module {
 public:
  explicit UpsampleImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::PixelShuffle shuffle_{nullptr};
};
TORCH_MODULE(Upsample);

torch::nn::Conv2d conv1x1(int64_t in, int64_t out);
torch::nn::Conv2d conv3x3(int64_t in, int64_t out);

// Copies every parameter and buffer of `src` into `dst` by name. Shapes must
// match exactly; throws ShapeError otherwise.
void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src);

int64_t parameter_count(const torch::nn::Module& m);

}  // namespace wavecap::layers
