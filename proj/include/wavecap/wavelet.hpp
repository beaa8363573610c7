#pragma once

#include <torch/types.h>

namespace wavecap::wavelet {

// Output of one level of the 2D Haar transform. Every band has the shape of
// the input with the two trailing (spatial) dimensions halved.
struct WaveletBands {
  torch::Tensor ll;  // low-pass approximation
  torch::Tensor lh;  // row difference (horizontal edges)
  torch::Tensor hl;  // column difference (vertical edges)
  torch::Tensor hh;  // diagonal detail
};

// Orthonormal single-level Haar decomposition. `image` is channels-first:
// [..., H, W] with any number of leading dimensions (typically C or N,C).
// For each 2x2 block [[a, b], [c, d]]:
//   ll = (a+b+c+d)/2, lh = (a+b-c-d)/2, hl = (a-b+c-d)/2, hh = (a-b-c+d)/2
// Throws ShapeError when H or W is odd or the tensor has fewer than 2 dims.
WaveletBands dwt2(const torch::Tensor& image);

// Exact inverse of dwt2. Throws ShapeError on inconsistent band shapes.
torch::Tensor idwt2(const WaveletBands& bands);

// Input of the k-th stage-1 encoder: the low-pass band taken k-1 times, each
// level rescaled by 1/2 so the value range of the original image is kept.
// k == 1 returns the input unchanged. The result equals iterated 2x2 mean
// pooling.
torch::Tensor lowpass_chain(const torch::Tensor& image, int k);

// Sum of squares over all elements of the four bands.
double band_energy(const WaveletBands& bands);

}  // namespace wavecap::wavelet
