#include "wavecap/wavelet.hpp"

#include <torch/torch.h>

#include <string>

#include "wavecap/errors.hpp"

namespace wavecap::wavelet {
namespace {

using torch::indexing::Slice;

void require_even_spatial(const torch::Tensor& x, const char* what) {
  if (x.dim() < 2) {
    throw ShapeError(std::string(what) + ": expected at least 2 dimensions, got " +
                     std::to_string(x.dim()));
  }
  const auto h = x.size(-2);
  const auto w = x.size(-1);
  if (h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0) {
    throw ShapeError(std::string(what) + ": spatial size " + std::to_string(h) + "x" +
                     std::to_string(w) + " is not even");
  }
}

// The four polyphase components of every 2x2 block.
struct Quad {
  torch::Tensor a, b, c, d;
};

Quad split(const torch::Tensor& x) {
  const auto even = Slice(0, torch::indexing::None, 2);
  const auto odd = Slice(1, torch::indexing::None, 2);
  return {x.index({"...", even, even}), x.index({"...", even, odd}),
          x.index({"...", odd, even}), x.index({"...", odd, odd})};
}

}  // namespace

WaveletBands dwt2(const torch::Tensor& image) {
  require_even_spatial(image, "dwt2");
  const auto [a, b, c, d] = split(image);
  const auto s_ab = a + b;
  const auto s_cd = c + d;
  const auto d_ab = a - b;
  const auto d_cd = c - d;
  return {(s_ab + s_cd) * 0.5, (s_ab - s_cd) * 0.5, (d_ab + d_cd) * 0.5, (d_ab - d_cd) * 0.5};
}

torch::Tensor idwt2(const WaveletBands& bands) {
  const auto& ll = bands.ll;
  if (!ll.defined() || !bands.lh.defined() || !bands.hl.defined() || !bands.hh.defined()) {
    throw ShapeError("idwt2: undefined band");
  }
  if (ll.sizes() != bands.lh.sizes() || ll.sizes() != bands.hl.sizes() ||
      ll.sizes() != bands.hh.sizes()) {
    throw ShapeError("idwt2: band shapes differ");
  }
  if (ll.dim() < 2) {
    throw ShapeError("idwt2: bands need at least 2 dimensions");
  }
  const auto p = ll + bands.lh;
  const auto m = ll - bands.lh;
  const auto q = bands.hl + bands.hh;
  const auto r = bands.hl - bands.hh;
  const auto a = (p + q) * 0.5;
  const auto b = (p - q) * 0.5;
  const auto c = (m + r) * 0.5;
  const auto d = (m - r) * 0.5;

  // Interleave: rows alternate (a,b) / (c,d), columns alternate within a row.
  auto top = torch::stack({a, b}, -1).flatten(-2);     // [..., h, 2w]
  auto bottom = torch::stack({c, d}, -1).flatten(-2);  // [..., h, 2w]
  return torch::stack({top, bottom}, -2).flatten(-3, -2);
}

torch::Tensor lowpass_chain(const torch::Tensor& image, int k) {
  if (k < 1) {
    throw ShapeError("lowpass_chain: k must be positive, got " + std::to_string(k));
  }
  if (image.dim() < 2) {
    throw ShapeError("lowpass_chain: expected at least 2 dimensions");
  }
  const int64_t factor = int64_t{1} << (k - 1);
  if (image.size(-2) % factor != 0 || image.size(-1) % factor != 0) {
    throw ShapeError("lowpass_chain: spatial size " + std::to_string(image.size(-2)) + "x" +
                     std::to_string(image.size(-1)) + " not divisible by " +
                     std::to_string(factor));
  }
  auto x = image;
  for (int level = 1; level < k; ++level) {
    const auto [a, b, c, d] = split(x);
    // ll / 2 == (a+b+c+d) / 4; summed left to right so the result is
    // bit-identical to a plain 2x2 mean.
    x = (((a + b) + c) + d) * 0.25;
  }
  return x;
}

double band_energy(const WaveletBands& bands) {
  double total = 0.0;
  for (const auto* t : {&bands.ll, &bands.lh, &bands.hl, &bands.hh}) {
    total += t->to(torch::kFloat64).square().sum().item<double>();
  }
  return total;
}

}  // namespace wavecap::wavelet
