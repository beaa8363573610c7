#include "wavecap/vq.hpp"

#include <torch/torch.h>

#include <random>
#include <string>

#include "wavecap/errors.hpp"

namespace wavecap::vq {
namespace {

constexpr double kNormEps = 1e-12;

torch::Tensor unit_rows(const torch::Tensor& m) {
  return torch::nn::functional::normalize(
      m, torch::nn::functional::NormalizeFuncOptions().p(2).dim(-1).eps(kNormEps));
}

}  // namespace

CodebookImpl::CodebookImpl(int64_t size, int64_t dim, uint64_t seed) {
  if (size < 2) throw ConfigError("codebook size must be >= 2, got " + std::to_string(size));
  if (dim < 1) throw ConfigError("codebook dim must be >= 1, got " + std::to_string(dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  auto init = torch::empty({size, dim}, torch::kFloat32);
  auto* p = init.data_ptr<float>();
  for (int64_t i = 0; i < size * dim; ++i) p[i] = dist(rng);
  vectors = register_parameter("vectors", unit_rows(init));
  usage = register_buffer("usage", torch::zeros({size}, torch::kInt64));
}

void CodebookImpl::renormalize() {
  torch::NoGradGuard guard;
  vectors.copy_(unit_rows(vectors));
}

void CodebookImpl::record_usage(const torch::Tensor& indices) {
  torch::NoGradGuard guard;
  usage.add_(torch::bincount(indices.reshape({-1}).to(torch::kInt64), {}, size()));
}

Codebook codebook_init(int64_t size, int64_t dim, uint64_t seed) {
  return Codebook(size, dim, seed);
}

QuantizeResult quantize(const torch::Tensor& z, const Codebook& codebook) {
  if (z.dim() != 4) {
    throw ShapeError("quantize: expected [B, d, h, w], got " + std::to_string(z.dim()) + " dims");
  }
  if (z.size(1) != codebook->dim()) {
    throw ShapeError("quantize: latent channel " + std::to_string(z.size(1)) +
                     " != codebook dim " + std::to_string(codebook->dim()));
  }
  const auto batch = z.size(0);
  const auto h = z.size(2);
  const auto w = z.size(3);
  const auto d = z.size(1);

  auto flat = z.permute({0, 2, 3, 1}).reshape({-1, d});
  QuantizeResult out;
  {
    torch::NoGradGuard guard;
    out.zero_norm_vectors = (flat.norm(2, -1) <= kNormEps).sum().item<int64_t>();
  }
  auto z_unit = unit_rows(flat);
  auto rows = unit_rows(codebook->vectors);

  torch::Tensor idx;
  {
    torch::NoGradGuard guard;
    // ||u - e||^2 = 2 - 2 u.e on the unit sphere.
    auto dist = 2.0 - 2.0 * torch::matmul(z_unit, rows.t());
    idx = dist.argmin(-1);
  }
  auto selected = rows.index_select(0, idx);

  out.codebook_loss = (selected - z_unit.detach()).square().mean();
  out.commitment_loss = (z_unit - selected.detach()).square().mean();

  // Forward value: the selected row exactly. Backward: identity onto z.
  auto straight = selected.detach() + (flat - flat.detach());
  out.quantized = straight.reshape({batch, h, w, d}).permute({0, 3, 1, 2});
  out.indices = idx.reshape({batch, h, w});
  return out;
}

torch::Tensor lookup(const torch::Tensor& indices, const Codebook& codebook) {
  auto idx = indices.to(torch::kInt64);
  if (idx.dim() == 2) idx = idx.unsqueeze(0);
  if (idx.dim() != 3) throw ShapeError("lookup: expected [B, h, w] or [h, w] indices");
  if (idx.numel() > 0) {
    const auto lo = idx.min().item<int64_t>();
    const auto hi = idx.max().item<int64_t>();
    if (lo < 0 || hi >= codebook->size()) {
      throw IndexError("lookup: index out of range [0, " + std::to_string(codebook->size()) +
                       "): saw " + std::to_string(lo < 0 ? lo : hi));
    }
  }
  auto rows = unit_rows(codebook->vectors);
  auto emb = rows.index_select(0, idx.reshape({-1}));
  return emb.reshape({idx.size(0), idx.size(1), idx.size(2), codebook->dim()})
      .permute({0, 3, 1, 2});
}

}  // namespace wavecap::vq
