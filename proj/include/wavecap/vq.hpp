#pragma once

#include <torch/nn/module.h>
#include <torch/nn/pimpl.h>

#include <cstdint>

namespace wavecap::vq {

/// Shared visual codebook: `vectors` is a d_Z x d parameter whose rows are
/// kept at unit L2 norm at rest (see renormalize()). `usage` counts how many
/// latent vectors selected each entry since construction.
///
/// There is no moving-average update path; the rows change only through
/// optimizer steps on `vectors`.
class CodebookImpl : public torch::nn::Module {
 public:
  CodebookImpl(int64_t size, int64_t dim, uint64_t seed);

  int64_t size() const { return vectors.size(0); }
  int64_t dim() const { return vectors.size(1); }

  /// Re-projects every row onto the unit sphere. Call after each optimizer step.
  void renormalize();

  /// Adds the histogram of `indices` to the usage counters.
  void record_usage(const torch::Tensor& indices);

  torch::Tensor vectors;
  torch::Tensor usage;
};
TORCH_MODULE(Codebook);

/// Seeded construction: rows are drawn uniformly from [-1, 1]^d and then
/// L2-normalized. Same seed gives an identical codebook.
Codebook codebook_init(int64_t size, int64_t dim, uint64_t seed);

struct QuantizeResult {
  torch::Tensor indices;    // [B, h, w] int64, each in [0, d_Z)
  torch::Tensor quantized;  // [B, d, h, w]; values are codebook rows, gradient flows to z
  torch::Tensor codebook_loss;    // ||sg(normalize(z)) - e||^2 mean
  torch::Tensor commitment_loss;  // ||normalize(z) - sg(e)||^2 mean (unweighted)
  int64_t zero_norm_vectors = 0;  // inputs normalized through the epsilon fallback

  /// codebook_loss + beta * commitment_loss
  torch::Tensor loss(double beta) const { return codebook_loss + beta * commitment_loss; }
};

/// L2-normalized nearest-neighbour quantization of a channels-first latent
/// map z [B, d, h, w].
///
/// Both z and the codebook rows are normalized before distances are taken,
/// so the selected row minimizes Euclidean distance on the unit sphere. The
/// forward value of `quantized` is exactly the selected unit-norm row; its
/// gradient is passed to z unchanged (straight-through). Ties go to the lower
/// index. Throws ShapeError when the channel dimension differs from d.
QuantizeResult quantize(const torch::Tensor& z, const Codebook& codebook);

/// Embeds an index grid [B, h, w] (or [h, w]) as a channels-first map of
/// normalized codebook rows. Throws IndexError on any index outside [0, d_Z).
torch::Tensor lookup(const torch::Tensor& indices, const Codebook& codebook);

}  // namespace wavecap::vq
