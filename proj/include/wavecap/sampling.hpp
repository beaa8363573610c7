#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "wavecap/biart.hpp"

namespace wavecap::sampling {

using biart::TokenId;

struct SamplerConfig {
  double topk_fraction = 0.10;
  double top_p = 0.95;
  int64_t n_candidates = 64;
  int64_t caption_tokens = 32;
  int64_t keyword_tokens = 48;
  int64_t top_keyword_lists = 8;
  int64_t keyword_min_count = 3;
  double temperature = 1.0;
  double guidance_scale = 1.0;  // classifier-free guidance; 1 disables the null branch
  bool greedy = false;          // argmax decoding instead of sampling
  uint64_t seed = 0;
  int64_t workers = 1;
  // Text ids at or above this are never drawn (0: the whole text block). Set
  // from the loaded vocabulary at run time, not part of the config file.
  int64_t text_vocab_limit = 0;

  void validate() const;
};

struct CaptionCandidate {
  std::vector<TokenId> tokens;  // target-modality ids, end token excluded
  std::string text;
  double score = 0.0;
  int64_t index = 0;            // candidate number, fixes its RNG stream
  bool ended = false;           // text candidate emitted the end token
};

/// Keeps the k = max(1, floor(fraction * V)) largest entries of a 1-D logit
/// row and sets the rest to -inf. Ties go to the lower index.
torch::Tensor topk_fraction_filter(const torch::Tensor& logits, double fraction);

/// Nucleus filter on a 1-D probability vector: keeps the shortest prefix of
/// the descending order (ties by lower index) whose mass reaches p, zeroes the
/// rest and renormalizes. Throws NormalizationError when the input does not
/// sum to 1 within 1e-6.
torch::Tensor top_p_filter(const torch::Tensor& probabilities, double p);

/// temperature -> top-k fraction -> softmax -> top-p, in float64.
torch::Tensor filtered_distribution(const torch::Tensor& logits, const SamplerConfig& cfg);

/// Inverse-CDF draw from a 1-D probability vector.
TokenId draw(const torch::Tensor& probabilities, std::mt19937_64& rng);

/// Independent stream for candidate `index` under `seed`.
std::mt19937_64 candidate_stream(uint64_t seed, int64_t index);

/// Scores a finished candidate against its reference block.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(const std::vector<TokenId>& reference, const CaptionCandidate& candidate,
                       biart::Direction direction) = 0;
};

/// Mean log-likelihood per target token (including the end token when the
/// candidate finished early) under the model itself.
class LikelihoodScorer final : public Scorer {
 public:
  explicit LikelihoodScorer(biart::BiART model) : model_(std::move(model)) {}
  double score(const std::vector<TokenId>& reference, const CaptionCandidate& candidate,
               biart::Direction direction) override;

 private:
  biart::BiART model_;
};

using TextDecoder = std::function<std::string(const std::vector<TokenId>&)>;

/// Ancestral sampling of n_candidates continuations of `reference` (raw ids
/// of the reference modality). Every step restricts the logits to the target
/// modality, applies guidance, the top-k fraction and nucleus filters, and
/// draws from the candidate's own stream, so the result does not depend on
/// the worker count. Text candidates stop at the end token, which is never
/// drawn as the first token. Candidates whose
/// scoring throws are dropped with a warning. `max_tokens` is clamped to the
/// target block length.
std::vector<CaptionCandidate> sample_candidates(biart::BiART& model,
                                                const std::vector<TokenId>& reference,
                                                biart::Direction direction, int64_t max_tokens,
                                                const SamplerConfig& cfg, Scorer* scorer,
                                                const TextDecoder& decoder = nullptr);

/// Descending by score, stable on ties, truncated to top_n. Throws DataError
/// on empty input.
std::vector<CaptionCandidate> rerank(std::vector<CaptionCandidate> candidates, int64_t top_n);

/// Comma split, whitespace trim, lowercase; empty pieces dropped.
std::vector<std::string> split_keywords(const std::string& text);

/// Keywords appearing in at least min_count of the lists (each list counts a
/// keyword once), ordered by count descending then first appearance.
std::vector<std::string> vote_keywords(const std::vector<std::string>& lists, int64_t min_count);

/// Top-1 caption for an image token grid.
CaptionCandidate caption(biart::BiART& model, const std::vector<TokenId>& image,
                         const SamplerConfig& cfg, Scorer* scorer, const TextDecoder& decoder);

/// Samples keyword-list candidates, keeps the top_keyword_lists by score and
/// votes. An empty top list yields no keywords.
std::vector<std::string> extract_keywords(biart::BiART& model, const std::vector<TokenId>& image,
                                          const SamplerConfig& cfg, Scorer* scorer,
                                          const TextDecoder& decoder);

/// Image token grid (raw codebook ids, row-major) sampled from text with
/// classifier-free guidance at cfg.guidance_scale.
std::vector<TokenId> generate_image(biart::BiART& model, const std::vector<TokenId>& text,
                                    const SamplerConfig& cfg, int64_t index = 0);

}  // namespace wavecap::sampling
