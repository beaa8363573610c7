#pragma once

#include <torch/nn/module.h>
#include <torch/nn/modules/embedding.h>
#include <torch/nn/modules/linear.h>
#include <torch/nn/modules/normalization.h>
#include <torch/nn/pimpl.h>
#include <torch/optim/adamw.h>

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "wavecap/schedule.hpp"

namespace wavecap::biart {

using TokenId = int64_t;

enum class Direction { ImageToText, TextToImage };
enum class Segment : int64_t { Reference = 0, Target = 1 };

struct BiARTConfig {
  int64_t layers = 4;
  int64_t model_dim = 128;
  int64_t heads = 4;
  int64_t text_len = 16;
  int64_t image_len = 64;
  int64_t text_vocab = 2048;
  int64_t image_vocab = 512;
  double dropout = 0.0;       // attention and residual dropout; unstated upstream
  double init_std = 0.02;     // embedding / projection init scale; unstated upstream
  int64_t ffn_mult = 4;
  TokenId pad_id = 0;         // reserved id inside the text vocabulary
  TokenId end_id = 1;         // text end-of-sequence id

  static BiARTConfig full();
  static BiARTConfig desk();

  int64_t sequence_length() const { return text_len + image_len; }
  // Positions the transformer sees: the direction-start slot plus every token.
  int64_t model_length() const { return sequence_length() + 1; }
  int64_t vocab_size() const { return text_vocab + image_vocab; }
  void validate() const;
};

/// Reference block followed by target block, in shared id space (image ids
/// are offset by text_vocab). The learned direction-start vector is not part
/// of `tokens`; the model prepends it.
struct BidirectionalSequence {
  std::vector<TokenId> tokens;
  std::vector<Segment> segments;
  std::vector<int64_t> positions;  // model positions, 1-based (0 is the start slot)
  std::vector<bool> loss_mask;     // token t is a training target
  Direction direction = Direction::ImageToText;
};

/// Lays out one (text, image) pair. `text` is padded with pad_id up to
/// text_len; `image` holds raw codebook indices and must have exactly
/// image_len entries. Throws TruncationError for over-length text and
/// ShapeError / IndexError for malformed image tokens.
///
/// The loss mask covers TARGET tokens except padding that follows the end
/// token (or, with all_positions, every token after the first).
BidirectionalSequence build_sequence(const BiARTConfig& cfg, const std::vector<TokenId>& text,
                                     const std::vector<TokenId>& image, Direction direction,
                                     bool all_positions = false);

// Bottleneck adapter: x + Up(act(Down(x))), act a fixed-slope leaky ReLU.
class AdapterImpl : public torch::nn::Module {
 public:
  AdapterImpl(int64_t model_dim, int64_t bottleneck);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear down{nullptr}, up{nullptr};
};
TORCH_MODULE(Adapter);

// Per-layer attention key/value cache for incremental decoding.
struct KVCache {
  std::vector<torch::Tensor> keys, values;  // [B, heads, T, head_dim] per layer
  int64_t length() const { return keys.empty() || !keys[0].defined() ? 0 : keys[0].size(2); }
  KVCache clone() const;
};

class BlockImpl : public torch::nn::Module {
 public:
  explicit BlockImpl(const BiARTConfig& cfg);
  // `cache` may be null; when given, its entry for this layer is extended.
  torch::Tensor forward(const torch::Tensor& x, torch::Tensor* cache_k, torch::Tensor* cache_v,
                        bool use_adapter);

  torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
  Adapter adapter{nullptr};

 private:
  int64_t heads_;
  double dropout_;
};
TORCH_MODULE(Block);

/// Decoder-only transformer over the joint text+image vocabulary with
/// token, position and segment embeddings and a learned direction-start
/// vector at position 0.
class BiARTImpl : public torch::nn::Module {
 public:
  explicit BiARTImpl(const BiARTConfig& cfg);

  const BiARTConfig& config() const { return cfg_; }

  /// tokens/segments: [B, T] int64, covering model positions
  /// [offset + 1, offset + T]. Without a cache the start slot is prepended
  /// and the result is [B, T + 1, V]: row i predicts token i. With a cache,
  /// only the new rows are returned ([B, T, V], row i predicts token
  /// offset + i + 1) and the cache is extended. When the cache is empty the
  /// start slot is included, as in the uncached case.
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& segments,
                        KVCache* cache = nullptr);

  torch::Tensor forward(const BidirectionalSequence& seq);
  torch::Tensor forward(const std::vector<BidirectionalSequence>& batch);

  /// Names of the embedding tensors (exempt from weight decay).
  std::vector<std::string> embedding_parameter_names() const;

  bool adapters_enabled = true;

  torch::nn::Embedding token_embedding{nullptr}, position_embedding{nullptr},
      segment_embedding{nullptr};
  torch::Tensor start;
  std::vector<Block> blocks;
  torch::nn::LayerNorm ln_final{nullptr};
  torch::nn::Linear head{nullptr};

 private:
  BiARTConfig cfg_;
};
TORCH_MODULE(BiART);

/// Stacks sequences into [B, T] token / segment tensors and a [B, T] bool mask.
struct PackedBatch {
  torch::Tensor tokens, segments, loss_mask;
};
PackedBatch pack(const std::vector<BidirectionalSequence>& seqs);

/// Mean cross-entropy over masked tokens for logits [B, T + 1, V] (as
/// returned by the uncached forward).
torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const PackedBatch& batch);

struct TrainingPair {
  std::vector<TokenId> text;   // encoded + padded caption, length text_len
  std::vector<TokenId> image;  // codebook indices, length image_len
};

enum class DirectionMode { Both, ImageToTextOnly, TextToImageOnly };

struct LossPair {
  double image_to_text = 0.0;  // nats per target token
  double text_to_image = 0.0;
};

struct BiARTTrainState {
  std::unique_ptr<torch::optim::AdamW> optimizer;
  LrSchedule schedule;
  int64_t step = 0;
  DirectionMode mode = DirectionMode::Both;
  bool all_positions = false;
  bool unstable_mode_warned = false;
  int no_decay_group = -1;  // index into optimizer->param_groups(), -1 if absent

  double apply_lr();
};

/// AdamW with two groups: embedding tensors (no weight decay) and the rest.
/// Only parameters with requires_grad participate.
BiARTTrainState make_train_state(BiART& model, const OptimConfig& cfg, int64_t total_steps,
                                 DirectionMode mode = DirectionMode::Both);

/// Parameters placed in the zero-weight-decay group.
std::vector<torch::Tensor> no_decay_parameters(const BiARTTrainState& state);

/// Builds both direction sequences for every pair, sums their target-token
/// losses and takes one optimizer step. A single-direction mode is accepted
/// but logs a warning (one-direction training is known to diverge). Throws
/// NonFiniteLossError on a non-finite loss.
LossPair bidirectional_train_step(BiART& model, const std::vector<TrainingPair>& batch,
                                  BiARTTrainState& state);

/// Evaluates both direction losses without updating anything.
LossPair evaluate_losses(BiART& model, const std::vector<TrainingPair>& batch);

/// uncond + alpha_c * (cond - uncond). Throws ShapeError on shape mismatch.
torch::Tensor guided_logits(const torch::Tensor& cond_logits, const torch::Tensor& uncond_logits,
                            double alpha_c);

/// Picks a token from a 1-D logit row already restricted to the target
/// modality (excluded entries are -inf).
using Sampler = std::function<TokenId(const torch::Tensor& logits)>;

/// Half-open id range of the modality generated in `direction`.
std::pair<TokenId, TokenId> target_vocab_slice(const BiARTConfig& cfg, Direction direction);

/// Sets every logit outside the target slice (and the pad id, for text) to -inf.
torch::Tensor mask_to_target(const BiARTConfig& cfg, const torch::Tensor& logits,
                             Direction direction);

/// Runs the model on `prefix` (a reference block, optionally followed by part
/// of the target) and returns the next token drawn by `sampler` from the
/// final-position logits restricted to the target vocabulary slice.
TokenId generate_step(BiART& model, const std::vector<TokenId>& prefix, Direction direction,
                      const Sampler& sampler);

/// Reference block for `direction` replaced by pad tokens (the null
/// condition used for classifier-free guidance).
std::vector<TokenId> null_reference(const BiARTConfig& cfg, Direction direction);

/// Segment labels for a prefix of length n in `direction`.
std::vector<Segment> prefix_segments(const BiARTConfig& cfg, Direction direction, size_t n);

/// Reference block layout helpers.
int64_t reference_length(const BiARTConfig& cfg, Direction direction);
int64_t target_length(const BiARTConfig& cfg, Direction direction);

}  // namespace wavecap::biart
