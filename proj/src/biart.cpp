#include "wavecap/biart.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include "wavecap/errors.hpp"

namespace wavecap::biart {
namespace F = torch::nn::functional;

BiARTConfig BiARTConfig::full() {
  BiARTConfig c;
  c.layers = 24;
  c.model_dim = 1280;
  c.heads = 10;
  c.text_len = 64;
  c.image_len = 1024;
  c.text_vocab = 49408;
  c.image_vocab = 8192;
  return c;
}

BiARTConfig BiARTConfig::desk() { return BiARTConfig{}; }

void BiARTConfig::validate() const {
  if (layers < 1) throw ConfigError("biart: layers must be >= 1");
  if (heads < 1 || model_dim % heads != 0) {
    throw ConfigError("biart: model_dim " + std::to_string(model_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  if (text_len < 1 || image_len < 1) throw ConfigError("biart: block lengths must be >= 1");
  if (text_vocab < 2 || image_vocab < 2) throw ConfigError("biart: vocabularies too small");
  if (pad_id < 0 || pad_id >= text_vocab || end_id < 0 || end_id >= text_vocab) {
    throw ConfigError("biart: pad/end ids must lie in the text vocabulary");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("biart: dropout must lie in [0, 1)");
}

int64_t reference_length(const BiARTConfig& cfg, Direction direction) {
  return direction == Direction::ImageToText ? cfg.image_len : cfg.text_len;
}

int64_t target_length(const BiARTConfig& cfg, Direction direction) {
  return direction == Direction::ImageToText ? cfg.text_len : cfg.image_len;
}

BidirectionalSequence build_sequence(const BiARTConfig& cfg, const std::vector<TokenId>& text,
                                     const std::vector<TokenId>& image, Direction direction,
                                     bool all_positions) {
  if (static_cast<int64_t>(text.size()) > cfg.text_len) {
    throw TruncationError("caption has " + std::to_string(text.size()) + " tokens, limit " +
                          std::to_string(cfg.text_len));
  }
  if (static_cast<int64_t>(image.size()) != cfg.image_len) {
    throw ShapeError("image block has " + std::to_string(image.size()) + " tokens, expected " +
                     std::to_string(cfg.image_len));
  }
  std::vector<TokenId> text_block(text);
  text_block.resize(static_cast<size_t>(cfg.text_len), cfg.pad_id);
  for (const auto t : text_block) {
    if (t < 0 || t >= cfg.text_vocab) throw IndexError("text token " + std::to_string(t) + " out of range");
  }
  std::vector<TokenId> image_block;
  image_block.reserve(image.size());
  for (const auto t : image) {
    if (t < 0 || t >= cfg.image_vocab) throw IndexError("image token " + std::to_string(t) + " out of range");
    image_block.push_back(t + cfg.text_vocab);
  }

  BidirectionalSequence seq;
  seq.direction = direction;
  const bool image_first = direction == Direction::ImageToText;
  const auto& ref = image_first ? image_block : text_block;
  const auto& tgt = image_first ? text_block : image_block;
  seq.tokens.insert(seq.tokens.end(), ref.begin(), ref.end());
  seq.tokens.insert(seq.tokens.end(), tgt.begin(), tgt.end());
  seq.segments.assign(ref.size(), Segment::Reference);
  seq.segments.insert(seq.segments.end(), tgt.size(), Segment::Target);
  seq.positions.resize(seq.tokens.size());
  for (size_t i = 0; i < seq.positions.size(); ++i) seq.positions[i] = static_cast<int64_t>(i) + 1;

  seq.loss_mask.assign(seq.tokens.size(), false);
  for (size_t i = 0; i < seq.tokens.size(); ++i) {
    if (all_positions) {
      seq.loss_mask[i] = true;
      continue;
    }
    if (seq.segments[i] != Segment::Target) continue;
    // Padding in a text target carries no information.
    seq.loss_mask[i] = image_first ? seq.tokens[i] != cfg.pad_id : true;
  }
  return seq;
}

AdapterImpl::AdapterImpl(int64_t model_dim, int64_t bottleneck) {
  if (bottleneck < 1) throw ConfigError("adapter bottleneck must be >= 1");
  if (bottleneck >= model_dim) throw ConfigError("adapter bottleneck must be < model_dim");
  down = register_module("down", torch::nn::Linear(model_dim, bottleneck));
  up = register_module("up", torch::nn::Linear(bottleneck, model_dim));
  torch::NoGradGuard guard;
  torch::nn::init::normal_(down->weight, 0.0, 1e-2);
  torch::nn::init::zeros_(down->bias);
  torch::nn::init::zeros_(up->weight);
  torch::nn::init::zeros_(up->bias);
}

torch::Tensor AdapterImpl::forward(const torch::Tensor& x) {
  // Slope 0.25 is PReLU's initial value, held fixed.
  return x + up(F::leaky_relu(down(x), F::LeakyReLUFuncOptions().negative_slope(0.25)));
}

KVCache KVCache::clone() const {
  KVCache c;
  for (const auto& k : keys) c.keys.push_back(k.defined() ? k.clone() : k);
  for (const auto& v : values) c.values.push_back(v.defined() ? v.clone() : v);
  return c;
}

BlockImpl::BlockImpl(const BiARTConfig& cfg) : heads_(cfg.heads), dropout_(cfg.dropout) {
  const auto d = cfg.model_dim;
  ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  qkv = register_module("qkv", torch::nn::Linear(d, 3 * d));
  proj = register_module("proj", torch::nn::Linear(d, d));
  ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  fc1 = register_module("fc1", torch::nn::Linear(d, cfg.ffn_mult * d));
  fc2 = register_module("fc2", torch::nn::Linear(cfg.ffn_mult * d, d));
}

torch::Tensor BlockImpl::forward(const torch::Tensor& x, torch::Tensor* cache_k,
                                 torch::Tensor* cache_v, bool use_adapter) {
  const auto b = x.size(0);
  const auto t = x.size(1);
  const auto d = x.size(2);
  const auto hd = d / heads_;

  auto parts = qkv(ln1(x)).view({b, t, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
  auto q = parts[0];
  auto k = parts[1];
  auto v = parts[2];
  int64_t past = 0;
  if (cache_k != nullptr) {
    if (cache_k->defined()) {
      past = cache_k->size(2);
      k = torch::cat({*cache_k, k}, 2);
      v = torch::cat({*cache_v, v}, 2);
    }
    *cache_k = k;
    *cache_v = v;
  }
  const auto total = k.size(2);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
  // Query i sits at absolute position past + i and sees keys 0..past + i.
  auto blocked = torch::ones({t, total}, torch::TensorOptions().dtype(torch::kBool)).triu(past + 1);
  scores = scores.masked_fill(blocked, -std::numeric_limits<double>::infinity());
  auto att = torch::softmax(scores, -1);
  if (dropout_ > 0.0 && is_training()) att = F::dropout(att, F::DropoutFuncOptions().p(dropout_));
  auto y = torch::matmul(att, v).transpose(1, 2).reshape({b, t, d});
  y = proj(y);
  if (dropout_ > 0.0 && is_training()) y = F::dropout(y, F::DropoutFuncOptions().p(dropout_));
  auto h = x + y;
  auto f = fc2(F::gelu(fc1(ln2(h))));
  if (dropout_ > 0.0 && is_training()) f = F::dropout(f, F::DropoutFuncOptions().p(dropout_));
  h = h + f;
  if (use_adapter && adapter) h = adapter(h);
  return h;
}

BiARTImpl::BiARTImpl(const BiARTConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  const auto d = cfg.model_dim;
  token_embedding = register_module("token_embedding", torch::nn::Embedding(cfg.vocab_size(), d));
  position_embedding =
      register_module("position_embedding", torch::nn::Embedding(cfg.model_length(), d));
  segment_embedding = register_module("segment_embedding", torch::nn::Embedding(2, d));
  start = register_parameter("start", torch::zeros({1, 1, d}));
  for (int64_t i = 0; i < cfg.layers; ++i) {
    blocks.push_back(register_module("block" + std::to_string(i), Block(cfg)));
  }
  ln_final = register_module("ln_final", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  head = register_module("head", torch::nn::Linear(d, cfg.vocab_size()));

  torch::NoGradGuard guard;
  for (auto& p : named_parameters(true)) {
    const auto& name = p.key();
    auto& t = p.value();
    if (name.find("ln") != std::string::npos) continue;  // LayerNorm keeps ones / zeros
    if (name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0) {
      t.zero_();
    } else {
      t.normal_(0.0, cfg.init_std);
    }
  }
}

std::vector<std::string> BiARTImpl::embedding_parameter_names() const {
  return {"token_embedding.weight", "position_embedding.weight", "segment_embedding.weight", "start"};
}

torch::Tensor BiARTImpl::forward(const torch::Tensor& tokens, const torch::Tensor& segments,
                                 KVCache* cache) {
  if (tokens.dim() != 2 || segments.sizes() != tokens.sizes()) {
    throw ShapeError("biart forward: tokens and segments must both be [B, T]");
  }
  const auto b = tokens.size(0);
  const auto t = tokens.size(1);
  const int64_t offset = cache != nullptr ? cache->length() : 0;
  const bool with_start = offset == 0;
  const int64_t rows = t + (with_start ? 1 : 0);
  if (offset + rows > cfg_.model_length()) {
    throw ShapeError("biart forward: sequence of " + std::to_string(offset + rows) +
                     " positions exceeds " + std::to_string(cfg_.model_length()));
  }
  if (t > 0) {
    const auto lo = tokens.min().item<int64_t>();
    const auto hi = tokens.max().item<int64_t>();
    if (lo < 0 || hi >= cfg_.vocab_size()) throw IndexError("biart forward: token id out of range");
  }

  auto x = token_embedding(tokens) + segment_embedding(segments);
  if (with_start) {
    auto ref = torch::full({b, 1}, static_cast<int64_t>(Segment::Reference), tokens.options());
    auto s = start.expand({b, 1, cfg_.model_dim}) + segment_embedding(ref);
    x = torch::cat({s, x}, 1);
  }
  auto pos = torch::arange(offset, offset + rows, tokens.options());
  x = x + position_embedding(pos).unsqueeze(0);

  if (cache != nullptr && cache->keys.empty()) {
    cache->keys.resize(blocks.size());
    cache->values.resize(blocks.size());
  }
  for (size_t i = 0; i < blocks.size(); ++i) {
    x = blocks[i]->forward(x, cache ? &cache->keys[i] : nullptr, cache ? &cache->values[i] : nullptr,
                           adapters_enabled);
  }
  return head(ln_final(x));
}

PackedBatch pack(const std::vector<BidirectionalSequence>& seqs) {
  if (seqs.empty()) throw ShapeError("pack: empty batch");
  const auto n = static_cast<int64_t>(seqs.size());
  const auto t = static_cast<int64_t>(seqs[0].tokens.size());
  PackedBatch out;
  out.tokens = torch::empty({n, t}, torch::kInt64);
  out.segments = torch::empty({n, t}, torch::kInt64);
  out.loss_mask = torch::empty({n, t}, torch::kBool);
  auto tok = out.tokens.accessor<int64_t, 2>();
  auto seg = out.segments.accessor<int64_t, 2>();
  auto msk = out.loss_mask.accessor<bool, 2>();
  for (int64_t i = 0; i < n; ++i) {
    const auto& s = seqs[static_cast<size_t>(i)];
    if (static_cast<int64_t>(s.tokens.size()) != t) throw ShapeError("pack: ragged batch");
    for (int64_t j = 0; j < t; ++j) {
      tok[i][j] = s.tokens[static_cast<size_t>(j)];
      seg[i][j] = static_cast<int64_t>(s.segments[static_cast<size_t>(j)]);
      msk[i][j] = s.loss_mask[static_cast<size_t>(j)];
    }
  }
  return out;
}

torch::Tensor BiARTImpl::forward(const BidirectionalSequence& seq) { return forward(std::vector{seq}); }

torch::Tensor BiARTImpl::forward(const std::vector<BidirectionalSequence>& batch) {
  auto packed = pack(batch);
  return forward(packed.tokens, packed.segments);
}

torch::Tensor masked_cross_entropy(const torch::Tensor& logits, const PackedBatch& batch) {
  const auto t = batch.tokens.size(1);
  auto pred = logits.narrow(1, 0, t);
  auto ce = F::cross_entropy(pred.reshape({-1, pred.size(-1)}), batch.tokens.reshape({-1}),
                             F::CrossEntropyFuncOptions().reduction(torch::kNone));
  auto mask = batch.loss_mask.reshape({-1}).to(ce.dtype());
  return (ce * mask).sum() / mask.sum().clamp_min(1.0);
}

double BiARTTrainState::apply_lr() {
  const double lr = schedule.at(step);
  for (auto& group : optimizer->param_groups()) {
    static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
  }
  return lr;
}

BiARTTrainState make_train_state(BiART& model, const OptimConfig& cfg, int64_t total_steps,
                                 DirectionMode mode) {
  const auto names = model->embedding_parameter_names();
  const std::set<std::string> embed(names.begin(), names.end());
  std::vector<torch::Tensor> decay, no_decay;
  for (auto& p : model->named_parameters(true)) {
    if (!p.value().requires_grad()) continue;
    (embed.count(p.key()) != 0 ? no_decay : decay).push_back(p.value());
  }
  torch::optim::AdamWOptions opts(cfg.lr);
  opts.betas({cfg.beta1, cfg.beta2}).eps(cfg.eps).weight_decay(cfg.weight_decay);
  auto plain = opts;
  plain.weight_decay(0.0);

  std::vector<torch::optim::OptimizerParamGroup> groups;
  int no_decay_group = -1;
  if (!decay.empty()) {
    groups.emplace_back(decay, std::make_unique<torch::optim::AdamWOptions>(opts));
  }
  if (!no_decay.empty()) {
    no_decay_group = static_cast<int>(groups.size());
    groups.emplace_back(no_decay, std::make_unique<torch::optim::AdamWOptions>(plain));
  }
  if (groups.empty()) throw ConfigError("biart: no trainable parameters");
  BiARTTrainState state{std::make_unique<torch::optim::AdamW>(std::move(groups), opts),
                        LrSchedule(cfg, total_steps)};
  state.mode = mode;
  state.no_decay_group = no_decay_group;
  return state;
}

std::vector<torch::Tensor> no_decay_parameters(const BiARTTrainState& state) {
  if (state.no_decay_group < 0) return {};
  return state.optimizer->param_groups()[static_cast<size_t>(state.no_decay_group)].params();
}

namespace {

struct DirectionLosses {
  torch::Tensor i2t, t2i;
};

DirectionLosses direction_losses(BiART& model, const std::vector<TrainingPair>& batch,
                                 DirectionMode mode, bool all_positions) {
  const auto& cfg = model->config();
  std::vector<BidirectionalSequence> i2t, t2i;
  for (const auto& p : batch) {
    if (mode != DirectionMode::TextToImageOnly) {
      i2t.push_back(build_sequence(cfg, p.text, p.image, Direction::ImageToText, all_positions));
    }
    if (mode != DirectionMode::ImageToTextOnly) {
      t2i.push_back(build_sequence(cfg, p.text, p.image, Direction::TextToImage, all_positions));
    }
  }
  std::vector<BidirectionalSequence> all(i2t);
  all.insert(all.end(), t2i.begin(), t2i.end());
  auto packed = pack(all);
  auto logits = model->forward(packed.tokens, packed.segments);

  DirectionLosses out;
  const auto n_i2t = static_cast<int64_t>(i2t.size());
  const auto n_t2i = static_cast<int64_t>(t2i.size());
  const auto slice = [&](int64_t start, int64_t len) {
    PackedBatch part{packed.tokens.narrow(0, start, len), packed.segments.narrow(0, start, len),
                     packed.loss_mask.narrow(0, start, len)};
    return masked_cross_entropy(logits.narrow(0, start, len), part);
  };
  if (n_i2t > 0) out.i2t = slice(0, n_i2t);
  if (n_t2i > 0) out.t2i = slice(n_i2t, n_t2i);
  return out;
}

double value_or_nan(const torch::Tensor& t) {
  return t.defined() ? t.item<double>() : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

LossPair bidirectional_train_step(BiART& model, const std::vector<TrainingPair>& batch,
                                  BiARTTrainState& state) {
  if (batch.empty()) throw ShapeError("bidirectional_train_step: empty batch");
  if (state.mode != DirectionMode::Both && !state.unstable_mode_warned) {
    std::cerr << "warning: single-direction training is unstable and may diverge\n";
    state.unstable_mode_warned = true;
  }
  model->train();
  state.apply_lr();
  auto losses = direction_losses(model, batch, state.mode, state.all_positions);
  torch::Tensor total;
  if (losses.i2t.defined()) total = losses.i2t;
  if (losses.t2i.defined()) total = total.defined() ? total + losses.t2i : losses.t2i;

  LossPair out{value_or_nan(losses.i2t), value_or_nan(losses.t2i)};
  if (!std::isfinite(total.item<double>())) {
    std::ostringstream snap;
    snap << "step=" << state.step << " i2t=" << out.image_to_text << " t2i=" << out.text_to_image;
    throw NonFiniteLossError("non-finite transformer loss: " + snap.str(), snap.str());
  }
  state.optimizer->zero_grad();
  total.backward();
  state.optimizer->step();
  ++state.step;
  return out;
}

LossPair evaluate_losses(BiART& model, const std::vector<TrainingPair>& batch) {
  torch::NoGradGuard guard;
  const bool was_training = model->is_training();
  model->eval();
  auto losses = direction_losses(model, batch, DirectionMode::Both, false);
  model->train(was_training);
  return {losses.i2t.item<double>(), losses.t2i.item<double>()};
}

torch::Tensor guided_logits(const torch::Tensor& cond_logits, const torch::Tensor& uncond_logits,
                            double alpha_c) {
  if (cond_logits.sizes() != uncond_logits.sizes()) {
    throw ShapeError("guided_logits: conditional and unconditional shapes differ");
  }
  if (alpha_c == 1.0) return cond_logits.clone();
  if (alpha_c == 0.0) return uncond_logits.clone();
  return uncond_logits + alpha_c * (cond_logits - uncond_logits);
}

std::pair<TokenId, TokenId> target_vocab_slice(const BiARTConfig& cfg, Direction direction) {
  if (direction == Direction::ImageToText) return {0, cfg.text_vocab};
  return {cfg.text_vocab, cfg.text_vocab + cfg.image_vocab};
}

torch::Tensor mask_to_target(const BiARTConfig& cfg, const torch::Tensor& logits,
                             Direction direction) {
  const auto [lo, hi] = target_vocab_slice(cfg, direction);
  auto ids = torch::arange(logits.size(-1), torch::kInt64);
  auto keep = (ids >= lo) & (ids < hi);
  if (direction == Direction::ImageToText) keep = keep & (ids != cfg.pad_id);
  return logits.masked_fill(keep.logical_not(), -std::numeric_limits<double>::infinity());
}

std::vector<Segment> prefix_segments(const BiARTConfig& cfg, Direction direction, size_t n) {
  const auto ref = static_cast<size_t>(reference_length(cfg, direction));
  std::vector<Segment> segs(n, Segment::Target);
  for (size_t i = 0; i < std::min(n, ref); ++i) segs[i] = Segment::Reference;
  return segs;
}

std::vector<TokenId> null_reference(const BiARTConfig& cfg, Direction direction) {
  return std::vector<TokenId>(static_cast<size_t>(reference_length(cfg, direction)), cfg.pad_id);
}

TokenId generate_step(BiART& model, const std::vector<TokenId>& prefix, Direction direction,
                      const Sampler& sampler) {
  const auto& cfg = model->config();
  if (static_cast<int64_t>(prefix.size()) >= cfg.sequence_length()) {
    throw ShapeError("generate_step: prefix already fills the sequence");
  }
  torch::NoGradGuard guard;
  const auto segs = prefix_segments(cfg, direction, prefix.size());
  auto tokens = torch::tensor(prefix, torch::kInt64).unsqueeze(0);
  std::vector<int64_t> seg_ids(segs.size());
  std::transform(segs.begin(), segs.end(), seg_ids.begin(), [](Segment s) { return static_cast<int64_t>(s); });
  auto segments = torch::tensor(seg_ids, torch::kInt64).unsqueeze(0);
  if (prefix.empty()) {
    tokens = torch::empty({1, 0}, torch::kInt64);
    segments = torch::empty({1, 0}, torch::kInt64);
  }
  auto logits = model->forward(tokens, segments);
  auto last = logits[0][logits.size(1) - 1];
  return sampler(mask_to_target(cfg, last, direction));
}

}  // namespace wavecap::biart
