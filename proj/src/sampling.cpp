#include "wavecap/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "wavecap/errors.hpp"

namespace wavecap::sampling {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat64).contiguous().reshape({-1});
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

torch::Tensor from_vector(const std::vector<double>& v, const torch::Tensor& like) {
  return torch::tensor(v, torch::kFloat64).to(like.dtype());
}

// Indices sorted by value descending, lower index first on ties.
std::vector<size_t> descending_order(const std::vector<double>& v) {
  std::vector<size_t> order(v.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] > v[b]; });
  return order;
}

std::vector<TokenId> pad_reference(const biart::BiARTConfig& cfg, std::vector<TokenId> reference,
                                   biart::Direction direction) {
  const auto ref_len = biart::reference_length(cfg, direction);
  if (direction == biart::Direction::TextToImage) {
    if (static_cast<int64_t>(reference.size()) > ref_len) {
      throw TruncationError("text reference longer than " + std::to_string(ref_len) + " tokens");
    }
    reference.resize(static_cast<size_t>(ref_len), cfg.pad_id);
    for (const auto t : reference) {
      if (t < 0 || t >= cfg.text_vocab) throw IndexError("text token " + std::to_string(t) + " out of range");
    }
    return reference;
  }
  if (static_cast<int64_t>(reference.size()) != ref_len) {
    throw ShapeError("image reference has " + std::to_string(reference.size()) + " tokens, expected " +
                     std::to_string(ref_len));
  }
  for (auto& t : reference) {
    if (t < 0 || t >= cfg.image_vocab) throw IndexError("image token " + std::to_string(t) + " out of range");
    t += cfg.text_vocab;
  }
  return reference;
}

torch::Tensor row_tensor(const std::vector<TokenId>& ids) {
  return torch::tensor(ids, torch::kInt64).reshape({1, static_cast<int64_t>(ids.size())});
}

// Runs a reference block through a fresh cache; returns the final logit row.
torch::Tensor prime(biart::BiART& model, const std::vector<TokenId>& shared_ref, biart::KVCache& cache) {
  auto tokens = row_tensor(shared_ref);
  auto segs = torch::full_like(tokens, static_cast<int64_t>(biart::Segment::Reference));
  auto logits = model->forward(tokens, segs, &cache);
  return logits[0][logits.size(1) - 1];
}

torch::Tensor advance(biart::BiART& model, TokenId shared_id, biart::KVCache& cache) {
  auto tokens = torch::full({1, 1}, shared_id, torch::kInt64);
  auto segs = torch::full({1, 1}, static_cast<int64_t>(biart::Segment::Target), torch::kInt64);
  return model->forward(tokens, segs, &cache)[0][0];
}

TokenId argmax_first(const std::vector<double>& v) {
  size_t best = 0;
  for (size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

CaptionCandidate sample_one(biart::BiART& model, const std::vector<TokenId>& shared_ref,
                            biart::Direction direction, int64_t max_tokens, const SamplerConfig& cfg,
                            int64_t index) {
  const auto& mcfg = model->config();
  const auto [lo, block_hi] = biart::target_vocab_slice(mcfg, direction);
  const auto hi = direction == biart::Direction::ImageToText && cfg.text_vocab_limit > 0
                      ? std::min(block_hi, lo + cfg.text_vocab_limit)
                      : block_hi;
  const bool text_target = direction == biart::Direction::ImageToText;
  const bool guided = cfg.guidance_scale != 1.0;
  auto rng = candidate_stream(cfg.seed, index);

  biart::KVCache cache, null_cache;
  auto last = prime(model, shared_ref, cache);
  torch::Tensor null_last;
  if (guided) {
    auto null_ref = biart::null_reference(mcfg, direction);
    null_last = prime(model, null_ref, null_cache);
  }

  CaptionCandidate cand;
  cand.index = index;
  for (int64_t step = 0; step < max_tokens; ++step) {
    auto row = guided ? biart::guided_logits(last, null_last, cfg.guidance_scale) : last;
    auto slice = biart::mask_to_target(mcfg, row, direction).narrow(0, lo, hi - lo);
    if (text_target && step == 0) {
      slice = slice.clone();
      slice[mcfg.end_id - lo] = -std::numeric_limits<double>::infinity();
    }
    TokenId local;
    if (cfg.greedy) {
      local = argmax_first(to_vector(slice));
    } else {
      local = draw(filtered_distribution(slice, cfg), rng);
    }
    const TokenId shared = local + lo;
    if (text_target && shared == mcfg.end_id) {
      cand.ended = true;
      break;
    }
    cand.tokens.push_back(local);
    if (step + 1 < max_tokens) {
      last = advance(model, shared, cache);
      if (guided) null_last = advance(model, shared, null_cache);
    }
  }
  return cand;
}

std::string trim_lower(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  std::string out = s.substr(a, b - a);
  for (auto& c : out) {
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace

void SamplerConfig::validate() const {
  if (!(topk_fraction > 0.0 && topk_fraction <= 1.0)) throw ConfigError("topk_fraction must lie in (0, 1]");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must lie in (0, 1]");
  if (n_candidates < 1) throw ConfigError("n_candidates must be >= 1");
  if (caption_tokens < 1 || keyword_tokens < 1) throw ConfigError("token budgets must be >= 1");
  if (top_keyword_lists < 1 || keyword_min_count < 1) throw ConfigError("keyword voting sizes must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (text_vocab_limit < 0) throw ConfigError("text_vocab_limit must be >= 0");
}

torch::Tensor topk_fraction_filter(const torch::Tensor& logits, double fraction) {
  if (logits.dim() != 1 || logits.numel() < 1) throw ShapeError("topk_fraction_filter: expected a non-empty 1-D row");
  const auto v = to_vector(logits);
  const auto k = std::max<size_t>(1, static_cast<size_t>(std::floor(fraction * static_cast<double>(v.size()))));
  if (k >= v.size()) return logits.clone();
  const auto order = descending_order(v);
  std::vector<double> out(v.size(), kNegInf);
  for (size_t i = 0; i < k; ++i) out[order[i]] = v[order[i]];
  return from_vector(out, logits);
}

torch::Tensor top_p_filter(const torch::Tensor& probabilities, double p) {
  if (probabilities.dim() != 1 || probabilities.numel() < 1) throw ShapeError("top_p_filter: expected a non-empty 1-D row");
  const auto v = to_vector(probabilities);
  double total = 0.0;
  for (const double x : v) {
    if (!(x >= 0.0)) throw NormalizationError("top_p_filter: negative or NaN probability");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw NormalizationError("top_p_filter: probabilities sum to " + std::to_string(total));
  }
  if (p >= 1.0) return probabilities.clone();
  const auto order = descending_order(v);
  std::vector<double> out(v.size(), 0.0);
  double mass = 0.0;
  for (const auto i : order) {
    out[i] = v[i];
    mass += v[i];
    if (mass >= p) break;
  }
  for (auto& x : out) x /= mass;
  return from_vector(out, probabilities);
}

torch::Tensor filtered_distribution(const torch::Tensor& logits, const SamplerConfig& cfg) {
  auto scaled = logits.to(torch::kFloat64) / cfg.temperature;
  auto kept = topk_fraction_filter(scaled, cfg.topk_fraction);
  return top_p_filter(torch::softmax(kept, 0), cfg.top_p);
}

TokenId draw(const torch::Tensor& probabilities, std::mt19937_64& rng) {
  const auto v = to_vector(probabilities);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double cum = 0.0;
  size_t last_positive = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    if (v[i] <= 0.0) continue;
    last_positive = i;
    cum += v[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_positive);
}

std::mt19937_64 candidate_stream(uint64_t seed, int64_t index) {
  const auto idx = static_cast<uint64_t>(index);
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(idx), static_cast<uint32_t>(idx >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

double LikelihoodScorer::score(const std::vector<TokenId>& reference, const CaptionCandidate& candidate,
                               biart::Direction direction) {
  torch::NoGradGuard guard;
  const auto& mcfg = model_->config();
  const auto lo = biart::target_vocab_slice(mcfg, direction).first;
  auto ids = pad_reference(mcfg, reference, direction);
  const auto ref_len = ids.size();
  for (const auto t : candidate.tokens) ids.push_back(t + lo);
  if (candidate.ended) ids.push_back(mcfg.end_id);
  if (ids.size() == ref_len) throw DataError("cannot score an empty candidate");
  const auto segs_v = biart::prefix_segments(mcfg, direction, ids.size());
  std::vector<int64_t> segs(segs_v.size());
  std::transform(segs_v.begin(), segs_v.end(), segs.begin(), [](biart::Segment s) { return static_cast<int64_t>(s); });
  auto logits = model_->forward(row_tensor(ids), row_tensor(segs))[0];
  auto logp = torch::log_softmax(biart::mask_to_target(mcfg, logits.to(torch::kFloat64), direction), -1);
  double total = 0.0;
  for (size_t i = ref_len; i < ids.size(); ++i) {
    total += logp[static_cast<int64_t>(i)][ids[i]].item<double>();
  }
  return total / static_cast<double>(ids.size() - ref_len);
}

std::vector<CaptionCandidate> sample_candidates(biart::BiART& model, const std::vector<TokenId>& reference,
                                                biart::Direction direction, int64_t max_tokens,
                                                const SamplerConfig& cfg, Scorer* scorer,
                                                const TextDecoder& decoder) {
  cfg.validate();
  const auto& mcfg = model->config();
  const auto shared_ref = pad_reference(mcfg, reference, direction);
  const auto budget = std::min(max_tokens, biart::target_length(mcfg, direction));
  if (budget < 1) throw ConfigError("sample_candidates: token budget must be >= 1");

  const bool was_training = model->is_training();
  model->eval();
  const auto n = static_cast<size_t>(cfg.n_candidates);
  std::vector<CaptionCandidate> drawn(n);
  std::atomic<size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto work = [&]() {
    torch::NoGradGuard guard;
    for (size_t i = next++; i < n; i = next++) {
      try {
        drawn[i] = sample_one(model, shared_ref, direction, budget, cfg, static_cast<int64_t>(i));
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const auto workers = std::min<size_t>(static_cast<size_t>(cfg.workers), n);
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) {
    model->train(was_training);
    std::rethrow_exception(failure);
  }

  std::vector<CaptionCandidate> out;
  out.reserve(n);
  for (auto& c : drawn) {
    if (decoder) c.text = decoder(c.tokens);
    if (scorer != nullptr) {
      try {
        c.score = scorer->score(reference, c, direction);
        if (!std::isfinite(c.score)) throw DataError("non-finite score");
      } catch (const std::exception& e) {
        std::cerr << "warning: dropping candidate " << c.index << ": " << e.what() << '\n';
        continue;
      }
    }
    out.push_back(std::move(c));
  }
  model->train(was_training);
  return out;
}

std::vector<CaptionCandidate> rerank(std::vector<CaptionCandidate> candidates, int64_t top_n) {
  if (candidates.empty()) throw DataError("rerank: no candidates");
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const CaptionCandidate& a, const CaptionCandidate& b) { return a.score > b.score; });
  if (top_n >= 0 && static_cast<size_t>(top_n) < candidates.size()) candidates.resize(static_cast<size_t>(top_n));
  return candidates;
}

std::vector<std::string> split_keywords(const std::string& text) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(',', start);
    if (end == std::string::npos) end = text.size();
    auto piece = trim_lower(text.substr(start, end - start));
    if (!piece.empty()) out.push_back(std::move(piece));
    start = end + 1;
  }
  return out;
}

std::vector<std::string> vote_keywords(const std::vector<std::string>& lists, int64_t min_count) {
  std::map<std::string, int64_t> count;
  std::map<std::string, size_t> first_seen;
  size_t order = 0;
  for (const auto& list : lists) {
    std::set<std::string> seen;
    for (const auto& kw : split_keywords(list)) {
      if (!seen.insert(kw).second) continue;
      ++count[kw];
      first_seen.emplace(kw, order++);
    }
  }
  std::vector<std::string> out;
  for (const auto& [kw, c] : count) {
    if (c >= min_count) out.push_back(kw);
  }
  std::sort(out.begin(), out.end(), [&](const std::string& a, const std::string& b) {
    if (count[a] != count[b]) return count[a] > count[b];
    return first_seen[a] < first_seen[b];
  });
  return out;
}

CaptionCandidate caption(biart::BiART& model, const std::vector<TokenId>& image, const SamplerConfig& cfg,
                         Scorer* scorer, const TextDecoder& decoder) {
  auto cands = sample_candidates(model, image, biart::Direction::ImageToText, cfg.caption_tokens, cfg, scorer,
                                 decoder);
  if (cands.empty()) throw DataError("caption: every candidate failed scoring");
  return rerank(std::move(cands), 1).front();
}

std::vector<std::string> extract_keywords(biart::BiART& model, const std::vector<TokenId>& image,
                                          const SamplerConfig& cfg, Scorer* scorer, const TextDecoder& decoder) {
  auto cands = sample_candidates(model, image, biart::Direction::ImageToText, cfg.keyword_tokens, cfg, scorer,
                                 decoder);
  if (cands.empty()) return {};
  std::vector<std::string> lists;
  for (const auto& c : rerank(std::move(cands), cfg.top_keyword_lists)) lists.push_back(c.text);
  return vote_keywords(lists, cfg.keyword_min_count);
}

std::vector<TokenId> generate_image(biart::BiART& model, const std::vector<TokenId>& text,
                                    const SamplerConfig& cfg, int64_t index) {
  cfg.validate();
  const auto& mcfg = model->config();
  const auto shared_ref = pad_reference(mcfg, text, biart::Direction::TextToImage);
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard guard;
  auto cand = sample_one(model, shared_ref, biart::Direction::TextToImage, mcfg.image_len, cfg, index);
  model->train(was_training);
  return cand.tokens;
}

}  // namespace wavecap::sampling
