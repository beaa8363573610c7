#include "support.hpp"

#include <algorithm>
#include <set>

#include "wavecap/biart.hpp"
#include "wavecap/errors.hpp"

using namespace wavecap;
using biart::Direction;
using biart::Segment;

namespace {

biart::BiARTConfig small(int64_t layers = 2, int64_t heads = 2) {
  biart::BiARTConfig c;
  c.layers = layers;
  c.model_dim = 32;
  c.heads = heads;
  c.text_len = 6;
  c.image_len = 8;
  c.text_vocab = 20;
  c.image_vocab = 16;
  return c;
}

std::vector<biart::TokenId> random_ids(size_t n, int64_t lo, int64_t hi, std::mt19937_64& rng) {
  std::vector<biart::TokenId> v(n);
  for (auto& t : v) t = std::uniform_int_distribution<int64_t>(lo, hi - 1)(rng);
  return v;
}

biart::TrainingPair random_pair(const biart::BiARTConfig& c, std::mt19937_64& rng) {
  auto text = random_ids(static_cast<size_t>(c.text_len - 2), 2, c.text_vocab, rng);
  text.push_back(c.end_id);
  text.resize(static_cast<size_t>(c.text_len), c.pad_id);
  return {text, random_ids(static_cast<size_t>(c.image_len), 0, c.image_vocab, rng)};
}

}  // namespace

TEST_CASE("sequence layout") {
  const auto cfg = biart::BiARTConfig::desk();
  std::mt19937_64 rng(1);
  const std::vector<biart::TokenId> text = {5, 6, 7, cfg.end_id};
  const auto image = random_ids(64, 0, cfg.image_vocab, rng);
  const auto a = biart::build_sequence(cfg, text, image, Direction::ImageToText);
  REQUIRE(a.tokens.size() == 80);
  for (size_t i = 0; i < 80; ++i) CHECK(a.segments[i] == (i < 64 ? Segment::Reference : Segment::Target));
  for (size_t i = 0; i < 80; ++i) CHECK(a.positions[i] == static_cast<int64_t>(i) + 1);

  const auto b = biart::build_sequence(cfg, text, image, Direction::TextToImage);
  auto ta = a.tokens, tb = b.tokens;
  std::sort(ta.begin(), ta.end());
  std::sort(tb.begin(), tb.end());
  CHECK(ta == tb);
  for (size_t i = 0; i < 80; ++i) CHECK(b.segments[i] == (i < 16 ? Segment::Reference : Segment::Target));

  const auto max_id = *std::max_element(a.tokens.begin(), a.tokens.end());
  CHECK(max_id < cfg.text_vocab + cfg.image_vocab);
  for (size_t i = 0; i < 64; ++i) CHECK(a.tokens[i] == image[i] + cfg.text_vocab);

  // Loss on target tokens only, padding after the end token excluded.
  for (size_t i = 0; i < 80; ++i) CHECK(a.loss_mask[i] == (i >= 64 && i < 68));
  for (size_t i = 0; i < 80; ++i) CHECK(b.loss_mask[i] == (i >= 16));
  const auto all = biart::build_sequence(cfg, text, image, Direction::ImageToText, true);
  CHECK(std::all_of(all.loss_mask.begin(), all.loss_mask.end(), [](bool m) { return m; }));
}

TEST_CASE("malformed sequences") {
  const auto cfg = small();
  std::mt19937_64 rng(1);
  const auto image = random_ids(8, 0, 16, rng);
  CHECK_THROWS_AS(biart::build_sequence(cfg, std::vector<biart::TokenId>(7, 3), image, Direction::ImageToText),
                  TruncationError);
  CHECK_THROWS_AS(biart::build_sequence(cfg, {3}, random_ids(7, 0, 16, rng), Direction::ImageToText), ShapeError);
  CHECK_THROWS_AS(biart::build_sequence(cfg, {3}, std::vector<biart::TokenId>(8, 16), Direction::ImageToText),
                  IndexError);
  CHECK_THROWS_AS(biart::build_sequence(cfg, {20}, image, Direction::ImageToText), IndexError);
}

TEST_CASE("config validation and presets") {
  auto c = small();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const auto p = biart::BiARTConfig::full();
  CHECK(p.layers == 24);
  CHECK(p.model_dim == 1280);
  CHECK(p.heads == 10);
  CHECK(p.text_len == 64);
  CHECK(p.image_len == 1024);
  CHECK(p.text_vocab == 49408);
  CHECK(p.image_vocab == 8192);
  const auto d = biart::BiARTConfig::desk();
  CHECK(d.model_length() == d.text_len + d.image_len + 1);
}

TEST_CASE("causality across layer and head counts") {
  for (int64_t layers : {1, 2, 3}) {
    for (int64_t heads : {1, 2, 4}) {
      torch::manual_seed(layers * 10 + heads);
      biart::BiART m(small(layers, heads));
      m->eval();
      std::mt19937_64 rng(static_cast<uint64_t>(layers * 7 + heads));
      const auto pair = random_pair(m->config(), rng);
      auto seq = biart::build_sequence(m->config(), pair.text, pair.image, Direction::ImageToText);
      torch::NoGradGuard g;
      const auto base = m->forward(seq);
      for (size_t j : {size_t{0}, size_t{5}, size_t{9}, size_t{13}}) {
        auto changed = seq;
        changed.tokens[j] = changed.tokens[j] == 3 ? 4 : 3;
        const auto out = m->forward(changed);
        const auto keep = static_cast<int64_t>(j) + 1;  // rows 0..j never see token j
        CHECK(torch::equal(out.narrow(1, 0, keep), base.narrow(1, 0, keep)));
        CHECK_FALSE(torch::equal(out.narrow(1, keep, 1), base.narrow(1, keep, 1)));
      }
    }
  }
}

TEST_CASE("segment label sensitivity") {
  torch::manual_seed(2);
  biart::BiART m(small());
  m->eval();
  std::mt19937_64 rng(3);
  const auto pair = random_pair(m->config(), rng);
  auto seq = biart::build_sequence(m->config(), pair.text, pair.image, Direction::ImageToText);
  torch::NoGradGuard g;
  const auto base = m->forward(seq);
  auto flipped = seq;
  const size_t j = 4;
  flipped.segments[j] = Segment::Target;
  const auto out = m->forward(flipped);
  CHECK(torch::equal(out.narrow(1, 0, 5), base.narrow(1, 0, 5)));
  for (int64_t r = 5; r < out.size(1); ++r) CHECK_FALSE(torch::equal(out[0][r], base[0][r]));
}

TEST_CASE("identical rows in a batch and sequence length guard") {
  torch::manual_seed(4);
  biart::BiART m(small());
  m->eval();
  std::mt19937_64 rng(4);
  const auto pair = random_pair(m->config(), rng);
  const auto seq = biart::build_sequence(m->config(), pair.text, pair.image, Direction::TextToImage);
  torch::NoGradGuard g;
  const auto out = m->forward(std::vector<biart::BidirectionalSequence>{seq, seq});
  CHECK(torch::equal(out[0], out[1]));
  const auto too_long = torch::zeros({1, m->config().sequence_length() + 1}, torch::kInt64);
  CHECK_THROWS_AS(m->forward(too_long, torch::zeros_like(too_long)), ShapeError);
}

TEST_CASE("cached decoding matches the full forward") {
  torch::manual_seed(5);
  biart::BiART m(small());
  m->eval();
  std::mt19937_64 rng(5);
  const auto pair = random_pair(m->config(), rng);
  const auto seq = biart::build_sequence(m->config(), pair.text, pair.image, Direction::ImageToText);
  const auto batch = biart::pack({seq});
  torch::NoGradGuard g;
  const auto full = m->forward(batch.tokens, batch.segments);
  biart::KVCache cache;
  const auto first = m->forward(batch.tokens.narrow(1, 0, 8), batch.segments.narrow(1, 0, 8), &cache);
  CHECK(testing::max_abs_diff(first, full.narrow(1, 0, 9)) < 1e-5);
  for (int64_t t = 8; t < batch.tokens.size(1); ++t) {
    const auto row = m->forward(batch.tokens.narrow(1, t, 1), batch.segments.narrow(1, t, 1), &cache);
    CHECK(testing::max_abs_diff(row[0][0], full[0][t + 1]) < 1e-5);
  }
}

TEST_CASE("gradient check against central differences") {
  torch::manual_seed(6);
  biart::BiART m(small(2, 2));
  m->to(torch::kFloat64);
  m->eval();
  std::mt19937_64 rng(6);
  std::vector<biart::BidirectionalSequence> seqs;
  for (int i = 0; i < 2; ++i) {
    const auto p = random_pair(m->config(), rng);
    seqs.push_back(biart::build_sequence(m->config(), p.text, p.image, Direction::ImageToText));
    seqs.push_back(biart::build_sequence(m->config(), p.text, p.image, Direction::TextToImage));
  }
  const auto batch = biart::pack(seqs);
  const auto loss_fn = [&] { return biart::masked_cross_entropy(m->forward(batch.tokens, batch.segments), batch); };
  m->zero_grad();
  loss_fn().backward();

  auto params = m->named_parameters();
  std::vector<std::string> names;
  for (const auto& p : params) names.push_back(p.key());
  int checked = 0;
  while (checked < 20) {
    const auto& name = names[rng() % names.size()];
    auto p = params[name];
    const auto flat = p.detach().view({-1});
    const auto idx = static_cast<int64_t>(rng() % static_cast<uint64_t>(flat.numel()));
    const double analytic = p.grad().view({-1})[idx].item<double>();
    const double h = 1e-6;
    torch::NoGradGuard g;
    const double orig = flat[idx].item<double>();
    flat[idx] = orig + h;
    const double up = loss_fn().item<double>();
    flat[idx] = orig - h;
    const double down = loss_fn().item<double>();
    flat[idx] = orig;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    INFO(name << "[" << idx << "] analytic " << analytic << " numeric " << numeric);
    CHECK(std::abs(analytic - numeric) / scale < 1e-2);
    ++checked;
  }
}

TEST_CASE("zero-decay group is exactly the embedding tensors") {
  torch::manual_seed(7);
  biart::BiART m(small());
  auto state = biart::make_train_state(m, transformer_optim_preset(), 10);
  const auto names = m->embedding_parameter_names();
  std::set<const void*> want, got;
  auto params = m->named_parameters();
  for (const auto& n : names) want.insert(params[n].unsafeGetTensorImpl());
  for (const auto& t : biart::no_decay_parameters(state)) got.insert(t.unsafeGetTensorImpl());
  CHECK(want == got);
  const auto& groups = state.optimizer->param_groups();
  for (size_t i = 0; i < groups.size(); ++i) {
    const auto& o = static_cast<const torch::optim::AdamWOptions&>(groups[i].options());
    CHECK(o.weight_decay() == (static_cast<int>(i) == state.no_decay_group ? 0.0 : 1e-2));
    CHECK(std::get<1>(o.betas()) == 0.95);
  }
}

TEST_CASE("training step reduces loss and single-direction mode is flagged") {
  torch::manual_seed(8);
  biart::BiART m(small());
  std::mt19937_64 rng(8);
  std::vector<biart::TrainingPair> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_pair(m->config(), rng));
  auto cfg = transformer_optim_preset();
  cfg.lr = 3e-3;
  auto state = biart::make_train_state(m, cfg, 60);
  const auto first = biart::evaluate_losses(m, batch);
  for (int i = 0; i < 60; ++i) biart::bidirectional_train_step(m, batch, state);
  const auto last = biart::evaluate_losses(m, batch);
  CHECK(last.image_to_text < first.image_to_text);
  CHECK(last.text_to_image < first.text_to_image);

  auto one = biart::make_train_state(m, cfg, 10, biart::DirectionMode::ImageToTextOnly);
  const auto l = biart::bidirectional_train_step(m, batch, one);
  CHECK(one.unstable_mode_warned);
  CHECK(std::isnan(l.text_to_image));
  CHECK(std::isfinite(l.image_to_text));
}

TEST_CASE("non-finite loss aborts") {
  torch::manual_seed(9);
  biart::BiART m(small());
  {
    torch::NoGradGuard g;
    m->head->weight.fill_(std::numeric_limits<float>::quiet_NaN());
  }
  std::mt19937_64 rng(9);
  auto state = biart::make_train_state(m, transformer_optim_preset(), 10);
  CHECK_THROWS_AS(biart::bidirectional_train_step(m, {random_pair(m->config(), rng)}, state), NonFiniteLossError);
}

TEST_CASE("guided logits") {
  const auto cond = torch::randn({5, 7}), uncond = torch::randn({5, 7});
  CHECK(torch::equal(biart::guided_logits(cond, uncond, 1.0), cond));
  CHECK(torch::equal(biart::guided_logits(cond, uncond, 0.0), uncond));
  for (double a : {0.5, 2.0, 5.0}) CHECK(torch::equal(biart::guided_logits(cond, cond, a), cond));
  CHECK(testing::max_abs_diff(biart::guided_logits(cond, uncond, 5.0), uncond + 5.0 * (cond - uncond)) < 1e-5);
  CHECK_THROWS_AS(biart::guided_logits(cond, torch::randn({5, 6}), 2.0), ShapeError);
}

TEST_CASE("target masking and generation step") {
  torch::manual_seed(10);
  biart::BiART m(small());
  const auto& c = m->config();
  const auto logits = torch::randn({c.vocab_size()});
  const auto t = biart::mask_to_target(c, logits, Direction::ImageToText);
  const auto i = biart::mask_to_target(c, logits, Direction::TextToImage);
  for (int64_t k = 0; k < c.vocab_size(); ++k) {
    const bool text = k < c.text_vocab;
    CHECK(std::isinf(t[k].item<float>()) == (!text || k == c.pad_id));
    CHECK(std::isinf(i[k].item<float>()) == text);
  }
  std::mt19937_64 rng(10);
  const auto p = random_pair(c, rng);
  std::vector<biart::TokenId> prefix;
  for (auto x : p.image) prefix.push_back(x + c.text_vocab);
  const auto argmax = [](const torch::Tensor& row) { return row.argmax().item<biart::TokenId>(); };
  const auto a = biart::generate_step(m, prefix, Direction::ImageToText, argmax);
  CHECK(a == biart::generate_step(m, prefix, Direction::ImageToText, argmax));
  CHECK(a < c.text_vocab);
  CHECK(a != c.pad_id);
  const auto null_ref = biart::null_reference(c, Direction::ImageToText);
  CHECK(null_ref == std::vector<biart::TokenId>(static_cast<size_t>(c.image_len), c.pad_id));
}
