#include "support.hpp"

#include "wavecap/adapters.hpp"
#include "wavecap/errors.hpp"

using namespace wavecap;

namespace {

biart::BiARTConfig small(int64_t layers = 2, int64_t dim = 32) {
  biart::BiARTConfig c;
  c.layers = layers;
  c.model_dim = dim;
  c.heads = 2;
  c.text_len = 6;
  c.image_len = 8;
  c.text_vocab = 20;
  c.image_vocab = 16;
  return c;
}

biart::PackedBatch probe(const biart::BiARTConfig& c, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<biart::TokenId> text = {4, 5, 6, c.end_id}, image;
  for (int64_t i = 0; i < c.image_len; ++i) image.push_back(static_cast<int64_t>(rng() % 16));
  return biart::pack({biart::build_sequence(c, text, image, biart::Direction::ImageToText),
                      biart::build_sequence(c, text, image, biart::Direction::TextToImage)});
}

torch::Tensor run(biart::BiART& m, const biart::PackedBatch& b) {
  torch::NoGradGuard g;
  m->eval();
  return m->forward(b.tokens, b.segments);
}

std::vector<biart::TrainingPair> keyword_pairs(const biart::BiARTConfig& c, int n) {
  std::vector<biart::TrainingPair> out;
  std::mt19937_64 rng(11);
  for (int i = 0; i < n; ++i) {
    biart::TrainingPair p;
    p.text = {static_cast<int64_t>(2 + rng() % 18), 2, static_cast<int64_t>(2 + rng() % 18), c.end_id, 0, 0};
    for (int64_t k = 0; k < c.image_len; ++k) p.image.push_back(static_cast<int64_t>(rng() % 16));
    out.push_back(p);
  }
  return out;
}

}  // namespace

TEST_CASE("identity at attach for several shapes") {
  for (int64_t layers : {1, 3}) {
    for (int64_t width : {1, 8, 31}) {
      torch::manual_seed(layers + width);
      biart::BiART m(small(layers));
      const auto b = probe(m->config(), 1);
      const auto before = run(m, b);
      adapters::attach(m, {width});
      CHECK(testing::max_abs_diff(run(m, b), before) < 1e-6);
    }
  }
}

TEST_CASE("parameter enumeration and frozen set") {
  torch::manual_seed(1);
  biart::BiART m(small(3, 32));
  const auto base = adapters::base_parameter_count(m);
  adapters::attach(m, {8});
  int64_t adapter_total = 0, frozen = 0, trainable = 0;
  for (const auto& p : m->named_parameters()) {
    const bool is_adapter = p.key().find(".adapter.") != std::string::npos;
    if (is_adapter) adapter_total += p.value().numel();
    CHECK(p.value().requires_grad() == is_adapter);
    (is_adapter ? trainable : frozen) += 1;
  }
  CHECK(trainable == 3 * 4);
  CHECK(adapter_total == 3 * adapters::adapter_parameters_per_layer(32, 8));
  CHECK(adapters::adapter_parameters_per_layer(32, 8) == 2 * 32 * 8 + 32 + 8);
  CHECK(adapters::adapter_parameter_count(m) == adapter_total);
  CHECK(adapters::base_parameter_count(m) == base);
  CHECK(adapters::parameter_ratio(m) == doctest::Approx(static_cast<double>(adapter_total) / base));
}

TEST_CASE("desk ratio formula") {
  biart::BiART m(biart::BiARTConfig::desk());
  const auto base = adapters::base_parameter_count(m);
  adapters::attach(m, {32});
  CHECK(adapters::parameter_ratio(m) == doctest::Approx(4.0 * (2 * 128 * 32 + 128 + 32) / base));
}

TEST_CASE("ratio grows with the bottleneck") {
  double last = 0.0;
  for (int64_t w : {1, 4, 16, 31}) {
    torch::manual_seed(0);
    biart::BiART m(small());
    adapters::attach(m, {w});
    const double r = adapters::parameter_ratio(m);
    CHECK(r > last);
    last = r;
  }
}

TEST_CASE("attach preconditions") {
  biart::BiART m(small());
  CHECK_THROWS_AS(adapters::attach(m, {0}), ConfigError);
  CHECK_THROWS_AS(adapters::attach(m, {32}), ConfigError);
  CHECK_THROWS_AS(adapters::parameter_ratio(m), ConfigError);
  adapters::attach(m, {4});
  CHECK_THROWS_AS(adapters::attach(m, {4}), ConfigError);
  CHECK(adapters::AdapterSpec::full().bottleneck == 320);
}

TEST_CASE("finetuning leaves the base untouched and detaching restores it") {
  torch::manual_seed(2);
  biart::BiART m(small());
  const auto b = probe(m->config(), 2);
  const auto before = run(m, b);
  std::map<std::string, torch::Tensor> base;
  for (const auto& p : m->named_parameters()) base[p.key()] = p.value().detach().clone();

  adapters::attach(m, {8});
  auto cfg = transformer_optim_preset();
  cfg.lr = 1e-2;
  auto state = adapters::make_finetune_state(m, cfg, 20);
  const auto pairs = keyword_pairs(m->config(), 4);
  for (int i = 0; i < 20; ++i) adapters::finetune_step(m, pairs, state);

  for (const auto& p : m->named_parameters()) {
    if (p.key().find(".adapter.") != std::string::npos) continue;
    CHECK(testing::bit_equal(p.value(), base.at(p.key())));
  }
  CHECK_FALSE(torch::equal(run(m, b), before));

  m->adapters_enabled = false;
  CHECK(torch::equal(run(m, b), before));
  m->adapters_enabled = true;

  const auto state_map = adapters::adapter_state(m);
  const auto tuned = run(m, b);
  adapters::detach(m);
  CHECK_FALSE(adapters::has_adapters(m));
  CHECK(torch::equal(run(m, b), before));
  for (const auto& p : m->parameters()) CHECK(p.requires_grad());

  adapters::attach(m, {8});
  adapters::load_adapter_state(m, state_map);
  CHECK(torch::equal(run(m, b), tuned));
}

TEST_CASE("base drift is detected") {
  torch::manual_seed(3);
  biart::BiART m(small());
  adapters::attach(m, {4});
  auto state = adapters::make_finetune_state(m, transformer_optim_preset(), 5);
  // Sneak a base tensor into the optimizer to simulate a leak.
  m->head->weight.set_requires_grad(true);
  state.optimizer->param_groups()[0].params().push_back(m->head->weight);
  const auto pairs = keyword_pairs(m->config(), 2);
  adapters::finetune_step(m, pairs, state);  // warm-up step: learning rate 0
  CHECK_THROWS_AS(adapters::finetune_step(m, pairs, state), InvariantViolation);
}

TEST_CASE("keyword serialization") {
  CHECK(adapters::serialize_keywords({"red", "car", "street"}) == "red, car, street");
  CHECK(adapters::serialize_keywords({}).empty());
}
