#include "support.hpp"

#include "wavecap/errors.hpp"
#include "wavecap/schedule.hpp"
#include "wavecap/wavevae.hpp"

using namespace wavecap;

namespace {

wavevae::WaveVaeConfig tiny() {
  auto c = wavevae::WaveVaeConfig::desk();
  c.hidden_dim = 4;
  c.blocks = 1;
  c.codebook_size = 32;
  c.codebook_dim = 4;
  c.image_size = 32;
  c.discriminator.base_channels = 4;
  return c;
}

torch::Tensor images(int64_t n, int64_t side, int64_t seed = 0) {
  torch::manual_seed(seed);
  return torch::rand({n, 3, side, side}) * 2 - 1;
}

int64_t count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

}  // namespace

TEST_CASE("stage-1 level shapes for a 64x64 input") {
  wavevae::Stage1Model m(tiny(), 1);
  const auto out = wavevae::stage1_forward(m, images(2, 64));
  REQUIRE(out.inputs.size() == 3);
  const int64_t sides[] = {64, 32, 16}, grids[] = {32, 16, 8};
  for (size_t k = 0; k < 3; ++k) {
    CHECK(out.inputs[k].size(2) == sides[k]);
    CHECK(out.reconstructions[k].sizes() == out.inputs[k].sizes());
    CHECK(out.indices[k].size(1) == grids[k]);
    CHECK(out.indices[k].size(2) == grids[k]);
    CHECK(out.l1[k].item<double>() >= 0.0);
  }
  double sum = out.vq_loss.item<double>();
  for (const auto& l : out.l1) sum += l.item<double>();
  CHECK(out.total_loss.item<double>() == doctest::Approx(sum).epsilon(1e-6));
}

TEST_CASE("stage-1 level specs") {
  const auto cfg = tiny();
  wavevae::Stage1Model m(cfg, 1);
  for (int k = 1; k <= 3; ++k) {
    const auto& lv = m->levels[static_cast<size_t>(k - 1)];
    CHECK(lv.encoder->spec().factor() == 2);
    CHECK(lv.encoder->spec().d_in == 3);
    CHECK(lv.encoder->spec().d_out() == k * cfg.hidden_dim);
    CHECK(lv.decoder->spec().factor() == 2);
    CHECK(lv.decoder->spec().d_in() == k * cfg.hidden_dim);
    CHECK(lv.decoder->spec().d_out == 3);
  }
}

TEST_CASE("every level updates the one shared codebook") {
  auto cfg = tiny();
  wavevae::Stage1Model m(cfg, 2);
  auto state = wavevae::make_stage1_state(m, tokenizer_optim_preset(), 10, 0);
  const auto batch = images(2, 32, 4);
  const auto before = m->codebook->usage.clone();
  wavevae::stage1_train_step(m, batch, state);
  const auto delta = (m->codebook->usage - before).sum().item<int64_t>();
  // One index per latent position of every level: 16x16 + 8x8 + 4x4 per image.
  CHECK(delta == 2 * (256 + 64 + 16));
}

TEST_CASE("learning-rate schedule end points") {
  const auto cfg = tokenizer_optim_preset();
  LrSchedule s(cfg, 1000);
  CHECK(s.at(0) == 0.0);
  CHECK(s.at(10) == doctest::Approx(3.6e-5));
  CHECK(s.at(999) == doctest::Approx(3.6e-6));
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.eps == 1e-8);
  CHECK(cfg.weight_decay == 1e-5);
}

TEST_CASE("stage-1 steps are deterministic per seed") {
  std::vector<double> runs[2];
  for (auto& losses : runs) {
    auto cfg = tiny();
    cfg.crop_ratio = 0.75;
    wavevae::Stage1Model m(cfg, 5);
    auto state = wavevae::make_stage1_state(m, tokenizer_optim_preset(), 10, 9);
    const auto batch = images(2, 32, 1);
    for (int i = 0; i < 3; ++i) losses.push_back(wavevae::stage1_train_step(m, batch, state));
  }
  CHECK(runs[0] == runs[1]);
}

TEST_CASE("non-finite loss aborts with a snapshot") {
  wavevae::Stage1Model m(tiny(), 1);
  auto state = wavevae::make_stage1_state(m, tokenizer_optim_preset(), 10, 0);
  auto batch = images(1, 32);
  batch[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  try {
    wavevae::stage1_train_step(m, batch, state);
    FAIL("expected NonFiniteLossError");
  } catch (const NonFiniteLossError& e) {
    CHECK(e.snapshot().find("l1_1") != std::string::npos);
  }
}

TEST_CASE("integrate") {
  const auto cfg = tiny();
  wavevae::Stage1Model s1(cfg, 3);
  auto s2 = wavevae::integrate(s1);
  CHECK(s2->encoder->spec().factor() == 8);
  CHECK(s2->encoder->spec().d_in == 3);
  CHECK(s2->encoder->spec().d_out() == 3 * cfg.hidden_dim);
  CHECK(s2->decoder->spec().factor() == 8);
  CHECK(s2->decoder->spec().d_in() == 3 * cfg.hidden_dim);
  CHECK(torch::equal(s2->codebook->vectors, s1->codebook->vectors));
  CHECK(count(*s2) < count(*s1));
  const auto same = [](const torch::nn::Module& a, const torch::nn::Module& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (size_t i = 0; i < pa.size(); ++i) {
      if (!torch::equal(pa[i], pb[i])) return false;
    }
    return true;
  };
  CHECK(same(*s2->encoder->stem, *s1->levels[0].encoder->stem));
  CHECK(same(*s2->decoder->head, *s1->levels[0].decoder->head));
  for (size_t i = 0; i < 3; ++i) {
    CHECK(same(*s2->encoder->trunks[i], *s1->levels[i].encoder->trunks[0]));
    CHECK(same(*s2->decoder->trunks[i], *s1->levels[2 - i].decoder->trunks[0]));
  }
  CHECK(same(*s2->to_code, *s1->levels[2].to_code));
  CHECK(same(*s2->from_code, *s1->levels[2].from_code));
  CHECK(s2->encoder->transitions.size() == 2);
  CHECK(s2->decoder->transitions.size() == 2);

  const auto grid = wavevae::encode(s2, images(1, 64));
  CHECK(grid.sizes() == torch::IntArrayRef({1, 8, 8}));
  CHECK(grid.max().item<int64_t>() < cfg.codebook_size);
  CHECK(grid.min().item<int64_t>() >= 0);

  auto bad = cfg;
  bad.levels = 2;
  wavevae::Stage1Model two(bad, 3);
  CHECK_THROWS_AS(wavevae::integrate(two), ConfigError);
}

TEST_CASE("encode and decode contracts") {
  wavevae::Stage1Model s1(tiny(), 3);
  auto s2 = wavevae::integrate(s1);
  CHECK_THROWS_AS(wavevae::encode(s2, images(1, 20)), ShapeError);
  CHECK_THROWS_AS(wavevae::decode(s2, torch::full({1, 2, 2}, 32, torch::kInt64)), IndexError);
  const auto img = wavevae::decode(s2, torch::randint(0, 32, {2, 4, 4}, torch::kInt64));
  CHECK(img.sizes() == torch::IntArrayRef({2, 3, 32, 32}));
  CHECK(img.abs().max().item<double>() <= 1.0);

  auto full = wavevae::WaveVaeConfig::full();
  CHECK(full.image_size / 8 * (full.image_size / 8) == 1024);
  CHECK(full.codebook_size == 8192);
  CHECK(full.codebook_dim == 64);
}

TEST_CASE("calibrate trains with a frozen codebook") {
  wavevae::Stage1Model s1(tiny(), 3);
  auto s2 = wavevae::integrate(s1);
  const auto data = images(4, 32, 7);
  CHECK_THROWS_AS(wavevae::calibrate(s2, data, 0, 1e-3, 0), ConfigError);
  const auto book = s2->codebook->vectors.clone();
  const auto l1 = [&] {
    torch::NoGradGuard g;
    return (wavevae::decode(s2, wavevae::encode(s2, data)) - data).abs().mean().item<double>();
  };
  const double before = l1();
  wavevae::calibrate(s2, data, 20, 2e-3, 0);
  CHECK(torch::equal(book, s2->codebook->vectors));
  CHECK(l1() <= before * 1.1);
}

TEST_CASE("stage-2 loss composition") {
  wavevae::Stage1Model s1(tiny(), 3);
  auto s2 = wavevae::integrate(s1);
  const auto data = images(2, 32, 2);

  wavevae::Stage2LossWeights plain;
  plain.adversarial = 0.0;
  const auto a = wavevae::stage2_loss(s2, nullptr, nullptr, plain, data);
  CHECK(a.generator.item<double>() == doctest::Approx((a.l1 + a.vq).item<double>()).epsilon(1e-9));
  CHECK_FALSE(a.discriminator.defined());

  wavevae::Stage2LossWeights full;
  CHECK_THROWS_AS(wavevae::stage2_loss(s2, nullptr, nullptr, full, data), ConfigError);

  disc::DiscriminatorConfig dc;
  dc.base_channels = 4;
  disc::UNetDiscriminator d(dc);
  wavevae::PixelPerceptual perc;
  const auto b = wavevae::stage2_loss(s2, &d, &perc, full, data);
  const double parts = (b.l1 + b.perceptual + b.adversarial + b.vq).item<double>();
  CHECK(std::abs(parts - b.generator.item<double>()) < 1e-6);
  CHECK(b.discriminator.defined());

  const auto x = torch::rand({1, 3, 8, 8});
  CHECK(perc.distance(x, x).item<double>() == 0.0);
  CHECK(full.adversarial == 1.0e-3);
}

TEST_CASE("stage-2 training step runs and stays finite") {
  auto cfg = tiny();
  wavevae::Stage1Model s1(cfg, 3);
  auto s2 = wavevae::integrate(s1);
  auto trainer = wavevae::make_stage2_trainer(s2, tokenizer_optim_preset(), 5, 0);
  for (int i = 0; i < 2; ++i) CHECK(std::isfinite(wavevae::stage2_train_step(s2, images(2, 32, i), trainer)));
  const auto norms = s2->codebook->vectors.norm(2, 1);
  CHECK(testing::max_abs_diff(norms, torch::ones_like(norms)) < 1e-5);
}

TEST_CASE("discriminator convolutions are spectrally normalized") {
  disc::DiscriminatorConfig dc;
  dc.base_channels = 4;
  disc::UNetDiscriminator d(dc);
  CHECK(d->config().spectral_norm);
  CHECK_FALSE(d->convolutions().empty());
  d->train();
  const auto x = torch::rand({1, 3, 16, 16});
  for (int i = 0; i < 50; ++i) d->forward(x);
  for (auto conv : d->convolutions()) {
    const auto w = conv->normalized_weight().detach();
    const auto s = torch::linalg_svdvals(w.reshape({w.size(0), -1}));
    CHECK(s.max().item<double>() == doctest::Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("random crop identity at ratio 1") {
  std::mt19937_64 rng(0);
  const auto x = images(2, 16);
  CHECK(torch::equal(wavevae::random_crop(x, 1.0, rng), x));
  CHECK(wavevae::random_crop(x, 0.75, rng).sizes() == x.sizes());
}
