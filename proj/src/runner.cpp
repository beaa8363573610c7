#include "wavecap/runner.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "wavecap/adapters.hpp"
#include "wavecap/errors.hpp"
#include "wavecap/hashing.hpp"
#include "wavecap/image_io.hpp"

namespace wavecap::runner {
namespace {

struct NamedColor {
  const char* name;
  cv::Scalar bgr;
};

const NamedColor kColors[] = {
    {"red", {40, 40, 220}},     {"green", {60, 180, 60}},  {"blue", {220, 80, 40}},
    {"yellow", {40, 220, 230}}, {"purple", {170, 50, 140}}, {"white", {245, 245, 245}}};
const char* const kShapes[] = {"circle", "square", "triangle"};

void draw_shape(cv::Mat& img, const std::string& shape, cv::Point c, int r, const cv::Scalar& color) {
  if (shape == "circle") {
    cv::circle(img, c, r, color, cv::FILLED, cv::LINE_AA);
  } else if (shape == "square") {
    cv::rectangle(img, {c.x - r, c.y - r}, {c.x + r, c.y + r}, color, cv::FILLED);
  } else {
    std::vector<cv::Point> pts{{c.x, c.y - r}, {c.x - r, c.y + r}, {c.x + r, c.y + r}};
    cv::fillConvexPoly(img, pts, color, cv::LINE_AA);
  }
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(5) << v;
  return s.str();
}

void log_line(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

checkpoint::LoadOptions load_opts(const std::string& kind, const nlohmann::json& section, bool force) {
  checkpoint::LoadOptions o;
  o.expected_kind = kind;
  o.expected_config_hash = checkpoint::config_hash(section);
  o.force = force;
  return o;
}

}  // namespace

std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, const SynthOptions& opts) {
  if (opts.count < 1) throw ConfigError("synthetic dataset needs at least one image");
  std::filesystem::create_directories(dir / "images");
  std::mt19937_64 rng(opts.seed);
  const auto pick = [&](size_t n) { return static_cast<size_t>(std::uniform_int_distribution<size_t>(0, n - 1)(rng)); };
  const auto n_test = static_cast<int64_t>(std::llround(opts.test_fraction * static_cast<double>(opts.count)));
  const auto manifest_path = dir / "manifest.jsonl";
  std::ofstream out(manifest_path, std::ios::trunc);
  const int size = static_cast<int>(opts.image_size);
  for (int64_t i = 0; i < opts.count; ++i) {
    const auto bg = pick(std::size(kColors));
    auto fg = pick(std::size(kColors) - 1);
    if (fg >= bg) ++fg;
    const std::string shape = kShapes[pick(std::size(kShapes))];
    const bool female = pick(2) == 1;
    const std::string ethnicity = pick(2) == 0 ? "group_a" : "group_b";

    cv::Mat img(size, size, CV_8UC3, kColors[bg].bgr);
    const int r = size / 5 + static_cast<int>(pick(static_cast<size_t>(size / 10 + 1)));
    const cv::Point c(size / 2 + static_cast<int>(pick(9)) - 4, size / 2 + static_cast<int>(pick(9)) - 4);
    draw_shape(img, shape, c, r, kColors[fg].bgr);
    const cv::Scalar mark = bg == 5 ? cv::Scalar(20, 20, 20) : cv::Scalar(245, 245, 245);
    if (female) {
      cv::rectangle(img, {2, 2}, {size / 16 + 2, size / 4 + 2}, mark, cv::FILLED);
    } else {
      cv::rectangle(img, {2, 2}, {size / 4 + 2, size / 16 + 2}, mark, cv::FILLED);
    }
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04lld.png", static_cast<long long>(i));
    if (!cv::imwrite((dir / "images" / name).string(), img)) throw DataError("cannot write synthetic image");

    const std::string person = female ? "woman" : "man";
    nlohmann::json rec;
    rec["image_path"] = std::string("images/") + name;
    rec["caption"] = "a " + person + " with a " + kColors[fg].name + " " + shape + ", on " + kColors[bg].name;
    rec["keywords"] = {person, kColors[fg].name, shape, kColors[bg].name};
    rec["gender"] = female ? "female" : "male";
    rec["ethnicity"] = ethnicity;
    rec["split"] = i >= opts.count - n_test ? "test" : "train";
    out << rec.dump() << '\n';
  }
  if (!out) throw DataError("cannot write " + manifest_path.string());
  return manifest_path;
}

torch::Tensor load_images(const std::vector<manifest::ManifestRecord>& records, int64_t size) {
  if (records.empty()) throw DataError("no images to load");
  std::vector<torch::Tensor> imgs;
  imgs.reserve(records.size());
  for (const auto& r : records) imgs.push_back(image_io::load_image(r.image_path, size));
  return torch::stack(imgs);
}

std::filesystem::path stage1_dir(const std::filesystem::path& run) { return run / "vae_stage1"; }
std::filesystem::path vae_dir(const std::filesystem::path& run) { return run / "vae"; }
std::filesystem::path biart_dir(const std::filesystem::path& run) { return run / "biart"; }
std::filesystem::path adapters_dir(const std::filesystem::path& run) { return run / "adapters"; }
std::filesystem::path vocab_path(const std::filesystem::path& run) { return run / "vocab.txt"; }

OptimConfig vae_optim(const config::RunConfig& cfg) {
  auto o = tokenizer_optim_preset();
  o.lr = cfg.training.vae_lr;
  o.final_lr = cfg.training.vae_final_lr;
  return o;
}

OptimConfig biart_optim(const config::RunConfig& cfg) {
  auto o = transformer_optim_preset();
  o.lr = cfg.training.biart_lr;
  o.final_lr = cfg.training.biart_final_lr;
  return o;
}

torch::Tensor batch_rows(const torch::Tensor& data, int64_t batch, std::mt19937_64& rng) {
  const auto n = data.size(0);
  if (batch >= n) return data;
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), int64_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<size_t>(batch));
  return data.index_select(0, torch::tensor(idx, torch::kInt64));
}

wavevae::Stage1Model train_vae_stage1(const config::RunConfig& cfg, const torch::Tensor& images, const Logger& log) {
  wavevae::Stage1Model model(cfg.wavevae, cfg.seed);
  const auto steps = cfg.training.stage1_steps;
  auto state = wavevae::make_stage1_state(model, vae_optim(cfg), steps, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  for (int64_t s = 0; s < steps; ++s) {
    const double loss = wavevae::stage1_train_step(model, batch_rows(images, cfg.training.vae_batch, rng), state);
    if (cfg.training.log_every > 0 && (s % cfg.training.log_every == 0 || s + 1 == steps)) {
      log_line(log, "stage1 step " + std::to_string(s) + " loss " + fmt(loss));
    }
  }
  return model;
}

wavevae::Stage2Model train_vae_stage2(const config::RunConfig& cfg, wavevae::Stage1Model& stage1,
                                      const torch::Tensor& images, const Logger& log) {
  auto model = wavevae::integrate(stage1);
  const auto calib = cfg.training.effective_calibration_steps();
  wavevae::calibrate(model, images, calib, cfg.training.vae_lr, cfg.seed);
  log_line(log, "calibrated for " + std::to_string(calib) + " steps");
  const auto steps = cfg.training.stage2_steps;
  auto trainer = wavevae::make_stage2_trainer(model, vae_optim(cfg), steps, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x51ed270b5f1c0a3dULL);
  for (int64_t s = 0; s < steps; ++s) {
    const double loss = wavevae::stage2_train_step(model, batch_rows(images, cfg.training.vae_batch, rng), trainer);
    if (cfg.training.log_every > 0 && (s % cfg.training.log_every == 0 || s + 1 == steps)) {
      log_line(log, "stage2 step " + std::to_string(s) + " loss " + fmt(loss));
    }
  }
  return model;
}

void save_stage1(wavevae::Stage1Model& model, uint64_t seed, int64_t step, const std::filesystem::path& dir) {
  checkpoint::Checkpoint c{"wavevae-stage1", config::to_json(model->config()), seed, step,
                           checkpoint::module_tensors(*model)};
  checkpoint::save(c, dir);
}

wavevae::Stage1Model load_stage1(const std::filesystem::path& dir, const config::RunConfig& cfg, bool force) {
  auto c = checkpoint::load(dir, load_opts("wavevae-stage1", config::to_json(cfg.wavevae), force));
  wavevae::Stage1Model model(config::wavevae_from_json(c.config), c.seed);
  checkpoint::load_module_tensors(*model, c.tensors);
  return model;
}

void save_vae(wavevae::Stage2Model& model, uint64_t seed, int64_t step, const std::filesystem::path& dir) {
  checkpoint::Checkpoint c{"wavevae", config::to_json(model->config()), seed, step, checkpoint::module_tensors(*model)};
  checkpoint::save(c, dir);
}

wavevae::Stage2Model load_vae(const std::filesystem::path& dir, const config::RunConfig& cfg, bool force) {
  auto c = checkpoint::load(dir, load_opts("wavevae", config::to_json(cfg.wavevae), force));
  wavevae::Stage2Model model(config::wavevae_from_json(c.config), c.seed);
  checkpoint::load_module_tensors(*model, c.tensors);
  model->eval();
  return model;
}

std::vector<std::vector<biart::TokenId>> encode_tokens(wavevae::Stage2Model& model, const torch::Tensor& images) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<std::vector<biart::TokenId>> out;
  for (int64_t i = 0; i < images.size(0); ++i) {
    auto grid = wavevae::encode(model, images.narrow(0, i, 1)).reshape({-1}).contiguous();
    out.emplace_back(grid.data_ptr<int64_t>(), grid.data_ptr<int64_t>() + grid.numel());
  }
  return out;
}

text::BPEVocab train_vocab(const config::RunConfig& cfg, const std::vector<manifest::ManifestRecord>& records) {
  std::vector<std::string> corpus;
  for (const auto& r : records) {
    if (!r.caption.empty()) corpus.push_back(r.caption);
    if (!r.keywords.empty()) corpus.push_back(adapters::serialize_keywords(r.keywords));
  }
  return text::train_bpe(corpus, cfg.training.text_vocab_size, cfg.seed);
}

biart::BiART train_biart(const config::RunConfig& cfg, const std::vector<biart::TrainingPair>& pairs,
                         const Logger& log, BiARTRun* run) {
  if (pairs.empty()) throw DataError("no training pairs");
  if (cfg.precision == "mixed") log_line(log, "warning: reduced precision is not used on this backend; training in fp32");
  torch::manual_seed(cfg.seed);
  biart::BiART model(cfg.biart);
  const auto steps = cfg.training.biart_steps;
  auto state = biart::make_train_state(model, biart_optim(cfg), steps);
  std::mt19937_64 rng(cfg.seed ^ 0x2545f4914f6cdd1dULL);
  BiARTRun info;
  for (int64_t s = 0; s < steps; ++s) {
    std::vector<biart::TrainingPair> batch;
    if (cfg.training.biart_batch >= static_cast<int64_t>(pairs.size())) {
      batch = pairs;
    } else {
      std::vector<size_t> idx(pairs.size());
      std::iota(idx.begin(), idx.end(), size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      for (int64_t k = 0; k < cfg.training.biart_batch; ++k) batch.push_back(pairs[idx[static_cast<size_t>(k)]]);
    }
    info.last = biart::bidirectional_train_step(model, batch, state);
    info.steps = s + 1;
    const bool done = cfg.training.biart_target_loss > 0.0 && info.last.image_to_text < cfg.training.biart_target_loss &&
                      info.last.text_to_image < cfg.training.biart_target_loss;
    if (cfg.training.log_every > 0 && (s % cfg.training.log_every == 0 || s + 1 == steps || done)) {
      log_line(log, "biart step " + std::to_string(s) + " i2t " + fmt(info.last.image_to_text) + " t2i " +
                        fmt(info.last.text_to_image));
    }
    if (done) break;
  }
  if (run != nullptr) *run = info;
  model->eval();
  return model;
}

double finetune_keywords(const config::RunConfig& cfg, biart::BiART& model,
                         const std::vector<biart::TrainingPair>& pairs, const Logger& log, int64_t* steps_run) {
  if (pairs.empty()) throw DataError("no keyword pairs");
  if (!adapters::has_adapters(model)) adapters::attach(model, cfg.adapters);
  const auto steps = cfg.training.finetune_steps;
  auto state = adapters::make_finetune_state(model, biart_optim(cfg), steps);
  std::mt19937_64 rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);
  double loss = 0.0;
  int64_t s = 0;
  for (; s < steps; ++s) {
    std::vector<biart::TrainingPair> batch;
    if (cfg.training.biart_batch >= static_cast<int64_t>(pairs.size())) {
      batch = pairs;
    } else {
      std::vector<size_t> idx(pairs.size());
      std::iota(idx.begin(), idx.end(), size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      for (int64_t k = 0; k < cfg.training.biart_batch; ++k) batch.push_back(pairs[idx[static_cast<size_t>(k)]]);
    }
    loss = adapters::finetune_step(model, batch, state);
    const bool done = cfg.training.finetune_target_loss > 0.0 && loss < cfg.training.finetune_target_loss;
    if (cfg.training.log_every > 0 && (s % cfg.training.log_every == 0 || s + 1 == steps || done)) {
      log_line(log, "finetune step " + std::to_string(s) + " loss " + fmt(loss));
    }
    if (done) {
      ++s;
      break;
    }
  }
  if (steps_run != nullptr) *steps_run = s;
  model->eval();
  return loss;
}

void save_biart(biart::BiART& model, uint64_t seed, int64_t step, const std::string& vocab_sha256,
                const std::filesystem::path& dir) {
  if (adapters::has_adapters(model)) throw ConfigError("save_biart: detach adapters first; they are saved as an overlay");
  checkpoint::Checkpoint c{"biart", config::to_json(model->config()), seed, step, checkpoint::module_tensors(*model)};
  c.extra["vocab_sha256"] = vocab_sha256;
  checkpoint::save(c, dir);
}

biart::BiART load_biart(const std::filesystem::path& dir, const config::RunConfig& cfg, bool force) {
  auto c = checkpoint::load(dir, load_opts("biart", config::to_json(cfg.biart), force));
  biart::BiART model(config::biart_from_json(c.config));
  checkpoint::load_module_tensors(*model, c.tensors);
  model->eval();
  return model;
}

void save_adapters(biart::BiART& model, uint64_t seed, int64_t step, const std::filesystem::path& dir) {
  if (!adapters::has_adapters(model)) throw ConfigError("save_adapters: no adapters attached");
  const auto bottleneck = model->blocks.front()->adapter->down->weight.size(0);
  checkpoint::Checkpoint c{"adapters", {{"bottleneck", bottleneck}, {"base", config::to_json(model->config())}},
                           seed, step, adapters::adapter_state(model)};
  checkpoint::save(c, dir);
}

void load_adapters(biart::BiART& model, const std::filesystem::path& dir, bool force) {
  checkpoint::LoadOptions o;
  o.expected_kind = "adapters";
  auto c = checkpoint::load(dir, o);
  if (c.config.at("base") != config::to_json(model->config()) && !force) {
    throw ConfigHashMismatch("adapter overlay " + dir.string() + " was trained on a different base config (use --force)");
  }
  if (!adapters::has_adapters(model)) adapters::attach(model, {c.config.at("bottleneck").get<int64_t>()});
  adapters::load_adapter_state(model, c.tensors);
  model->eval();
}

namespace {

std::vector<biart::TrainingPair> make_pairs(const config::RunConfig& cfg, const text::BPEVocab& vocab,
                                            const std::vector<manifest::ManifestRecord>& records,
                                            const std::vector<std::vector<biart::TokenId>>& tokens,
                                            const std::function<std::string(const manifest::ManifestRecord&)>& text_of) {
  if (records.size() != tokens.size()) throw ShapeError("records and token grids differ in count");
  std::vector<biart::TrainingPair> out;
  for (size_t i = 0; i < records.size(); ++i) {
    const auto txt = text_of(records[i]);
    if (txt.empty()) continue;
    try {
      out.push_back({text::encode_text(vocab, txt, cfg.biart.text_len), tokens[i]});
    } catch (const TruncationError& e) {
      std::cerr << "warning: line " << records[i].line << ": " << e.what() << "; skipped\n";
    }
  }
  return out;
}

}  // namespace

std::vector<biart::TrainingPair> caption_pairs(const config::RunConfig& cfg, const text::BPEVocab& vocab,
                                               const std::vector<manifest::ManifestRecord>& records,
                                               const std::vector<std::vector<biart::TokenId>>& tokens) {
  return make_pairs(cfg, vocab, records, tokens, [](const manifest::ManifestRecord& r) { return r.caption; });
}

std::vector<biart::TrainingPair> keyword_pairs(const config::RunConfig& cfg, const text::BPEVocab& vocab,
                                               const std::vector<manifest::ManifestRecord>& records,
                                               const std::vector<std::vector<biart::TokenId>>& tokens) {
  return make_pairs(cfg, vocab, records, tokens,
                    [](const manifest::ManifestRecord& r) { return adapters::serialize_keywords(r.keywords); });
}

}  // namespace wavecap::runner
