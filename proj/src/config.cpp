#include "wavecap/config.hpp"

#include <cctype>
#include <fstream>

#include "wavecap/checkpoint.hpp"
#include "wavecap/errors.hpp"
#include "wavecap/hashing.hpp"

extern char** environ;

namespace wavecap::config {
namespace {

using nlohmann::json;

void check_keys(const json& patch, const json& reference, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config" + where + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const auto path = where + "." + key;
    if (!reference.contains(key)) throw ConfigError("unknown config key " + path.substr(1));
    if (reference.at(key).is_object()) check_keys(value, reference.at(key), path);
  }
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

const char* classifier_name(eval::LicClassifier c) { return c == eval::LicClassifier::Lstm ? "lstm" : "logistic"; }
const char* weighting_name(eval::LicWeighting w) {
  return w == eval::LicWeighting::CorrectOnly ? "correct_only" : "true_class_posterior";
}

}  // namespace

int64_t TrainingConfig::effective_calibration_steps() const {
  if (calibration_steps > 0) return calibration_steps;
  return std::max<int64_t>(1, (stage2_steps + 50) / 100);
}

RunConfig RunConfig::desk() { return RunConfig{}; }

RunConfig RunConfig::full() {
  RunConfig c;
  c.wavevae = wavevae::WaveVaeConfig::full();
  c.biart = biart::BiARTConfig::full();
  c.adapters = adapters::AdapterSpec::full();
  c.training.vae_lr = 3.6e-5;
  c.training.vae_final_lr = 3.6e-6;
  c.training.vae_batch = 480;
  c.training.biart_lr = 1.5e-4;
  c.training.biart_final_lr = 1.5e-5;
  c.training.text_vocab_size = 49408;
  return c;
}

void RunConfig::validate() const {
  biart.validate();
  sampler.validate();
  if (wavevae.levels != 3) throw ConfigError("wavevae.levels must be 3");
  if (wavevae.image_size % 8 != 0) throw ConfigError("wavevae.image_size must be divisible by 8");
  const auto grid = wavevae.image_size / 8;
  if (grid * grid != biart.image_len) {
    throw ConfigError("biart.image_len must equal (wavevae.image_size / 8)^2 = " + std::to_string(grid * grid));
  }
  if (wavevae.codebook_size != biart.image_vocab) throw ConfigError("biart.image_vocab must equal wavevae.codebook_size");
  if (training.text_vocab_size > biart.text_vocab) throw ConfigError("training.text_vocab_size exceeds biart.text_vocab");
  if (precision != "fp32" && precision != "mixed") throw ConfigError("precision must be 'fp32' or 'mixed'");
  if (training.stage1_steps < 1 || training.stage2_steps < 1 || training.biart_steps < 1 ||
      training.finetune_steps < 1 || training.vae_batch < 1 || training.biart_batch < 1) {
    throw ConfigError("training step counts and batch sizes must be >= 1");
  }
}

json to_json(const wavevae::WaveVaeConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"blocks", c.blocks},
          {"codebook_size", c.codebook_size},
          {"codebook_dim", c.codebook_dim},
          {"levels", c.levels},
          {"beta", c.beta},
          {"w_l1", c.w_l1},
          {"w_perc", c.w_perc},
          {"crop_ratio", c.crop_ratio},
          {"image_size", c.image_size},
          {"discriminator",
           {{"base_channels", c.discriminator.base_channels},
            {"depth", c.discriminator.depth},
            {"spectral_norm", c.discriminator.spectral_norm},
            {"loss_weight", c.discriminator.loss_weight}}}};
}

json to_json(const biart::BiARTConfig& c) {
  return {{"layers", c.layers},         {"model_dim", c.model_dim},   {"heads", c.heads},
          {"text_len", c.text_len},     {"image_len", c.image_len},   {"text_vocab", c.text_vocab},
          {"image_vocab", c.image_vocab}, {"dropout", c.dropout},     {"init_std", c.init_std},
          {"ffn_mult", c.ffn_mult},     {"pad_id", c.pad_id},         {"end_id", c.end_id}};
}

json to_json(const sampling::SamplerConfig& c) {
  return {{"topk_fraction", c.topk_fraction},
          {"top_p", c.top_p},
          {"n_candidates", c.n_candidates},
          {"caption_tokens", c.caption_tokens},
          {"keyword_tokens", c.keyword_tokens},
          {"top_keyword_lists", c.top_keyword_lists},
          {"keyword_min_count", c.keyword_min_count},
          {"temperature", c.temperature},
          {"guidance_scale", c.guidance_scale},
          {"greedy", c.greedy},
          {"seed", c.seed},
          {"workers", c.workers}};
}

json to_json(const eval::LicConfig& c) {
  return {{"classifier", classifier_name(c.classifier)},
          {"weighting", weighting_name(c.weighting)},
          {"folds", c.folds},
          {"seed", c.seed},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"l2", c.l2}};
}

json to_json(const TrainingConfig& c) {
  return {{"stage1_steps", c.stage1_steps},
          {"stage2_steps", c.stage2_steps},
          {"calibration_steps", c.calibration_steps},
          {"vae_batch", c.vae_batch},
          {"vae_lr", c.vae_lr},
          {"vae_final_lr", c.vae_final_lr},
          {"biart_steps", c.biart_steps},
          {"biart_batch", c.biart_batch},
          {"biart_lr", c.biart_lr},
          {"biart_final_lr", c.biart_final_lr},
          {"biart_target_loss", c.biart_target_loss},
          {"finetune_steps", c.finetune_steps},
          {"finetune_target_loss", c.finetune_target_loss},
          {"text_vocab_size", c.text_vocab_size},
          {"log_every", c.log_every}};
}

json to_json(const RunConfig& c) {
  return {{"wavevae", to_json(c.wavevae)},
          {"biart", to_json(c.biart)},
          {"adapters", {{"bottleneck", c.adapters.bottleneck}}},
          {"sampler", to_json(c.sampler)},
          {"lic", to_json(c.lic)},
          {"training", to_json(c.training)},
          {"seed", c.seed},
          {"precision", c.precision},
          {"output_dir", c.output_dir}};
}

wavevae::WaveVaeConfig wavevae_from_json(const json& j) {
  wavevae::WaveVaeConfig c;
  c.hidden_dim = get<int64_t>(j, "hidden_dim");
  c.blocks = get<int64_t>(j, "blocks");
  c.codebook_size = get<int64_t>(j, "codebook_size");
  c.codebook_dim = get<int64_t>(j, "codebook_dim");
  c.levels = get<int>(j, "levels");
  c.beta = get<double>(j, "beta");
  c.w_l1 = get<double>(j, "w_l1");
  c.w_perc = get<double>(j, "w_perc");
  c.crop_ratio = get<double>(j, "crop_ratio");
  c.image_size = get<int64_t>(j, "image_size");
  const auto d = get<json>(j, "discriminator");
  c.discriminator.base_channels = get<int64_t>(d, "base_channels");
  c.discriminator.depth = get<int64_t>(d, "depth");
  c.discriminator.spectral_norm = get<bool>(d, "spectral_norm");
  c.discriminator.loss_weight = get<double>(d, "loss_weight");
  return c;
}

biart::BiARTConfig biart_from_json(const json& j) {
  biart::BiARTConfig c;
  c.layers = get<int64_t>(j, "layers");
  c.model_dim = get<int64_t>(j, "model_dim");
  c.heads = get<int64_t>(j, "heads");
  c.text_len = get<int64_t>(j, "text_len");
  c.image_len = get<int64_t>(j, "image_len");
  c.text_vocab = get<int64_t>(j, "text_vocab");
  c.image_vocab = get<int64_t>(j, "image_vocab");
  c.dropout = get<double>(j, "dropout");
  c.init_std = get<double>(j, "init_std");
  c.ffn_mult = get<int64_t>(j, "ffn_mult");
  c.pad_id = get<int64_t>(j, "pad_id");
  c.end_id = get<int64_t>(j, "end_id");
  return c;
}

RunConfig from_json(const json& patch, const RunConfig& base) {
  auto merged = to_json(base);
  check_keys(patch, merged, "");
  merged.merge_patch(patch);
  RunConfig c;
  c.wavevae = wavevae_from_json(merged.at("wavevae"));
  c.biart = biart_from_json(merged.at("biart"));
  c.adapters.bottleneck = get<int64_t>(merged.at("adapters"), "bottleneck");
  const auto& s = merged.at("sampler");
  c.sampler.topk_fraction = get<double>(s, "topk_fraction");
  c.sampler.top_p = get<double>(s, "top_p");
  c.sampler.n_candidates = get<int64_t>(s, "n_candidates");
  c.sampler.caption_tokens = get<int64_t>(s, "caption_tokens");
  c.sampler.keyword_tokens = get<int64_t>(s, "keyword_tokens");
  c.sampler.top_keyword_lists = get<int64_t>(s, "top_keyword_lists");
  c.sampler.keyword_min_count = get<int64_t>(s, "keyword_min_count");
  c.sampler.temperature = get<double>(s, "temperature");
  c.sampler.guidance_scale = get<double>(s, "guidance_scale");
  c.sampler.greedy = get<bool>(s, "greedy");
  c.sampler.seed = get<uint64_t>(s, "seed");
  c.sampler.workers = get<int64_t>(s, "workers");
  const auto& l = merged.at("lic");
  const auto cls = get<std::string>(l, "classifier");
  if (cls != "logistic" && cls != "lstm") throw ConfigError("lic.classifier must be 'logistic' or 'lstm'");
  c.lic.classifier = cls == "lstm" ? eval::LicClassifier::Lstm : eval::LicClassifier::Logistic;
  const auto wt = get<std::string>(l, "weighting");
  if (wt != "true_class_posterior" && wt != "correct_only") {
    throw ConfigError("lic.weighting must be 'true_class_posterior' or 'correct_only'");
  }
  c.lic.weighting = wt == "correct_only" ? eval::LicWeighting::CorrectOnly : eval::LicWeighting::TrueClassPosterior;
  c.lic.folds = get<int64_t>(l, "folds");
  c.lic.seed = get<uint64_t>(l, "seed");
  c.lic.epochs = get<int64_t>(l, "epochs");
  c.lic.learning_rate = get<double>(l, "learning_rate");
  c.lic.l2 = get<double>(l, "l2");
  const auto& t = merged.at("training");
  c.training.stage1_steps = get<int64_t>(t, "stage1_steps");
  c.training.stage2_steps = get<int64_t>(t, "stage2_steps");
  c.training.calibration_steps = get<int64_t>(t, "calibration_steps");
  c.training.vae_batch = get<int64_t>(t, "vae_batch");
  c.training.vae_lr = get<double>(t, "vae_lr");
  c.training.vae_final_lr = get<double>(t, "vae_final_lr");
  c.training.biart_steps = get<int64_t>(t, "biart_steps");
  c.training.biart_batch = get<int64_t>(t, "biart_batch");
  c.training.biart_lr = get<double>(t, "biart_lr");
  c.training.biart_final_lr = get<double>(t, "biart_final_lr");
  c.training.biart_target_loss = get<double>(t, "biart_target_loss");
  c.training.finetune_steps = get<int64_t>(t, "finetune_steps");
  c.training.finetune_target_loss = get<double>(t, "finetune_target_loss");
  c.training.text_vocab_size = get<int64_t>(t, "text_vocab_size");
  c.training.log_every = get<int64_t>(t, "log_every");
  c.seed = get<uint64_t>(merged, "seed");
  c.precision = get<std::string>(merged, "precision");
  c.output_dir = get<std::string>(merged, "output_dir");
  return c;
}

void apply_assignment(json& patch, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;
  json* node = &patch;
  size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed config key '" + key + "'");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::vector<std::string> environment_assignments() {
  std::vector<std::string> out;
  constexpr std::string_view prefix = "WAVECAP_";
  for (char** env = environ; env != nullptr && *env != nullptr; ++env) {
    const std::string entry(*env);
    if (entry.rfind(prefix, 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string key;
    for (size_t i = prefix.size(); i < eq; ++i) {
      if (entry.compare(i, 2, "__") == 0) {
        key.push_back('.');
        ++i;
      } else {
        key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(entry[i]))));
      }
    }
    out.push_back(key + entry.substr(eq));
  }
  std::sort(out.begin(), out.end());
  return out;
}

RunConfig load_file(const std::filesystem::path& path, const RunConfig& base) {
  json j;
  try {
    j = json::parse(hashing::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return from_json(j, base);
}

std::string hash(const RunConfig& c) { return checkpoint::config_hash(to_json(c)); }

}  // namespace wavecap::config
