#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavecap/adapters.hpp"
#include "wavecap/bias.hpp"
#include "wavecap/biart.hpp"
#include "wavecap/sampling.hpp"
#include "wavecap/wavevae.hpp"

namespace wavecap::config {

struct TrainingConfig {
  int64_t stage1_steps = 1500;
  int64_t stage2_steps = 1500;
  int64_t calibration_steps = 0;  // 0: 1% of stage2_steps (at least 1)
  int64_t vae_batch = 16;
  double vae_lr = 2e-3;
  double vae_final_lr = 2e-4;
  int64_t biart_steps = 3000;
  int64_t biart_batch = 32;
  double biart_lr = 1e-3;
  double biart_final_lr = 1e-4;
  double biart_target_loss = 0.0;  // stop once both direction losses fall below; 0 disables
  int64_t finetune_steps = 1000;
  double finetune_target_loss = 0.0;
  int64_t text_vocab_size = 2048;  // BPE vocabulary trained from the manifest captions
  int64_t log_every = 100;

  int64_t effective_calibration_steps() const;
};

struct RunConfig {
  wavevae::WaveVaeConfig wavevae = wavevae::WaveVaeConfig::desk();
  biart::BiARTConfig biart = biart::BiARTConfig::desk();
  adapters::AdapterSpec adapters;
  sampling::SamplerConfig sampler;
  eval::LicConfig lic;
  TrainingConfig training;
  uint64_t seed = 0;
  std::string precision = "fp32";  // "fp32" or "mixed"
  std::string output_dir = "run";

  /// Desk defaults everywhere; the full() preset swaps in full-scale module
  /// constants and the full-scale optimizer settings.
  static RunConfig desk();
  static RunConfig full();
  void validate() const;
};

nlohmann::json to_json(const wavevae::WaveVaeConfig& c);
nlohmann::json to_json(const biart::BiARTConfig& c);
nlohmann::json to_json(const sampling::SamplerConfig& c);
nlohmann::json to_json(const eval::LicConfig& c);
nlohmann::json to_json(const TrainingConfig& c);
nlohmann::json to_json(const RunConfig& c);

wavevae::WaveVaeConfig wavevae_from_json(const nlohmann::json& j);
biart::BiARTConfig biart_from_json(const nlohmann::json& j);

/// Overlays `patch` on the defaults of `base`; unknown keys and wrongly typed
/// values raise ConfigError.
RunConfig from_json(const nlohmann::json& patch, const RunConfig& base = RunConfig::desk());

/// "section.field=value"; the value is read as JSON when it parses, else as
/// a string. Throws ConfigError on a malformed assignment.
void apply_assignment(nlohmann::json& patch, const std::string& assignment);

/// Assignments from environment variables: WAVECAP_SEED=3 sets seed,
/// WAVECAP_BIART__LAYERS=2 sets biart.layers.
std::vector<std::string> environment_assignments();

RunConfig load_file(const std::filesystem::path& path, const RunConfig& base = RunConfig::desk());

/// SHA-256 of the key-sorted JSON form.
std::string hash(const RunConfig& c);

}  // namespace wavecap::config
