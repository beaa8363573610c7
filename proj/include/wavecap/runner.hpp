#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wavecap/biart.hpp"
#include "wavecap/checkpoint.hpp"
#include "wavecap/config.hpp"
#include "wavecap/manifest.hpp"
#include "wavecap/textcodec.hpp"
#include "wavecap/wavevae.hpp"

namespace wavecap::runner {

using Logger = std::function<void(const std::string&)>;

struct SynthOptions {
  int64_t count = 40;
  int64_t image_size = 64;
  uint64_t seed = 0;
  double test_fraction = 0.2;
};

/// Writes procedurally drawn images (a coloured shape on a coloured
/// background, with a bar marking the depicted person's gender) plus a
/// manifest.jsonl describing them. Returns the manifest path.
std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir, const SynthOptions& opts);

/// [N, 3, size, size] in [-1, 1].
torch::Tensor load_images(const std::vector<manifest::ManifestRecord>& records, int64_t size);

// Checkpoint locations inside a run directory.
std::filesystem::path stage1_dir(const std::filesystem::path& run);
std::filesystem::path vae_dir(const std::filesystem::path& run);
std::filesystem::path biart_dir(const std::filesystem::path& run);
std::filesystem::path adapters_dir(const std::filesystem::path& run);
std::filesystem::path vocab_path(const std::filesystem::path& run);

OptimConfig vae_optim(const config::RunConfig& cfg);
OptimConfig biart_optim(const config::RunConfig& cfg);

/// Rows of `data` for one step: everything when batch >= N, otherwise a
/// seeded random subset.
torch::Tensor batch_rows(const torch::Tensor& data, int64_t batch, std::mt19937_64& rng);

wavevae::Stage1Model train_vae_stage1(const config::RunConfig& cfg, const torch::Tensor& images,
                                      const Logger& log);
wavevae::Stage2Model train_vae_stage2(const config::RunConfig& cfg, wavevae::Stage1Model& stage1,
                                      const torch::Tensor& images, const Logger& log);

void save_stage1(wavevae::Stage1Model& model, uint64_t seed, int64_t step, const std::filesystem::path& dir);
wavevae::Stage1Model load_stage1(const std::filesystem::path& dir, const config::RunConfig& cfg, bool force);
void save_vae(wavevae::Stage2Model& model, uint64_t seed, int64_t step, const std::filesystem::path& dir);
wavevae::Stage2Model load_vae(const std::filesystem::path& dir, const config::RunConfig& cfg, bool force);

/// Row-major token grids, one per image.
std::vector<std::vector<biart::TokenId>> encode_tokens(wavevae::Stage2Model& model, const torch::Tensor& images);

/// BPE vocabulary over captions and serialized keyword lists.
text::BPEVocab train_vocab(const config::RunConfig& cfg, const std::vector<manifest::ManifestRecord>& records);

struct BiARTRun {
  int64_t steps = 0;
  biart::LossPair last;
};

/// Trains from scratch with the run seed; stops early once both direction
/// losses drop below training.biart_target_loss (when positive).
biart::BiART train_biart(const config::RunConfig& cfg, const std::vector<biart::TrainingPair>& pairs,
                         const Logger& log, BiARTRun* run = nullptr);

/// Attaches adapters and trains them on (keyword text, image) pairs.
double finetune_keywords(const config::RunConfig& cfg, biart::BiART& model,
                         const std::vector<biart::TrainingPair>& pairs, const Logger& log,
                         int64_t* steps_run = nullptr);

void save_biart(biart::BiART& model, uint64_t seed, int64_t step, const std::string& vocab_sha256,
                const std::filesystem::path& dir);
biart::BiART load_biart(const std::filesystem::path& dir, const config::RunConfig& cfg, bool force);
void save_adapters(biart::BiART& model, uint64_t seed, int64_t step, const std::filesystem::path& dir);
/// Attaches adapters of the recorded width and fills them from the overlay.
void load_adapters(biart::BiART& model, const std::filesystem::path& dir, bool force);

/// Encoded caption + image tokens for every record (captions longer than
/// text_len are reported and skipped).
std::vector<biart::TrainingPair> caption_pairs(const config::RunConfig& cfg, const text::BPEVocab& vocab,
                                               const std::vector<manifest::ManifestRecord>& records,
                                               const std::vector<std::vector<biart::TokenId>>& tokens);
std::vector<biart::TrainingPair> keyword_pairs(const config::RunConfig& cfg, const text::BPEVocab& vocab,
                                               const std::vector<manifest::ManifestRecord>& records,
                                               const std::vector<std::vector<biart::TokenId>>& tokens);

}  // namespace wavecap::runner
