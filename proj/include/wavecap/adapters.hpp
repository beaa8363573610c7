#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wavecap/biart.hpp"

namespace wavecap::adapters {

struct AdapterSpec {
  int64_t bottleneck = 32;

  static AdapterSpec full() { return {320}; }
};

/// Inserts one bottleneck adapter after the feed-forward sublayer of every
/// block and freezes every other parameter. Throws ConfigError when adapters
/// are already attached or the bottleneck is outside [1, model_dim).
void attach(biart::BiART& model, const AdapterSpec& spec);

/// Removes every adapter and makes the base weights trainable again.
void detach(biart::BiART& model);

bool has_adapters(const biart::BiART& model);

/// Adapter tensors by qualified name ("block0.adapter.down.weight", ...).
std::map<std::string, torch::Tensor> adapter_state(const biart::BiART& model);
/// Copies a state produced by adapter_state() into attached adapters.
/// Throws ShapeError on missing names or mismatched shapes.
void load_adapter_state(biart::BiART& model, const std::map<std::string, torch::Tensor>& state);

int64_t adapter_parameter_count(const biart::BiART& model);
int64_t base_parameter_count(const biart::BiART& model);
/// 2 * model_dim * bottleneck + model_dim + bottleneck
int64_t adapter_parameters_per_layer(int64_t model_dim, int64_t bottleneck);

/// adapter parameters / base parameters. Throws ConfigError without adapters.
double parameter_ratio(const biart::BiART& model);

/// Optimizer over the adapter tensors only, with the pretraining recipe.
/// Finetuning conditions on the image and predicts the keyword text.
biart::BiARTTrainState make_finetune_state(biart::BiART& model, const OptimConfig& cfg,
                                           int64_t total_steps);

/// Comma-joined keyword list ("red, car, street"), the text form used as the
/// finetuning target.
std::string serialize_keywords(const std::vector<std::string>& keywords);

/// One adapter-only optimizer step on (keyword text, image) pairs. Verifies
/// afterwards that no base tensor moved; throws InvariantViolation if one did.
/// Returns the image-to-text loss.
double finetune_step(biart::BiART& model, const std::vector<biart::TrainingPair>& batch,
                     biart::BiARTTrainState& state);

}  // namespace wavecap::adapters
