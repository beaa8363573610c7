#include "wavecap/adapters.hpp"

#include <string>

#include "wavecap/errors.hpp"

namespace wavecap::adapters {
namespace {

bool is_adapter_name(const std::string& name) { return name.find(".adapter.") != std::string::npos; }

void set_base_trainable(biart::BiART& model, bool trainable) {
  for (auto& p : model->named_parameters(true)) {
    if (!is_adapter_name(p.key())) p.value().set_requires_grad(trainable);
  }
}

}  // namespace

bool has_adapters(const biart::BiART& model) {
  for (const auto& b : model->blocks) {
    if (b->adapter) return true;
  }
  return false;
}

void attach(biart::BiART& model, const AdapterSpec& spec) {
  if (has_adapters(model)) throw ConfigError("adapters already attached");
  const auto dim = model->config().model_dim;
  if (spec.bottleneck < 1 || spec.bottleneck >= dim) {
    throw ConfigError("adapter bottleneck must lie in [1, " + std::to_string(dim) + ")");
  }
  set_base_trainable(model, false);
  for (auto& b : model->blocks) {
    b->adapter = b->register_module("adapter", biart::Adapter(dim, spec.bottleneck));
    b->adapter->to(b->fc2->weight.scalar_type());
  }
}

void detach(biart::BiART& model) {
  for (auto& b : model->blocks) {
    if (!b->adapter) continue;
    b->unregister_module("adapter");
    b->adapter = nullptr;
  }
  set_base_trainable(model, true);
}

std::map<std::string, torch::Tensor> adapter_state(const biart::BiART& model) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : model->named_parameters(true)) {
    if (is_adapter_name(p.key())) out.emplace(p.key(), p.value().detach().clone());
  }
  return out;
}

void load_adapter_state(biart::BiART& model, const std::map<std::string, torch::Tensor>& state) {
  torch::NoGradGuard guard;
  auto params = model->named_parameters(true);
  size_t matched = 0;
  for (auto& p : params) {
    if (!is_adapter_name(p.key())) continue;
    const auto it = state.find(p.key());
    if (it == state.end()) throw ShapeError("adapter overlay lacks " + p.key());
    if (it->second.sizes() != p.value().sizes()) throw ShapeError("adapter overlay shape mismatch at " + p.key());
    p.value().copy_(it->second);
    ++matched;
  }
  if (matched != state.size()) throw ShapeError("adapter overlay does not match the attached adapters");
}

int64_t adapter_parameter_count(const biart::BiART& model) {
  int64_t n = 0;
  for (const auto& p : model->named_parameters(true)) {
    if (is_adapter_name(p.key())) n += p.value().numel();
  }
  return n;
}

int64_t base_parameter_count(const biart::BiART& model) {
  int64_t n = 0;
  for (const auto& p : model->named_parameters(true)) {
    if (!is_adapter_name(p.key())) n += p.value().numel();
  }
  return n;
}

int64_t adapter_parameters_per_layer(int64_t model_dim, int64_t bottleneck) {
  return 2 * model_dim * bottleneck + model_dim + bottleneck;
}

double parameter_ratio(const biart::BiART& model) {
  if (!has_adapters(model)) throw ConfigError("parameter_ratio: no adapters attached");
  return static_cast<double>(adapter_parameter_count(model)) /
         static_cast<double>(base_parameter_count(model));
}

biart::BiARTTrainState make_finetune_state(biart::BiART& model, const OptimConfig& cfg,
                                           int64_t total_steps) {
  if (!has_adapters(model)) throw ConfigError("finetune: attach adapters first");
  auto state = biart::make_train_state(model, cfg, total_steps, biart::DirectionMode::ImageToTextOnly);
  state.unstable_mode_warned = true;  // keyword finetuning is one-directional by design
  return state;
}

std::string serialize_keywords(const std::vector<std::string>& keywords) {
  std::string out;
  for (size_t i = 0; i < keywords.size(); ++i) {
    if (i > 0) out += ", ";
    out += keywords[i];
  }
  return out;
}

double finetune_step(biart::BiART& model, const std::vector<biart::TrainingPair>& batch,
                     biart::BiARTTrainState& state) {
  if (!has_adapters(model)) throw ConfigError("finetune: attach adapters first");
  std::vector<std::pair<std::string, torch::Tensor>> before;
  for (const auto& p : model->named_parameters(true)) {
    if (!is_adapter_name(p.key())) before.emplace_back(p.key(), p.value().detach().clone());
  }
  const auto losses = biart::bidirectional_train_step(model, batch, state);
  const auto params = model->named_parameters(true);
  for (const auto& [name, old] : before) {
    if (!torch::equal(params[name], old)) {
      throw InvariantViolation("base tensor " + name + " changed during adapter finetuning");
    }
  }
  return losses.image_to_text;
}

}  // namespace wavecap::adapters
