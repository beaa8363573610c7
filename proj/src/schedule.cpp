#include "wavecap/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "wavecap/errors.hpp"

namespace wavecap {

OptimConfig tokenizer_optim_preset() { return OptimConfig{}; }

OptimConfig transformer_optim_preset() {
  OptimConfig c;
  c.lr = 1.5e-4;
  c.final_lr = 1.5e-5;
  c.beta1 = 0.9;
  c.beta2 = 0.95;
  c.eps = 1e-8;
  c.weight_decay = 1e-2;
  return c;
}

LrSchedule::LrSchedule(const OptimConfig& cfg, int64_t total_steps)
    : base_(cfg.lr), final_(cfg.final_lr), total_(total_steps) {
  if (total_steps < 1) throw ConfigError("schedule needs at least one step");
  if (cfg.warmup_fraction < 0.0 || cfg.warmup_fraction >= 1.0) {
    throw ConfigError("warmup_fraction must lie in [0, 1)");
  }
  warmup_ = std::max<int64_t>(1, std::llround(cfg.warmup_fraction * static_cast<double>(total_steps)));
  warmup_ = std::min(warmup_, total_ - 1);
}

double LrSchedule::at(int64_t step) const {
  if (step <= 0) return 0.0;
  if (step < warmup_) return base_ * static_cast<double>(step) / static_cast<double>(warmup_);
  const int64_t last = total_ - 1;
  if (step >= last) return last <= warmup_ ? base_ : final_;
  const double progress = static_cast<double>(step - warmup_) / static_cast<double>(last - warmup_);
  return final_ + 0.5 * (base_ - final_) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace wavecap
