#pragma once

#include <cstdint>

namespace wavecap {

// AdamW hyper-parameters plus the warm-up / cosine learning-rate schedule
// shared by every training loop in the project.
struct OptimConfig {
  double lr = 3.6e-5;
  double final_lr = 3.6e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
  double warmup_fraction = 0.01;
};

// Recipe used for the image tokenizer (both stages; stage 2 sets weight_decay 0).
OptimConfig tokenizer_optim_preset();
// Recipe used for transformer pretraining and adapter finetuning.
OptimConfig transformer_optim_preset();

// Linear warm-up from 0 over the first max(1, round(warmup_fraction * total))
// steps, then cosine decay that reaches final_lr at step total_steps - 1.
class LrSchedule {
 public:
  LrSchedule(const OptimConfig& cfg, int64_t total_steps);

  double at(int64_t step) const;
  int64_t warmup_steps() const { return warmup_; }
  int64_t total_steps() const { return total_; }

 private:
  double base_;
  double final_;
  int64_t warmup_;
  int64_t total_;
};

}  // namespace wavecap
