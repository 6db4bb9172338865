#include "carope/train/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "carope/errors.hpp"

namespace carope::train {

void TrainConfig::validate() const {
  if (!(max_lr > 0.0)) throw ConfigError("max_lr", "must be positive");
  if (!(min_lr >= 0.0) || min_lr > max_lr) throw ConfigError("min_lr", "must lie in [0, max_lr]");
  if (total_steps == 0) throw ConfigError("total_steps", "must be positive");
  if (warmup_steps >= total_steps) throw ConfigError("warmup_steps", "must be below total_steps");
  if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
  if (seq_len == 0) throw ConfigError("seq_len", "must be positive");
  if (tokens_per_update == 0) throw ConfigError("tokens_per_update", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps", "must be positive");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip", "must be positive");
}

std::size_t TrainConfig::micro_batches() const {
  const std::size_t per_batch = batch_size * seq_len;
  return (tokens_per_update + per_batch - 1) / per_batch;
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps) {
    return cfg.max_lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  }
  if (step > cfg.total_steps) return cfg.min_lr;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace carope::train
