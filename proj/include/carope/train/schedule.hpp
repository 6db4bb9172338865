#pragma once

#include <cstddef>
#include <cstdint>

namespace carope::train {

struct TrainConfig {
  double max_lr = 6e-4;
  double min_lr = 6e-5;
  std::size_t warmup_steps = 750;
  std::size_t total_steps = 19000;
  std::size_t tokens_per_update = 8192;
  std::size_t batch_size = 8;
  std::size_t seq_len = 64;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint

  /// Throws ConfigError naming the first invalid field.
  void validate() const;
  /// ceil(tokens_per_update / (batch_size * seq_len)).
  std::size_t micro_batches() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup to max_lr over warmup_steps, cosine decay to min_lr at
/// total_steps, then constant min_lr.
double lr_at(std::size_t step, const TrainConfig& cfg);

}  // namespace carope::train
