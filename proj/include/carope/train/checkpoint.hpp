#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "carope/model/transformer.hpp"
#include "carope/train/trainer.hpp"

// Binary checkpoint, all integers and floats little-endian:
//
//   "CARO" u32 version u8 dtype
//   model:  u64 n_layers n_heads d_model vocab_size max_context, u8 encoding, u8 tie, u64 seed
//   train:  f64 max_lr min_lr, u64 warmup total tokens_per_update batch seq_len,
//           f64 weight_decay beta1 beta2 eps grad_clip, u64 seed checkpoint_interval
//   u64 step, u32 length + sampler rng state text
//   u32 entry count, then per entry:
//           u32 length + name, u8 dtype, u32 rank, u64 dims[rank], payload
//
// Entries are the model parameters in model order followed by the AdamW
// moments as "adamw.m.<name>" / "adamw.v.<name>".
namespace carope::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  std::uint32_t version = 0;
  num::Dtype dtype = num::Dtype::f32;
  model::ModelConfig model;
  TrainConfig train;
  std::uint64_t step = 0;
  std::string sampler_state;
};

/// Writes to a temporary file and renames it over `path`.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Session<T>& session);

/// Throws IngestionError on malformed files or a version other than
/// kCheckpointVersion (both versions appear in the message).
template <typename T>
Session<T> load_checkpoint(const std::filesystem::path& path);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

}  // namespace carope::train
