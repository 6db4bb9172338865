#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "carope/num/tensor.hpp"

namespace carope::data {

enum class Split { train, eval };

enum class TokenizerKind {
  automatic,     // pre-tokenized when the file starts with the CTOK magic, bytes otherwise
  bytes,         // one token per byte, vocab 256
  pretokenized,  // "CTOK" + u32 version 1, then little-endian u32 token ids
};

struct Corpus {
  std::vector<std::int32_t> tokens;
  std::string source_digest;  // FNV-1a 64 of the file bytes, hex
  std::size_t split_point = 0;  // tokens [0, split_point) train, the rest eval
  std::size_t vocab_size = 256;

  std::span<const std::int32_t> segment(Split split) const;
};

/// Reads a corpus and places the train/eval boundary so that the last
/// ceil(size * eval_fraction) tokens form the eval segment.
/// Throws IngestionError for missing, empty or malformed files.
Corpus ingest(const std::filesystem::path& path, TokenizerKind kind = TokenizerKind::automatic,
              double eval_fraction = 0.01, std::size_t vocab_size = 256);

/// In-memory corpus with an explicit split point.
Corpus make_corpus(std::vector<std::int32_t> tokens, std::size_t split_point, std::size_t vocab_size = 256);

void write_pretokenized(const std::filesystem::path& path, std::span<const std::int32_t> tokens);

struct TokenBatch {
  num::IntTensor inputs;   // [batch, seq]
  num::IntTensor targets;  // [batch, seq], inputs shifted one token ahead

  std::size_t token_count() const { return inputs.values.size(); }
};

/// Windows of seq_len + 1 consecutive tokens from one corpus segment.
/// Train streams sample window starts uniformly with replacement and never
/// end. Eval streams walk non-overlapping windows in order, once; a tail too
/// short for a full window is dropped. The corpus must outlive the stream.
class BatchStream {
 public:
  BatchStream(const Corpus& corpus, std::size_t seq_len, std::size_t batch_size, std::uint64_t seed, Split split);

  std::optional<TokenBatch> next();

  std::size_t window_count() const noexcept { return windows_; }
  std::size_t dropped_tail() const noexcept { return dropped_; }

  std::string rng_state() const;
  void set_rng_state(const std::string& state);

 private:
  TokenBatch fill(std::span<const std::size_t> starts) const;

  std::span<const std::int32_t> segment_;
  std::size_t seq_len_;
  std::size_t batch_size_;
  Split split_;
  std::mt19937_64 rng_;
  std::size_t windows_ = 0;
  std::size_t dropped_ = 0;
  std::size_t cursor_ = 0;
};

/// Entropy in nats of the token frequency distribution.
double unigram_entropy(std::span<const std::int32_t> tokens, std::size_t vocab_size);

}  // namespace carope::data
