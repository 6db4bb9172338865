#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "carope/data/corpus.hpp"
#include "carope/model/transformer.hpp"
#include "carope/train/schedule.hpp"

namespace carope::evalbench {

using posenc::EncodingKind;

enum class Metric { perplexity, tokens_per_sec };

std::string_view to_string(Metric metric);

struct MetricsRecord {
  EncodingKind encoding = EncodingKind::rope;
  std::size_t seq_len = 0;
  Metric metric = Metric::perplexity;
  double value = 0.0;
  std::size_t n_tokens = 0;
  double wall_seconds = 0.0;
  bool supported = true;  // false marks a cell the encoding cannot produce
  std::string note;

  /// `encoding=<kind> seq_len=<int> metric=<name> value=<float> n_tokens=<int> wall_s=<float>`;
  /// unsupported cells print `value=unsupported`.
  std::string format() const;
};

/// exp(mean token cross-entropy) over every non-overlapping eval window of
/// length seq_len. Learnable APE past its table yields an unsupported record.
template <typename T>
MetricsRecord perplexity(const model::Transformer<T>& model, const data::Corpus& corpus, std::size_t seq_len,
                         std::size_t batch_size = 16);

struct ReportEntry {
  std::string label;  // row name, usually the encoding
  const model::Transformer<float>* model = nullptr;
};

struct Report {
  std::vector<std::string> labels;
  std::vector<std::size_t> lengths;
  std::vector<MetricsRecord> records;  // row-major: labels x lengths

  const MetricsRecord& at(std::size_t row, std::size_t col) const { return records[row * lengths.size() + col]; }
  /// Aligned columns, one row per length and one column per model, "-" for
  /// unsupported cells.
  std::string table() const;
  /// One MetricsRecord::format() line per cell.
  std::string lines() const;
};

/// Perplexity for every (model, length) cell. A failing cell is recorded as
/// unsupported with the error text; the other cells still run.
Report extrapolation_report(const std::vector<ReportEntry>& models, const data::Corpus& corpus,
                            const std::vector<std::size_t>& lengths, std::size_t batch_size = 16);

struct BenchOptions {
  std::size_t n_warmup = 5;
  std::size_t n_timed = 10;
  std::uint64_t seed = 0;
};

/// Median tokens/sec over n_timed full training updates (forward, backward,
/// AdamW) on synthetic tokens, after n_warmup discarded updates.
MetricsRecord throughput_bench(const model::ModelConfig& model_cfg, const train::TrainConfig& train_cfg,
                               EncodingKind encoding, const BenchOptions& opts = {});

struct BenchComparison {
  MetricsRecord rope;
  MetricsRecord carope;
  double ratio = 0.0;  // carope tokens/sec over rope tokens/sec
};

BenchComparison throughput_compare(const model::ModelConfig& model_cfg, const train::TrainConfig& train_cfg,
                                   const BenchOptions& opts = {});

struct GradCheckOptions {
  double tolerance = 1e-6;
  double step_size = 1e-6;
  // Denominator floor of the relative error, so that entries whose true
  // gradient is ~0 are compared on an absolute scale.
  double error_floor = 1e-2;
  std::size_t batch_size = 2;
  std::size_t seq_len = 5;
  std::uint64_t seed = 0;
  bool freeze_carope_w = false;
  bool randomize_carope = true;  // move W, b off the RoPE-equivalent start
};

struct GroupResult {
  std::string name;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradCheckReport {
  std::vector<GroupResult> groups;
  std::vector<std::string> offending;  // "name[index]: autodiff=.. numeric=.."
  std::size_t parameter_count = 0;
  bool passed = false;

  bool has_group(std::string_view name) const;
  std::string format() const;
};

/// Compares autodiff gradients of the float64 model loss against central
/// differences for every parameter entry.
GradCheckReport grad_check(const model::ModelConfig& cfg, const GradCheckOptions& opts = {});

struct HeadFrequencyStats {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
};

/// Per-head statistics of the base frequencies f over `tokens` (carope only).
template <typename T>
std::vector<HeadFrequencyStats> carope_frequency_stats(const model::Transformer<T>& model, const num::IntTensor& tokens);

/// Uniformly random token ids of shape [batch, seq].
num::IntTensor random_tokens(std::size_t batch, std::size_t seq, std::size_t vocab, std::uint64_t seed);

}  // namespace carope::evalbench
