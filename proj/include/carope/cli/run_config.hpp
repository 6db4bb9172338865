#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "carope/data/corpus.hpp"
#include "carope/evalbench/evalbench.hpp"
#include "carope/model/transformer.hpp"
#include "carope/train/schedule.hpp"

namespace carope::cli {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Everything one subcommand needs, merged from a config file and flags.
struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  std::filesystem::path corpus;
  double eval_fraction = 0.01;
  data::TokenizerKind tokenizer = data::TokenizerKind::automatic;
  std::filesystem::path out_dir = "runs/default";
  std::vector<std::size_t> eval_lengths;  // empty: {max_context, 2 * max_context}
  std::size_t eval_batch = 16;
  evalbench::BenchOptions bench;
  evalbench::GradCheckOptions gradcheck;

  /// Throws ConfigError naming the first invalid field. `need_corpus`
  /// additionally requires the corpus file to exist.
  void validate(bool need_corpus) const;
  std::vector<std::size_t> lengths() const;
  /// Flat `key = value` rendering that parses back to the same config.
  std::string to_text() const;
};

/// Parses flat `key = value` lines; `#` starts a comment. Throws ConfigError
/// with the line number on malformed lines.
KeyValues parse_config_text(std::string_view text);
KeyValues read_config_file(const std::filesystem::path& path);

/// Applies pairs in order, so later pairs win. Unknown keys and
/// unparsable values raise ConfigError naming the key.
void apply_pairs(RunConfig& cfg, const KeyValues& pairs);

/// Defaults, then the file (when given), then the overrides.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const KeyValues& overrides);

std::vector<std::size_t> parse_lengths(std::string_view csv);

}  // namespace carope::cli
