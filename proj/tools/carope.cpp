#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "carope/cli/run_config.hpp"
#include "carope/errors.hpp"
#include "carope/evalbench/evalbench.hpp"
#include "carope/train/checkpoint.hpp"
#include "carope/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace carope;

namespace {

enum Exit { kOk = 0, kUsage = 1, kNumeric = 2 };

struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> encoding;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> emit;
  std::optional<std::string> lengths;
  std::optional<std::size_t> steps;
  std::optional<std::string> corpus;
  std::vector<std::string> checkpoints;
  bool resume = false;
};

cli::RunConfig resolve(const Flags& flags) {
  cli::KeyValues overrides;
  if (flags.encoding) overrides.emplace_back("encoding", *flags.encoding);
  if (flags.seed) overrides.emplace_back("seed", std::to_string(*flags.seed));
  if (flags.out) overrides.emplace_back("out", *flags.out);
  if (flags.lengths) overrides.emplace_back("eval_lengths", *flags.lengths);
  if (flags.steps && *flags.steps > 0) overrides.emplace_back("steps", std::to_string(*flags.steps));
  if (flags.corpus) overrides.emplace_back("corpus", *flags.corpus);
  std::optional<fs::path> file;
  if (flags.config) file = *flags.config;
  return cli::load_run_config(file, overrides);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << text;
}

int cmd_train(const Flags& flags) {
  cli::RunConfig cfg = resolve(flags);
  cfg.validate(true);
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "effective.cfg", cfg.to_text());
  const fs::path ckpt = cfg.out_dir / "checkpoint.caro";

  const data::Corpus corpus = data::ingest(cfg.corpus, cfg.tokenizer, cfg.eval_fraction, cfg.model.vocab_size);
  train::Session<float> session =
      flags.resume && fs::exists(ckpt) ? train::load_checkpoint<float>(ckpt) : train::Session<float>(cfg.model, cfg.train);
  if (flags.resume && !(session.model.config() == cfg.model && session.cfg == cfg.train)) {
    throw ConfigError("resume", "checkpoint config differs from the requested config");
  }
  fmt::print("corpus {} tokens ({} train, {} eval), digest {}\n", corpus.tokens.size(), corpus.split_point,
             corpus.tokens.size() - corpus.split_point, corpus.source_digest);
  fmt::print("{} parameters, encoding {}, {} updates\n", session.model.parameter_count(),
             posenc::to_string(cfg.model.encoding), cfg.train.total_steps);

  // --steps 0 stores the initialized model without training.
  if (flags.steps && *flags.steps == 0) {
    train::save_checkpoint(ckpt, session);
    fmt::print("wrote {}\n", ckpt.string());
    return kOk;
  }

  std::ofstream trace(cfg.out_dir / "trace.log", flags.resume ? std::ios::app : std::ios::trunc);
  train::Callbacks callbacks;
  callbacks.on_step = [&](const train::TraceRecord& rec) {
    trace << rec.format() << '\n';
    if (rec.step % 100 == 0) fmt::print("{}\n", rec.format());
  };
  callbacks.on_checkpoint = [&](std::size_t) { train::save_checkpoint(ckpt, session); };
  try {
    train::train(session, corpus, callbacks);
  } catch (const NumericError&) {
    trace.flush();
    throw;
  }
  train::save_checkpoint(ckpt, session);

  const auto eval = evalbench::perplexity(session.model, corpus, cfg.train.seq_len, cfg.eval_batch);
  fmt::print("{}\nwrote {}\n", eval.format(), ckpt.string());
  return kOk;
}

int cmd_eval(const Flags& flags) {
  if (flags.checkpoints.empty()) throw ConfigError("checkpoint", "at least one --checkpoint is required");
  cli::RunConfig cfg = resolve(flags);
  std::vector<train::Session<float>> sessions;
  sessions.reserve(flags.checkpoints.size());
  for (const auto& path : flags.checkpoints) sessions.push_back(train::load_checkpoint<float>(path));
  cfg.model = sessions.front().model.config();
  cfg.validate(true);

  const data::Corpus corpus = data::ingest(cfg.corpus, cfg.tokenizer, cfg.eval_fraction, cfg.model.vocab_size);
  std::vector<evalbench::ReportEntry> entries;
  for (std::size_t k = 0; k < sessions.size(); ++k) {
    std::string label(posenc::to_string(sessions[k].model.config().encoding));
    for (std::size_t j = 0; j < k; ++j) {
      if (entries[j].label == label) label += fmt::format("#{}", k);
    }
    entries.push_back({label, &sessions[k].model});
  }
  const auto report = evalbench::extrapolation_report(entries, corpus, cfg.lengths(), cfg.eval_batch);
  fmt::print("{}{}", report.table(), report.lines());
  if (flags.emit) write_text(*flags.emit, report.lines());
  return kOk;
}

int cmd_bench(const Flags& flags) {
  cli::RunConfig cfg = resolve(flags);
  cfg.validate(false);
  const auto cmp = evalbench::throughput_compare(cfg.model, cfg.train, cfg.bench);
  const std::string lines = cmp.rope.format() + '\n' + cmp.carope.format() + '\n';
  fmt::print("{}carope/rope tokens_per_sec ratio={:.4f} step_time_ratio={:.4f}\n", lines, cmp.ratio, 1.0 / cmp.ratio);
  if (flags.emit) write_text(*flags.emit, lines);
  return kOk;
}

int cmd_gradcheck(const Flags& flags) {
  cli::RunConfig cfg = resolve(flags);
  cfg.validate(false);
  const auto report = evalbench::grad_check(cfg.model, cfg.gradcheck);
  fmt::print("{}", report.format());
  if (flags.emit) write_text(*flags.emit, report.format());
  return report.passed ? kOk : kNumeric;
}

int cmd_inspect(const Flags& flags) {
  if (flags.checkpoints.size() != 1) throw ConfigError("checkpoint", "inspect takes exactly one --checkpoint");
  const fs::path path = flags.checkpoints.front();
  const auto info = train::read_checkpoint_info(path);
  const auto session = train::load_checkpoint<float>(path);
  cli::RunConfig shown;
  shown.model = info.model;
  shown.train = info.train;
  fmt::print("checkpoint {} (format version {}, {})\n", path.string(), info.version, num::to_string(info.dtype));
  fmt::print("step = {}\nparameters = {}\n", info.step, session.model.parameter_count());
  const std::string text = shown.to_text();
  fmt::print("{}", text.substr(0, text.find("corpus =")));
  if (info.model.encoding == posenc::EncodingKind::carope) {
    const auto tokens = evalbench::random_tokens(4, info.model.max_context, info.model.vocab_size,
                                                 flags.seed.value_or(info.model.seed));
    const auto stats = evalbench::carope_frequency_stats(session.model, tokens);
    for (std::size_t h = 0; h < stats.size(); ++h) {
      fmt::print("head {} f min={:.8f} mean={:.8f} max={:.8f}\n", h, stats[h].min, stats[h].mean, stats[h].max);
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Context-aware rotary position encoding experiments"};
  app.require_subcommand(1);
  Flags flags;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--encoding", flags.encoding, "sinusoidal, learnable, rope or carope");
    sub->add_option("--seed", flags.seed, "seed for model init, sampling and benchmarks");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--emit", flags.emit, "also write the result lines to this file");
    sub->add_option("--lengths", flags.lengths, "comma-separated evaluation lengths");
    sub->add_option("--steps", flags.steps, "number of updates (0 writes the initial checkpoint)");
    sub->add_option("--corpus", flags.corpus, "corpus file");
  };
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint.caro, trace.log, effective.cfg");
  common(train_cmd);
  train_cmd->add_flag("--resume", flags.resume, "continue from <out>/checkpoint.caro");
  auto* eval_cmd = app.add_subcommand("eval", "perplexity grid over checkpoints and lengths");
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", flags.checkpoints, "checkpoint file (repeatable)")->check(CLI::ExistingFile);
  auto* bench_cmd = app.add_subcommand("bench", "carope vs rope training throughput");
  common(bench_cmd);
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  common(grad_cmd);
  auto* inspect_cmd = app.add_subcommand("inspect", "describe a checkpoint");
  common(inspect_cmd);
  inspect_cmd->add_option("--checkpoint", flags.checkpoints, "checkpoint file")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(flags);
    if (*eval_cmd) return cmd_eval(flags);
    if (*bench_cmd) return cmd_bench(flags);
    if (*grad_cmd) return cmd_gradcheck(flags);
    return cmd_inspect(flags);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kUsage;
  } catch (const IngestionError& e) {
    fmt::print(stderr, "input error: {}\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    fmt::print(stderr, "numeric failure: {}\n", e.what());
    return kNumeric;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  }
}
