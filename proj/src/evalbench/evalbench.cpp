#include "carope/evalbench/evalbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <random>

#include "carope/errors.hpp"
#include "carope/num/ops.hpp"
#include "carope/train/trainer.hpp"

namespace carope::evalbench {

using Clock = std::chrono::steady_clock;

std::string_view to_string(Metric metric) {
  return metric == Metric::perplexity ? "perplexity" : "tokens_per_sec";
}

std::string MetricsRecord::format() const {
  const std::string shown = supported ? fmt::format("{:.6f}", value) : "unsupported";
  return fmt::format("encoding={} seq_len={} metric={} value={} n_tokens={} wall_s={:.4f}", posenc::to_string(encoding),
                     seq_len, evalbench::to_string(metric), shown, n_tokens, wall_seconds);
}

num::IntTensor random_tokens(std::size_t batch, std::size_t seq, std::size_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::int32_t> pick(0, static_cast<std::int32_t>(vocab) - 1);
  num::IntTensor t{{batch, seq}, std::vector<std::int32_t>(batch * seq)};
  for (auto& v : t.values) v = pick(rng);
  return t;
}

template <typename T>
MetricsRecord perplexity(const model::Transformer<T>& model, const data::Corpus& corpus, std::size_t seq_len,
                         std::size_t batch_size) {
  const auto& cfg = model.config();
  MetricsRecord rec;
  rec.encoding = cfg.encoding;
  rec.seq_len = seq_len;
  rec.metric = Metric::perplexity;
  if (cfg.encoding == EncodingKind::learnable && seq_len > cfg.max_context) {
    rec.supported = false;
    rec.note = fmt::format("learnable positions end at {}", cfg.max_context);
    return rec;
  }
  if (posenc::is_rotary(cfg.encoding) && seq_len < 2) throw ConfigError("seq_len", "must be at least 2");

  const auto start = Clock::now();
  data::BatchStream stream(corpus, seq_len, batch_size, 0, data::Split::eval);
  double total = 0.0;
  std::size_t tokens = 0;
  while (auto batch = stream.next()) {
    const T loss = model::evaluate_loss(model, batch->inputs, batch->targets);
    total += static_cast<double>(loss) * static_cast<double>(batch->token_count());
    tokens += batch->token_count();
  }
  rec.value = std::exp(total / static_cast<double>(tokens));
  rec.n_tokens = tokens;
  rec.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (stream.dropped_tail() > 0) rec.note = fmt::format("dropped {} tail tokens", stream.dropped_tail());
  return rec;
}

Report extrapolation_report(const std::vector<ReportEntry>& models, const data::Corpus& corpus,
                            const std::vector<std::size_t>& lengths, std::size_t batch_size) {
  Report report;
  report.lengths = lengths;
  for (const auto& entry : models) {
    report.labels.push_back(entry.label);
    for (std::size_t len : lengths) {
      try {
        report.records.push_back(perplexity(*entry.model, corpus, len, batch_size));
      } catch (const std::exception& e) {
        MetricsRecord failed;
        failed.encoding = entry.model->config().encoding;
        failed.seq_len = len;
        failed.supported = false;
        failed.note = e.what();
        report.records.push_back(std::move(failed));
      }
    }
  }
  return report;
}

std::string Report::table() const {
  std::string out = fmt::format("{:<14}", "seq_len");
  for (const auto& label : labels) out += fmt::format("{:>14}", label);
  out += '\n';
  for (std::size_t c = 0; c < lengths.size(); ++c) {
    out += fmt::format("{:<14}", lengths[c]);
    for (std::size_t r = 0; r < labels.size(); ++r) {
      const auto& rec = at(r, c);
      out += rec.supported ? fmt::format("{:>14.3f}", rec.value) : fmt::format("{:>14}", "-");
    }
    out += '\n';
  }
  return out;
}

std::string Report::lines() const {
  std::string out;
  for (const auto& rec : records) out += rec.format() + '\n';
  return out;
}

MetricsRecord throughput_bench(const model::ModelConfig& model_cfg, const train::TrainConfig& train_cfg,
                               EncodingKind encoding, const BenchOptions& opts) {
  if (opts.n_timed < 3) throw ConfigError("n_timed", "must be at least 3");
  model::ModelConfig mc = model_cfg;
  mc.encoding = encoding;
  train::TrainConfig tc = train_cfg;
  tc.total_steps = std::max<std::size_t>(tc.total_steps, opts.n_warmup + opts.n_timed + 1);
  tc.warmup_steps = std::min(tc.warmup_steps, tc.total_steps - 1);
  tc.tokens_per_update = tc.batch_size * tc.seq_len;
  train::Session<float> session(mc, tc);

  // A synthetic corpus long enough for the sampler; content does not affect cost.
  const std::size_t span = std::max<std::size_t>(tc.seq_len * 64, 4096);
  const auto synthetic = random_tokens(1, span, mc.vocab_size, opts.seed);
  const auto corpus = data::make_corpus(synthetic.values, span, mc.vocab_size);
  data::BatchStream stream(corpus, tc.seq_len, tc.batch_size, opts.seed, data::Split::train);

  const std::size_t tokens_per_step = tc.micro_batches() * tc.batch_size * tc.seq_len;
  for (std::size_t k = 0; k < opts.n_warmup; ++k) train::train_step(session, stream);
  std::vector<double> rates;
  double wall = 0.0;
  for (std::size_t k = 0; k < opts.n_timed; ++k) {
    const auto start = Clock::now();
    train::train_step(session, stream);
    const double took = std::chrono::duration<double>(Clock::now() - start).count();
    wall += took;
    rates.push_back(static_cast<double>(tokens_per_step) / std::max(took, 1e-9));
  }
  std::nth_element(rates.begin(), rates.begin() + static_cast<std::ptrdiff_t>(rates.size() / 2), rates.end());
  MetricsRecord rec;
  rec.encoding = encoding;
  rec.seq_len = tc.seq_len;
  rec.metric = Metric::tokens_per_sec;
  rec.value = rates[rates.size() / 2];
  rec.n_tokens = tokens_per_step * opts.n_timed;
  rec.wall_seconds = wall;
  return rec;
}

BenchComparison throughput_compare(const model::ModelConfig& model_cfg, const train::TrainConfig& train_cfg,
                                   const BenchOptions& opts) {
  BenchComparison cmp;
  cmp.rope = throughput_bench(model_cfg, train_cfg, EncodingKind::rope, opts);
  cmp.carope = throughput_bench(model_cfg, train_cfg, EncodingKind::carope, opts);
  cmp.ratio = cmp.carope.value / cmp.rope.value;
  return cmp;
}

bool GradCheckReport::has_group(std::string_view name) const {
  return std::any_of(groups.begin(), groups.end(), [&](const GroupResult& g) { return g.name == name; });
}

std::string GradCheckReport::format() const {
  std::string out = fmt::format("{:<24}{:>8}{:>16}{:>16}\n", "parameter", "entries", "max_rel_err", "max_abs_err");
  for (const auto& g : groups) {
    out += fmt::format("{:<24}{:>8}{:>16.3e}{:>16.3e}\n", g.name, g.entries, g.max_rel_error, g.max_abs_error);
  }
  for (const auto& line : offending) out += "FAIL " + line + '\n';
  out += fmt::format("{} parameters checked: {}\n", parameter_count, passed ? "PASS" : "FAIL");
  return out;
}

GradCheckReport grad_check(const model::ModelConfig& cfg, const GradCheckOptions& opts) {
  model::Transformer<double> net(cfg);
  if (net.parameter_count() > 10000) {
    throw ConfigError("model", fmt::format("{} parameters is too many for an exhaustive check (limit 10000)",
                                           net.parameter_count()));
  }
  if (opts.randomize_carope && cfg.encoding == EncodingKind::carope) {
    std::mt19937_64 rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const char* name : {"carope.W", "carope.b"}) {
      auto& p = net.parameter(name);
      std::vector<double> v(p.value.numel());
      for (auto& x : v) x = normal(rng);
      p.value = num::Tensor<double>(p.value.shape(), std::move(v));
    }
  }
  const auto inputs = random_tokens(opts.batch_size, opts.seq_len, cfg.vocab_size, opts.seed);
  const auto targets = random_tokens(opts.batch_size, opts.seq_len, cfg.vocab_size, opts.seed + 1);
  model::ForwardOptions fwd;
  fwd.freeze_carope_w = opts.freeze_carope_w;
  const auto analytic = model::loss_and_grad(net, inputs, targets, fwd);

  GradCheckReport report;
  report.parameter_count = net.parameter_count();
  for (auto& p : net.parameters()) {
    const auto it = analytic.grads.find(p.name);
    if (it == analytic.grads.end()) continue;
    GroupResult group;
    group.name = p.name;
    group.entries = p.value.numel();
    const num::Tensor<double> original = p.value;
    std::vector<double> probe(original.values().begin(), original.values().end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const double x0 = probe[i];
      probe[i] = x0 + opts.step_size;
      p.value = num::Tensor<double>(original.shape(), probe);
      const double up = model::evaluate_loss(net, inputs, targets);
      probe[i] = x0 - opts.step_size;
      p.value = num::Tensor<double>(original.shape(), probe);
      const double down = model::evaluate_loss(net, inputs, targets);
      probe[i] = x0;

      const double numeric = (up - down) / (2.0 * opts.step_size);
      const double autodiff = it->second[i];
      const double abs_err = std::abs(autodiff - numeric);
      const double rel_err = abs_err / std::max({std::abs(autodiff), std::abs(numeric), opts.error_floor});
      if (rel_err > group.max_rel_error) {
        group.max_rel_error = rel_err;
        group.worst_index = i;
      }
      group.max_abs_error = std::max(group.max_abs_error, abs_err);
      if (rel_err > opts.tolerance) {
        report.offending.push_back(
            fmt::format("{}[{}]: autodiff={:.10e} numeric={:.10e} rel_err={:.3e}", p.name, i, autodiff, numeric, rel_err));
      }
    }
    p.value = original;
    report.groups.push_back(group);
  }
  report.passed = report.offending.empty();
  return report;
}

template <typename T>
std::vector<HeadFrequencyStats> carope_frequency_stats(const model::Transformer<T>& model, const num::IntTensor& tokens) {
  const auto pass = model.forward(tokens);
  if (!pass.freq) throw num::ContractError("carope_frequency_stats: model does not use carope");
  const auto& f = pass.freq->values;  // [batch, heads, seq]
  const std::size_t B = f.dim(0), H = f.dim(1), L = f.dim(2);
  std::vector<HeadFrequencyStats> stats(H, {1.0, 0.0, 0.0});
  for (std::size_t h = 0; h < H; ++h) {
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const double v = f[(b * H + h) * L + t];
        stats[h].min = std::min(stats[h].min, v);
        stats[h].max = std::max(stats[h].max, v);
        total += v;
      }
    stats[h].mean = total / static_cast<double>(B * L);
  }
  return stats;
}

template MetricsRecord perplexity<float>(const model::Transformer<float>&, const data::Corpus&, std::size_t, std::size_t);
template MetricsRecord perplexity<double>(const model::Transformer<double>&, const data::Corpus&, std::size_t,
                                          std::size_t);
template std::vector<HeadFrequencyStats> carope_frequency_stats<float>(const model::Transformer<float>&,
                                                                       const num::IntTensor&);
template std::vector<HeadFrequencyStats> carope_frequency_stats<double>(const model::Transformer<double>&,
                                                                        const num::IntTensor&);

}  // namespace carope::evalbench
