#include "carope/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fmt/format.h>

#include "carope/errors.hpp"

namespace carope::train {

std::string TraceRecord::format() const {
  return fmt::format("step={} loss={:.6f} lr={:.6e} toks_per_sec={:.1f}", step, loss, lr, toks_per_sec);
}

template <typename T>
double train_step(Session<T>& session, data::BatchStream& stream) {
  const std::size_t micro = session.cfg.micro_batches();
  model::GradMap<T> total;
  double loss = 0.0;
  for (std::size_t k = 0; k < micro; ++k) {
    auto batch = stream.next();
    auto result = model::loss_and_grad(session.model, batch->inputs, batch->targets);
    if (!std::isfinite(result.loss)) {
      throw NumericError(fmt::format("non-finite loss at step {} (micro-batch {})", session.step, k));
    }
    loss += static_cast<double>(result.loss);
    if (k == 0) {
      total = std::move(result.grads);
      continue;
    }
    for (auto& [name, g] : result.grads) {
      auto& acc = total[name];
      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
  }
  if (micro > 1) {
    const T inv = T(1) / static_cast<T>(micro);
    for (auto& [name, g] : total)
      for (auto& x : g) x *= inv;
  }
  session.optimizer.step(session.model.parameters(), total, lr_at(session.step, session.cfg));
  ++session.step;
  return loss / static_cast<double>(micro);
}

template <typename T>
std::vector<TraceRecord> train(Session<T>& session, const data::Corpus& corpus, const Callbacks& callbacks,
                               std::size_t stop_at) {
  const TrainConfig& cfg = session.cfg;
  cfg.validate();
  if (stop_at == 0) stop_at = cfg.total_steps;
  data::BatchStream stream(corpus, cfg.seq_len, cfg.batch_size, cfg.seed, data::Split::train);
  if (!session.sampler_state.empty()) stream.set_rng_state(session.sampler_state);

  std::vector<TraceRecord> trace;
  const double tokens = static_cast<double>(cfg.micro_batches() * cfg.batch_size * cfg.seq_len);
  while (session.step < stop_at) {
    const std::size_t index = session.step;
    const double lr = lr_at(index, cfg);
    const auto start = std::chrono::steady_clock::now();
    const double loss = train_step(session, stream);
    const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
    session.sampler_state = stream.rng_state();

    TraceRecord rec{index, loss, lr, tokens / std::max(took.count(), 1e-9)};
    trace.push_back(rec);
    if (callbacks.on_step) callbacks.on_step(rec);
    if (callbacks.on_checkpoint && cfg.checkpoint_interval > 0 && session.step % cfg.checkpoint_interval == 0) {
      callbacks.on_checkpoint(session.step);
    }
  }
  return trace;
}

template double train_step<float>(Session<float>&, data::BatchStream&);
template double train_step<double>(Session<double>&, data::BatchStream&);
template std::vector<TraceRecord> train<float>(Session<float>&, const data::Corpus&, const Callbacks&, std::size_t);
template std::vector<TraceRecord> train<double>(Session<double>&, const data::Corpus&, const Callbacks&, std::size_t);

}  // namespace carope::train
