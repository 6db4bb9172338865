#pragma once

#include <functional>
#include <string>
#include <vector>

#include "carope/data/corpus.hpp"
#include "carope/model/transformer.hpp"
#include "carope/train/optimizer.hpp"
#include "carope/train/schedule.hpp"

namespace carope::train {

/// Everything needed to continue a run: weights, optimizer moments, the
/// sampler position and the number of completed updates.
template <typename T>
struct Session {
  Session(const model::ModelConfig& model_cfg, const TrainConfig& train_cfg)
      : model(model_cfg), cfg(train_cfg), optimizer(train_cfg) {}

  model::Transformer<T> model;
  TrainConfig cfg;
  AdamW<T> optimizer;
  std::size_t step = 0;
  std::string sampler_state;  // empty: a fresh stream seeded from cfg.seed
};

struct TraceRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double toks_per_sec = 0.0;

  /// `step=<int> loss=<float> lr=<float> toks_per_sec=<float>`
  std::string format() const;
};

struct Callbacks {
  std::function<void(const TraceRecord&)> on_step;
  /// Fires every checkpoint_interval updates with the session in a
  /// consistent state.
  std::function<void(std::size_t step)> on_checkpoint;
};

/// One optimizer update: averages gradients over cfg.micro_batches()
/// micro-batches drawn from `stream`, then steps AdamW at lr_at(step).
/// Returns the mean micro-batch loss.
template <typename T>
double train_step(Session<T>& session, data::BatchStream& stream);

/// Runs updates until `session.step == stop_at` (default: cfg.total_steps).
/// Throws NumericError on a non-finite loss before touching the weights.
template <typename T>
std::vector<TraceRecord> train(Session<T>& session, const data::Corpus& corpus, const Callbacks& callbacks = {},
                               std::size_t stop_at = 0);

}  // namespace carope::train
