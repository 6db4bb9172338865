#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "carope/num/tensor.hpp"
#include "carope/posenc/posenc.hpp"

namespace carope::model {

using num::IntTensor;
using num::Tape;
using num::Tensor;
using posenc::EncodingKind;

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t d_model = 64;
  std::size_t vocab_size = 256;
  std::size_t max_context = 64;
  EncodingKind encoding = EncodingKind::rope;
  bool tie_embeddings = true;
  std::uint64_t seed = 0;

  std::size_t d_head() const { return d_model / n_heads; }
  posenc::RotaryConfig rotary() const { return {d_head(), n_heads, 10000.0}; }
  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Number of trainable scalars a model with this config holds.
std::size_t parameter_count(const ModelConfig& cfg);

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool decay = false;  // subject to decoupled weight decay
};

template <typename T>
using GradMap = std::map<std::string, std::vector<T>, std::less<>>;

struct ForwardOptions {
  bool freeze_carope_w = false;  // keep W off the tape
};

template <typename T>
struct ForwardPass {
  Tensor<T> logits;                             // [batch, seq, vocab]
  std::vector<Tensor<T>> bound;                 // per parameter, tape-tracked when recorded
  std::optional<posenc::FreqTensor<T>> freq;    // carope only
  std::optional<posenc::PhaseTensor<T>> phases; // rotary kinds only
};

/// Pre-norm GPT-style decoder with a pluggable positional encoding.
template <typename T>
class Transformer {
 public:
  explicit Transformer(const ModelConfig& cfg);

  const ModelConfig& config() const noexcept { return cfg_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  Parameter<T>& parameter(std::string_view name);
  const Parameter<T>& parameter(std::string_view name) const;
  bool has_parameter(std::string_view name) const;
  std::size_t parameter_count() const;

  /// Logits for tokens [batch, seq]. Records onto `tape` when given.
  ForwardPass<T> forward(const IntTensor& tokens, Tape<T>* tape = nullptr, const ForwardOptions& opts = {}) const;
  Tensor<T> logits(const IntTensor& tokens) const { return forward(tokens).logits; }

  /// The CARoPE projection currently held by the model (carope kind only).
  posenc::CaropeParams<T> carope_params() const;

 private:
  std::size_t index_of(std::string_view name) const;
  void add_param(std::string name, Tensor<T> value, bool decay);

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::optional<posenc::ApeTable<T>> sinusoidal_;
  T carope_logit_min_ = 0;
  T carope_logit_max_ = 0;
};

/// Scaled dot-product attention with a causal mask; q and k are rotated by
/// `phases` first when present. All inputs are [batch, heads, seq, d_head].
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const std::optional<posenc::PhaseTensor<T>>& phases);

/// Mean token cross-entropy; targets have the logits shape minus the vocab axis.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const IntTensor& targets);

template <typename T>
struct LossAndGrad {
  T loss = 0;
  GradMap<T> grads;  // keyed by parameter name; frozen parameters are absent
};

template <typename T>
LossAndGrad<T> loss_and_grad(const Transformer<T>& model, const IntTensor& inputs, const IntTensor& targets,
                             const ForwardOptions& opts = {});

template <typename T>
T evaluate_loss(const Transformer<T>& model, const IntTensor& inputs, const IntTensor& targets);

}  // namespace carope::model
