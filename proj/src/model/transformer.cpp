#include "carope/model/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "carope/errors.hpp"
#include "carope/num/ops.hpp"

namespace carope::model {

using num::Shape;

void ModelConfig::validate() const {
  if (n_heads == 0) throw ConfigError("n_heads", "must be positive");
  if (d_model == 0) throw ConfigError("d_model", "must be positive");
  if (d_model % n_heads != 0) {
    throw ConfigError("d_model", "must be divisible by n_heads (" + std::to_string(n_heads) + ")");
  }
  if (d_head() % 2 != 0) throw ConfigError("d_model", "d_model / n_heads must be even");
  if (vocab_size == 0) throw ConfigError("vocab_size", "must be positive");
  if (max_context == 0) throw ConfigError("max_context", "must be positive");
  if (encoding == EncodingKind::sinusoidal && d_model % 2 != 0) throw ConfigError("d_model", "must be even");
}

std::size_t parameter_count(const ModelConfig& cfg) {
  const std::size_t D = cfg.d_model;
  std::size_t n = cfg.vocab_size * D;
  if (!cfg.tie_embeddings) n += D * cfg.vocab_size;
  if (cfg.encoding == EncodingKind::learnable) n += cfg.max_context * D;
  if (cfg.encoding == EncodingKind::carope) n += D * cfg.n_heads + cfg.n_heads;
  const std::size_t per_layer = 2 * D                 // ln_1
                                + 4 * (D * D + D)     // q, k, v, proj
                                + 2 * D               // ln_2
                                + (D * 4 * D + 4 * D) // mlp.fc
                                + (4 * D * D + D);    // mlp.proj
  n += cfg.n_layers * per_layer;
  n += 2 * D;  // ln_f
  return n;
}

template <typename T>
Transformer<T>::Transformer(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t D = cfg_.d_model;
  const auto gaussian = [&](Shape shape, double std) {
    std::vector<T> v(num::element_count(shape));
    for (auto& x : v) x = static_cast<T>(normal(rng) * std);
    return Tensor<T>(std::move(shape), std::move(v));
  };
  constexpr double init_std = 0.02;
  const double proj_std = init_std / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(cfg_.n_layers, 1)));

  add_param("wte", gaussian({cfg_.vocab_size, D}, init_std), true);
  if (cfg_.encoding == EncodingKind::learnable) {
    add_param("wpe", posenc::learnable_table<T>(cfg_.max_context, D, init_std, rng).table, false);
  }
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    add_param(p + "ln_1.weight", Tensor<T>::full({D}, T(1)), false);
    add_param(p + "ln_1.bias", Tensor<T>::zeros({D}), false);
    for (const char* name : {"q", "k", "v"}) {
      add_param(p + "attn." + name + ".weight", gaussian({D, D}, init_std), true);
      add_param(p + "attn." + name + ".bias", Tensor<T>::zeros({D}), false);
    }
    add_param(p + "attn.proj.weight", gaussian({D, D}, proj_std), true);
    add_param(p + "attn.proj.bias", Tensor<T>::zeros({D}), false);
    add_param(p + "ln_2.weight", Tensor<T>::full({D}, T(1)), false);
    add_param(p + "ln_2.bias", Tensor<T>::zeros({D}), false);
    add_param(p + "mlp.fc.weight", gaussian({D, 4 * D}, init_std), true);
    add_param(p + "mlp.fc.bias", Tensor<T>::zeros({4 * D}), false);
    add_param(p + "mlp.proj.weight", gaussian({4 * D, D}, proj_std), true);
    add_param(p + "mlp.proj.bias", Tensor<T>::zeros({D}), false);
  }
  add_param("ln_f.weight", Tensor<T>::full({D}, T(1)), false);
  add_param("ln_f.bias", Tensor<T>::zeros({D}), false);
  if (!cfg_.tie_embeddings) add_param("lm_head.weight", gaussian({D, cfg_.vocab_size}, init_std), true);

  if (cfg_.encoding == EncodingKind::carope) {
    auto init = posenc::carope_init_rope<T>(cfg_.rotary(), D);
    add_param("carope.W", init.W, true);
    add_param("carope.b", init.b, false);
    carope_logit_min_ = init.logit_min;
    carope_logit_max_ = init.logit_max;
  }
  if (cfg_.encoding == EncodingKind::sinusoidal) sinusoidal_ = posenc::sinusoidal_table<T>(cfg_.max_context, D);
}

template <typename T>
void Transformer<T>::add_param(std::string name, Tensor<T> value, bool decay) {
  params_.push_back({std::move(name), std::move(value), decay});
}

template <typename T>
std::size_t Transformer<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  throw num::ContractError("no parameter named '" + std::string(name) + "'");
}

template <typename T>
Parameter<T>& Transformer<T>::parameter(std::string_view name) {
  return params_[index_of(name)];
}

template <typename T>
const Parameter<T>& Transformer<T>::parameter(std::string_view name) const {
  return params_[index_of(name)];
}

template <typename T>
bool Transformer<T>::has_parameter(std::string_view name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
}

template <typename T>
std::size_t Transformer<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
posenc::CaropeParams<T> Transformer<T>::carope_params() const {
  if (cfg_.encoding != EncodingKind::carope) throw num::ContractError("model does not use carope");
  return {parameter("carope.W").value, parameter("carope.b").value, carope_logit_min_, carope_logit_max_};
}

template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           const std::optional<posenc::PhaseTensor<T>>& phases) {
  if (q.rank() != 4 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw num::DimensionError("causal_attention: q, k, v must share a [batch, heads, seq, d_head] shape");
  }
  Tensor<T> qr = phases ? posenc::apply_rotary(q, *phases) : q;
  Tensor<T> kr = phases ? posenc::apply_rotary(k, *phases) : k;
  const T inv_scale = T(1) / std::sqrt(static_cast<T>(q.dim(3)));
  auto scores = num::scale(num::matmul(qr, num::transpose(kr, 2, 3)), inv_scale);
  auto weights = num::softmax_lastdim(num::causal_mask(scores));
  return num::matmul(weights, v);
}

template <typename T>
ForwardPass<T> Transformer<T>::forward(const IntTensor& tokens, Tape<T>* tape, const ForwardOptions& opts) const {
  if (tokens.shape.size() != 2 || tokens.values.size() != num::element_count(tokens.shape)) {
    throw num::DimensionError("forward: tokens must be [batch, seq]");
  }
  const std::size_t B = tokens.shape[0], L = tokens.shape[1];
  const std::size_t D = cfg_.d_model, H = cfg_.n_heads, dh = cfg_.d_head();
  if (L == 0) throw num::DimensionError("forward: empty sequence");
  for (std::int32_t id : tokens.values) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
      throw num::ContractError("token id " + std::to_string(id) + " outside vocabulary of " +
                               std::to_string(cfg_.vocab_size));
    }
  }

  ForwardPass<T> pass;
  pass.bound.reserve(params_.size());
  for (const auto& p : params_) {
    const bool frozen = opts.freeze_carope_w && p.name == "carope.W";
    pass.bound.push_back(tape != nullptr && !frozen ? tape->watch(p.value) : p.value);
  }
  const auto param = [&](std::string_view name) -> const Tensor<T>& { return pass.bound[index_of(name)]; };

  Tensor<T> x = num::gather_rows(param("wte"), tokens);
  switch (cfg_.encoding) {
    case EncodingKind::learnable:
      x = num::add(x, posenc::ApeTable<T>::lookup(param("wpe"), L));
      break;
    case EncodingKind::sinusoidal: {
      // The fixed table is a closed-form function, so lengths past
      // max_context are generated rather than refused.
      const auto table = L <= sinusoidal_->max_positions() ? sinusoidal_->table
                                                           : posenc::sinusoidal_table<T>(L, D).table;
      x = num::add(x, posenc::ApeTable<T>::lookup(table, L));
      break;
    }
    case EncodingKind::rope:
      pass.phases = posenc::rope_phases<T>(L, cfg_.rotary());
      break;
    case EncodingKind::carope: {
      posenc::CaropeParams<T> cp{param("carope.W"), param("carope.b"), carope_logit_min_, carope_logit_max_};
      pass.freq = posenc::carope_base_freq(x, cp);
      pass.phases = posenc::carope_phases(*pass.freq, cfg_.rotary());
      break;
    }
  }

  const auto linear = [&](const Tensor<T>& in, const std::string& name) {
    return num::add(num::matmul(in, param(name + ".weight")), param(name + ".bias"));
  };
  const auto split_heads = [&](const Tensor<T>& t) {
    return num::transpose(num::reshape(t, Shape{B, L, H, dh}), 1, 2);
  };

  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    auto h = num::layernorm(x, param(p + "ln_1.weight"), param(p + "ln_1.bias"));
    auto q = split_heads(linear(h, p + "attn.q"));
    auto k = split_heads(linear(h, p + "attn.k"));
    auto v = split_heads(linear(h, p + "attn.v"));
    auto att = causal_attention(q, k, v, pass.phases);
    att = num::reshape(num::transpose(att, 1, 2), Shape{B, L, D});
    x = num::add(x, linear(att, p + "attn.proj"));
    h = num::layernorm(x, param(p + "ln_2.weight"), param(p + "ln_2.bias"));
    x = num::add(x, linear(num::gelu(linear(h, p + "mlp.fc")), p + "mlp.proj"));
  }
  x = num::layernorm(x, param("ln_f.weight"), param("ln_f.bias"));
  const auto head = cfg_.tie_embeddings ? num::transpose(param("wte"), 0, 1) : param("lm_head.weight");
  pass.logits = num::matmul(x, head);
  return pass;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const IntTensor& targets) {
  if (logits.rank() < 1) throw num::DimensionError("cross_entropy: logits need a vocab axis");
  const Shape expected(logits.shape().begin(), logits.shape().end() - 1);
  if (targets.shape != expected || targets.values.size() != num::element_count(expected)) {
    throw num::DimensionError("cross_entropy: targets " + num::to_string(targets.shape) + " vs logits " +
                              num::to_string(logits.shape()));
  }
  const std::size_t V = logits.dim(-1);
  const std::size_t rows = targets.values.size();
  for (std::int32_t t : targets.values) {
    if (t < 0 || static_cast<std::size_t>(t) >= V) {
      throw num::ContractError("target id " + std::to_string(t) + " outside vocabulary of " + std::to_string(V));
    }
  }
  auto probs = std::make_shared<std::vector<T>>(logits.numel());
  double total = 0.0;
  const T* lv = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = lv + r * V;
    T* pr = probs->data() + r * V;
    const T mx = *std::max_element(row, row + V);
    double z = 0.0;
    for (std::size_t c = 0; c < V; ++c) {
      pr[c] = std::exp(row[c] - mx);
      z += static_cast<double>(pr[c]);
    }
    const T inv = static_cast<T>(1.0 / z);
    for (std::size_t c = 0; c < V; ++c) pr[c] *= inv;
    const auto target = static_cast<std::size_t>(targets.values[r]);
    total += static_cast<double>(mx) + std::log(z) - static_cast<double>(row[target]);
  }
  auto out = std::make_shared<std::vector<T>>(1, static_cast<T>(total / static_cast<double>(rows)));
  auto ids = std::make_shared<const std::vector<std::int32_t>>(targets.values);
  return num::detail::make_result<T>("cross_entropy", Shape{}, out, {logits},
                                     [probs, ids, rows, V](std::span<const T> g, std::span<T* const> gin) {
                                       const T share = g[0] / static_cast<T>(rows);
                                       for (std::size_t r = 0; r < rows; ++r) {
                                         const T* pr = probs->data() + r * V;
                                         T* dst = gin[0] + r * V;
                                         for (std::size_t c = 0; c < V; ++c) dst[c] += share * pr[c];
                                         dst[static_cast<std::size_t>((*ids)[r])] -= share;
                                       }
                                     });
}

template <typename T>
LossAndGrad<T> loss_and_grad(const Transformer<T>& model, const IntTensor& inputs, const IntTensor& targets,
                             const ForwardOptions& opts) {
  Tape<T> tape;
  auto pass = model.forward(inputs, &tape, opts);
  auto loss = cross_entropy(pass.logits, targets);
  tape.backward(loss);
  LossAndGrad<T> result;
  result.loss = loss.item();
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!pass.bound[i].requires_grad()) continue;
    result.grads.emplace(params[i].name, tape.grad(pass.bound[i]));
  }
  return result;
}

template <typename T>
T evaluate_loss(const Transformer<T>& model, const IntTensor& inputs, const IntTensor& targets) {
  return cross_entropy(model.logits(inputs), targets).item();
}

#define CAROPE_INSTANTIATE_MODEL(T)                                                                 \
  template class Transformer<T>;                                                                    \
  template Tensor<T> causal_attention<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                         const std::optional<posenc::PhaseTensor<T>>&);             \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const IntTensor&);                          \
  template LossAndGrad<T> loss_and_grad<T>(const Transformer<T>&, const IntTensor&, const IntTensor&, \
                                           const ForwardOptions&);                                  \
  template T evaluate_loss<T>(const Transformer<T>&, const IntTensor&, const IntTensor&);

CAROPE_INSTANTIATE_MODEL(float)
CAROPE_INSTANTIATE_MODEL(double)

}  // namespace carope::model
