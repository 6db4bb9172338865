#include "carope/posenc/posenc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "carope/num/ops.hpp"

namespace carope::posenc {

using num::ContractError;
using num::DimensionError;
using num::Shape;

std::string_view to_string(EncodingKind kind) {
  switch (kind) {
    case EncodingKind::sinusoidal: return "sinusoidal";
    case EncodingKind::learnable: return "learnable";
    case EncodingKind::rope: return "rope";
    case EncodingKind::carope: return "carope";
  }
  return "unknown";
}

EncodingKind parse_encoding(std::string_view text) {
  for (auto kind : {EncodingKind::sinusoidal, EncodingKind::learnable, EncodingKind::rope, EncodingKind::carope}) {
    if (text == to_string(kind)) return kind;
  }
  throw std::invalid_argument("unknown encoding '" + std::string(text) +
                              "'; valid kinds: sinusoidal, learnable, rope, carope");
}

bool is_rotary(EncodingKind kind) {
  return kind == EncodingKind::rope || kind == EncodingKind::carope;
}

void RotaryConfig::validate() const {
  if (d_head == 0 || d_head % 2 != 0) throw ContractError("d_head must be even and positive, got " + std::to_string(d_head));
  if (n_heads == 0) throw ContractError("n_heads must be positive");
  if (!(base > 1.0)) throw ContractError("rotary base must exceed 1");
}

double rope_theta(std::size_t pair, const RotaryConfig& cfg) {
  cfg.validate();
  if (pair < 1 || pair > cfg.n_pairs()) {
    throw ContractError("pair index " + std::to_string(pair) + " outside 1.." + std::to_string(cfg.n_pairs()));
  }
  return std::pow(cfg.base, -2.0 * static_cast<double>(pair) / static_cast<double>(cfg.d_head));
}

template <typename T>
PhaseTensor<T> rope_phases(std::size_t seq_len, const RotaryConfig& cfg) {
  cfg.validate();
  if (seq_len == 0) throw ContractError("rope_phases: seq_len must be positive");
  const std::size_t P = cfg.n_pairs();
  std::vector<double> theta(P);
  for (std::size_t i = 0; i < P; ++i) theta[i] = rope_theta(i + 1, cfg);
  std::vector<T> values(cfg.n_heads * seq_len * P);
  for (std::size_t h = 0; h < cfg.n_heads; ++h)
    for (std::size_t p = 0; p < seq_len; ++p)
      for (std::size_t i = 0; i < P; ++i) {
        values[(h * seq_len + p) * P + i] = static_cast<T>(static_cast<double>(p) * theta[i]);
      }
  return {Tensor<T>(Shape{1, cfg.n_heads, seq_len, P}, std::move(values))};
}

namespace {

// 1 / (softplus(clamp(z, lo, hi)) + 1), evaluated in double and rounded once.
template <typename T>
Tensor<T> inverse_squash(const Tensor<T>& z, T lo, T hi) {
  auto out = std::make_shared<std::vector<T>>(z.numel());
  auto slope = std::make_shared<std::vector<double>>(z.numel());
  for (std::size_t k = 0; k < z.numel(); ++k) {
    const double v = static_cast<double>(z[k]);
    const double c = std::clamp(v, static_cast<double>(lo), static_cast<double>(hi));
    const double s = std::max(c, 0.0) + std::log1p(std::exp(-std::abs(c)));
    const double f = 1.0 / (s + 1.0);
    const double sigmoid = c >= 0.0 ? 1.0 / (1.0 + std::exp(-c)) : std::exp(c) / (1.0 + std::exp(c));
    (*out)[k] = static_cast<T>(f);
    (*slope)[k] = (v > lo && v < hi) ? -f * f * sigmoid : 0.0;
  }
  return num::detail::make_result<T>("inverse_squash", z.shape(), out, {z},
                                     [slope](std::span<const T> g, std::span<T* const> gin) {
                                       for (std::size_t k = 0; k < g.size(); ++k) {
                                         gin[0][k] += static_cast<T>(static_cast<double>(g[k]) * (*slope)[k]);
                                       }
                                     });
}

}  // namespace

template <typename T>
FreqTensor<T> carope_base_freq(const Tensor<T>& x, const CaropeParams<T>& params) {
  if (params.W.rank() != 2 || params.b.shape() != Shape{params.W.dim(1)}) {
    throw DimensionError("carope_base_freq: W must be [d_model, n_heads] and b [n_heads]");
  }
  if (x.rank() != 3 || x.dim(2) != params.W.dim(0)) {
    throw DimensionError("carope_base_freq: x " + num::to_string(x.shape()) + " does not match W " +
                         num::to_string(params.W.shape()));
  }
  const auto logits = num::add(num::matmul(x, params.W), params.b);
  return {num::transpose(inverse_squash(logits, params.logit_min, params.logit_max), 1, 2)};
}

template <typename T>
PhaseTensor<T> carope_phases(const FreqTensor<T>& freq, const RotaryConfig& cfg) {
  cfg.validate();
  const Tensor<T>& f = freq.values;
  if (f.rank() != 3 || f.dim(1) != cfg.n_heads) {
    throw DimensionError("carope_phases: expected [batch, " + std::to_string(cfg.n_heads) + ", seq], got " +
                         num::to_string(f.shape()));
  }
  for (T v : f.values()) {
    if (!(v > T(0) && v < T(1))) throw ContractError("carope_phases: base frequency outside (0, 1)");
  }
  const std::size_t rows = f.dim(0) * f.dim(1);
  const std::size_t len = f.dim(2);
  const std::size_t P = cfg.n_pairs();

  std::vector<double> log_f(f.numel());
  for (std::size_t k = 0; k < f.numel(); ++k) log_f[k] = std::log(static_cast<double>(f[k]));

  auto out = std::make_shared<std::vector<T>>(rows * len * P);
  std::vector<double> acc(P);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < len; ++p) {
      const double lf = log_f[r * len + p];
      T* o = out->data() + (r * len + p) * P;
      for (std::size_t i = 0; i < P; ++i) {
        o[i] = static_cast<T>(acc[i]);
        acc[i] += std::exp(static_cast<double>(i + 1) * lf);
      }
    }
  }
  auto logs = std::make_shared<const std::vector<double>>(std::move(log_f));
  Shape shape{f.dim(0), f.dim(1), len, P};
  auto values = num::detail::make_result<T>(
      "carope_phases", std::move(shape), out, {f}, [logs, rows, len, P](std::span<const T> g, std::span<T* const> gin) {
        // d phase[p, i] / d f[t] = i f[t]^(i-1) for every p > t.
        std::vector<double> tail(P);
        for (std::size_t r = 0; r < rows; ++r) {
          std::fill(tail.begin(), tail.end(), 0.0);
          for (std::size_t t = len; t-- > 0;) {
            const double lf = (*logs)[r * len + t];
            double grad = 0.0;
            for (std::size_t i = 0; i < P; ++i) {
              grad += static_cast<double>(i + 1) * std::exp(static_cast<double>(i) * lf) * tail[i];
            }
            gin[0][r * len + t] += static_cast<T>(grad);
            const T* gp = g.data() + (r * len + t) * P;
            for (std::size_t i = 0; i < P; ++i) tail[i] += static_cast<double>(gp[i]);
          }
        }
      });
  return {values};
}

template <typename T>
Tensor<T> apply_rotary(const Tensor<T>& qk, const PhaseTensor<T>& phases) {
  const Tensor<T>& ph = phases.values;
  if (qk.rank() != 4 || ph.rank() != 4) throw DimensionError("apply_rotary: expected rank-4 qk and phases");
  const std::size_t B = qk.dim(0), H = qk.dim(1), L = qk.dim(2), D = qk.dim(3);
  const std::size_t P = ph.dim(3);
  const std::size_t PB = ph.dim(0), PH = ph.dim(1);
  if (D != 2 * P || ph.dim(2) != L || (PB != 1 && PB != B) || (PH != 1 && PH != H)) {
    throw DimensionError("apply_rotary: qk " + num::to_string(qk.shape()) + " incompatible with phases " +
                         num::to_string(ph.shape()));
  }
  auto cs = std::make_shared<std::vector<T>>(ph.numel());
  auto sn = std::make_shared<std::vector<T>>(ph.numel());
  for (std::size_t k = 0; k < ph.numel(); ++k) {
    (*cs)[k] = std::cos(ph[k]);
    (*sn)[k] = std::sin(ph[k]);
  }
  const auto phase_row = [=](std::size_t b, std::size_t h, std::size_t p) {
    return ((PB == 1 ? 0 : b) * PH + (PH == 1 ? 0 : h)) * L * P + p * P;
  };
  auto out = std::make_shared<std::vector<T>>(qk.numel());
  const T* x = qk.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t p = 0; p < L; ++p) {
        const std::size_t row = ((b * H + h) * L + p) * D;
        const std::size_t prow = phase_row(b, h, p);
        for (std::size_t i = 0; i < P; ++i) {
          const T u = x[row + 2 * i], v = x[row + 2 * i + 1];
          const T c = (*cs)[prow + i], s = (*sn)[prow + i];
          (*out)[row + 2 * i] = u * c - v * s;
          (*out)[row + 2 * i + 1] = u * s + v * c;
        }
      }
  std::shared_ptr<const std::vector<T>> y = out;
  return num::detail::make_result<T>(
      "apply_rotary", qk.shape(), out, {qk, ph},
      [=](std::span<const T> g, std::span<T* const> gin) {
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t h = 0; h < H; ++h)
            for (std::size_t p = 0; p < L; ++p) {
              const std::size_t row = ((b * H + h) * L + p) * D;
              const std::size_t prow = phase_row(b, h, p);
              for (std::size_t i = 0; i < P; ++i) {
                const T gu = g[row + 2 * i], gv = g[row + 2 * i + 1];
                const T c = (*cs)[prow + i], s = (*sn)[prow + i];
                if (gin[0]) {
                  gin[0][row + 2 * i] += gu * c + gv * s;
                  gin[0][row + 2 * i + 1] += -gu * s + gv * c;
                }
                if (gin[1]) gin[1][prow + i] += gv * (*y)[row + 2 * i] - gu * (*y)[row + 2 * i + 1];
              }
            }
      });
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ContractError("softplus_inverse: argument must be positive");
  return y + std::log1p(-std::exp(-y));
}

template <typename T>
std::pair<T, T> carope_logit_range(const RotaryConfig& cfg) {
  // Below these logits 1 / (softplus(z) + 1) rounds to exactly 1.
  const T lo = sizeof(T) == 4 ? T(-15) : T(-35);
  const double init_logit = 1.0 / rope_theta(1, cfg) - 1.0;
  const T hi = static_cast<T>(std::max(30.0 * static_cast<double>(cfg.d_head), 2.0 * init_logit));
  return {lo, hi};
}

template <typename T>
CaropeParams<T> carope_init_rope(const RotaryConfig& cfg, std::size_t d_model) {
  cfg.validate();
  if (d_model == 0) throw ContractError("carope_init_rope: d_model must be positive");
  const double bias = softplus_inverse(1.0 / rope_theta(1, cfg) - 1.0);
  CaropeParams<T> params;
  params.W = Tensor<T>::zeros(Shape{d_model, cfg.n_heads});
  params.b = Tensor<T>::full(Shape{cfg.n_heads}, static_cast<T>(bias));
  std::tie(params.logit_min, params.logit_max) = carope_logit_range<T>(cfg);
  return params;
}

template <typename T>
Tensor<T> ApeTable<T>::lookup(const Tensor<T>& table, std::size_t seq_len) {
  if (seq_len > table.dim(0)) {
    throw num::OutOfRangeError("position " + std::to_string(seq_len - 1) + " is outside the " +
                               std::to_string(table.dim(0)) + "-position table");
  }
  num::IntTensor ids{Shape{seq_len}, std::vector<std::int32_t>(seq_len)};
  std::iota(ids.values.begin(), ids.values.end(), 0);
  return num::gather_rows(table, ids);
}

template <typename T>
ApeTable<T> sinusoidal_table(std::size_t max_positions, std::size_t d_model) {
  if (max_positions == 0 || d_model == 0 || d_model % 2 != 0) {
    throw ContractError("sinusoidal_table: need max_positions >= 1 and even d_model");
  }
  std::vector<T> values(max_positions * d_model);
  for (std::size_t p = 0; p < max_positions; ++p)
    for (std::size_t j = 0; j < d_model / 2; ++j) {
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(j) / static_cast<double>(d_model));
      values[p * d_model + 2 * j] = static_cast<T>(std::sin(angle));
      values[p * d_model + 2 * j + 1] = static_cast<T>(std::cos(angle));
    }
  return {Tensor<T>(Shape{max_positions, d_model}, std::move(values)), ApeKind::sinusoidal_fixed};
}

template <typename T>
ApeTable<T> learnable_table(std::size_t max_positions, std::size_t d_model, double init_scale, std::mt19937_64& rng) {
  if (max_positions == 0 || d_model == 0) throw ContractError("learnable_table: sizes must be positive");
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<T> values(max_positions * d_model);
  for (auto& v : values) v = static_cast<T>(normal(rng) * init_scale);
  return {Tensor<T>(Shape{max_positions, d_model}, std::move(values)), ApeKind::learnable_trainable};
}

#define CAROPE_INSTANTIATE_POSENC(T)                                                         \
  template PhaseTensor<T> rope_phases<T>(std::size_t, const RotaryConfig&);                 \
  template FreqTensor<T> carope_base_freq<T>(const Tensor<T>&, const CaropeParams<T>&);     \
  template PhaseTensor<T> carope_phases<T>(const FreqTensor<T>&, const RotaryConfig&);      \
  template Tensor<T> apply_rotary<T>(const Tensor<T>&, const PhaseTensor<T>&);              \
  template std::pair<T, T> carope_logit_range<T>(const RotaryConfig&);                      \
  template CaropeParams<T> carope_init_rope<T>(const RotaryConfig&, std::size_t);           \
  template struct ApeTable<T>;                                                              \
  template ApeTable<T> sinusoidal_table<T>(std::size_t, std::size_t);                       \
  template ApeTable<T> learnable_table<T>(std::size_t, std::size_t, double, std::mt19937_64&);

CAROPE_INSTANTIATE_POSENC(float)
CAROPE_INSTANTIATE_POSENC(double)

}  // namespace carope::posenc
