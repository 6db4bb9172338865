#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>

#include "carope/num/tensor.hpp"

namespace carope::posenc {

using num::Tensor;

enum class EncodingKind { sinusoidal, learnable, rope, carope };

std::string_view to_string(EncodingKind kind);
/// Throws std::invalid_argument listing the valid kinds.
EncodingKind parse_encoding(std::string_view text);
bool is_rotary(EncodingKind kind);

struct RotaryConfig {
  std::size_t d_head = 0;
  std::size_t n_heads = 0;
  double base = 10000.0;

  std::size_t n_pairs() const { return d_head / 2; }
  /// Throws num::ContractError when d_head is odd/zero, n_heads is zero or base <= 1.
  void validate() const;
};

/// Rotation angles in radians, shape [batch, n_heads, seq_len, n_pairs].
/// Batch may be 1 when the phases do not depend on the input.
template <typename T>
struct PhaseTensor {
  Tensor<T> values;
};

/// Per-token, per-head base frequencies in (0, 1), shape [batch, n_heads, seq_len].
template <typename T>
struct FreqTensor {
  Tensor<T> values;
};

/// Projection from token embeddings to one frequency logit per head.
template <typename T>
struct CaropeParams {
  Tensor<T> W;  // [d_model, n_heads]
  Tensor<T> b;  // [n_heads]
  // Logits are clamped to this range before the squash so that f never
  // rounds to exactly 0 or 1 at this precision.
  T logit_min = 0;
  T logit_max = 0;
};

enum class ApeKind { sinusoidal_fixed, learnable_trainable };

template <typename T>
struct ApeTable {
  Tensor<T> table;  // [max_positions, d_model]
  ApeKind kind = ApeKind::sinusoidal_fixed;

  std::size_t max_positions() const { return table.dim(0); }
  bool trainable() const { return kind == ApeKind::learnable_trainable; }
  /// Rows 0..seq_len-1; OutOfRangeError when seq_len exceeds max_positions.
  /// `table` may be a tape-tracked alias of this->table.
  static Tensor<T> lookup(const Tensor<T>& table, std::size_t seq_len);
};

/// theta_i = base^(-2i / d_head) for the 1-based pair index i.
double rope_theta(std::size_t pair, const RotaryConfig& cfg);

/// values[0, h, p, i-1] = p * theta_i, shape [1, n_heads, seq_len, n_pairs].
template <typename T>
PhaseTensor<T> rope_phases(std::size_t seq_len, const RotaryConfig& cfg);

/// f[b, h, t] = 1 / (softplus(x[b, t, :] . W[:, h] + b[h]) + 1).
template <typename T>
FreqTensor<T> carope_base_freq(const Tensor<T>& x, const CaropeParams<T>& params);

/// values[b, h, p, i-1] = sum_{t < p} f[b, h, t]^i, with f^i evaluated as
/// exp(i log f) in double precision.
template <typename T>
PhaseTensor<T> carope_phases(const FreqTensor<T>& freq, const RotaryConfig& cfg);

/// Rotates adjacent pairs (x[2i-2], x[2i-1]) of qk [batch, n_heads, seq, d_head]
/// by phases[..., i-1]. Phase batch and head axes may be 1 (broadcast).
template <typename T>
Tensor<T> apply_rotary(const Tensor<T>& qk, const PhaseTensor<T>& phases);

/// softplus^-1(y) = y + log(1 - e^-y), for y > 0.
double softplus_inverse(double y);

/// Parameters that reproduce RoPE exactly: W = 0 and every b[h] set so that
/// f == theta_1 for any input.
template <typename T>
CaropeParams<T> carope_init_rope(const RotaryConfig& cfg, std::size_t d_model);

/// Clamp bounds used by carope_init_rope for the given precision.
template <typename T>
std::pair<T, T> carope_logit_range(const RotaryConfig& cfg);

template <typename T>
ApeTable<T> sinusoidal_table(std::size_t max_positions, std::size_t d_model);

template <typename T>
ApeTable<T> learnable_table(std::size_t max_positions, std::size_t d_model, double init_scale, std::mt19937_64& rng);

}  // namespace carope::posenc
