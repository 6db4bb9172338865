#pragma once

#include <span>

#include "carope/num/tensor.hpp"

// Differentiable dense ops. Every op records a backward rule when any input
// is on a tape. Binary elementwise ops accept either equal shapes or a second
// operand whose shape is a suffix of the first (trailing-dimension broadcast);
// nothing else broadcasts.
namespace carope::num {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset);

template <typename T>
Tensor<T> exp(const Tensor<T>& x);
/// Natural log; inputs must be positive.
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x);

/// log(1 + e^x), evaluated as max(x, 0) + log1p(e^-|x|) so it neither
/// overflows for large x nor rounds to zero for very negative x.
template <typename T>
Tensor<T> softplus(const Tensor<T>& x);

/// Elementwise clamp; gradient is passed only where lo < x < hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

/// tanh-approximated GELU (the GPT-2 variant).
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);

/// [..., M, K] x [K, N] -> [..., M, N], or batched [..., M, K] x [..., K, N]
/// with identical leading dimensions.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Swaps two axes, materializing the result.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Appends a trailing axis of size `n`, repeating each value.
template <typename T>
Tensor<T> expand_last(const Tensor<T>& x, std::size_t n);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Rows of a [rows, width] table selected by `ids`; output shape is
/// ids.shape + [width]. Ids outside the table raise OutOfRangeError.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const IntTensor& ids);

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x);

/// Sets entries above the diagonal of the last two axes to -inf.
template <typename T>
Tensor<T> causal_mask(const Tensor<T>& x);

/// Normalizes over the last axis, then applies gain and bias of that width.
template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

/// out[..., p, ...] = sum_{t < p} x[..., t, ...] along `axis`.
template <typename T>
Tensor<T> cumsum_exclusive(const Tensor<T>& x, int axis);

}  // namespace carope::num
