#include "carope/num/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace carope::num {
namespace {

template <typename T>
using Buffer = std::shared_ptr<std::vector<T>>;

template <typename T>
Buffer<T> alloc(std::size_t n) {
  return std::make_shared<std::vector<T>>(n);
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMatrix<T>>;

// Size of the repeating block of `b` when broadcast against `a`.
std::size_t broadcast_period(const Shape& a, const Shape& b, std::string_view op) {
  if (a == b) return element_count(a);
  if (b.size() <= a.size() && std::equal(b.rbegin(), b.rend(), a.rbegin())) return element_count(b);
  throw DimensionError(std::string(op) + ": cannot combine " + to_string(a) + " with " + to_string(b));
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(std::string_view op, const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const std::size_t n = x.numel();
  auto out = alloc<T>(n);
  const T* xv = x.data();
  for (std::size_t i = 0; i < n; ++i) (*out)[i] = fwd(xv[i]);
  Buffer<T> y = out;
  return detail::make_result<T>(op, x.shape(), out, {x},
                                [x, y, deriv](std::span<const T> g, std::span<T* const> gin) {
                                  const T* xv = x.data();
                                  const T* yv = y->data();
                                  for (std::size_t i = 0; i < g.size(); ++i) gin[0][i] += g[i] * deriv(xv[i], yv[i]);
                                });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t period = broadcast_period(a.shape(), b.shape(), "add");
  const std::size_t n = a.numel();
  auto out = alloc<T>(n);
  const T* av = a.data();
  const T* bv = b.data();
  for (std::size_t i = 0; i < n; i += period) {
    for (std::size_t j = 0; j < period; ++j) (*out)[i + j] = av[i + j] + bv[j];
  }
  return detail::make_result<T>("add", a.shape(), out, {a, b}, [period](std::span<const T> g, std::span<T* const> gin) {
    for (std::size_t i = 0; i < g.size(); i += period) {
      for (std::size_t j = 0; j < period; ++j) {
        if (gin[0]) gin[0][i + j] += g[i + j];
        if (gin[1]) gin[1][j] += g[i + j];
      }
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t period = broadcast_period(a.shape(), b.shape(), "sub");
  const std::size_t n = a.numel();
  auto out = alloc<T>(n);
  const T* av = a.data();
  const T* bv = b.data();
  for (std::size_t i = 0; i < n; i += period) {
    for (std::size_t j = 0; j < period; ++j) (*out)[i + j] = av[i + j] - bv[j];
  }
  return detail::make_result<T>("sub", a.shape(), out, {a, b}, [period](std::span<const T> g, std::span<T* const> gin) {
    for (std::size_t i = 0; i < g.size(); i += period) {
      for (std::size_t j = 0; j < period; ++j) {
        if (gin[0]) gin[0][i + j] += g[i + j];
        if (gin[1]) gin[1][j] -= g[i + j];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t period = broadcast_period(a.shape(), b.shape(), "mul");
  const std::size_t n = a.numel();
  auto out = alloc<T>(n);
  const T* av = a.data();
  const T* bv = b.data();
  for (std::size_t i = 0; i < n; i += period) {
    for (std::size_t j = 0; j < period; ++j) (*out)[i + j] = av[i + j] * bv[j];
  }
  return detail::make_result<T>("mul", a.shape(), out, {a, b},
                                [a, b, period](std::span<const T> g, std::span<T* const> gin) {
                                  const T* av = a.data();
                                  const T* bv = b.data();
                                  for (std::size_t i = 0; i < g.size(); i += period) {
                                    for (std::size_t j = 0; j < period; ++j) {
                                      if (gin[0]) gin[0][i + j] += g[i + j] * bv[j];
                                      if (gin[1]) gin[1][j] += g[i + j] * av[i + j];
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>("scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
  return unary<T>("add_scalar", x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.values()) {
    if (!(v > T(0))) throw ContractError("log: non-positive input");
  }
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& x) {
  return unary<T>("reciprocal", x, [](T v) { return T(1) / v; }, [](T, T y) { return -y * y; });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  // The floor keeps the result strictly positive where e^x underflows.
  static constexpr T tiny = std::numeric_limits<T>::denorm_min();
  return unary<T>(
      "softplus", x,
      [](T v) { return std::max(std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))), tiny); },
      [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  if (!(lo < hi)) throw ContractError("clamp: lo must be below hi");
  return unary<T>(
      "clamp", x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2 / pi)
  constexpr T c = T(0.044715);
  return unary<T>(
      "gelu", x,
      [](T v) { return T(0.5) * v * (T(1) + std::tanh(k * (v + c * v * v * v))); },
      [](T v, T) {
        const T t = std::tanh(k * (v + c * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * k * (T(1) + T(3) * c * v * v);
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 1 || b.rank() < 2) throw DimensionError("matmul: operands need rank >= 1 and >= 2");
  const std::size_t K = a.shape().back();
  if (b.rank() == 2) {
    if (b.dim(0) != K) {
      throw DimensionError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
    }
    const std::size_t N = b.dim(1);
    const std::size_t M = a.numel() / std::max<std::size_t>(K, 1);
    Shape shape = a.shape();
    shape.back() = N;
    auto out = alloc<T>(M * N);
    const auto Mi = static_cast<Eigen::Index>(M), Ki = static_cast<Eigen::Index>(K), Ni = static_cast<Eigen::Index>(N);
    MutMap<T>(out->data(), Mi, Ni).noalias() = ConstMap<T>(a.data(), Mi, Ki) * ConstMap<T>(b.data(), Ki, Ni);
    return detail::make_result<T>("matmul", std::move(shape), out, {a, b},
                                  [a, b, Mi, Ki, Ni](std::span<const T> g, std::span<T* const> gin) {
                                    ConstMap<T> G(g.data(), Mi, Ni);
                                    if (gin[0]) MutMap<T>(gin[0], Mi, Ki).noalias() += G * ConstMap<T>(b.data(), Ki, Ni).transpose();
                                    if (gin[1]) MutMap<T>(gin[1], Ki, Ni).noalias() += ConstMap<T>(a.data(), Mi, Ki).transpose() * G;
                                  });
  }
  if (a.rank() != b.rank() || !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()) ||
      b.dim(-2) != K) {
    throw DimensionError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t M = a.dim(-2);
  const std::size_t N = b.dim(-1);
  const std::size_t batch = a.numel() / std::max<std::size_t>(M * K, 1);
  Shape shape = a.shape();
  shape.back() = N;
  auto out = alloc<T>(batch * M * N);
  const auto Mi = static_cast<Eigen::Index>(M), Ki = static_cast<Eigen::Index>(K), Ni = static_cast<Eigen::Index>(N);
  for (std::size_t s = 0; s < batch; ++s) {
    MutMap<T>(out->data() + s * M * N, Mi, Ni).noalias() =
        ConstMap<T>(a.data() + s * M * K, Mi, Ki) * ConstMap<T>(b.data() + s * K * N, Ki, Ni);
  }
  return detail::make_result<T>(
      "matmul", std::move(shape), out, {a, b}, [a, b, batch, M, K, N](std::span<const T> g, std::span<T* const> gin) {
        const auto Mi = static_cast<Eigen::Index>(M), Ki = static_cast<Eigen::Index>(K), Ni = static_cast<Eigen::Index>(N);
        for (std::size_t s = 0; s < batch; ++s) {
          ConstMap<T> G(g.data() + s * M * N, Mi, Ni);
          if (gin[0]) {
            MutMap<T>(gin[0] + s * M * K, Mi, Ki).noalias() += G * ConstMap<T>(b.data() + s * K * N, Ki, Ni).transpose();
          }
          if (gin[1]) {
            MutMap<T>(gin[1] + s * K * N, Ki, Ni).noalias() += ConstMap<T>(a.data() + s * M * K, Mi, Ki).transpose() * G;
          }
        }
      });
}

namespace {

// Views a tensor as [pre, A, mid, B, post] around the two swapped axes and
// copies src into dst with A and B exchanged. With accumulate, adds instead.
template <typename T>
void swap_axes(const T* src, T* dst, std::size_t pre, std::size_t A, std::size_t mid, std::size_t B, std::size_t post,
               bool accumulate) {
  for (std::size_t p = 0; p < pre; ++p)
    for (std::size_t a = 0; a < A; ++a)
      for (std::size_t m = 0; m < mid; ++m)
        for (std::size_t b = 0; b < B; ++b) {
          const T* s = src + ((((p * A + a) * mid + m) * B + b) * post);
          T* d = dst + ((((p * B + b) * mid + m) * A + a) * post);
          if (accumulate) {
            for (std::size_t q = 0; q < post; ++q) d[q] += s[q];
          } else {
            std::copy(s, s + post, d);
          }
        }
}

}  // namespace

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, int axis_a, int axis_b) {
  std::size_t i = normalize_axis(axis_a, x.rank());
  std::size_t j = normalize_axis(axis_b, x.rank());
  if (i > j) std::swap(i, j);
  const Shape& s = x.shape();
  if (i == j) return reshape(x, s);
  const auto prod = [&](std::size_t from, std::size_t to) {
    std::size_t n = 1;
    for (std::size_t k = from; k < to; ++k) n *= s[k];
    return n;
  };
  const std::size_t pre = prod(0, i), A = s[i], mid = prod(i + 1, j), B = s[j], post = prod(j + 1, s.size());
  Shape shape = s;
  std::swap(shape[i], shape[j]);
  auto out = alloc<T>(x.numel());
  swap_axes(x.data(), out->data(), pre, A, mid, B, post, false);
  return detail::make_result<T>("transpose", std::move(shape), out, {x},
                                [pre, A, mid, B, post](std::span<const T> g, std::span<T* const> gin) {
                                  swap_axes(g.data(), gin[0], pre, B, mid, A, post, true);
                                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (element_count(shape) != x.numel()) {
    throw DimensionError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  }
  return detail::make_result<T>("reshape", std::move(shape), x.storage(), {x},
                                [](std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t k = 0; k < g.size(); ++k) gin[0][k] += g[k];
                                });
}

template <typename T>
Tensor<T> expand_last(const Tensor<T>& x, std::size_t n) {
  if (n == 0) throw DimensionError("expand_last: size must be positive");
  Shape shape = x.shape();
  shape.push_back(n);
  auto out = alloc<T>(x.numel() * n);
  const T* xv = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) std::fill_n(out->data() + i * n, n, xv[i]);
  return detail::make_result<T>("expand_last", std::move(shape), out, {x},
                                [n](std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t i = 0; i < g.size() / n; ++i) {
                                    T acc = 0;
                                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j];
                                    gin[0][i] += acc;
                                  }
                                });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.values()) acc += v;
  auto out = std::make_shared<std::vector<T>>(1, acc);
  const std::size_t n = x.numel();
  return detail::make_result<T>("sum", Shape{}, out, {x}, [n](std::span<const T> g, std::span<T* const> gin) {
    for (std::size_t i = 0; i < n; ++i) gin[0][i] += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  const std::size_t n = x.numel();
  T acc = 0;
  for (T v : x.values()) acc += v;
  auto out = std::make_shared<std::vector<T>>(1, acc / static_cast<T>(n));
  return detail::make_result<T>("mean", Shape{}, out, {x}, [n](std::span<const T> g, std::span<T* const> gin) {
    const T share = g[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) gin[0][i] += share;
  });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, const IntTensor& ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be rank 2, got " + to_string(table.shape()));
  if (ids.values.size() != element_count(ids.shape)) throw DimensionError("gather_rows: malformed id tensor");
  const std::size_t rows = table.dim(0);
  const std::size_t width = table.dim(1);
  for (std::int32_t id : ids.values) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw OutOfRangeError("gather_rows: index " + std::to_string(id) + " outside table of " + std::to_string(rows) +
                            " rows");
    }
  }
  Shape shape = ids.shape;
  shape.push_back(width);
  auto out = alloc<T>(ids.values.size() * width);
  const T* tv = table.data();
  for (std::size_t r = 0; r < ids.values.size(); ++r) {
    std::copy_n(tv + static_cast<std::size_t>(ids.values[r]) * width, width, out->data() + r * width);
  }
  auto index = std::make_shared<const std::vector<std::int32_t>>(ids.values);
  return detail::make_result<T>("gather_rows", std::move(shape), out, {table},
                                [index, width](std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t r = 0; r < index->size(); ++r) {
                                    T* dst = gin[0] + static_cast<std::size_t>((*index)[r]) * width;
                                    const T* src = g.data() + r * width;
                                    for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
                                  }
                                });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("softmax_lastdim: rank 0 input");
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.numel() / std::max<std::size_t>(width, 1);
  auto out = alloc<T>(x.numel());
  const T* xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv + r * width;
    T* o = out->data() + r * width;
    const T mx = *std::max_element(in, in + width);
    T total = 0;
    for (std::size_t c = 0; c < width; ++c) {
      o[c] = std::exp(in[c] - mx);
      total += o[c];
    }
    const T inv = T(1) / total;
    for (std::size_t c = 0; c < width; ++c) o[c] *= inv;
  }
  Buffer<T> y = out;
  return detail::make_result<T>("softmax_lastdim", x.shape(), out, {x},
                                [y, rows, width](std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t r = 0; r < rows; ++r) {
                                    const T* yr = y->data() + r * width;
                                    const T* gr = g.data() + r * width;
                                    T dot = 0;
                                    for (std::size_t c = 0; c < width; ++c) dot += gr[c] * yr[c];
                                    T* dst = gin[0] + r * width;
                                    for (std::size_t c = 0; c < width; ++c) dst[c] += yr[c] * (gr[c] - dot);
                                  }
                                });
}

template <typename T>
Tensor<T> causal_mask(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("causal_mask: rank must be >= 2");
  const std::size_t rows = x.dim(-2);
  const std::size_t cols = x.dim(-1);
  const std::size_t blocks = x.numel() / std::max<std::size_t>(rows * cols, 1);
  auto out = alloc<T>(x.numel());
  std::copy(x.values().begin(), x.values().end(), out->begin());
  constexpr T neg_inf = -std::numeric_limits<T>::infinity();
  for (std::size_t s = 0; s < blocks; ++s)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = r + 1; c < cols; ++c) (*out)[(s * rows + r) * cols + c] = neg_inf;
  return detail::make_result<T>("causal_mask", x.shape(), out, {x},
                                [blocks, rows, cols](std::span<const T> g, std::span<T* const> gin) {
                                  for (std::size_t s = 0; s < blocks; ++s)
                                    for (std::size_t r = 0; r < rows; ++r) {
                                      const std::size_t base = (s * rows + r) * cols;
                                      const std::size_t keep = std::min(r + 1, cols);
                                      for (std::size_t c = 0; c < keep; ++c) gin[0][base + c] += g[base + c];
                                    }
                                });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() == 0) throw DimensionError("layernorm: rank 0 input");
  const std::size_t width = x.shape().back();
  if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
    throw DimensionError("layernorm: gain/bias must be [" + std::to_string(width) + "]");
  }
  const std::size_t rows = x.numel() / std::max<std::size_t>(width, 1);
  auto out = alloc<T>(x.numel());
  auto xhat = alloc<T>(x.numel());
  auto rstd = alloc<T>(rows);
  const T* xv = x.data();
  const T* gv = gain.data();
  const T* bv = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv + r * width;
    T mu = 0;
    for (std::size_t c = 0; c < width; ++c) mu += in[c];
    mu /= static_cast<T>(width);
    T var = 0;
    for (std::size_t c = 0; c < width; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(width);
    const T rs = T(1) / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t c = 0; c < width; ++c) {
      const T h = (in[c] - mu) * rs;
      (*xhat)[r * width + c] = h;
      (*out)[r * width + c] = h * gv[c] + bv[c];
    }
  }
  return detail::make_result<T>(
      "layernorm", x.shape(), out, {x, gain, bias},
      [xhat, rstd, gain, rows, width](std::span<const T> g, std::span<T* const> gin) {
        const T* gv = gain.data();
        const T inv_w = T(1) / static_cast<T>(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * width;
          const T* hr = xhat->data() + r * width;
          if (gin[1])
            for (std::size_t c = 0; c < width; ++c) gin[1][c] += gr[c] * hr[c];
          if (gin[2])
            for (std::size_t c = 0; c < width; ++c) gin[2][c] += gr[c];
          if (gin[0]) {
            T mean_d = 0, mean_dh = 0;
            for (std::size_t c = 0; c < width; ++c) {
              const T d = gr[c] * gv[c];
              mean_d += d;
              mean_dh += d * hr[c];
            }
            mean_d *= inv_w;
            mean_dh *= inv_w;
            T* dst = gin[0] + r * width;
            for (std::size_t c = 0; c < width; ++c) {
              dst[c] += (*rstd)[r] * (gr[c] * gv[c] - mean_d - hr[c] * mean_dh);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> cumsum_exclusive(const Tensor<T>& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.rank());
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < ax; ++k) outer *= s[k];
  for (std::size_t k = ax + 1; k < s.size(); ++k) inner *= s[k];
  const std::size_t len = s[ax];
  auto out = alloc<T>(x.numel());
  const T* xv = x.data();
  // Double accumulators keep long prefix sums accurate in float32.
  std::vector<double> acc(inner);
  for (std::size_t o = 0; o < outer; ++o) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < len; ++p) {
      const std::size_t base = (o * len + p) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        (*out)[base + i] = static_cast<T>(acc[i]);
        acc[i] += static_cast<double>(xv[base + i]);
      }
    }
  }
  return detail::make_result<T>("cumsum_exclusive", s, out, {x},
                                [outer, len, inner](std::span<const T> g, std::span<T* const> gin) {
                                  std::vector<double> acc(inner);
                                  for (std::size_t o = 0; o < outer; ++o) {
                                    std::fill(acc.begin(), acc.end(), 0.0);
                                    for (std::size_t p = len; p-- > 0;) {
                                      const std::size_t base = (o * len + p) * inner;
                                      for (std::size_t i = 0; i < inner; ++i) {
                                        gin[0][base + i] += static_cast<T>(acc[i]);
                                        acc[i] += static_cast<double>(g[base + i]);
                                      }
                                    }
                                  }
                                });
}

#define CAROPE_INSTANTIATE_OPS(T)                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                  \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                             \
  template Tensor<T> exp(const Tensor<T>&);                                       \
  template Tensor<T> log(const Tensor<T>&);                                       \
  template Tensor<T> reciprocal(const Tensor<T>&);                                \
  template Tensor<T> softplus(const Tensor<T>&);                                  \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                               \
  template Tensor<T> gelu(const Tensor<T>&);                                      \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                       \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                            \
  template Tensor<T> expand_last(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> sum(const Tensor<T>&);                                       \
  template Tensor<T> mean(const Tensor<T>&);                                      \
  template Tensor<T> gather_rows(const Tensor<T>&, const IntTensor&);             \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                           \
  template Tensor<T> causal_mask(const Tensor<T>&);                               \
  template Tensor<T> layernorm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T); \
  template Tensor<T> cumsum_exclusive(const Tensor<T>&, int);

CAROPE_INSTANTIATE_OPS(float)
CAROPE_INSTANTIATE_OPS(double)

}  // namespace carope::num
