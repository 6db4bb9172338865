#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "carope/num/ops.hpp"
#include "carope/num/tensor.hpp"

namespace testing {

using carope::num::Shape;
using carope::num::Tape;
using carope::num::Tensor;

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> pick(lo, hi);
  std::vector<T> v(carope::num::element_count(shape));
  for (auto& x : v) x = static_cast<T>(pick(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

inline std::vector<double> random_weights(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(n);
  for (auto& x : w) x = normal(rng);
  return w;
}

template <typename T>
using OpFn = std::function<Tensor<T>(const std::vector<Tensor<T>>&)>;

/// d/d(inputs) of sum(w * fn(inputs)) through the tape.
template <typename T>
std::vector<std::vector<double>> tape_gradients(const OpFn<T>& fn, const std::vector<Tensor<T>>& inputs,
                                                const std::vector<double>& w) {
  Tape<T> tape;
  std::vector<Tensor<T>> watched;
  for (const auto& x : inputs) watched.push_back(tape.watch(x));
  const auto out = fn(watched);
  std::vector<T> wt(w.begin(), w.end());
  const auto loss = carope::num::sum(carope::num::mul(out, Tensor<T>(out.shape(), std::move(wt))));
  tape.backward(loss);
  std::vector<std::vector<double>> grads;
  for (const auto& x : watched) {
    const auto g = tape.grad(x);
    grads.emplace_back(g.begin(), g.end());
  }
  return grads;
}

/// Central differences of sum(w * fn(inputs)), accumulated in double.
template <typename T>
std::vector<std::vector<double>> numeric_gradients(const OpFn<T>& fn, const std::vector<Tensor<T>>& inputs,
                                                   const std::vector<double>& w, double h) {
  const auto objective = [&](const std::vector<Tensor<T>>& xs) {
    const auto out = fn(xs);
    double total = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) total += w[i] * static_cast<double>(out[i]);
    return total;
  };
  std::vector<std::vector<double>> grads;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> g(inputs[k].numel());
    std::vector<T> probe(inputs[k].values().begin(), inputs[k].values().end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const T x0 = probe[i];
      auto xs = inputs;
      const T up = static_cast<T>(x0 + h);
      const T down = static_cast<T>(x0 - h);
      probe[i] = up;
      xs[k] = Tensor<T>(inputs[k].shape(), probe);
      const double fu = objective(xs);
      probe[i] = down;
      xs[k] = Tensor<T>(inputs[k].shape(), probe);
      const double fd = objective(xs);
      probe[i] = x0;
      g[i] = (fu - fd) / (static_cast<double>(up) - static_cast<double>(down));
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Largest |a - n| / max(|a|, |n|, floor) over all entries.
inline double max_relative_error(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& n,
                                 double floor) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      const double denom = std::max({std::abs(a[k][i]), std::abs(n[k][i]), floor});
      worst = std::max(worst, std::abs(a[k][i] - n[k][i]) / denom);
    }
  return worst;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

}  // namespace testing
