#include "carope/train/optimizer.hpp"

#include <cmath>

#include "carope/errors.hpp"

namespace carope::train {

template <typename T>
double AdamW<T>::step(std::vector<model::Parameter<T>>& params, const model::GradMap<T>& grads, double lr) {
  double sq = 0.0;
  for (const auto& p : params) {
    const auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    if (it->second.size() != p.value.numel()) {
      throw num::DimensionError("gradient for '" + p.name + "' has the wrong size");
    }
    for (T g : it->second) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;

  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& p : params) {
    const auto it = grads.find(p.name);
    if (it == grads.end()) continue;
    const std::size_t n = p.value.numel();
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    if (m.empty()) m.assign(n, T(0));
    if (v.empty()) v.assign(n, T(0));
    const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
    std::vector<T> next(p.value.values().begin(), p.value.values().end());
    for (std::size_t i = 0; i < n; ++i) {
      const double g = static_cast<double>(it->second[i]) * clip;
      m[i] = static_cast<T>(b1 * static_cast<double>(m[i]) + (1.0 - b1) * g);
      v[i] = static_cast<T>(b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g);
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      double w = static_cast<double>(next[i]);
      w -= decay * w;
      w -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      next[i] = static_cast<T>(w);
    }
    p.value = num::Tensor<T>(p.value.shape(), std::move(next));
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace carope::train
