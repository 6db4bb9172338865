#pragma once

#include <map>
#include <string>
#include <vector>

#include "carope/model/transformer.hpp"
#include "carope/train/schedule.hpp"

namespace carope::train {

/// AdamW with bias-corrected moments, decoupled weight decay on parameters
/// flagged `decay`, and global-norm clipping of the incoming gradients.
template <typename T>
class AdamW {
 public:
  using Moments = std::map<std::string, std::vector<T>, std::less<>>;

  explicit AdamW(const TrainConfig& cfg) : cfg_(cfg) {}

  /// Parameters without an entry in `grads` are left untouched. Returns the
  /// pre-clip global gradient norm. Throws NumericError naming the first
  /// parameter with a non-finite gradient.
  double step(std::vector<model::Parameter<T>>& params, const model::GradMap<T>& grads, double lr);

  std::size_t step_count() const noexcept { return t_; }
  void set_step_count(std::size_t t) noexcept { t_ = t; }
  Moments& first_moments() noexcept { return m_; }
  Moments& second_moments() noexcept { return v_; }
  const Moments& first_moments() const noexcept { return m_; }
  const Moments& second_moments() const noexcept { return v_; }

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  Moments m_;
  Moments v_;
};

}  // namespace carope::train
