#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace carope::num {

using Shape = std::vector<std::size_t>;

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
inline constexpr Dtype dtype_of = sizeof(T) == 4 ? Dtype::f32 : Dtype::f64;

std::string_view to_string(Dtype dtype);

/// Shapes disagree with what an op requires.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on values or usage was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An index (position, token id) falls outside a table.
class OutOfRangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Resolves a possibly negative axis against `rank`; throws DimensionError.
std::size_t normalize_axis(int axis, std::size_t rank);

/// Row-major integer tensor used for token ids.
struct IntTensor {
  Shape shape;
  std::vector<std::int32_t> values;

  std::size_t numel() const { return values.size(); }
};

template <typename T>
class Tape;

/// Dense row-major tensor. Values are immutable and shared between copies.
/// A tensor recorded on a Tape carries a node index; only those tensors can
/// receive gradient.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  Tensor(Shape shape, std::vector<T> values);
  Tensor(Shape shape, std::shared_ptr<const std::vector<T>> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value);

  static constexpr Dtype dtype() { return dtype_of<T>; }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(int axis) const { return shape_[normalize_axis(axis, rank())]; }
  std::size_t numel() const noexcept { return data_->size(); }

  std::span<const T> values() const noexcept { return {data_->data(), data_->size()}; }
  const T* data() const noexcept { return data_->data(); }
  const std::shared_ptr<const std::vector<T>>& storage() const noexcept { return data_; }
  T operator[](std::size_t flat) const { return (*data_)[flat]; }
  T item() const;

  bool requires_grad() const noexcept { return tape_ != nullptr; }
  Tape<T>* tape() const noexcept { return tape_; }
  std::size_t node() const noexcept { return node_; }

  /// Same values, no gradient node.
  Tensor detach() const;

 private:
  friend class Tape<T>;

  Shape shape_;
  std::shared_ptr<const std::vector<T>> data_;
  Tape<T>* tape_ = nullptr;
  std::size_t node_ = 0;
};

/// Append-only record of differentiable ops for one forward pass.
///
/// Nodes are stored in recording order, which is a topological order of the
/// graph; backward() walks them strictly in reverse. Gradients accumulate
/// additively, so a tensor consumed by several ops receives the sum of their
/// contributions. A tape supports exactly one backward() call.
template <typename T>
class Tape {
 public:
  /// Receives the output gradient and one gradient buffer per op input
  /// (nullptr for inputs that are not on the tape). Must accumulate (+=).
  using Backward = std::function<void(std::span<const T> out_grad, std::span<T* const> in_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a leaf (typically a parameter) and returns a tracked alias.
  Tensor<T> watch(const Tensor<T>& value);

  /// Records an op output. Called by op implementations.
  Tensor<T> record(std::string_view op, Shape shape, std::shared_ptr<const std::vector<T>> values,
                   std::vector<Tensor<T>> inputs, Backward backward);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(const Tensor<T>& loss);

  /// Gradient accumulated for `t`; all zeros when `t` was not reached.
  std::vector<T> grad(const Tensor<T>& t) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

 private:
  struct Node {
    std::string_view op;
    std::size_t numel = 0;
    std::vector<std::size_t> inputs;  // node indices; npos for untracked inputs
    Backward backward;
    std::vector<T> grad;
  };

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {

/// Builds an op result, recording it on the inputs' tape when any input is
/// tracked. All tracked inputs must share one tape.
template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::shared_ptr<const std::vector<T>> values,
                      std::vector<Tensor<T>> inputs, typename Tape<T>::Backward backward);

template <typename T>
Tape<T>* common_tape(std::span<const Tensor<T>> inputs);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace carope::num
