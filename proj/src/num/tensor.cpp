#include "carope/num/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace carope::num {

std::string_view to_string(Dtype dtype) {
  return dtype == Dtype::f32 ? "float32" : "float64";
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t normalize_axis(int axis, std::size_t rank) {
  const auto r = static_cast<int>(rank);
  const int resolved = axis < 0 ? axis + r : axis;
  if (resolved < 0 || resolved >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(resolved);
}

template <typename T>
Tensor<T>::Tensor() : shape_{}, data_(std::make_shared<const std::vector<T>>(1, T{0})) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : Tensor(std::move(shape), std::make_shared<const std::vector<T>>(std::move(values))) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::shared_ptr<const std::vector<T>> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (!data_ || element_count(shape_) != data_->size()) {
    throw DimensionError("shape " + to_string(shape_) + " does not match " +
                         std::to_string(data_ ? data_->size() : 0) + " values");
  }
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor with shape " + to_string(shape_));
  }
  return (*data_)[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape_, data_);
}

template <typename T>
Tensor<T> Tape<T>::watch(const Tensor<T>& value) {
  if (consumed_) throw ContractError("tape already ran backward; record a new tape");
  Node node;
  node.op = "leaf";
  node.numel = value.numel();
  nodes_.push_back(std::move(node));
  Tensor<T> out(value.shape(), value.storage());
  out.tape_ = this;
  out.node_ = nodes_.size() - 1;
  return out;
}

template <typename T>
Tensor<T> Tape<T>::record(std::string_view op, Shape shape, std::shared_ptr<const std::vector<T>> values,
                          std::vector<Tensor<T>> inputs, Backward backward) {
  if (consumed_) throw ContractError("tape already ran backward; record a new tape");
  Node node;
  node.op = op;
  node.numel = values->size();
  node.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    if (in.tape_ != nullptr && in.tape_ != this) {
      throw ContractError(std::string(op) + ": inputs recorded on different tapes");
    }
    node.inputs.push_back(in.tape_ == this ? in.node_ : npos);
  }
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  Tensor<T> out(std::move(shape), std::move(values));
  out.tape_ = this;
  out.node_ = nodes_.size() - 1;
  return out;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (loss.tape_ != this) throw ContractError("loss is not recorded on this tape");
  if (loss.numel() != 1) throw ContractError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
  consumed_ = true;

  nodes_[loss.node_].grad.assign(1, T{1});
  std::vector<T*> in_grads;
  for (std::size_t idx = loss.node_ + 1; idx-- > 0;) {
    Node& node = nodes_[idx];
    if (node.grad.empty() || !node.backward) continue;
    in_grads.assign(node.inputs.size(), nullptr);
    bool any = false;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t src = node.inputs[k];
      if (src == npos) continue;
      Node& input = nodes_[src];
      if (input.grad.empty()) input.grad.assign(input.numel, T{0});
      in_grads[k] = input.grad.data();
      any = true;
    }
    if (any) node.backward(node.grad, in_grads);
  }
}

template <typename T>
std::vector<T> Tape<T>::grad(const Tensor<T>& t) const {
  if (t.tape_ != this) throw ContractError("tensor is not recorded on this tape");
  const Node& node = nodes_[t.node_];
  if (node.grad.empty()) return std::vector<T>(node.numel, T{0});
  return node.grad;
}

namespace detail {

template <typename T>
Tape<T>* common_tape(std::span<const Tensor<T>> inputs) {
  Tape<T>* tape = nullptr;
  for (const auto& in : inputs) {
    if (in.tape() == nullptr) continue;
    if (tape != nullptr && tape != in.tape()) throw ContractError("inputs recorded on different tapes");
    tape = in.tape();
  }
  return tape;
}

template <typename T>
Tensor<T> make_result(std::string_view op, Shape shape, std::shared_ptr<const std::vector<T>> values,
                      std::vector<Tensor<T>> inputs, typename Tape<T>::Backward backward) {
#ifndef NDEBUG
  const auto finite = [](std::span<const T> v) {
    return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
  };
  if (op != "causal_mask" && finite(*values) == false &&
      std::all_of(inputs.begin(), inputs.end(), [&](const Tensor<T>& in) { return finite(in.values()); })) {
    throw ContractError(std::string(op) + ": non-finite output from finite inputs");
  }
#endif
  Tape<T>* tape = common_tape<T>(inputs);
  if (tape == nullptr) return Tensor<T>(std::move(shape), std::move(values));
  return tape->record(op, std::move(shape), std::move(values), std::move(inputs), std::move(backward));
}

template Tape<float>* common_tape<float>(std::span<const Tensor<float>>);
template Tape<double>* common_tape<double>(std::span<const Tensor<double>>);
template Tensor<float> make_result<float>(std::string_view, Shape, std::shared_ptr<const std::vector<float>>,
                                          std::vector<Tensor<float>>, Tape<float>::Backward);
template Tensor<double> make_result<double>(std::string_view, Shape, std::shared_ptr<const std::vector<double>>,
                                            std::vector<Tensor<double>>, Tape<double>::Backward);

}  // namespace detail

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace carope::num
