// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with a reverse-mode differentiation tape.
//
// A Tensor is a shared handle onto a node holding shape, data and (when
// requires_grad is set) a same-shape gradient accumulator. Operations record
// a backward closure on the thread's active Tape whenever one of their inputs
// requires a gradient. Without an active tape, operations run in inference
// mode and nothing is recorded.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mcf/errors.hpp"

namespace mcf {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Cache-line aligned storage. Vectorized reductions peel to an alignment
// boundary, so a fixed base alignment keeps results bit-reproducible across
// allocations.
inline constexpr std::size_t tensor_alignment = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{tensor_alignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{tensor_alignment}); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct TensorNode {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;
  bool requires_grad = false;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  void zero_grad();

  T item() const;
  T& at(std::size_t i) { return node_->data[i]; }
  T at(std::size_t i) const { return node_->data[i]; }
  // Row-major access for rank-2 tensors.
  T& at(std::size_t r, std::size_t c) { return node_->data[r * node_->shape[1] + c]; }
  T at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape[1] + c]; }

  // Deep copy of values; the copy is a fresh leaf.
  Tensor clone(bool requires_grad = false) const;
  // Leaf sharing no graph history with this tensor.
  Tensor detach() const { return clone(false); }

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode<T>> node_;
};

using TensorD = Tensor<double>;
using TensorF = Tensor<float>;

// Ordered record of operations. backward() replays the closures in reverse
// recording order, so gradient accumulation order is fixed.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor<T>& output, std::function<void()> backward_fn);
  void backward(const Tensor<T>& loss);
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool done() const { return done_; }

  static Tape* active() { return active_; }

 private:
  template <typename>
  friend class TapeScope;

  struct Entry {
    std::shared_ptr<TensorNode<T>> output;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;
  bool done_ = false;
  static inline thread_local Tape* active_ = nullptr;
};

// Makes `tape` the active tape of the current thread for the scope lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active_) { Tape<T>::active_ = &tape; }
  ~TapeScope() { Tape<T>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Helpers for defining differentiable operations.
//
// make_output allocates a result that requires a gradient iff some input does
// and a tape is active. record attaches the backward closure to that tape.
template <typename T>
Tensor<T> make_output(Shape shape, std::initializer_list<const Tensor<T>*> inputs);
template <typename T>
Tensor<T> make_output(Shape shape, const std::vector<Tensor<T>>& inputs);
template <typename T>
void record(const Tensor<T>& output, std::function<void()> backward_fn);
template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return t.requires_grad() && Tape<T>::active() != nullptr;
}

// ---- core operations ------------------------------------------------------

// a[.., M, K] x b[.., K, N]. Batch extents must match, or one side is rank 2.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Swap the last two axes of a rank-2 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, std::type_identity_t<T> factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, std::type_identity_t<T> value);

enum class ElementwiseOp { Add, Mul };
template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b);

// x[.., C] + bias[C], broadcast over every leading position.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
// x[T, 1] -> [T, C] by repeating the single column.
template <typename T>
Tensor<T> expand_channels(const Tensor<T>& x, std::size_t channels);

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t boundary);
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
// Sum of x ⊙ w with a constant weight tensor w; used by gradient checks.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& w);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> ones_like(const Tensor<T>& x) {
  return Tensor<T>::full(x.shape(), T(1));
}
template <typename T>
Tensor<T> zeros_like(const Tensor<T>& x) {
  return Tensor<T>::zeros(x.shape());
}

}  // namespace mcf
