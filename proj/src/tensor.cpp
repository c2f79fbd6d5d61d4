// SPDX-License-Identifier: Apache-2.0

#include "mcf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "eigen_util.hpp"

namespace mcf {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

template <typename T>
void accumulate(const Tensor<T>& t, std::size_t i, T g) {
  t.node()->grad[i] += g;
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<TensorNode<T>>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  Tensor t(std::move(node));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data.assign(values.begin(), values.end());
  Tensor t(std::move(node));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  if (flag) {
    node_->grad.assign(node_->data.size(), T(0));
  } else {
    node_->grad.clear();
  }
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_str(shape()));
  }
  return node_->data[0];
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
  return from(shape(), std::vector<T>(node_->data.begin(), node_->data.end()), requires_grad);
}

// ---- Tape -----------------------------------------------------------------

template <typename T>
void Tape<T>::record(const Tensor<T>& output, std::function<void()> backward_fn) {
  if (done_) throw StateError("cannot record on a tape that has been replayed; call reset()");
  entries_.push_back({output.node_ptr(), std::move(backward_fn)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (done_) throw StateError("backward() called twice on the same tape without reset()");
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  const auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const Entry& e) { return e.output == loss.node_ptr(); });
  if (it == entries_.end()) throw ContractError("loss was not produced on this tape");
  loss.node()->grad[0] += T(1);
  for (auto e = entries_.rbegin(); e != entries_.rend(); ++e) e->backward_fn();
  done_ = true;
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
  done_ = false;
}

template <typename T>
Tensor<T> make_output(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  bool grad = false;
  if (Tape<T>::active()) {
    for (const auto* in : inputs) grad = grad || in->requires_grad();
  }
  return Tensor<T>::zeros(std::move(shape), grad);
}

template <typename T>
Tensor<T> make_output(Shape shape, const std::vector<Tensor<T>>& inputs) {
  bool grad = false;
  if (Tape<T>::active()) {
    for (const auto& in : inputs) grad = grad || in.requires_grad();
  }
  return Tensor<T>::zeros(std::move(shape), grad);
}

template <typename T>
void record(const Tensor<T>& output, std::function<void()> backward_fn) {
  if (!output.requires_grad()) return;
  Tape<T>::active()->record(output, std::move(backward_fn));
}

// ---- matmul ---------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
  };
  if (a.rank() < 2 || b.rank() < 2) throw mismatch();
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb) throw mismatch();
  const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  if (!a_batch.empty() && !b_batch.empty() && a_batch != b_batch) throw mismatch();
  const Shape& batch_shape = a_batch.empty() ? b_batch : a_batch;
  const std::size_t batch = shape_numel(batch_shape);
  const std::size_t a_stride = a_batch.empty() ? 0 : m * k;
  const std::size_t b_stride = b_batch.empty() ? 0 : k * n;

  Shape out_shape = batch_shape;
  out_shape.push_back(m);
  out_shape.push_back(n);
  auto out = make_output<T>(out_shape, {&a, &b});
  for (std::size_t i = 0; i < batch; ++i) {
    auto c = map_mat(out.data().data() + i * m * n, m, n);
    c.noalias() = map_mat(a.data().data() + i * a_stride, m, k) *
                  map_mat(b.data().data() + i * b_stride, k, n);
  }
  record<T>(out, [a, b, out, m, k, n, batch, a_stride, b_stride] {
    for (std::size_t i = 0; i < batch; ++i) {
      auto g = map_mat(out.grad().data() + i * m * n, m, n);
      if (a.requires_grad()) {
        map_mat(a.node()->grad.data() + i * a_stride, m, k).noalias() +=
            g * map_mat(b.data().data() + i * b_stride, k, n).transpose();
      }
      if (b.requires_grad()) {
        map_mat(b.node()->grad.data() + i * b_stride, k, n).noalias() +=
            map_mat(a.data().data() + i * a_stride, m, k).transpose() * g;
      }
    }
  });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects rank 2, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  auto out = make_output<T>({c, r}, {&a});
  map_mat(out.data().data(), c, r) = map_mat(a.data().data(), r, c).transpose();
  record<T>(out, [a, out, r, c] {
    map_mat(a.node()->grad.data(), r, c) += map_mat(out.grad().data(), c, r).transpose();
  });
  return out;
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto out = make_output<T>(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + b.at(i);
  record<T>(out, [a, b, out] {
    const auto g = out.grad();
    if (a.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(a, i, g[i]);
    if (b.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(b, i, g[i]);
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto out = make_output<T>(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) - b.at(i);
  record<T>(out, [a, b, out] {
    const auto g = out.grad();
    if (a.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(a, i, g[i]);
    if (b.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(b, i, -g[i]);
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto out = make_output<T>(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * b.at(i);
  record<T>(out, [a, b, out] {
    const auto g = out.grad();
    if (a.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(a, i, g[i] * b.at(i));
    if (b.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(b, i, g[i] * a.at(i));
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, std::type_identity_t<T> factor) {
  auto out = make_output<T>(a.shape(), {&a});
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) * factor;
  record<T>(out, [a, out, factor] {
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) accumulate(a, i, g[i] * factor);
  });
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, std::type_identity_t<T> value) {
  auto out = make_output<T>(a.shape(), {&a});
  for (std::size_t i = 0; i < a.numel(); ++i) out.at(i) = a.at(i) + value;
  record<T>(out, [a, out] {
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) accumulate(a, i, g[i]);
  });
  return out;
}

template <typename T>
Tensor<T> elementwise(ElementwiseOp op, const Tensor<T>& a, const Tensor<T>& b) {
  switch (op) {
    case ElementwiseOp::Add:
      return add(a, b);
    case ElementwiseOp::Mul:
      return mul(a, b);
  }
  throw ContractError("unknown elementwise op");
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t c = x.dim(x.rank() - 1);
  if (bias.rank() != 1 || bias.dim(0) != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match input " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  auto out = make_output<T>(x.shape(), {&x, &bias});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) out.at(r * c + j) = x.at(r * c + j) + bias.at(j);
  record<T>(out, [x, bias, out, rows, c] {
    const auto g = out.grad();
    if (x.requires_grad())
      for (std::size_t i = 0; i < g.size(); ++i) accumulate(x, i, g[i]);
    if (bias.requires_grad())
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) accumulate(bias, j, g[r * c + j]);
  });
  return out;
}

template <typename T>
Tensor<T> expand_channels(const Tensor<T>& x, std::size_t channels) {
  if (x.rank() != 2 || x.dim(1) != 1) {
    throw DimensionError("expand_channels expects [T,1], got " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  auto out = make_output<T>({rows, channels}, {&x});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < channels; ++j) out.at(r * channels + j) = x.at(r);
  record<T>(out, [x, out, rows, channels] {
    const auto g = out.grad();
    for (std::size_t r = 0; r < rows; ++r) {
      T acc = 0;
      for (std::size_t j = 0; j < channels; ++j) acc += g[r * channels + j];
      accumulate(x, r, acc);
    }
  });
  return out;
}

// ---- channel slicing ------------------------------------------------------

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2) throw DimensionError("slice_channels expects [T,C], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), c = x.dim(1);
  if (begin >= end || end > c) {
    throw IndexError("channel range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") out of range for " + std::to_string(c) + " channels");
  }
  const std::size_t w = end - begin;
  auto out = make_output<T>({rows, w}, {&x});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().begin() + r * c + begin, w, out.data().begin() + r * w);
  record<T>(out, [x, out, rows, c, begin, w] {
    const auto g = out.grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < w; ++j) accumulate(x, r * c + begin + j, g[r * w + j]);
  });
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& x, std::size_t boundary) {
  if (x.rank() != 2) throw DimensionError("split_channels expects [T,C], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(1);
  if (boundary == 0 || boundary >= c) {
    throw IndexError("split boundary " + std::to_string(boundary) + " must lie in (0, " +
                     std::to_string(c) + ")");
  }
  return {slice_channels(x, 0, boundary), slice_channels(x, boundary, c)};
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_channels needs at least one part");
  const std::size_t rows = parts[0].dim(0);
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw DimensionError("concat_channels: part " + shape_str(p.shape()) +
                           " does not share T=" + std::to_string(rows));
    }
    total += p.dim(1);
  }
  auto out = make_output<T>({rows, total}, parts);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().begin() + r * w, w, out.data().begin() + r * total + offset);
    offset += w;
  }
  record<T>(out, [parts, out, rows, total] {
    const auto g = out.grad();
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.dim(1);
      if (p.requires_grad())
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) accumulate(p, r * w + j, g[r * total + off + j]);
      off += w;
    }
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto out = make_output<T>(std::move(shape), {&x});
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  record<T>(out, [x, out] {
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) accumulate(x, i, g[i]);
  });
  return out;
}

// ---- reductions -----------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto out = make_output<T>({1}, {&x});
  T acc = 0;
  for (T v : x.data()) acc += v;
  out.at(0) = acc;
  record<T>(out, [x, out] {
    const T g = out.grad()[0];
    for (std::size_t i = 0; i < x.numel(); ++i) accumulate(x, i, g);
  });
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const Tensor<T>& w) {
  require_same_shape(x, w, "weighted_sum");
  auto out = make_output<T>({1}, {&x, &w});
  T acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x.at(i) * w.at(i);
  out.at(0) = acc;
  record<T>(out, [x, w, out] {
    const T g = out.grad()[0];
    if (x.requires_grad())
      for (std::size_t i = 0; i < x.numel(); ++i) accumulate(x, i, g * w.at(i));
    if (w.requires_grad())
      for (std::size_t i = 0; i < x.numel(); ++i) accumulate(w, i, g * x.at(i));
  });
  return out;
}

// ---- pointwise nonlinearities ---------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto out = make_output<T>(x.shape(), {&x});
  // NaN passes through so bad inputs surface as a non-finite loss.
  for (std::size_t i = 0; i < x.numel(); ++i) out.at(i) = x.at(i) < T(0) ? T(0) : x.at(i);
  record<T>(out, [x, out] {
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x.at(i) > T(0)) accumulate(x, i, g[i]);
  });
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto out = make_output<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < x.numel(); ++i) out.at(i) = T(1) / (T(1) + std::exp(-x.at(i)));
  record<T>(out, [x, out] {
    const auto g = out.grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = out.at(i);
      accumulate(x, i, g[i] * s * (T(1) - s));
    }
  });
  return out;
}

#define MCF_INSTANTIATE(T)                                                                    \
  template class Tensor<T>;                                                                   \
  template class Tape<T>;                                                                     \
  template Tensor<T> make_output<T>(Shape, std::initializer_list<const Tensor<T>*>);         \
  template Tensor<T> make_output<T>(Shape, const std::vector<Tensor<T>>&);                   \
  template void record<T>(const Tensor<T>&, std::function<void()>);                         \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                         \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale<T>(const Tensor<T>&, std::type_identity_t<T>);                    \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, std::type_identity_t<T>);               \
  template Tensor<T> elementwise<T>(ElementwiseOp, const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> expand_channels<T>(const Tensor<T>&, std::size_t);                      \
  template std::pair<Tensor<T>, Tensor<T>> split_channels<T>(const Tensor<T>&, std::size_t); \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, std::size_t, std::size_t);          \
  template Tensor<T> concat_channels<T>(const std::vector<Tensor<T>>&);                      \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                    \
  template Tensor<T> sum<T>(const Tensor<T>&);                                               \
  template Tensor<T> mean<T>(const Tensor<T>&);                                              \
  template Tensor<T> weighted_sum<T>(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> relu<T>(const Tensor<T>&);                                              \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);

MCF_INSTANTIATE(float)
MCF_INSTANTIATE(double)

}  // namespace mcf
