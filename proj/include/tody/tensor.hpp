#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a shared handle to an immutable value (parameters are the one
// exception: the optimizer writes them in place between steps). Operations
// record a backward closure on the thread's active GradientTape whenever a
// tape is active and at least one input requires gradients. Recording order
// is a topological order of the computation, so backward() simply replays the
// tape in reverse.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tody {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first written
  bool requires_grad = false;

  std::vector<T>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  static Tensor from(Shape shape, std::vector<T> data);
  static Tensor scalar(T value) { return from({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int i) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  // In-place access for initialisation and optimizer updates only.
  std::span<T> mutable_data() { return node_->data; }
  T item() const;
  T at(std::initializer_list<std::int64_t> idx) const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
  }
  // Accumulated gradient; zeros if nothing has been accumulated yet.
  std::span<const T> grad() const { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // A new leaf sharing no history with this tensor.
  Tensor detach() const { return from(shape(), node_->data); }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

template <typename T>
class GradientTape {
 public:
  // Becomes the active tape for the calling thread until destroyed.
  GradientTape();
  ~GradientTape();
  GradientTape(const GradientTape&) = delete;
  GradientTape& operator=(const GradientTape&) = delete;

  static GradientTape* current() { return current_; }

  // `output` is the non-leaf node the closure reads its gradient from; its
  // gradient buffer is released once the tape has been replayed.
  void record(std::shared_ptr<TensorNode<T>> output, std::function<void()> backward_fn) {
    entries_.push_back({std::move(output), std::move(backward_fn)});
  }
  std::size_t size() const { return entries_.size(); }

  // Accumulates d(loss)/d(leaf) into every leaf that requires gradients,
  // then clears the tape. `loss` must hold exactly one element.
  void backward(const Tensor<T>& loss);

 private:
  struct Entry {
    std::shared_ptr<TensorNode<T>> output;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  GradientTape* prev_;
  static inline thread_local GradientTape* current_ = nullptr;
  template <typename U>
  friend class NoGrad;
};

// Suspends recording for the enclosing scope.
template <typename T>
class NoGrad {
 public:
  NoGrad();
  ~NoGrad();
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  GradientTape<T>* saved_;
};

// Boolean mask; 1 = admissible.
using Mask = std::vector<unsigned char>;

namespace ops {

// x[..., k] * w[k, n] -> [..., n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w);
// a[B, m, k] * b[B, k, n] -> [B, m, n]; with transpose_b, b is [B, n, k].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b);

// Elementwise with suffix broadcasting: b's shape must equal a trailing
// sub-shape of a's shape.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s);
// x[R, C] scaled row-wise by w[R].
template <typename T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& w);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> sin(const Tensor<T>& x);

// Concatenate along the last axis (leading shapes must agree).
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts);
// Concatenate along axis 0 (trailing shapes must agree).
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t begin, std::int64_t end);
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// out[i] = x[idx[i]] along axis 0; idx -1 yields a zero row.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::int64_t> idx);
// out[idx[i]] += x[i]; rows accumulate in ascending i.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& x, std::span<const std::int64_t> idx, std::int64_t rows);
// Row sums over contiguous segments: out[s] = sum x[offsets[s] .. offsets[s+1]).
template <typename T>
Tensor<T> segment_sum(const Tensor<T>& x, std::span<const std::int64_t> offsets);
// Row max over contiguous segments; empty segments give zeros.
template <typename T>
Tensor<T> segment_max(const Tensor<T>& x, std::span<const std::int64_t> offsets);
// Softmax of a vector x[E] within contiguous segments.
template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& x, std::span<const std::int64_t> offsets);

// Reductions over the last axis (removes it; a rank-1 input gives shape {1}).
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x);
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x);
template <typename T>
Tensor<T> reduce_max(const Tensor<T>& x);
template <typename T>
Tensor<T> sum_all(const Tensor<T>& x);
template <typename T>
Tensor<T> mean_all(const Tensor<T>& x);

// Softmax over the last axis restricted to mask != 0 entries; fully masked
// rows produce zeros.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const Mask& mask);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

// Mean binary cross-entropy of probabilities p against labels y in {0,1};
// p is clamped to [eps, 1-eps] (gradient is zero where the clamp is active).
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, std::span<const T> y, T eps = T(1e-7));
// Mean of -log softmax(logits[i])[labels[i]] over rows.
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace ops

}  // namespace tody
