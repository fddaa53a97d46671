#include "tody/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "tody/errors.hpp"
#include "tody/kernels.hpp"

namespace tody {

std::string shape_str(const Shape& s) {
  std::ostringstream o;
  o << '[';
  for (std::size_t i = 0; i < s.size(); ++i) o << (i ? ", " : "") << s[i];
  o << ']';
  return o.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  auto node = std::make_shared<TensorNode<T>>();
  node->data.assign(static_cast<std::size_t>(shape_numel(shape)), value);
  node->shape = std::move(shape);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("buffer of " + std::to_string(data.size()) + " values does not fill shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<TensorNode<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  return Tensor(std::move(node));
}

template <typename T>
std::int64_t Tensor<T>::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("axis " + std::to_string(i) + " out of range for " + shape_str(shape()));
  return node_->shape[static_cast<std::size_t>(i)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> idx) const {
  if (idx.size() != node_->shape.size()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::int64_t off = 0;
  std::size_t a = 0;
  for (std::int64_t i : idx) {
    const std::int64_t d = node_->shape[a++];
    if (i < 0 || i >= d) throw ShapeError("index out of range for " + shape_str(shape()));
    off = off * d + i;
  }
  return node_->data[static_cast<std::size_t>(off)];
}

template <typename T>
GradientTape<T>::GradientTape() : prev_(current_) {
  current_ = this;
}

template <typename T>
GradientTape<T>::~GradientTape() {
  current_ = prev_;
}

template <typename T>
void GradientTape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  if (loss.requires_grad()) {
    loss.node()->grad_buffer()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output->grad.empty()) it->backward();
    }
  }
  for (auto& e : entries_) {
    std::vector<T>().swap(e.output->grad);
  }
  entries_.clear();
}

template <typename T>
NoGrad<T>::NoGrad() : saved_(GradientTape<T>::current_) {
  GradientTape<T>::current_ = nullptr;
}

template <typename T>
NoGrad<T>::~NoGrad() {
  GradientTape<T>::current_ = saved_;
}

namespace ops {

namespace {

using kernels::Index;

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (GradientTape<T>::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
Tensor<T> make(Shape shape, std::vector<T> data, bool track) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(data));
  if (track) out.set_requires_grad(true);
  return out;
}

template <typename T>
void record(const Tensor<T>& out, std::function<void()> fn) {
  GradientTape<T>::current()->record(out.node(), std::move(fn));
}

template <typename T>
void require(bool ok, const std::string& op, const Tensor<T>& a, const Tensor<T>& b) {
  if (!ok) throw ShapeError(op + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

template <typename T>
void require_defined(const Tensor<T>& a, const char* op) {
  if (!a.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// True when `suffix` equals the trailing dimensions of `full`.
bool is_suffix(const Shape& full, const Shape& suffix) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

template <typename T>
Index last_dim(const Tensor<T>& x) {
  return x.rank() == 0 ? 1 : x.shape().back();
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
  require_defined(x, "matmul");
  require_defined(w, "matmul");
  require(w.rank() == 2 && x.rank() >= 1 && last_dim(x) == w.dim(0), "matmul", x, w);
  const Index k = w.dim(0);
  const Index n = w.dim(1);
  const Index rows = k == 0 ? shape_numel(Shape(x.shape().begin(), x.shape().end() - 1)) : x.numel() / k;
  Shape os = x.shape();
  os.back() = n;
  std::vector<T> out(static_cast<std::size_t>(rows * n));
  kernels::omp::gemm_nn(x.data().data(), w.data().data(), out.data(), rows, k, n, false);
  const bool track = recording({&x, &w});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), wn = w.node(), yn = y.node(), rows, k, n] {
      const T* dy = yn->grad.data();
      if (xn->requires_grad) {
        kernels::omp::gemm_nt(dy, wn->data.data(), xn->grad_buffer().data(), rows, n, k, true);
      }
      if (wn->requires_grad) {
        kernels::omp::gemm_tn(xn->data.data(), dy, wn->grad_buffer().data(), rows, k, n, true);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require_defined(a, "bmm");
  require_defined(b, "bmm");
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0), "bmm", a, b);
  const Index batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const Index n = transpose_b ? b.dim(1) : b.dim(2);
  require((transpose_b ? b.dim(2) : b.dim(1)) == k, "bmm", a, b);
  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  T* od = out.data();
#pragma omp parallel for schedule(static) if (batch * m * n * k > (1 << 15))
  for (Index i = 0; i < batch; ++i) {
    if (transpose_b) {
      kernels::omp::gemm_nt(ad + i * m * k, bd + i * n * k, od + i * m * n, m, k, n, false);
    } else {
      kernels::omp::gemm_nn(ad + i * m * k, bd + i * k * n, od + i * m * n, m, k, n, false);
    }
  }
  const bool track = recording({&a, &b});
  Tensor<T> y = make(Shape{batch, m, n}, std::move(out), track);
  if (track) {
    record(y, [an = a.node(), bn = b.node(), yn = y.node(), batch, m, k, n, transpose_b] {
      const T* dy = yn->grad.data();
      T* da = an->requires_grad ? an->grad_buffer().data() : nullptr;
      T* db = bn->requires_grad ? bn->grad_buffer().data() : nullptr;
      const T* av = an->data.data();
      const T* bv = bn->data.data();
#pragma omp parallel for schedule(static) if (batch * m * n * k > (1 << 15))
      for (Index i = 0; i < batch; ++i) {
        const T* g = dy + i * m * n;
        if (transpose_b) {
          if (da) kernels::omp::gemm_nn(g, bv + i * n * k, da + i * m * k, m, n, k, true);
          if (db) kernels::omp::gemm_tn(g, av + i * m * k, db + i * n * k, m, n, k, true);
        } else {
          if (da) kernels::omp::gemm_nt(g, bv + i * k * n, da + i * m * k, m, n, k, true);
          if (db) kernels::omp::gemm_tn(av + i * m * k, g, db + i * k * n, m, k, n, true);
        }
      }
    });
  }
  return y;
}

namespace {

enum class Binary { kAdd, kSub, kMul };

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, Binary kind, const char* name) {
  require_defined(a, name);
  require_defined(b, name);
  require(is_suffix(a.shape(), b.shape()), name, a, b);
  const Index na = a.numel();
  const Index nb = b.numel();
  std::vector<T> out(static_cast<std::size_t>(na));
  const T* av = a.data().data();
  const T* bv = b.data().data();
  if (nb > 0) {
    for (Index r = 0; r < na / nb; ++r) {
      const T* ar = av + r * nb;
      T* orow = out.data() + r * nb;
      switch (kind) {
        case Binary::kAdd:
          for (Index j = 0; j < nb; ++j) orow[j] = ar[j] + bv[j];
          break;
        case Binary::kSub:
          for (Index j = 0; j < nb; ++j) orow[j] = ar[j] - bv[j];
          break;
        case Binary::kMul:
          for (Index j = 0; j < nb; ++j) orow[j] = ar[j] * bv[j];
          break;
      }
    }
  }
  const bool track = recording({&a, &b});
  Tensor<T> y = make(a.shape(), std::move(out), track);
  if (track) {
    record(y, [an = a.node(), bn = b.node(), yn = y.node(), na, nb, kind] {
      if (nb == 0) return;
      const T* dy = yn->grad.data();
      if (an->requires_grad) {
        T* da = an->grad_buffer().data();
        const T* bv2 = bn->data.data();
        for (Index i = 0; i < na; ++i) da[i] += kind == Binary::kMul ? dy[i] * bv2[i % nb] : dy[i];
      }
      if (bn->requires_grad) {
        T* db = bn->grad_buffer().data();
        const T* av2 = an->data.data();
        for (Index r = 0; r < na / nb; ++r) {
          for (Index j = 0; j < nb; ++j) {
            const Index i = r * nb + j;
            switch (kind) {
              case Binary::kAdd: db[j] += dy[i]; break;
              case Binary::kSub: db[j] -= dy[i]; break;
              case Binary::kMul: db[j] += dy[i] * av2[i]; break;
            }
          }
        }
      }
    });
  }
  return y;
}

// Elementwise unary op: f gives the value, df(x, y) the local derivative.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  require_defined(x, "unary");
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const bool track = recording({&x});
  Tensor<T> y = make(x.shape(), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), df] {
      const T* dy = yn->grad.data();
      T* dx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < xn->data.size(); ++i) dx[i] += dy[i] * df(xn->data[i], yn->data[i]);
    });
  }
  return y;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kAdd, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kSub, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(a, b, Binary::kMul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary(a, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary(a, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_rows(const Tensor<T>& x, const Tensor<T>& w) {
  require_defined(x, "mul_rows");
  require_defined(w, "mul_rows");
  require(x.rank() >= 1 && w.numel() == x.dim(0), "mul_rows", x, w);
  const Index rows = x.dim(0);
  const Index cols = rows ? x.numel() / rows : 0;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) out[static_cast<std::size_t>(r * cols + c)] = xv[r * cols + c] * wv[r];
  }
  const bool track = recording({&x, &w});
  Tensor<T> y = make(x.shape(), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), wn = w.node(), yn = y.node(), rows, cols] {
      const T* dy = yn->grad.data();
      if (xn->requires_grad) {
        T* dx = xn->grad_buffer().data();
        for (Index r = 0; r < rows; ++r) {
          for (Index c = 0; c < cols; ++c) dx[r * cols + c] += dy[r * cols + c] * wn->data[static_cast<std::size_t>(r)];
        }
      }
      if (wn->requires_grad) {
        T* dw = wn->grad_buffer().data();
        for (Index r = 0; r < rows; ++r) {
          T s = 0;
          for (Index c = 0; c < cols; ++c) s += dy[r * cols + c] * xn->data[static_cast<std::size_t>(r * cols + c)];
          dw[r] += s;
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(
      x,
      [](T v) {
        // Branches keep exp() from overflowing for large |v|.
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> sin(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::sin(v); }, [](T v, T) { return std::cos(v); });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    require_defined(p, "concat");
    require(p.rank() >= 1 && Shape(p.shape().begin(), p.shape().end() - 1) == lead, "concat", parts[0], p);
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  const Index rows = shape_numel(lead);
  std::vector<T> out(static_cast<std::size_t>(rows * total));
  Index off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const T* src = parts[i].data().data();
    for (Index r = 0; r < rows; ++r) {
      std::copy_n(src + r * widths[i], widths[i], out.data() + r * total + off);
    }
    off += widths[i];
  }
  Shape os = lead;
  os.push_back(total);
  bool track = false;
  for (const auto& p : parts) track = track || recording({&p});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    record(y, [nodes, widths, yn = y.node(), rows, total] {
      const T* dy = yn->grad.data();
      Index o = 0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (nodes[i]->requires_grad) {
          T* dx = nodes[i]->grad_buffer().data();
          for (Index r = 0; r < rows; ++r) {
            for (Index c = 0; c < widths[i]; ++c) dx[r * widths[i] + c] += dy[r * total + o + c];
          }
        }
        o += widths[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of zero tensors");
  Shape trail(parts[0].shape().begin() + 1, parts[0].shape().end());
  Index rows = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    require(p.rank() >= 1 && Shape(p.shape().begin() + 1, p.shape().end()) == trail, "concat_rows", parts[0], p);
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Shape os{rows};
  os.insert(os.end(), trail.begin(), trail.end());
  bool track = false;
  for (const auto& p : parts) track = track || recording({&p});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    std::vector<std::shared_ptr<TensorNode<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    record(y, [nodes, yn = y.node()] {
      const T* dy = yn->grad.data();
      std::size_t off = 0;
      for (const auto& n : nodes) {
        if (n->requires_grad) {
          T* dx = n->grad_buffer().data();
          for (std::size_t i = 0; i < n->data.size(); ++i) dx[i] += dy[off + i];
        }
        off += n->data.size();
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t begin, std::int64_t end) {
  require_defined(x, "slice_cols");
  const Index cols = last_dim(x);
  if (begin < 0 || end > cols || begin > end) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + shape_str(x.shape()));
  }
  const Index rows = cols ? x.numel() / cols : 0;
  const Index w = end - begin;
  std::vector<T> out(static_cast<std::size_t>(rows * w));
  for (Index r = 0; r < rows; ++r) std::copy_n(x.data().data() + r * cols + begin, w, out.data() + r * w);
  Shape os = x.shape();
  os.back() = w;
  const bool track = recording({&x});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), rows, cols, begin, w] {
      const T* dy = yn->grad.data();
      T* dx = xn->grad_buffer().data();
      for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < w; ++c) dx[r * cols + begin + c] += dy[r * w + c];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require_defined(x, "reshape");
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  const bool track = recording({&x});
  Tensor<T> y = make(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node()] {
      T* dx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < yn->grad.size(); ++i) dx[i] += yn->grad[i];
    });
  }
  return y;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::int64_t> idx) {
  require_defined(x, "gather_rows");
  if (x.rank() < 1) throw ShapeError("gather_rows on scalar");
  const Index rows = x.dim(0);
  const Index cols = rows ? x.numel() / rows : shape_numel(Shape(x.shape().begin() + 1, x.shape().end()));
  const Index n = static_cast<Index>(idx.size());
  for (std::int64_t i : idx) {
    if (i < -1 || i >= rows) throw ShapeError("gather_rows index " + std::to_string(i) + " out of range for " + shape_str(x.shape()));
  }
  std::vector<T> out(static_cast<std::size_t>(n * cols), T(0));
  const T* xv = x.data().data();
#pragma omp parallel for schedule(static) if (n * cols > (1 << 16))
  for (Index i = 0; i < n; ++i) {
    if (idx[static_cast<std::size_t>(i)] >= 0) std::copy_n(xv + idx[static_cast<std::size_t>(i)] * cols, cols, out.data() + i * cols);
  }
  Shape os = x.shape();
  os[0] = n;
  const bool track = recording({&x});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), ix = std::vector<std::int64_t>(idx.begin(), idx.end()), cols] {
      const T* dy = yn->grad.data();
      T* dx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < ix.size(); ++i) {
        if (ix[i] < 0) continue;
        T* d = dx + ix[i] * cols;
        const T* g = dy + static_cast<Index>(i) * cols;
        for (Index c = 0; c < cols; ++c) d[c] += g[c];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& x, std::span<const std::int64_t> idx, std::int64_t rows) {
  require_defined(x, "scatter_rows");
  if (x.rank() < 1 || x.dim(0) != static_cast<Index>(idx.size())) {
    throw ShapeError("scatter_rows: " + std::to_string(idx.size()) + " indices for " + shape_str(x.shape()));
  }
  const Index n = x.dim(0);
  const Index cols = shape_numel(Shape(x.shape().begin() + 1, x.shape().end()));
  std::vector<T> out(static_cast<std::size_t>(rows * cols), T(0));
  const T* xv = x.data().data();
  for (Index i = 0; i < n; ++i) {
    const std::int64_t r = idx[static_cast<std::size_t>(i)];
    if (r < 0) continue;
    if (r >= rows) throw ShapeError("scatter_rows index " + std::to_string(r) + " >= " + std::to_string(rows));
    for (Index c = 0; c < cols; ++c) out[static_cast<std::size_t>(r * cols + c)] += xv[i * cols + c];
  }
  Shape os = x.shape();
  os[0] = rows;
  const bool track = recording({&x});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), ix = std::vector<std::int64_t>(idx.begin(), idx.end()), cols] {
      const T* dy = yn->grad.data();
      T* dx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < ix.size(); ++i) {
        if (ix[i] < 0) continue;
        for (Index c = 0; c < cols; ++c) dx[static_cast<Index>(i) * cols + c] += dy[ix[i] * cols + c];
      }
    });
  }
  return y;
}

namespace {

template <typename T>
void check_offsets(const Tensor<T>& x, std::span<const std::int64_t> offsets, const char* op) {
  if (offsets.empty() || offsets.front() != 0 || x.rank() < 1 || offsets.back() != x.dim(0) ||
      !std::is_sorted(offsets.begin(), offsets.end())) {
    throw ShapeError(std::string(op) + ": offsets do not partition the rows of " + shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> segment_sum(const Tensor<T>& x, std::span<const std::int64_t> offsets) {
  require_defined(x, "segment_sum");
  check_offsets(x, offsets, "segment_sum");
  const Index segs = static_cast<Index>(offsets.size()) - 1;
  const Index cols = shape_numel(Shape(x.shape().begin() + 1, x.shape().end()));
  std::vector<T> out(static_cast<std::size_t>(segs * cols), T(0));
  const T* xv = x.data().data();
#pragma omp parallel for schedule(static) if (x.numel() > (1 << 16))
  for (Index s = 0; s < segs; ++s) {
    T* o = out.data() + s * cols;
    for (Index r = offsets[static_cast<std::size_t>(s)]; r < offsets[static_cast<std::size_t>(s) + 1]; ++r) {
      for (Index c = 0; c < cols; ++c) o[c] += xv[r * cols + c];
    }
  }
  Shape os = x.shape();
  os[0] = segs;
  const bool track = recording({&x});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), off = std::vector<std::int64_t>(offsets.begin(), offsets.end()), segs, cols] {
      const T* dy = yn->grad.data();
      T* dx = xn->grad_buffer().data();
      for (Index s = 0; s < segs; ++s) {
        for (Index r = off[static_cast<std::size_t>(s)]; r < off[static_cast<std::size_t>(s) + 1]; ++r) {
          for (Index c = 0; c < cols; ++c) dx[r * cols + c] += dy[s * cols + c];
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> segment_max(const Tensor<T>& x, std::span<const std::int64_t> offsets) {
  require_defined(x, "segment_max");
  check_offsets(x, offsets, "segment_max");
  const Index segs = static_cast<Index>(offsets.size()) - 1;
  const Index cols = shape_numel(Shape(x.shape().begin() + 1, x.shape().end()));
  std::vector<T> out(static_cast<std::size_t>(segs * cols), T(0));
  std::vector<Index> arg(static_cast<std::size_t>(segs * cols), -1);
  const T* xv = x.data().data();
  for (Index s = 0; s < segs; ++s) {
    for (Index c = 0; c < cols; ++c) {
      Index best = -1;
      for (Index r = offsets[static_cast<std::size_t>(s)]; r < offsets[static_cast<std::size_t>(s) + 1]; ++r) {
        if (best < 0 || xv[r * cols + c] > xv[best * cols + c]) best = r;
      }
      arg[static_cast<std::size_t>(s * cols + c)] = best;
      if (best >= 0) out[static_cast<std::size_t>(s * cols + c)] = xv[best * cols + c];
    }
  }
  Shape os = x.shape();
  os[0] = segs;
  const bool track = recording({&x});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), arg = std::move(arg), cols] {
      const T* dy = yn->grad.data();
      T* dx = xn->grad_buffer().data();
      for (std::size_t i = 0; i < arg.size(); ++i) {
        if (arg[i] >= 0) dx[arg[i] * cols + static_cast<Index>(i) % cols] += dy[i];
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> segment_softmax(const Tensor<T>& x, std::span<const std::int64_t> offsets) {
  require_defined(x, "segment_softmax");
  check_offsets(x, offsets, "segment_softmax");
  if (x.numel() != x.dim(0)) throw ShapeError("segment_softmax expects a vector, got " + shape_str(x.shape()));
  const Index segs = static_cast<Index>(offsets.size()) - 1;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* xv = x.data().data();
  for (Index s = 0; s < segs; ++s) {
    const Index lo = offsets[static_cast<std::size_t>(s)], hi = offsets[static_cast<std::size_t>(s) + 1];
    if (lo == hi) continue;
    T mx = xv[lo];
    for (Index r = lo + 1; r < hi; ++r) mx = std::max(mx, xv[r]);
    T z = 0;
    for (Index r = lo; r < hi; ++r) {
      out[static_cast<std::size_t>(r)] = std::exp(xv[r] - mx);
      z += out[static_cast<std::size_t>(r)];
    }
    for (Index r = lo; r < hi; ++r) out[static_cast<std::size_t>(r)] /= z;
  }
  const bool track = recording({&x});
  Tensor<T> y = make(x.shape(), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), off = std::vector<std::int64_t>(offsets.begin(), offsets.end()), segs] {
      const T* dy = yn->grad.data();
      const T* yv = yn->data.data();
      T* dx = xn->grad_buffer().data();
      for (Index s = 0; s < segs; ++s) {
        const Index lo = off[static_cast<std::size_t>(s)], hi = off[static_cast<std::size_t>(s) + 1];
        T dot = 0;
        for (Index r = lo; r < hi; ++r) dot += yv[r] * dy[r];
        for (Index r = lo; r < hi; ++r) dx[r] += yv[r] * (dy[r] - dot);
      }
    });
  }
  return y;
}

namespace {

enum class Reduce { kSum, kMean, kMax };

template <typename T>
Tensor<T> reduce_last(const Tensor<T>& x, Reduce kind) {
  require_defined(x, "reduce");
  const Index cols = last_dim(x);
  if (kind == Reduce::kMax && cols == 0) throw ShapeError("reduce_max over empty axis");
  const Index rows = cols ? x.numel() / cols : shape_numel(Shape(x.shape().begin(), x.shape().end() - 1));
  std::vector<T> out(static_cast<std::size_t>(rows));
  std::vector<Index> arg(kind == Reduce::kMax ? static_cast<std::size_t>(rows) : 0);
  const T* xv = x.data().data();
  for (Index r = 0; r < rows; ++r) {
    const T* xr = xv + r * cols;
    if (kind == Reduce::kMax) {
      Index best = 0;
      for (Index c = 1; c < cols; ++c) {
        if (xr[c] > xr[best]) best = c;
      }
      arg[static_cast<std::size_t>(r)] = best;
      out[static_cast<std::size_t>(r)] = xr[best];
    } else {
      T s = 0;
      for (Index c = 0; c < cols; ++c) s += xr[c];
      out[static_cast<std::size_t>(r)] = kind == Reduce::kMean ? s / static_cast<T>(cols) : s;
    }
  }
  Shape os(x.shape().begin(), x.shape().end() - 1);
  if (os.empty()) os = {1};
  const bool track = recording({&x});
  Tensor<T> y = make(std::move(os), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), rows, cols, kind, arg = std::move(arg)] {
      const T* dy = yn->grad.data();
      T* dx = xn->grad_buffer().data();
      for (Index r = 0; r < rows; ++r) {
        if (kind == Reduce::kMax) {
          dx[r * cols + arg[static_cast<std::size_t>(r)]] += dy[r];
        } else {
          const T g = kind == Reduce::kMean ? dy[r] / static_cast<T>(cols) : dy[r];
          for (Index c = 0; c < cols; ++c) dx[r * cols + c] += g;
        }
      }
    });
  }
  return y;
}

}  // namespace

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
  return reduce_last(x, Reduce::kSum);
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
  return reduce_last(x, Reduce::kMean);
}

template <typename T>
Tensor<T> reduce_max(const Tensor<T>& x) {
  return reduce_last(x, Reduce::kMax);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  return reduce_sum(reshape(x, Shape{x.numel()}));
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return reduce_mean(reshape(x, Shape{x.numel()}));
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const Mask& mask) {
  require_defined(x, "masked_softmax");
  if (static_cast<Index>(mask.size()) != x.numel()) {
    throw ShapeError("masked_softmax: mask of " + std::to_string(mask.size()) + " entries for " + shape_str(x.shape()));
  }
  const Index cols = last_dim(x);
  const Index rows = cols ? x.numel() / cols : 0;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  kernels::omp::masked_softmax_rows(x.data().data(), mask.data(), out.data(), rows, cols);
  const bool track = recording({&x});
  Tensor<T> y = make(x.shape(), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), yn = y.node(), rows, cols] {
      const T* dy = yn->grad.data();
      const T* yv = yn->data.data();
      T* dx = xn->grad_buffer().data();
#pragma omp parallel for schedule(static) if (rows * cols > (1 << 15))
      for (Index r = 0; r < rows; ++r) {
        T dot = 0;
        for (Index c = 0; c < cols; ++c) dot += yv[r * cols + c] * dy[r * cols + c];
        for (Index c = 0; c < cols; ++c) dx[r * cols + c] += yv[r * cols + c] * (dy[r * cols + c] - dot);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_defined(x, "layer_norm");
  const Index cols = last_dim(x);
  require(gain.numel() == cols && bias.numel() == cols, "layer_norm", x, gain);
  const Index rows = cols ? x.numel() / cols : 0;
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  std::vector<T> xhat(out.size());
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  kernels::omp::layer_norm_rows(x.data().data(), gain.data().data(), bias.data().data(), out.data(), xhat.data(),
                                inv_std.data(), rows, cols, eps);
  const bool track = recording({&x, &gain, &bias});
  Tensor<T> y = make(x.shape(), std::move(out), track);
  if (track) {
    record(y, [xn = x.node(), gn = gain.node(), bn = bias.node(), yn = y.node(), xhat = std::move(xhat),
               inv_std = std::move(inv_std), rows, cols] {
      const T* dy = yn->grad.data();
      const T* g = gn->data.data();
      if (xn->requires_grad) {
        T* dx = xn->grad_buffer().data();
#pragma omp parallel for schedule(static) if (rows * cols > (1 << 15))
        for (Index r = 0; r < rows; ++r) {
          T sum_d = 0, sum_dx = 0;
          for (Index c = 0; c < cols; ++c) {
            const T d = dy[r * cols + c] * g[c];
            sum_d += d;
            sum_dx += d * xhat[static_cast<std::size_t>(r * cols + c)];
          }
          const T n = static_cast<T>(cols);
          for (Index c = 0; c < cols; ++c) {
            const T d = dy[r * cols + c] * g[c];
            dx[r * cols + c] +=
                inv_std[static_cast<std::size_t>(r)] / n * (n * d - sum_d - xhat[static_cast<std::size_t>(r * cols + c)] * sum_dx);
          }
        }
      }
      if (gn->requires_grad) {
        T* dg = gn->grad_buffer().data();
        for (Index r = 0; r < rows; ++r) {
          for (Index c = 0; c < cols; ++c) dg[c] += dy[r * cols + c] * xhat[static_cast<std::size_t>(r * cols + c)];
        }
      }
      if (bn->requires_grad) {
        T* db = bn->grad_buffer().data();
        for (Index r = 0; r < rows; ++r) {
          for (Index c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, std::span<const T> y, T eps) {
  require_defined(p, "bce_loss");
  const Index n = p.numel();
  if (static_cast<Index>(y.size()) != n || n == 0) {
    throw ShapeError("bce_loss: " + std::to_string(y.size()) + " labels for " + shape_str(p.shape()));
  }
  const T* pv = p.data().data();
  T total = 0;
  for (Index i = 0; i < n; ++i) {
    const T pc = std::clamp(pv[i], eps, T(1) - eps);
    const T yi = y[static_cast<std::size_t>(i)];
    total += -(yi * std::log(pc) + (T(1) - yi) * std::log(T(1) - pc));
  }
  const bool track = recording({&p});
  Tensor<T> out = make(Shape{1}, std::vector<T>{total / static_cast<T>(n)}, track);
  if (track) {
    record(out, [pn = p.node(), on = out.node(), labels = std::vector<T>(y.begin(), y.end()), n, eps] {
      const T g = on->grad[0] / static_cast<T>(n);
      T* dp = pn->grad_buffer().data();
      for (Index i = 0; i < n; ++i) {
        const T pi = pn->data[static_cast<std::size_t>(i)];
        if (pi < eps || pi > T(1) - eps) continue;
        const T yi = labels[static_cast<std::size_t>(i)];
        dp[i] += g * (-(yi / pi) + (T(1) - yi) / (T(1) - pi));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, std::span<const int> labels) {
  require_defined(logits, "ce_loss");
  if (logits.rank() != 2 || logits.dim(0) != static_cast<Index>(labels.size()) || labels.empty()) {
    throw ShapeError("ce_loss: " + std::to_string(labels.size()) + " labels for logits " + shape_str(logits.shape()));
  }
  const Index rows = logits.dim(0), cols = logits.dim(1);
  for (int l : labels) {
    if (l < 0 || l >= cols) throw ContractError("ce_loss: class index " + std::to_string(l) + " outside [0, " + std::to_string(cols) + ")");
  }
  const T* xv = logits.data().data();
  std::vector<T> probs(static_cast<std::size_t>(rows * cols));
  T total = 0;
  for (Index r = 0; r < rows; ++r) {
    const T* xr = xv + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T z = 0;
    for (Index c = 0; c < cols; ++c) z += std::exp(xr[c] - mx);
    const T lse = mx + std::log(z);
    for (Index c = 0; c < cols; ++c) probs[static_cast<std::size_t>(r * cols + c)] = std::exp(xr[c] - lse);
    total += lse - xr[labels[static_cast<std::size_t>(r)]];
  }
  const bool track = recording({&logits});
  Tensor<T> out = make(Shape{1}, std::vector<T>{total / static_cast<T>(rows)}, track);
  if (track) {
    record(out, [xn = logits.node(), on = out.node(), probs = std::move(probs),
                 lab = std::vector<int>(labels.begin(), labels.end()), rows, cols] {
      const T g = on->grad[0] / static_cast<T>(rows);
      T* dx = xn->grad_buffer().data();
      for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
          const T onehot = c == lab[static_cast<std::size_t>(r)] ? T(1) : T(0);
          dx[r * cols + c] += g * (probs[static_cast<std::size_t>(r * cols + c)] - onehot);
        }
      }
    });
  }
  return out;
}

}  // namespace ops

#define TODY_INSTANTIATE_TENSOR(T)                                                                    \
  template class Tensor<T>;                                                                           \
  template class GradientTape<T>;                                                                     \
  template class NoGrad<T>;                                                                           \
  template Tensor<T> ops::matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> ops::bmm(const Tensor<T>&, const Tensor<T>&, bool);                              \
  template Tensor<T> ops::add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> ops::sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> ops::mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> ops::scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> ops::add_scalar(const Tensor<T>&, T);                                            \
  template Tensor<T> ops::mul_rows(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> ops::relu(const Tensor<T>&);                                                     \
  template Tensor<T> ops::exp(const Tensor<T>&);                                                      \
  template Tensor<T> ops::log(const Tensor<T>&);                                                      \
  template Tensor<T> ops::sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> ops::sin(const Tensor<T>&);                                                      \
  template Tensor<T> ops::concat(const std::vector<Tensor<T>>&);                                      \
  template Tensor<T> ops::concat_rows(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> ops::slice_cols(const Tensor<T>&, std::int64_t, std::int64_t);                   \
  template Tensor<T> ops::reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> ops::gather_rows(const Tensor<T>&, std::span<const std::int64_t>);               \
  template Tensor<T> ops::scatter_rows(const Tensor<T>&, std::span<const std::int64_t>, std::int64_t); \
  template Tensor<T> ops::segment_sum(const Tensor<T>&, std::span<const std::int64_t>);               \
  template Tensor<T> ops::segment_max(const Tensor<T>&, std::span<const std::int64_t>);               \
  template Tensor<T> ops::segment_softmax(const Tensor<T>&, std::span<const std::int64_t>);           \
  template Tensor<T> ops::reduce_sum(const Tensor<T>&);                                               \
  template Tensor<T> ops::reduce_mean(const Tensor<T>&);                                              \
  template Tensor<T> ops::reduce_max(const Tensor<T>&);                                               \
  template Tensor<T> ops::sum_all(const Tensor<T>&);                                                  \
  template Tensor<T> ops::mean_all(const Tensor<T>&);                                                 \
  template Tensor<T> ops::masked_softmax(const Tensor<T>&, const Mask&);                              \
  template Tensor<T> ops::layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> ops::bce_loss(const Tensor<T>&, std::span<const T>, T);                          \
  template Tensor<T> ops::ce_loss(const Tensor<T>&, std::span<const int>);

TODY_INSTANTIATE_TENSOR(float)
TODY_INSTANTIATE_TENSOR(double)

}  // namespace tody
