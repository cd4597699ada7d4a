#pragma once

// Dense 64-bit tensors and a tape-based reverse-mode differentiator.
//
// Every tensor is stored row-major. Rank 0 and rank 1 tensors are treated as
// a single row by the 2-D operations, so a length-d vector and a 1 x d matrix
// are interchangeable as operands.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dimo {

using Shape = std::vector<std::size_t>;

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_dims();
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double value) { return Tensor(Shape{}, {value}); }

  static Tensor vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(data));
  }

  static Tensor zeros(std::size_t rows, std::size_t cols) {
    return Tensor(Shape{rows, cols});
  }

  static Tensor identity(std::size_t n) {
    Tensor t = zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  std::size_t rows() const {
    if (shape_.size() < 2) return 1;
    return shape_[0];
  }
  std::size_t cols() const {
    if (shape_.empty()) return 1;
    return shape_.back();
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool value) { requires_grad_ = value; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  double item() const {
    if (data_.size() != 1) {
      throw ShapeError("item() on non-scalar tensor of shape " + shape_string(shape_));
    }
    return data_[0];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
};

// ---------------------------------------------------------------------------
// Plain (non-differentiable) helpers used by inference paths and oracles.

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::zeros(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += av * b(p, j);
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  Tensor out = Tensor::zeros(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline constexpr double kCosineFloor = 1e-12;

/// Cosine similarity with the denominator floored at 1e-12.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine length mismatch: [" + std::to_string(a.size()) + "] vs [" +
                     std::to_string(b.size()) + "]");
  }
  return dot(a, b) / std::max(norm(a) * norm(b), kCosineFloor);
}

// ---------------------------------------------------------------------------
// Reverse-mode tape.

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const { return value().item(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// What a second backward() on the same tape does.
enum class BackwardPolicy { reject, accumulate };

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(BackwardPolicy policy = BackwardPolicy::reject) : policy_(policy) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  Var leaf(Tensor value) { return push(std::move(value), true, {}); }

  /// Records the result of an operation. The node requires a gradient iff any
  /// parent does; otherwise the backward function is dropped.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) {
      if (&p.tape() != this) throw std::logic_error("operands recorded on different tapes");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
    bool needs = false;
    for (const Var& p : parents) {
      if (&p.tape() != this) throw std::logic_error("operands recorded on different tapes");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  /// Gradient of the last backward() loss w.r.t. node `id`; zeros if the node
  /// was unreachable.
  const Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  /// Accumulation slot for a parent's gradient, or nullptr when the parent
  /// does not require one.
  Tensor* grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return &n.grad;
  }

  void backward(const Var& loss) {
    if (&loss.tape() != this) throw std::logic_error("loss recorded on a different tape");
    const Tensor& lv = nodes_[loss.id()].value;
    if (lv.size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(lv.shape()));
    }
    if (backward_done_ && policy_ == BackwardPolicy::reject) {
      throw std::logic_error("backward() already ran on this tape; reset_grads() first");
    }
    // Intermediate gradients never carry over; leaf gradients accumulate
    // under BackwardPolicy::accumulate.
    for (Node& n : nodes_) {
      if (n.backward) n.grad = Tensor();
    }
    backward_done_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    Tensor seed(lv.shape(), 1.0);
    Tensor* slot = grad_slot(loss.id());
    for (std::size_t i = 0; i < slot->size(); ++i) (*slot)[i] += seed[i];
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      // The closure may append to nothing; nodes_ does not grow during backward.
      n.backward(*this, n.grad);
    }
  }

  void reset_grads() {
    for (Node& n : nodes_) n.grad = Tensor();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }
  BackwardPolicy policy() const { return policy_; }

  /// Drops every node recorded after `mark` (a previous size()). Vars that
  /// refer to dropped nodes become dangling.
  void rewind(std::size_t mark) {
    if (mark < nodes_.size()) nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(mark), nodes_.end());
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    value.set_requires_grad(requires_grad);
    nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  BackwardPolicy policy_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

// ---------------------------------------------------------------------------
// Differentiable operations.

namespace detail {

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

inline void add_into(Tensor* dst, const Tensor& src, double scale = 1.0) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

inline Tensor like(const Tensor& t, std::vector<double> data) {
  return Tensor(t.shape(), std::move(data));
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_same_shape("add", av, bv);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(detail::like(av, std::move(out)), {a, b},
                         [ia, ib](Tape& t, const Tensor& g) {
                           detail::add_into(t.grad_slot(ia), g);
                           detail::add_into(t.grad_slot(ib), g);
                         });
}

inline Var sub(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_same_shape("sub", av, bv);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(detail::like(av, std::move(out)), {a, b},
                         [ia, ib](Tape& t, const Tensor& g) {
                           detail::add_into(t.grad_slot(ia), g);
                           detail::add_into(t.grad_slot(ib), g, -1.0);
                         });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  detail::require_same_shape("mul", av, bv);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(detail::like(av, std::move(out)), {a, b},
                         [ia, ib](Tape& t, const Tensor& g) {
                           const Tensor& av = t.value(ia);
                           const Tensor& bv = t.value(ib);
                           if (Tensor* ga = t.grad_slot(ia))
                             for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
                           if (Tensor* gb = t.grad_slot(ib))
                             for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
                         });
}

/// Elementwise quotient; `b` may also be a scalar that divides every entry.
inline Var div(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = bv.size() == 1 && av.size() != 1;
  if (!broadcast) detail::require_same_shape("div", av, bv);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[broadcast ? 0 : i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      detail::like(av, std::move(out)), {a, b}, [ia, ib, broadcast](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (Tensor* ga = t.grad_slot(ia))
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / bv[broadcast ? 0 : i];
        if (Tensor* gb = t.grad_slot(ib)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            const double b = bv[broadcast ? 0 : i];
            (*gb)[broadcast ? 0 : i] -= g[i] * av[i] / (b * b);
          }
        }
      });
}

inline Var scale(const Var& a, double s) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  const std::size_t ia = a.id();
  return a.tape().record(detail::like(av, std::move(out)), {a},
                         [ia, s](Tape& t, const Tensor& g) {
                           detail::add_into(t.grad_slot(ia), g, s);
                         });
}

inline Var add_scalar(const Var& a, double s) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  const std::size_t ia = a.id();
  return a.tape().record(detail::like(av, std::move(out)), {a},
                         [ia](Tape& t, const Tensor& g) { detail::add_into(t.grad_slot(ia), g); });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

inline Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    if (Tensor* ga = t.grad_slot(ia)) {
      // dA = G * B^T
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * bv(p, j);
          (*ga)[i * k + p] += s;
        }
    }
    if (Tensor* gb = t.grad_slot(ib)) {
      // dB = A^T * G
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = av(i, p);
          if (av_ip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) (*gb)[p * m + j] += av_ip * g[i * m + j];
        }
    }
  });
}

inline Var transpose(const Var& a) {
  Tensor out = transpose(a.value());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    const std::size_t r = g.rows(), c = g.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) (*ga)[j * r + i] += g[i * c + j];
  });
}

inline Var sigmoid(const Var& a) {
  const Tensor& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
  std::vector<double> s = out;
  const std::size_t ia = a.id();
  return a.tape().record(detail::like(av, std::move(out)), {a},
                         [ia, s = std::move(s)](Tape& t, const Tensor& g) {
                           Tensor* ga = t.grad_slot(ia);
                           if (!ga) return;
                           for (std::size_t i = 0; i < s.size(); ++i) (*ga)[i] += g[i] * s[i] * (1.0 - s[i]);
                         });
}

/// Row-wise softmax.
inline Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  Tensor out(Shape{av.rows(), av.cols()});
  for (std::size_t r = 0; r < av.rows(); ++r) {
    auto in = av.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) z += (out(r, c) = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < in.size(); ++c) out(r, c) /= z;
  }
  Tensor y = out;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, y = std::move(y)](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    const std::size_t cols = y.cols();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < cols; ++c) s += g[r * cols + c] * y(r, c);
      for (std::size_t c = 0; c < cols; ++c) (*ga)[r * cols + c] += y(r, c) * (g[r * cols + c] - s);
    }
  });
}

/// Mean over `axis` (0: rows collapse to 1 x cols, 1: cols collapse to rows x 1).
inline Var mean(const Var& a, int axis) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  if (axis != 0 && axis != 1) throw std::invalid_argument("mean axis must be 0 or 1");
  Tensor out = axis == 0 ? Tensor::zeros(1, c) : Tensor::zeros(r, 1);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      if (axis == 0) out[j] += av(i, j) / static_cast<double>(r);
      else out[i] += av(i, j) / static_cast<double>(c);
    }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, axis, r, c](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        (*ga)[i * c + j] += axis == 0 ? g[j] / static_cast<double>(r) : g[i] / static_cast<double>(c);
  });
}

inline Var sum(const Var& a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    for (double& v : ga->data()) v += g[0];
  });
}

/// Rows of `a` selected by `index` (repeats allowed), as an index.size() x cols matrix.
inline Var gather_rows(const Var& a, std::vector<std::size_t> index) {
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  if (index.empty()) throw ShapeError("gather_rows with an empty index on " + shape_string(av.shape()));
  Tensor out = Tensor::zeros(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= av.rows()) {
      throw ShapeError("gather_rows index " + std::to_string(index[i]) + " out of range for " +
                       shape_string(av.shape()));
    }
    std::copy_n(av.row(index[i]).begin(), c, out.row(i).begin());
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, c, index = std::move(index)](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_slot(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) (*ga)[index[i] * c + j] += g[i * c + j];
  });
}

/// Concatenation along `axis` of 2-D operands.
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat axis must be 0 or 1");
  const Tensor& first = parts.front().value();
  std::size_t rows = 0, cols = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if (axis == 0) {
      if (v.cols() != first.cols())
        throw ShapeError("concat shape mismatch: " + shape_string(first.shape()) + " vs " +
                         shape_string(v.shape()));
      rows += v.rows();
      cols = v.cols();
    } else {
      if (v.rows() != first.rows())
        throw ShapeError("concat shape mismatch: " + shape_string(first.shape()) + " vs " +
                         shape_string(v.shape()));
      cols += v.cols();
      rows = v.rows();
    }
  }
  Tensor out = Tensor::zeros(rows, cols);
  std::vector<std::size_t> ids;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < v.rows(); ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == 0) out(offset + i, j) = v(i, j);
        else out(i, offset + j) = v(i, j);
      }
    offset += axis == 0 ? v.rows() : v.cols();
    ids.push_back(p.id());
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids = std::move(ids), axis, cols](Tape& t, const Tensor& g) {
        std::size_t offset = 0;
        for (std::size_t id : ids) {
          const Tensor& v = t.value(id);
          if (Tensor* gp = t.grad_slot(id)) {
            for (std::size_t i = 0; i < v.rows(); ++i)
              for (std::size_t j = 0; j < v.cols(); ++j)
                (*gp)[i * v.cols() + j] +=
                    axis == 0 ? g[(offset + i) * cols + j] : g[i * cols + offset + j];
          }
          offset += axis == 0 ? v.rows() : v.cols();
        }
      });
}

namespace detail {

// d cos(a,b) / da, given the cosine value and the floored denominator.
inline void cosine_grad(std::span<const double> a, std::span<const double> b, double cos,
                        double g, std::span<double> out) {
  const double na2 = dot(a, a);
  const double nb2 = dot(b, b);
  const double prod = std::sqrt(na2 * nb2);
  if (prod > kCosineFloor) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] += g * (b[i] / prod - cos * a[i] / na2);
  } else {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] += g * b[i] / kCosineFloor;
  }
}

}  // namespace detail

/// Cosine similarity of two equal-length vectors, as a scalar.
inline Var cosine(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.size() != bv.size()) {
    throw ShapeError("cosine shape mismatch: " + shape_string(av.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  const double c = cosine(av.data(), bv.data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor::scalar(c), {a, b}, [ia, ib, c](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (Tensor* ga = t.grad_slot(ia)) detail::cosine_grad(av.data(), bv.data(), c, g[0], ga->data());
    if (Tensor* gb = t.grad_slot(ib)) detail::cosine_grad(bv.data(), av.data(), c, g[0], gb->data());
  });
}

/// Cosine of a single row `x` (1 x d) against every row of `b` (k x d); 1 x k.
inline Var cosine_rows(const Var& x, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& bv = b.value();
  if (xv.size() != bv.cols()) {
    throw ShapeError("cosine_rows shape mismatch: " + shape_string(xv.shape()) + " vs " +
                     shape_string(bv.shape()));
  }
  Tensor out = Tensor::zeros(1, bv.rows());
  for (std::size_t r = 0; r < bv.rows(); ++r) out[r] = cosine(xv.data(), bv.row(r));
  Tensor cos = out;
  const std::size_t ix = x.id(), ib = b.id();
  return x.tape().record(std::move(out), {x, b}, [ix, ib, cos = std::move(cos)](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(ix);
    const Tensor& bv = t.value(ib);
    Tensor* gx = t.grad_slot(ix);
    Tensor* gb = t.grad_slot(ib);
    const std::size_t d = bv.cols();
    for (std::size_t r = 0; r < bv.rows(); ++r) {
      if (gx) detail::cosine_grad(xv.data(), bv.row(r), cos[r], g[r], gx->data());
      if (gb) detail::cosine_grad(bv.row(r), xv.data(), cos[r], g[r], gb->data().subspan(r * d, d));
    }
  });
}

inline constexpr double kProbabilityClamp = 1e-12;

/// Full-vocabulary binary cross-entropy over logits `y` with a single positive
/// at `label`. Sigmoid outputs are clamped to [1e-12, 1 - 1e-12]; clamped
/// entries contribute no gradient.
inline Var binary_cross_entropy(const Var& y, std::size_t label) {
  const Tensor& yv = y.value();
  if (label >= yv.size()) {
    throw ShapeError("label " + std::to_string(label) + " out of range for " + shape_string(yv.shape()));
  }
  std::vector<double> prob(yv.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < yv.size(); ++i) {
    const double q = std::clamp(1.0 / (1.0 + std::exp(-yv[i])), kProbabilityClamp,
                                1.0 - kProbabilityClamp);
    prob[i] = q;
    loss -= i == label ? std::log(q) : std::log(1.0 - q);
  }
  const std::size_t iy = y.id();
  return y.tape().record(Tensor::scalar(loss), {y},
                         [iy, label, prob = std::move(prob)](Tape& t, const Tensor& g) {
                           Tensor* gy = t.grad_slot(iy);
                           if (!gy) return;
                           for (std::size_t i = 0; i < prob.size(); ++i) {
                             const double q = prob[i];
                             if (q <= kProbabilityClamp || q >= 1.0 - kProbabilityClamp) continue;
                             (*gy)[i] += g[0] * (q - (i == label ? 1.0 : 0.0));
                           }
                         });
}

/// -log softmax(y)[label].
inline Var softmax_cross_entropy(const Var& y, std::size_t label) {
  const Tensor& yv = y.value();
  if (label >= yv.size()) {
    throw ShapeError("label " + std::to_string(label) + " out of range for " + shape_string(yv.shape()));
  }
  const double mx = *std::max_element(yv.data().begin(), yv.data().end());
  double z = 0.0;
  for (double v : yv.data()) z += std::exp(v - mx);
  const double lse = mx + std::log(z);
  std::vector<double> soft(yv.size());
  for (std::size_t i = 0; i < yv.size(); ++i) soft[i] = std::exp(yv[i] - lse);
  const std::size_t iy = y.id();
  return y.tape().record(Tensor::scalar(lse - yv[label]), {y},
                         [iy, label, soft = std::move(soft)](Tape& t, const Tensor& g) {
                           Tensor* gy = t.grad_slot(iy);
                           if (!gy) return;
                           for (std::size_t i = 0; i < soft.size(); ++i)
                             (*gy)[i] += g[0] * (soft[i] - (i == label ? 1.0 : 0.0));
                         });
}

// ---------------------------------------------------------------------------
// Binary tensor blobs: [u8 version][u32 name length][name][u32 rank]
// [u64 dims...][f64 payload], all little-endian.

inline constexpr std::uint8_t kTensorFormatVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void write_le(std::ostream& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <class T>
T read_le(std::istream& in, const char* what) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw FormatError(std::string("truncated tensor blob while reading ") + what);
    bits |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline void write_tensor(std::ostream& out, const std::string& name, const Tensor& tensor) {
  detail::write_le<std::uint8_t>(out, kTensorFormatVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t d : tensor.shape()) detail::write_le<std::uint64_t>(out, d);
  for (double v : tensor.data()) detail::write_le<double>(out, v);
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Reads one blob. With `expect_eof`, trailing bytes are rejected.
inline NamedTensor read_tensor(std::istream& in, bool expect_eof = true) {
  const auto version = detail::read_le<std::uint8_t>(in, "version");
  if (version != kTensorFormatVersion) {
    throw FormatError("tensor blob version " + std::to_string(version) + ", expected " +
                      std::to_string(kTensorFormatVersion));
  }
  const auto name_len = detail::read_le<std::uint32_t>(in, "name length");
  if (name_len > 4096) throw FormatError("implausible tensor name length " + std::to_string(name_len));
  std::string name(name_len, '\0');
  in.read(name.data(), name_len);
  if (static_cast<std::size_t>(in.gcount()) != name_len) throw FormatError("truncated tensor blob while reading name");
  const auto rank = detail::read_le<std::uint32_t>(in, "rank");
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = detail::read_le<std::uint64_t>(in, "dims");
    if (d == 0 || d > (std::uint64_t{1} << 32)) throw FormatError("invalid tensor dim in blob '" + name + "'");
  }
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = detail::read_le<double>(in, "payload");
  if (expect_eof && in.peek() != std::char_traits<char>::eof()) {
    throw FormatError("trailing bytes after tensor blob '" + name + "'");
  }
  return {std::move(name), Tensor(std::move(shape), std::move(data))};
}

}  // namespace dimo
