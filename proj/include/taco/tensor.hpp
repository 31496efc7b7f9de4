#pragma once

// Dense float64 arrays and a small reverse-mode differentiation tape.
//
// Plain data lives in `Array`. Differentiable computations are recorded on a
// `Tape`; a `Tensor` is a lightweight handle (tape + node id) to one recorded
// value. Nodes are appended in evaluation order, so the node list is already
// a topological order and backward() is a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "taco/errors.hpp"

namespace taco {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  Array(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {
    check_extents();
  }
  Array(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    check_extents();
    if (data.size() != shape_size(shape))
      throw DimensionError("array of shape " + shape_str(shape) + " given " +
                           std::to_string(data.size()) + " values");
  }

  static Array scalar(double v) { return Array(Shape{}, std::vector<double>{v}); }

  // Row-major matrix from nested initializer lists.
  static Array matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> v;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw DimensionError("ragged matrix literal");
      v.insert(v.end(), r.begin(), r.end());
    }
    return Array({rows.size(), cols}, std::move(v));
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t rows() const { return require2d(), shape[0]; }
  std::size_t cols() const { return require2d(), shape[1]; }

  double& operator()(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * shape[1], shape[1]};
  }
  std::span<double> row(std::size_t r) { return {data.data() + r * shape[1], shape[1]}; }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const Array&) const = default;

 private:
  void check_extents() const {
    for (std::size_t e : shape)
      if (e == 0) throw DimensionError("zero extent in shape " + shape_str(shape));
  }
  void require2d() const {
    if (shape.size() != 2) throw DimensionError("expected a matrix, got " + shape_str(shape));
  }
};

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

  const Array& value() const;
  const Shape& shape() const { return value().shape; }
  std::span<const double> values() const { return value().data; }
  double item() const;
  bool requires_grad() const;
  // Absent unless backward() reached this node.
  std::optional<Array> grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(Array value, bool requires_grad = true) {
    nodes_.push_back(Node{"leaf", std::move(value), {}, requires_grad, {}, nullptr});
    return {this, nodes_.size() - 1};
  }

  Tensor constant(Array value) { return leaf(std::move(value), false); }

  // Appends an op node. The node requires grad iff some input does; the
  // backward closure is dropped otherwise.
  Tensor record(std::string_view op, Array value, std::vector<std::size_t> inputs,
                BackwardFn backward) {
    bool rg = false;
    for (std::size_t i : inputs) rg = rg || nodes_.at(i).requires_grad;
    nodes_.push_back(Node{op, std::move(value), {}, rg, std::move(inputs),
                          rg ? std::move(backward) : nullptr});
    return {this, nodes_.size() - 1};
  }

  void backward(const Tensor& loss) {
    check_owned(loss);
    const Node& root = nodes_[loss.id()];
    if (root.value.size() != 1)
      throw GradientError("backward() needs a scalar root, got " + shape_str(root.value.shape));
    if (!root.requires_grad) throw GradientError("backward() on a root detached from every leaf");
    if (backward_done_) throw GradientError("backward() called twice without reset_grad()");
    backward_done_ = true;
    last_visits_ = 0;
    grad_buffer(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.backward || n.grad.empty()) continue;
      ++last_visits_;
      n.backward(*this, id);
    }
  }

  void reset_grad() {
    for (auto& n : nodes_) n.grad.clear();
    backward_done_ = false;
  }

  const Array& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }
  // Number of op backward closures run by the last backward().
  std::size_t last_backward_visits() const noexcept { return last_visits_; }

  std::optional<Array> grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) return std::nullopt;
    return Array(n.value.shape, n.grad);
  }

  // Gradient accumulator for node `id`, zero-initialised on first use.
  std::vector<double>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  const std::vector<double>& grad_of(std::size_t id) const { return nodes_[id].grad; }

  void check_owned(const Tensor& t) const {
    if (&t.tape() != this || t.id() >= nodes_.size())
      throw GradientError("tensor does not belong to this tape");
  }

 private:
  struct Node {
    std::string_view op;
    Array value;
    std::vector<double> grad;
    bool requires_grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::size_t last_visits_ = 0;
};

inline const Array& Tensor::value() const { return tape_->value(id_); }
inline bool Tensor::requires_grad() const { return tape_->requires_grad(id_); }
inline std::optional<Array> Tensor::grad() const { return tape_->grad(id_); }
inline double Tensor::item() const {
  const Array& v = value();
  if (v.size() != 1) throw DimensionError("item() on non-scalar " + shape_str(v.shape));
  return v.data[0];
}

namespace detail {

inline Tape& same_tape(const Tensor& a, const Tensor& b) {
  if (&a.tape() != &b.tape()) throw GradientError("operands recorded on different tapes");
  return a.tape();
}

inline void require_matrix(const Tensor& t, std::string_view op) {
  if (t.shape().size() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Adds g into the gradient of `id` if that node is differentiable.
inline void accumulate(Tape& tape, std::size_t id, std::span<const double> g) {
  if (!tape.requires_grad(id)) return;
  auto& buf = tape.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// C[m×n] += A[m×k] · B[k×n]
inline void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  MMap(c, m, n).noalias() += CMap(a, m, k) * CMap(b, k, n);
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
inline void gemm_nt_acc(const double* a, const double* b, double* c, std::size_t m,
                        std::size_t k, std::size_t n) {
  MMap(c, m, n).noalias() += CMap(a, m, k) * CMap(b, n, k).transpose();
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
inline void gemm_tn_acc(const double* a, const double* b, double* c, std::size_t m,
                        std::size_t k, std::size_t n) {
  MMap(c, k, n).noalias() += CMap(a, m, k).transpose() * CMap(b, m, n);
}

inline constexpr double kMinNorm = 1e-12;

inline std::vector<double> row_norms(const Array& z, std::string_view who) {
  const std::size_t rows = z.rows(), cols = z.cols();
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += z.data[r * cols + c] * z.data[r * cols + c];
    norms[r] = std::sqrt(s);
    if (!(norms[r] >= kMinNorm))
      throw DegenerateNormError(std::string(who) + ": row " + std::to_string(r) +
                                " has norm below 1e-12");
  }
  return norms;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  Array out({m, n});
  detail::gemm_acc(a.value().data.data(), b.value().data.data(), out.data.data(), m, k, n);
  return tape.record("matmul", std::move(out), {a.id(), b.id()},
                     [ia = a.id(), ib = b.id(), m, k, n](Tape& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       if (t.requires_grad(ia)) {
                         auto& ga = t.grad_buffer(ia);
                         detail::gemm_nt_acc(g.data(), t.value(ib).data.data(), ga.data(), m, n, k);
                       }
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad_buffer(ib);
                         detail::gemm_tn_acc(t.value(ia).data.data(), g.data(), gb.data(), m, k, n);
                       }
                     });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return tape.record("add", std::move(out), {a.id(), b.id()},
                     [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                       detail::accumulate(t, ia, t.grad_of(self));
                       detail::accumulate(t, ib, t.grad_of(self));
                     });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  return tape.record("sub", std::move(out), {a.id(), b.id()},
                     [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       detail::accumulate(t, ia, g);
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad_buffer(ib);
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                       }
                     });
}

// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "mul");
  Array out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return tape.record("mul", std::move(out), {a.id(), b.id()},
                     [ia = a.id(), ib = b.id()](Tape& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       if (t.requires_grad(ia)) {
                         auto& ga = t.grad_buffer(ia);
                         const auto& vb = t.value(ib).data;
                         for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
                       }
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad_buffer(ib);
                         const auto& va = t.value(ia).data;
                         for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
                       }
                     });
}

inline Tensor scale(const Tensor& a, double c) {
  Array out = a.value();
  for (double& x : out.data) x *= c;
  return a.tape().record("scale", std::move(out), {a.id()},
                         [ia = a.id(), c](Tape& t, std::size_t self) {
                           const auto& g = t.grad_of(self);
                           auto& ga = t.grad_buffer(ia);
                           for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
                         });
}

// X[m×n] + b broadcast over rows; b has n elements (any shape).
inline Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  Tape& tape = detail::same_tape(x, b);
  detail::require_matrix(x, "add_row_vector");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (b.value().size() != n)
    throw DimensionError("add_row_vector: bias of " + std::to_string(b.value().size()) +
                         " elements for " + std::to_string(n) + " columns");
  Array out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += b.value().data[j];
  return tape.record("add_row_vector", std::move(out), {x.id(), b.id()},
                     [ix = x.id(), ib = b.id(), m, n](Tape& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       detail::accumulate(t, ix, g);
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad_buffer(ib);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                       }
                     });
}

inline Tensor tanh(const Tensor& x) {
  Array out = x.value();
  for (double& v : out.data) v = std::tanh(v);
  return x.tape().record("tanh", std::move(out), {x.id()},
                         [ix = x.id()](Tape& t, std::size_t self) {
                           const auto& g = t.grad_of(self);
                           const auto& y = t.value(self).data;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i] += g[i] * (1.0 - y[i] * y[i]);
                         });
}

// Elementwise max(0, x). The subgradient at exactly 0 is 0.
inline Tensor hinge(const Tensor& x) {
  Array out = x.value();
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return x.tape().record("hinge", std::move(out), {x.id()},
                         [ix = x.id()](Tape& t, std::size_t self) {
                           const auto& g = t.grad_of(self);
                           const auto& in = t.value(ix).data;
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             if (in[i] > 0.0) gx[i] += g[i];
                         });
}

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return x.tape().record("sum", Array::scalar(s), {x.id()},
                         [ix = x.id()](Tape& t, std::size_t self) {
                           const double g = t.grad_of(self)[0];
                           auto& gx = t.grad_buffer(ix);
                           for (double& v : gx) v += g;
                         });
}

inline Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.value().size());
  double s = 0.0;
  for (double v : x.values()) s += v;
  return x.tape().record("mean", Array::scalar(s / n), {x.id()},
                         [ix = x.id(), n](Tape& t, std::size_t self) {
                           const double g = t.grad_of(self)[0] / n;
                           auto& gx = t.grad_buffer(ix);
                           for (double& v : gx) v += g;
                         });
}

// Mean over all elements of (xhat - x)^2.
inline Tensor mse(const Tensor& xhat, const Tensor& x) {
  Tape& tape = detail::same_tape(xhat, x);
  detail::require_same_shape(xhat, x, "mse");
  const auto& a = xhat.value().data;
  const auto& b = x.value().data;
  const double n = static_cast<double>(a.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return tape.record("mse", Array::scalar(s / n), {xhat.id(), x.id()},
                     [ia = xhat.id(), ib = x.id(), n](Tape& t, std::size_t self) {
                       const double g = t.grad_of(self)[0];
                       const auto& a = t.value(ia).data;
                       const auto& b = t.value(ib).data;
                       const bool ga_on = t.requires_grad(ia), gb_on = t.requires_grad(ib);
                       for (std::size_t i = 0; i < a.size(); ++i) {
                         const double d = 2.0 * g * (a[i] - b[i]) / n;
                         if (ga_on) t.grad_buffer(ia)[i] += d;
                         if (gb_on) t.grad_buffer(ib)[i] -= d;
                       }
                     });
}

// [A | B] along columns.
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  Tape& tape = detail::same_tape(a, b);
  detail::require_matrix(a, "concat_cols");
  detail::require_matrix(b, "concat_cols");
  const std::size_t m = a.shape()[0], p = a.shape()[1], q = b.shape()[1];
  if (b.shape()[0] != m) throw DimensionError("concat_cols: row counts differ");
  Array out({m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.value().data.begin() + i * p, p, out.data.begin() + i * (p + q));
    std::copy_n(b.value().data.begin() + i * q, q, out.data.begin() + i * (p + q) + p);
  }
  return tape.record("concat_cols", std::move(out), {a.id(), b.id()},
                     [ia = a.id(), ib = b.id(), m, p, q](Tape& t, std::size_t self) {
                       const auto& g = t.grad_of(self);
                       if (t.requires_grad(ia)) {
                         auto& ga = t.grad_buffer(ia);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < p; ++j) ga[i * p + j] += g[i * (p + q) + j];
                       }
                       if (t.requires_grad(ib)) {
                         auto& gb = t.grad_buffer(ib);
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < q; ++j)
                             gb[i * q + j] += g[i * (p + q) + p + j];
                       }
                     });
}

// Column means of X[m×n], returned as [1×n].
inline Tensor mean_rows(const Tensor& x) {
  detail::require_matrix(x, "mean_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Array out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[j] += x.value().data[i * n + j];
  for (double& v : out.data) v /= static_cast<double>(m);
  return x.tape().record("mean_rows", std::move(out), {x.id()},
                         [ix = x.id(), m, n](Tape& t, std::size_t self) {
                           const auto& g = t.grad_of(self);
                           auto& gx = t.grad_buffer(ix);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j)
                               gx[i * n + j] += g[j] / static_cast<double>(m);
                         });
}

// Tiles a [1×n] row m times.
inline Tensor repeat_rows(const Tensor& v, std::size_t m) {
  detail::require_matrix(v, "repeat_rows");
  if (v.shape()[0] != 1) throw DimensionError("repeat_rows: expected a single row");
  const std::size_t n = v.shape()[1];
  Array out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    std::copy(v.values().begin(), v.values().end(), out.data.begin() + i * n);
  return v.tape().record("repeat_rows", std::move(out), {v.id()},
                         [iv = v.id(), m, n](Tape& t, std::size_t self) {
                           const auto& g = t.grad_of(self);
                           auto& gv = t.grad_buffer(iv);
                           for (std::size_t i = 0; i < m; ++i)
                             for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
                         });
}

// Same values, not differentiated.
inline Tensor detach(const Tensor& x) { return x.tape().constant(x.value()); }

// Plain-array pairwise cosine distance, D[a,b] = 1 - cos(Za[a], Zb[b]).
// Throws DegenerateNormError for any row with norm < 1e-12.
inline Array cosine_distance(const Array& za, const Array& zb) {
  if (za.rank() != 2 || zb.rank() != 2 || za.cols() != zb.cols())
    throw DimensionError("cosine_distance: feature dimensions differ " + shape_str(za.shape) +
                         " vs " + shape_str(zb.shape));
  const auto na = detail::row_norms(za, "cosine_distance");
  const auto nb = detail::row_norms(zb, "cosine_distance");
  const std::size_t ka = za.rows(), kb = zb.rows(), f = za.cols();
  Array out({ka, kb});
  detail::gemm_nt_acc(za.data.data(), zb.data.data(), out.data.data(), ka, f, kb);
  for (std::size_t a = 0; a < ka; ++a)
    for (std::size_t b = 0; b < kb; ++b) {
      double c = out.data[a * kb + b] / (na[a] * nb[b]);
      c = std::clamp(c, -1.0, 1.0);
      out.data[a * kb + b] = 1.0 - c;
    }
  // GEMM blocking can round (a, b) and (b, a) differently.
  if (&za == &zb || za == zb)
    for (std::size_t a = 0; a < ka; ++a)
      for (std::size_t b = 0; b < a; ++b) out.data[a * kb + b] = out.data[b * kb + a];
  return out;
}

// Differentiable pairwise cosine distance matrix [Ka×Kb]; values in [0, 2].
inline Tensor cosine_distance_matrix(const Tensor& za, const Tensor& zb) {
  Tape& tape = detail::same_tape(za, zb);
  detail::require_matrix(za, "cosine_distance_matrix");
  detail::require_matrix(zb, "cosine_distance_matrix");
  Array out = cosine_distance(za.value(), zb.value());
  return tape.record(
      "cosine_distance_matrix", std::move(out), {za.id(), zb.id()},
      [ia = za.id(), ib = zb.id()](Tape& t, std::size_t self) {
        const Array& a = t.value(ia);
        const Array& b = t.value(ib);
        const std::size_t ka = a.rows(), kb = b.rows(), f = a.cols();
        const auto na = detail::row_norms(a, "cosine_distance_matrix");
        const auto nb = detail::row_norms(b, "cosine_distance_matrix");
        Array an = a, bn = b;
        for (std::size_t r = 0; r < ka; ++r)
          for (std::size_t c = 0; c < f; ++c) an.data[r * f + c] /= na[r];
        for (std::size_t r = 0; r < kb; ++r)
          for (std::size_t c = 0; c < f; ++c) bn.data[r * f + c] /= nb[r];
        // d(cos)/d(D) = -1
        std::vector<double> gc(t.grad_of(self));
        for (double& v : gc) v = -v;
        // cos = an · bnᵀ; gradient wrt normalized rows, then through normalization:
        // d a = (g_an - (g_an · â) â) / |a|
        auto project = [f](const Array& unit, const std::vector<double>& norms,
                           std::vector<double>& gu, std::vector<double>& out) {
          const std::size_t rows = norms.size();
          for (std::size_t r = 0; r < rows; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < f; ++c) dot += gu[r * f + c] * unit.data[r * f + c];
            for (std::size_t c = 0; c < f; ++c)
              out[r * f + c] += (gu[r * f + c] - dot * unit.data[r * f + c]) / norms[r];
          }
        };
        if (t.requires_grad(ia)) {
          std::vector<double> gan(ka * f, 0.0);
          detail::gemm_acc(gc.data(), bn.data.data(), gan.data(), ka, kb, f);
          project(an, na, gan, t.grad_buffer(ia));
        }
        if (t.requires_grad(ib)) {
          std::vector<double> gbn(kb * f, 0.0);
          detail::gemm_tn_acc(gc.data(), an.data.data(), gbn.data(), ka, kb, f);
          project(bn, nb, gbn, t.grad_buffer(ib));
        }
      });
}

// Cosine distances between selected row pairs of one matrix:
// out[t] = 1 - cos(Z[rows_a[t]], Z[rows_b[t]]). Shape [T].
inline Tensor row_pair_cosine_distance(const Tensor& z, std::vector<std::size_t> rows_a,
                                       std::vector<std::size_t> rows_b) {
  detail::require_matrix(z, "row_pair_cosine_distance");
  if (rows_a.size() != rows_b.size() || rows_a.empty())
    throw DimensionError("row_pair_cosine_distance: index lists must be equal and non-empty");
  const Array& v = z.value();
  const std::size_t k = v.rows(), f = v.cols();
  for (std::size_t i = 0; i < rows_a.size(); ++i)
    if (rows_a[i] >= k || rows_b[i] >= k)
      throw DimensionError("row_pair_cosine_distance: row index out of range");
  const auto norms = detail::row_norms(v, "row_pair_cosine_distance");
  Array out({rows_a.size()});
  for (std::size_t i = 0; i < rows_a.size(); ++i) {
    const double* x = v.data.data() + rows_a[i] * f;
    const double* y = v.data.data() + rows_b[i] * f;
    double dot = 0.0;
    for (std::size_t c = 0; c < f; ++c) dot += x[c] * y[c];
    out.data[i] = 1.0 - std::clamp(dot / (norms[rows_a[i]] * norms[rows_b[i]]), -1.0, 1.0);
  }
  return z.tape().record(
      "row_pair_cosine_distance", std::move(out), {z.id()},
      [iz = z.id(), ra = std::move(rows_a), rb = std::move(rows_b), norms](Tape& t,
                                                                           std::size_t self) {
        const auto& g = t.grad_of(self);
        const Array& v = t.value(iz);
        const std::size_t f = v.cols();
        auto& gz = t.grad_buffer(iz);
        for (std::size_t i = 0; i < ra.size(); ++i) {
          if (g[i] == 0.0) continue;
          const double* x = v.data.data() + ra[i] * f;
          const double* y = v.data.data() + rb[i] * f;
          const double nx = norms[ra[i]], ny = norms[rb[i]];
          double dot = 0.0;
          for (std::size_t c = 0; c < f; ++c) dot += x[c] * y[c];
          const double cs = dot / (nx * ny);
          // d(1 - cos)/dx = -(y/(|x||y|) - cos x/|x|^2)
          for (std::size_t c = 0; c < f; ++c) {
            gz[ra[i] * f + c] -= g[i] * (y[c] / (nx * ny) - cs * x[c] / (nx * nx));
            gz[rb[i] * f + c] -= g[i] * (x[c] / (nx * ny) - cs * y[c] / (ny * ny));
          }
        }
      });
}

}  // namespace taco
