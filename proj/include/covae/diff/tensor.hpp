#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// Every tensor is rank 2 (scalars are 1x1). Binary elementwise operations
// broadcast any extent of 1 against the other operand. All values are
// checked for finiteness after each forward operation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace covae {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace covae

namespace covae::diff {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> propagate;

  std::size_t size() const { return rows * cols; }

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericalError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return make_leaf(rows, cols, std::move(values), false);
  }
  static Tensor parameter(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return make_leaf(rows, cols, std::move(values), true);
  }
  static Tensor full(std::size_t rows, std::size_t cols, double v) {
    return constant(rows, cols, std::vector<double>(rows * cols, v));
  }
  static Tensor zeros(std::size_t rows, std::size_t cols) { return full(rows, cols, 0.0); }
  static Tensor scalar(double v) { return constant(1, 1, {v}); }
  static Tensor identity(std::size_t n) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return constant(n, n, std::move(v));
  }
  static Tensor from_matrix(const RowMatrix& m, bool requires_grad = false) {
    std::vector<double> v(m.data(), m.data() + m.size());
    return make_leaf(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                     std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  std::vector<std::size_t> shape() const { return {node_->rows, node_->cols}; }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf; }
  const char* op() const { return node_->op; }

  std::span<const double> data() const { return node_->value; }
  double operator()(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() requires a 1x1 tensor");
    return node_->value[0];
  }
  ConstMatrixMap matrix() const {
    return ConstMatrixMap(node_->value.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }

  // Gradient accumulated by the last backward pass; zeros if the tensor was
  // not reached.
  std::span<const double> grad() const { return node_->ensure_grad(); }
  ConstMatrixMap grad_matrix() const {
    node_->ensure_grad();
    return ConstMatrixMap(node_->grad.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }
  void zero_grad() {
    auto& g = node_->ensure_grad();
    std::fill(g.begin(), g.end(), 0.0);
  }

  // Overwrites the values of a leaf (optimizer updates, checkpoint loading).
  void assign(std::span<const double> values) {
    if (!node_->is_leaf) throw std::logic_error("assign() is only valid on leaf tensors");
    if (values.size() != size()) throw ShapeError("assign(): size mismatch");
    std::copy(values.begin(), values.end(), node_->value.begin());
    detail::check_finite(node_->value, "assign");
  }
  std::span<double> mutable_data() {
    if (!node_->is_leaf) throw std::logic_error("mutable_data() is only valid on leaf tensors");
    return node_->value;
  }

  // Same values, cut from the graph.
  Tensor detach() const { return constant(rows(), cols(), node_->value); }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(" << rows() << "x" << cols() << ")";
    return os.str();
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  // Builds an op result. `propagate` is attached only if some input requires
  // a gradient.
  static Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                            const char* op, std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> propagate) {
    detail::check_finite(value, op);
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(value);
    n->is_leaf = false;
    n->op = op;
    for (const auto& t : inputs) {
      if (t.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
      n->inputs.reserve(inputs.size());
      for (auto& t : inputs) n->inputs.push_back(t.node_);
      n->propagate = std::move(propagate);
    }
    Tensor out;
    out.node_ = std::move(n);
    return out;
  }

 private:
  static Tensor make_leaf(std::size_t rows, std::size_t cols, std::vector<double> values,
                          bool requires_grad) {
    if (values.size() != rows * cols) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + std::to_string(rows) + "x" +
                       std::to_string(cols));
    }
    detail::check_finite(values, "leaf");
    auto n = std::make_shared<detail::Node>();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    n->is_leaf = true;
    Tensor out;
    out.node_ = std::move(n);
    return out;
  }

  std::shared_ptr<detail::Node> node_;
};

// Runs the reverse pass from a scalar loss. Leaf gradients accumulate; call
// zero_grad() on parameters between steps. A graph can be consumed once.
inline void backward(const Tensor& loss) {
  auto root = loss.node();
  if (loss.size() != 1) throw ShapeError("backward() requires a scalar loss, got " + loss.shape_str());
  if (!std::isfinite(root->value[0])) throw NumericalError("backward() on a non-finite loss");
  if (root->consumed) throw std::logic_error("backward() called twice on the same graph");
  if (!root->requires_grad) {
    root->consumed = true;
    return;
  }

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->propagate) n->propagate(*n);
  }
  for (auto* n : order) {
    if (!n->is_leaf) {
      n->propagate = nullptr;
      n->inputs.clear();
      n->consumed = true;
    }
  }
  root->consumed = true;
}

namespace detail {

inline std::vector<double>& grad_of(const std::shared_ptr<Node>& n) { return n->ensure_grad(); }

struct Broadcast {
  std::size_t rows, cols;
};

inline Broadcast broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " +
                     b.shape_str());
  };
  return {dim(a.rows(), b.rows()), dim(a.cols(), b.cols())};
}

// Index into an operand that may be broadcast along either axis.
inline std::size_t bidx(const Node& n, std::size_t r, std::size_t c) {
  return (n.rows == 1 ? 0 : r) * n.cols + (n.cols == 1 ? 0 : c);
}

template <class Fwd, class GradA, class GradB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, GradA ga, GradB gb) {
  const auto [rows, cols] = broadcast_shape(a, b, op);
  const Node& na = *a.node();
  const Node& nb = *b.node();
  if (na.rows == nb.rows && na.cols == nb.cols) {
    const std::size_t size = rows * cols;
    std::vector<double> out(size);
    for (std::size_t i = 0; i < size; ++i) out[i] = fwd(na.value[i], nb.value[i]);
    return Tensor::make_result(rows, cols, std::move(out), op, {a, b}, [ga, gb](Node& self) {
      auto& pa = self.inputs[0];
      auto& pb = self.inputs[1];
      const std::size_t size = self.value.size();
      if (pa->requires_grad) {
        auto& g = grad_of(pa);
        for (std::size_t i = 0; i < size; ++i) g[i] += self.grad[i] * ga(pa->value[i], pb->value[i], self.value[i]);
      }
      if (pb->requires_grad) {
        auto& g = grad_of(pb);
        for (std::size_t i = 0; i < size; ++i) g[i] += self.grad[i] * gb(pa->value[i], pb->value[i], self.value[i]);
      }
    });
  }
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out[r * cols + c] = fwd(na.value[bidx(na, r, c)], nb.value[bidx(nb, r, c)]);
  return Tensor::make_result(rows, cols, std::move(out), op, {a, b}, [ga, gb](Node& self) {
    auto& pa = self.inputs[0];
    auto& pb = self.inputs[1];
    for (std::size_t r = 0; r < self.rows; ++r) {
      for (std::size_t c = 0; c < self.cols; ++c) {
        const std::size_t i = r * self.cols + c;
        const double x = pa->value[bidx(*pa, r, c)];
        const double y = pb->value[bidx(*pb, r, c)];
        const double g = self.grad[i];
        if (pa->requires_grad) grad_of(pa)[bidx(*pa, r, c)] += g * ga(x, y, self.value[i]);
        if (pb->requires_grad) grad_of(pb)[bidx(*pb, r, c)] += g * gb(x, y, self.value[i]);
      }
    }
  });
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv deriv) {
  const Node& na = *a.node();
  std::vector<double> out(na.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(na.value[i]);
  return Tensor::make_result(na.rows, na.cols, std::move(out), op, {a}, [deriv](Node& self) {
    auto& p = self.inputs[0];
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < self.value.size(); ++i)
      g[i] += self.grad[i] * deriv(p->value[i], self.value[i]);
  });
}

inline void check_axis(int axis, const char* op) {
  if (axis != 0 && axis != 1) throw ShapeError(std::string(op) + ": axis must be 0 or 1");
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

// a + s I for square a.
inline Tensor add_diagonal(const Tensor& a, double s) {
  if (a.rows() != a.cols()) throw ShapeError("add_diagonal: matrix must be square, got " + a.shape_str());
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t i = 0; i < a.rows(); ++i) out[i * a.cols() + i] += s;
  return Tensor::make_result(a.rows(), a.cols(), std::move(out), "add_diagonal", {a}, [](detail::Node& self) {
    auto& g = detail::grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor leaky_relu(const Tensor& a, double slope) {
  return detail::unary(
      a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }

// ---- linear algebra ----------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  }
  RowMatrix c = a.matrix() * b.matrix();
  std::vector<double> out(c.data(), c.data() + c.size());
  return Tensor::make_result(a.rows(), b.cols(), std::move(out), "matmul", {a, b},
                             [](detail::Node& self) {
                               auto& pa = self.inputs[0];
                               auto& pb = self.inputs[1];
                               ConstMatrixMap g(self.grad.data(), self.rows, self.cols);
                               ConstMatrixMap av(pa->value.data(), pa->rows, pa->cols);
                               ConstMatrixMap bv(pb->value.data(), pb->rows, pb->cols);
                               if (pa->requires_grad) {
                                 MatrixMap ga(detail::grad_of(pa).data(), pa->rows, pa->cols);
                                 ga.noalias() += g * bv.transpose();
                               }
                               if (pb->requires_grad) {
                                 MatrixMap gb(detail::grad_of(pb).data(), pb->rows, pb->cols);
                                 gb.noalias() += av.transpose() * g;
                               }
                             });
}

inline Tensor transpose(const Tensor& a) {
  RowMatrix t = a.matrix().transpose();
  std::vector<double> out(t.data(), t.data() + t.size());
  return Tensor::make_result(a.cols(), a.rows(), std::move(out), "transpose", {a},
                             [](detail::Node& self) {
                               auto& p = self.inputs[0];
                               ConstMatrixMap g(self.grad.data(), self.rows, self.cols);
                               MatrixMap gp(detail::grad_of(p).data(), p->rows, p->cols);
                               gp += g.transpose();
                             });
}

// Solves A X = B for symmetric positive-definite A. The reverse pass reuses
// the factor: dB = A^{-1} dX, dA = -dB X^T.
inline Tensor cholesky_solve(const Tensor& a, const Tensor& b) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky_solve: A must be square, got " + a.shape_str());
  if (a.rows() != b.rows()) {
    throw ShapeError("cholesky_solve: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  }
  const auto am = a.matrix();
  const double tol = 1e-12 * std::max(1.0, am.cwiseAbs().maxCoeff());
  if ((am - am.transpose()).cwiseAbs().maxCoeff() > tol) {
    throw ShapeError("cholesky_solve: A is not symmetric");
  }
  auto llt = std::make_shared<Eigen::LLT<RowMatrix>>(am);
  if (llt->info() != Eigen::Success) {
    throw NotPositiveDefinite("cholesky_solve: matrix is not positive definite");
  }
  RowMatrix x = llt->solve(b.matrix());
  std::vector<double> out(x.data(), x.data() + x.size());
  return Tensor::make_result(b.rows(), b.cols(), std::move(out), "cholesky_solve", {a, b},
                             [llt](detail::Node& self) {
                               auto& pa = self.inputs[0];
                               auto& pb = self.inputs[1];
                               ConstMatrixMap g(self.grad.data(), self.rows, self.cols);
                               ConstMatrixMap xv(self.value.data(), self.rows, self.cols);
                               RowMatrix db = llt->solve(g);
                               if (pb->requires_grad) {
                                 MatrixMap gb(detail::grad_of(pb).data(), pb->rows, pb->cols);
                                 gb += db;
                               }
                               if (pa->requires_grad) {
                                 MatrixMap ga(detail::grad_of(pa).data(), pa->rows, pa->cols);
                                 ga.noalias() -= db * xv.transpose();
                               }
                             });
}

// ---- reductions --------------------------------------------------------------

inline Tensor reduce_sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x;
  return Tensor::make_result(1, 1, {s}, "reduce_sum", {a}, [](detail::Node& self) {
    auto& g = detail::grad_of(self.inputs[0]);
    for (double& v : g) v += self.grad[0];
  });
}

// axis 0 reduces over rows (result 1 x cols); axis 1 over columns (rows x 1).
inline Tensor reduce_sum(const Tensor& a, int axis) {
  detail::check_axis(axis, "reduce_sum");
  const std::size_t R = a.rows(), C = a.cols();
  const auto v = a.data();
  std::vector<double> out(axis == 0 ? C : R, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[axis == 0 ? c : r] += v[r * C + c];
  return Tensor::make_result(axis == 0 ? 1 : R, axis == 0 ? C : 1, std::move(out), "reduce_sum",
                             {a}, [axis](detail::Node& self) {
                               auto& p = self.inputs[0];
                               auto& g = detail::grad_of(p);
                               for (std::size_t r = 0; r < p->rows; ++r)
                                 for (std::size_t c = 0; c < p->cols; ++c)
                                   g[r * p->cols + c] += self.grad[axis == 0 ? c : r];
                             });
}

inline Tensor reduce_mean(const Tensor& a) {
  return scale(reduce_sum(a), 1.0 / static_cast<double>(a.size()));
}

inline Tensor reduce_mean(const Tensor& a, int axis) {
  detail::check_axis(axis, "reduce_mean");
  const double n = static_cast<double>(axis == 0 ? a.rows() : a.cols());
  return scale(reduce_sum(a, axis), 1.0 / n);
}

// Variance along an axis. Deviations are taken from the first element before
// averaging, so a constant slice yields exactly zero.
inline Tensor variance(const Tensor& a, int axis, bool unbiased = true) {
  detail::check_axis(axis, "variance");
  const std::size_t R = a.rows(), C = a.cols();
  const std::size_t n = axis == 0 ? R : C;
  const std::size_t m = axis == 0 ? C : R;
  if (n < (unbiased ? 2u : 1u)) throw ShapeError("variance: not enough elements along axis");
  const double denom = static_cast<double>(unbiased ? n - 1 : n);
  const auto v = a.data();
  auto at = [&](std::size_t k, std::size_t j) { return axis == 0 ? v[k * C + j] : v[j * C + k]; };
  std::vector<double> mean_dev(m, 0.0), out(m, 0.0), pivots(m);
  for (std::size_t j = 0; j < m; ++j) {
    pivots[j] = at(0, j);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += at(k, j) - pivots[j];
    mean_dev[j] = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e = (at(k, j) - pivots[j]) - mean_dev[j];
      ss += e * e;
    }
    out[j] = ss / denom;
  }
  return Tensor::make_result(
      axis == 0 ? 1 : R, axis == 0 ? C : 1, std::move(out), "variance", {a},
      [axis, n, m, denom, mean_dev, pivots](detail::Node& self) {
        auto& p = self.inputs[0];
        auto& g = detail::grad_of(p);
        const std::size_t C = p->cols;
        for (std::size_t j = 0; j < m; ++j) {
          const double gj = self.grad[j];
          for (std::size_t k = 0; k < n; ++k) {
            const std::size_t idx = axis == 0 ? k * C + j : j * C + k;
            const double e = (p->value[idx] - pivots[j]) - mean_dev[j];
            g[idx] += gj * 2.0 * e / denom;
          }
        }
      });
}

namespace detail {

// Applies f(begin, stride, count) to every line along `axis`.
template <class F>
void for_each_line(std::size_t R, std::size_t C, int axis, F f) {
  if (axis == 1) {
    for (std::size_t r = 0; r < R; ++r) f(r * C, std::size_t{1}, C);
  } else {
    for (std::size_t c = 0; c < C; ++c) f(c, C, R);
  }
}

}  // namespace detail

inline Tensor softmax(const Tensor& a, int axis) {
  detail::check_axis(axis, "softmax");
  const auto v = a.data();
  std::vector<double> out(v.size());
  detail::for_each_line(a.rows(), a.cols(), axis, [&](std::size_t b, std::size_t s, std::size_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[b + k * s]);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += (out[b + k * s] = std::exp(v[b + k * s] - mx));
    for (std::size_t k = 0; k < n; ++k) out[b + k * s] /= z;
  });
  return Tensor::make_result(a.rows(), a.cols(), std::move(out), "softmax", {a},
                             [axis](detail::Node& self) {
                               auto& g = detail::grad_of(self.inputs[0]);
                               const auto& y = self.value;
                               const auto& dy = self.grad;
                               detail::for_each_line(self.rows, self.cols, axis,
                                                     [&](std::size_t b, std::size_t s, std::size_t n) {
                                                       double dot = 0.0;
                                                       for (std::size_t k = 0; k < n; ++k)
                                                         dot += dy[b + k * s] * y[b + k * s];
                                                       for (std::size_t k = 0; k < n; ++k)
                                                         g[b + k * s] += y[b + k * s] * (dy[b + k * s] - dot);
                                                     });
                             });
}

inline Tensor log_softmax(const Tensor& a, int axis) {
  detail::check_axis(axis, "log_softmax");
  const auto v = a.data();
  std::vector<double> out(v.size());
  detail::for_each_line(a.rows(), a.cols(), axis, [&](std::size_t b, std::size_t s, std::size_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[b + k * s]);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(v[b + k * s] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t k = 0; k < n; ++k) out[b + k * s] = v[b + k * s] - lse;
  });
  return Tensor::make_result(a.rows(), a.cols(), std::move(out), "log_softmax", {a},
                             [axis](detail::Node& self) {
                               auto& g = detail::grad_of(self.inputs[0]);
                               const auto& y = self.value;
                               const auto& dy = self.grad;
                               detail::for_each_line(self.rows, self.cols, axis,
                                                     [&](std::size_t b, std::size_t s, std::size_t n) {
                                                       double sum = 0.0;
                                                       for (std::size_t k = 0; k < n; ++k) sum += dy[b + k * s];
                                                       for (std::size_t k = 0; k < n; ++k)
                                                         g[b + k * s] += dy[b + k * s] - std::exp(y[b + k * s]) * sum;
                                                     });
                             });
}

inline Tensor logsumexp(const Tensor& a, int axis) {
  detail::check_axis(axis, "logsumexp");
  const std::size_t R = a.rows(), C = a.cols();
  const auto v = a.data();
  std::vector<double> out(axis == 0 ? C : R);
  std::size_t line = 0;
  detail::for_each_line(R, C, axis, [&](std::size_t b, std::size_t s, std::size_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[b + k * s]);
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += std::exp(v[b + k * s] - mx);
    out[line++] = mx + std::log(z);
  });
  return Tensor::make_result(axis == 0 ? 1 : R, axis == 0 ? C : 1, std::move(out), "logsumexp", {a},
                             [axis](detail::Node& self) {
                               auto& p = self.inputs[0];
                               auto& g = detail::grad_of(p);
                               std::size_t line = 0;
                               detail::for_each_line(p->rows, p->cols, axis,
                                                     [&](std::size_t b, std::size_t s, std::size_t n) {
                                                       const double lse = self.value[line];
                                                       const double dy = self.grad[line++];
                                                       for (std::size_t k = 0; k < n; ++k)
                                                         g[b + k * s] += dy * std::exp(p->value[b + k * s] - lse);
                                                     });
                             });
}

// ---- slicing -------------------------------------------------------------------

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) throw ShapeError("slice_rows: range out of bounds for " + a.shape_str());
  const std::size_t C = a.cols();
  const auto v = a.data();
  std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin * C),
                          v.begin() + static_cast<std::ptrdiff_t>(end * C));
  return Tensor::make_result(end - begin, C, std::move(out), "slice_rows", {a},
                             [begin](detail::Node& self) {
                               auto& g = detail::grad_of(self.inputs[0]);
                               const std::size_t off = begin * self.cols;
                               for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
                             });
}

inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols: range out of bounds for " + a.shape_str());
  const std::size_t R = a.rows(), C = a.cols(), W = end - begin;
  const auto v = a.data();
  std::vector<double> out(R * W);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < W; ++c) out[r * W + c] = v[r * C + begin + c];
  return Tensor::make_result(R, W, std::move(out), "slice_cols", {a}, [begin](detail::Node& self) {
    auto& p = self.inputs[0];
    auto& g = detail::grad_of(p);
    for (std::size_t r = 0; r < self.rows; ++r)
      for (std::size_t c = 0; c < self.cols; ++c) g[r * p->cols + begin + c] += self.grad[r * self.cols + c];
  });
}

// Concatenates along rows (axis 0) or columns (axis 1).
inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  detail::check_axis(axis, "concat");
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::size_t R = 0, C = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (p.cols() != parts[0].cols()) throw ShapeError("concat: column count mismatch");
      R += p.rows();
      C = p.cols();
    } else {
      if (p.rows() != parts[0].rows()) throw ShapeError("concat: row count mismatch");
      C += p.cols();
      R = p.rows();
    }
  }
  std::vector<double> out(R * C);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto v = p.data();
    for (std::size_t r = 0; r < p.rows(); ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) {
        const std::size_t rr = axis == 0 ? off + r : r;
        const std::size_t cc = axis == 0 ? c : off + c;
        out[rr * C + cc] = v[r * p.cols() + c];
      }
    off += axis == 0 ? p.rows() : p.cols();
  }
  return Tensor::make_result(R, C, std::move(out), "concat", parts,
                             [axis, offsets](detail::Node& self) {
                               for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                                 auto& p = self.inputs[i];
                                 if (!p->requires_grad) continue;
                                 auto& g = detail::grad_of(p);
                                 for (std::size_t r = 0; r < p->rows; ++r)
                                   for (std::size_t c = 0; c < p->cols; ++c) {
                                     const std::size_t rr = axis == 0 ? offsets[i] + r : r;
                                     const std::size_t cc = axis == 0 ? c : offsets[i] + c;
                                     g[r * p->cols + c] += self.grad[rr * self.cols + cc];
                                   }
                               }
                             });
}

}  // namespace covae::diff
