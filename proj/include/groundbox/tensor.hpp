#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every op returns a fresh node that remembers its parents and a closure
// that pushes the output gradient back into them. The graph is rebuilt on
// every forward pass; backward() linearises it into a ComputationTape,
// walks the tape once in reverse, then releases the interior nodes.
//
// A graph is confined to the thread that built it. Parameter leaves may be
// read concurrently from several threads as long as nobody writes to them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "groundbox/errors.hpp"

namespace groundbox {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

inline thread_local bool grad_enabled = true;

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_numel(shape)) + " elements but data has " +
                           std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }
  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }
  static Tensor identity(std::size_t n) {
    auto t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const { return node_->shape[0]; }
  std::size_t cols() const {
    if (rank() != 2) throw DimensionError("cols() needs a matrix, got " + shape_str(shape()));
    return node_->shape[1];
  }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value) { node_->requires_grad = value; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.clear(); }
  const char* op_name() const { return node_->op; }

  /// A new leaf holding a copy of the values, cut off from any graph.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op_result(Shape, std::vector<double>, const char*, std::vector<Tensor>,
                               std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Wraps freshly computed values as an op output. The parents and backward
/// closure are only retained when recording is on and some parent needs
/// gradients.
inline Tensor make_op_result(Shape shape, std::vector<double> data, const char* op,
                             std::vector<Tensor> parents,
                             std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (detail::grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.handle());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

/// Topologically ordered record of the ops that produced a scalar loss.
/// Each entry's inputs appear before it.
class ComputationTape {
 public:
  static ComputationTape record(const Tensor& root) {
    ComputationTape tape;
    if (!root.requires_grad()) return tape;
    std::unordered_set<const detail::Node*> seen;
    // Iterative post-order DFS: (node, next parent to visit).
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        detail::Node* parent = node->parents[next++].get();
        if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
      } else {
        tape.order_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  std::span<detail::Node* const> entries() const { return order_; }
  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }

 private:
  std::vector<detail::Node*> order_;
};

/// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
/// `loss`, then frees the interior of the graph.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  auto tape = ComputationTape::record(loss);
  if (tape.empty()) throw ContractError("backward() on a loss with no recorded operations");
  auto* root = loss.node();
  root->ensure_grad();
  root->grad[0] += 1.0;
  auto entries = tape.entries();
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
    detail::Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
  for (auto* node : entries) {
    if (node->backward) {
      node->backward = nullptr;
      node->parents.clear();
    }
  }
}

/// Name of the first op (in execution order) whose output holds a NaN or
/// infinity, or an empty string when every value is finite.
inline std::string first_nonfinite_op(const Tensor& root) {
  auto tape = ComputationTape::record(root);
  for (auto* node : tape.entries()) {
    for (double v : node->data) {
      if (!std::isfinite(v)) return node->op;
    }
  }
  for (double v : root.data()) {
    if (!std::isfinite(v)) return root.op_name();
  }
  return {};
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

template <class F>
Tensor unary_elementwise(const Tensor& x, const char* op, F&& fn,
                         std::function<void(Node&)> backward) {
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
  return make_op_result(x.shape(), std::move(out), op, {x}, std::move(backward));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

/// a[m×k] · b[k×n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  std::vector<long double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0L);
    for (std::size_t p = 0; p < k; ++p) {
      const long double av = A[i * k + p];
      if (av == 0.0L) continue;
      const double* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<double>(row[j]);
  }
  return make_op_result({m, n}, std::move(out), "matmul", {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    const auto& g = self.grad;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * pb.data[p * n + j];
          pa.grad[i * k + p] += s;
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa.data[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) pb.grad[p * n + j] += av * g[i * n + j];
        }
    }
  });
}

/// a[m×k] · b[n×k]ᵀ, the product used by linear layers with weights stored
/// as [out × in].
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      long double s = 0.0L;
      for (std::size_t p = 0; p < k; ++p) s += static_cast<long double>(A[i * k + p]) * B[j * k + p];
      out[i * n + j] = static_cast<double>(s);
    }
  return make_op_result({m, n}, std::move(out), "matmul_nt", {a, b}, [m, k, n](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    const auto& g = self.grad;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) pa.grad[i * k + p] += gv * pb.data[j * k + p];
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = g[i * n + j];
          if (gv == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) pb.grad[j * k + p] += gv * pa.data[i * k + p];
        }
    }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  auto A = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return make_op_result({n, m}, std::move(out), "transpose", {a}, [m, n](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j * m + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_op_result(a.shape(), std::move(out), "add", {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto& par = detail::parent(self, p);
      if (!par.requires_grad) continue;
      par.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) par.grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_op_result(a.shape(), std::move(out), "sub", {a, b}, [](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_op_result(a.shape(), std::move(out), "mul", {a, b}, [](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] += self.grad[i] * pa.data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary_elementwise(a, "scale", [s](double v) { return v * s; },
                                   [s](detail::Node& self) {
                                     auto& pa = detail::parent(self, 0);
                                     pa.ensure_grad();
                                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       pa.grad[i] += s * self.grad[i];
                                   });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary_elementwise(a, "add_scalar", [s](double v) { return v + s; },
                                   [](detail::Node& self) {
                                     auto& pa = detail::parent(self, 0);
                                     pa.ensure_grad();
                                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       pa.grad[i] += self.grad[i];
                                   });
}

/// a[m×n] + b[n] added to every row.
inline Tensor add_row(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (b.size() != n) {
    throw DimensionError("add_row: row vector " + shape_str(b.shape()) + " does not match " +
                         shape_str(a.shape()));
  }
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + b[j];
  return make_op_result(a.shape(), std::move(out), "add_row", {a, b}, [m, n](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
    }
  });
}

/// Logistic function. Outputs are clamped into the open interval so that
/// saturated inputs still yield values strictly inside (0, 1).
inline Tensor sigmoid(const Tensor& x) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  return detail::unary_elementwise(
      x, "sigmoid",
      [lo, hi](double v) {
        double y = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        return std::clamp(y, lo, hi);
      },
      [](detail::Node& self) {
        auto& px = detail::parent(self, 0);
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double y = self.data[i];
          px.grad[i] += self.grad[i] * y * (1.0 - y);
        }
      });
}

/// Rectifier; the subgradient at exactly zero is zero.
inline Tensor relu(const Tensor& x) {
  return detail::unary_elementwise(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                                   [](detail::Node& self) {
                                     auto& px = detail::parent(self, 0);
                                     px.ensure_grad();
                                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       if (px.data[i] > 0.0) px.grad[i] += self.grad[i];
                                   });
}

/// Natural log. Non-positive input is a domain error; clamp first.
inline Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) {
      std::ostringstream msg;
      msg << "log: non-positive input " << v;
      throw DomainError(msg.str());
    }
  }
  return detail::unary_elementwise(x, "log", [](double v) { return std::log(v); },
                                   [](detail::Node& self) {
                                     auto& px = detail::parent(self, 0);
                                     px.ensure_grad();
                                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       px.grad[i] += self.grad[i] / px.data[i];
                                   });
}

/// max(x, floor); gradient flows only where x is above the floor.
inline Tensor clamp_min(const Tensor& x, double floor) {
  return detail::unary_elementwise(x, "clamp_min",
                                   [floor](double v) { return v > floor ? v : floor; },
                                   [floor](detail::Node& self) {
                                     auto& px = detail::parent(self, 0);
                                     px.ensure_grad();
                                     for (std::size_t i = 0; i < self.grad.size(); ++i)
                                       if (px.data[i] > floor) px.grad[i] += self.grad[i];
                                   });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& x) {
  long double s = 0.0L;
  for (double v : x.data()) s += v;
  return make_op_result({1}, {static_cast<double>(s)}, "sum", {x}, [](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    px.ensure_grad();
    for (auto& g : px.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  long double s = 0.0L;
  for (double v : x.data()) s += v;
  return make_op_result({1}, {static_cast<double>(s / n)}, "mean", {x}, [n](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    px.ensure_grad();
    for (auto& g : px.grad) g += self.grad[0] / n;
  });
}

/// Column means of a[m×n]: averages the rows into a length-n vector.
inline Tensor mean_rows(const Tensor& a) {
  detail::require_matrix(a, "mean_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<long double> acc(n, 0.0L);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) acc[j] += a[i * n + j];
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<double>(acc[j] / m);
  return make_op_result({n}, std::move(out), "mean_rows", {a}, [m, n](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j] / static_cast<double>(m);
  });
}

struct MaxResult {
  Tensor values;
  std::vector<std::size_t> indices;
};

/// Per-row maximum of a[m×n] with the winning column. Ties go to the lowest
/// index; the gradient is routed to that element only.
inline MaxResult row_max(const Tensor& a) {
  detail::require_matrix(a, "row_max");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m);
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (a[i * n + j] > a[i * n + best]) best = j;
    idx[i] = best;
    out[i] = a[i * n + best];
  }
  auto values = make_op_result({m}, std::move(out), "row_max", {a}, [idx, n](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) pa.grad[i * n + idx[i]] += self.grad[i];
  });
  return {std::move(values), std::move(idx)};
}

/// Maximum over all elements of x as a scalar, plus its flat index.
inline std::pair<Tensor, std::size_t> max_reduce(const Tensor& x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  auto value = make_op_result({1}, {x[best]}, "max_reduce", {x}, [best](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    px.ensure_grad();
    px.grad[best] += self.grad[0];
  });
  return {std::move(value), best};
}

inline Tensor softmax_rows(const Tensor& a) {
  detail::require_matrix(a, "softmax_rows");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    double mx = a[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, a[i * n + j]);
    long double z = 0.0L;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(a[i * n + j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<double>(out[i * n + j] / z);
  }
  return make_op_result(a.shape(), std::move(out), "softmax_rows", {a}, [m, n](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * self.data[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        pa.grad[i * n + j] += self.data[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_op_result(std::move(shape), std::move(out), "reshape", {a}, [](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

/// Concatenates along `axis`. Matrices join on rows (0) or columns (1);
/// vectors join end to end (axis 0).
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (rank > 2 || axis >= rank) throw DimensionError("concat: axis out of range");
  for (const auto& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: rank mismatch");
    if (rank == 2 && p.shape()[1 - axis] != parts[0].shape()[1 - axis]) {
      throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
  }
  if (rank == 1 || axis == 0) {
    std::vector<double> out;
    std::vector<std::size_t> offsets;
    std::size_t lead = 0;
    for (const auto& p : parts) {
      offsets.push_back(out.size());
      out.insert(out.end(), p.data().begin(), p.data().end());
      lead += p.shape()[0];
    }
    Shape shape = rank == 1 ? Shape{lead} : Shape{lead, parts[0].cols()};
    return make_op_result(std::move(shape), std::move(out), "concat", parts,
                          [offsets](detail::Node& self) {
                            for (std::size_t p = 0; p < self.parents.size(); ++p) {
                              auto& par = *self.parents[p];
                              if (!par.requires_grad) continue;
                              par.ensure_grad();
                              for (std::size_t i = 0; i < par.grad.size(); ++i)
                                par.grad[i] += self.grad[offsets[p] + i];
                            }
                          });
  }
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> col_offsets;
  std::size_t total = 0;
  for (const auto& p : parts) {
    col_offsets.push_back(total);
    total += p.cols();
  }
  std::vector<double> out(m * total);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t w = parts[p].cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + col_offsets[p] + j] = parts[p][i * w + j];
  }
  return make_op_result({m, total}, std::move(out), "concat", parts,
                        [col_offsets, m, total](detail::Node& self) {
                          for (std::size_t p = 0; p < self.parents.size(); ++p) {
                            auto& par = *self.parents[p];
                            if (!par.requires_grad) continue;
                            par.ensure_grad();
                            const std::size_t w = par.shape[1];
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < w; ++j)
                                par.grad[i * w + j] += self.grad[i * total + col_offsets[p] + j];
                          }
                        });
}

inline Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  detail::require_matrix(a, "slice_cols");
  const std::size_t m = a.rows(), n = a.cols();
  if (count == 0 || start + count > n) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(a.shape()));
  }
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = a[i * n + start + j];
  return make_op_result({m, count}, std::move(out), "slice_cols", {a},
                        [m, n, start, count](detail::Node& self) {
                          auto& pa = detail::parent(self, 0);
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < count; ++j)
                              pa.grad[i * n + start + j] += self.grad[i * count + j];
                        });
}

inline Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  detail::require_matrix(a, "slice_rows");
  const std::size_t m = a.rows(), n = a.cols();
  if (count == 0 || start + count > m) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of " + shape_str(a.shape()));
  }
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                          a.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  return make_op_result({count, n}, std::move(out), "slice_rows", {a},
                        [start, n](detail::Node& self) {
                          auto& pa = detail::parent(self, 0);
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                            pa.grad[start * n + i] += self.grad[i];
                        });
}

/// Flat element i of x as a scalar tensor.
inline Tensor element(const Tensor& x, std::size_t i) {
  if (i >= x.size()) {
    throw DimensionError("element: index " + std::to_string(i) + " out of " + shape_str(x.shape()));
  }
  return make_op_result({1}, {x[i]}, "element", {x}, [i](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    px.ensure_grad();
    px.grad[i] += self.grad[0];
  });
}

/// Selects columns of a[r×c] in the given order; repeated indices are allowed.
inline Tensor gather_cols(const Tensor& a, const std::vector<std::size_t>& cols) {
  detail::require_matrix(a, "gather_cols");
  const std::size_t r = a.rows(), c = a.cols(), k = cols.size();
  if (k == 0) throw DimensionError("gather_cols: empty index list");
  for (auto j : cols) {
    if (j >= c) {
      throw DimensionError("gather_cols: column " + std::to_string(j) + " out of " +
                           shape_str(a.shape()));
    }
  }
  std::vector<double> out(r * k);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = a[i * c + cols[j]];
  return make_op_result({r, k}, std::move(out), "gather_cols", {a},
                        [cols, r, c, k](detail::Node& self) {
                          auto& pa = detail::parent(self, 0);
                          pa.ensure_grad();
                          for (std::size_t i = 0; i < r; ++i)
                            for (std::size_t j = 0; j < k; ++j)
                              pa.grad[i * c + cols[j]] += self.grad[i * k + j];
                        });
}

// ---------------------------------------------------------------------------
// Layers without parameters of their own

/// Inverted dropout. In eval mode (or with p == 0) the input tensor itself is
/// returned.
inline Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    std::ostringstream msg;
    msg << "dropout: probability must lie in [0, 1), got " << p;
    throw ParameterError(msg.str());
  }
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const double factor = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (auto& m : mask) m = keep(rng) ? factor : 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return make_op_result(x.shape(), std::move(out), "dropout", {x},
                        [mask = std::move(mask)](detail::Node& self) {
                          auto& px = detail::parent(self, 0);
                          px.ensure_grad();
                          for (std::size_t i = 0; i < mask.size(); ++i)
                            px.grad[i] += self.grad[i] * mask[i];
                        });
}

/// Normalises each row of x[m×n] to zero mean and unit variance, then
/// applies the elementwise gain and bias (both length n).
inline Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                              double eps = 1e-6) {
  detail::require_matrix(x, "layer_norm_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm_rows: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match " + shape_str(x.shape()));
  }
  std::vector<double> out(m * n), xhat(m * n), inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    long double acc = 0.0L;
    for (std::size_t j = 0; j < n; ++j) acc += x[i * n + j];
    const double mu = static_cast<double>(acc / n);
    acc = 0.0L;
    for (std::size_t j = 0; j < n; ++j) acc += (x[i * n + j] - mu) * (x[i * n + j] - mu);
    const double var = static_cast<double>(acc / n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (x[i * n + j] - mu) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
    }
  }
  return make_op_result(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
        auto& px = detail::parent(self, 0);
        auto& pg = detail::parent(self, 1);
        auto& pb = detail::parent(self, 2);
        const auto& g = self.grad;
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pg.grad[j] += g[i * n + j] * xhat[i * n + j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pb.grad[j] += g[i * n + j];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          const double dn = static_cast<double>(n);
          for (std::size_t i = 0; i < m; ++i) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = g[i * n + j] * pg.data[j];
              s1 += dxh;
              s2 += dxh * xhat[i * n + j];
            }
            for (std::size_t j = 0; j < n; ++j) {
              const double dxh = g[i * n + j] * pg.data[j];
              px.grad[i * n + j] += inv_std[i] / dn * (dn * dxh - s1 - xhat[i * n + j] * s2);
            }
          }
        }
      });
}

/// x·Wᵀ + b for x[m×in], W[out×in], b[out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row(matmul_nt(x, weight), bias);
}

inline Tensor linear(const Tensor& x, const Tensor& weight) { return matmul_nt(x, weight); }

}  // namespace groundbox
