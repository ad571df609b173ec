#pragma once

// Minimal reverse-mode autodiff over dense double tensors.
//
// A Tensor is a shared handle to a graph node. Operations on tensors that
// require gradients record a backward closure; backward() walks the graph in
// reverse topological order and accumulates into `grad`. Tensors are treated
// as (rows x cols) matrices where cols is the last dimension.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "iassd/errors.hpp"

namespace iassd::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily allocated
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    if (shape_size(shape) != values.size())
      throw std::invalid_argument("Tensor: value count " + std::to_string(values.size()) +
                                  " does not match shape " + shape_string(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor filled(Shape shape, double v) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t size() const { return node().value.size(); }
  std::size_t cols() const { return shape().empty() ? 1 : shape().back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }
  bool requires_grad() const { return node().requires_grad; }

  std::span<const double> values() const { return node().value; }
  std::span<double> mutable_values() { return node().value; }
  double item() const {
    if (size() != 1) throw std::invalid_argument("Tensor::item on non-scalar " + shape_string(shape()));
    return node().value[0];
  }
  double at(std::size_t r, std::size_t c) const { return node().value[r * cols() + c]; }

  /// Gradient buffer (zeros if backward has not touched this tensor).
  std::span<const double> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Same values, no graph history.
  Tensor detach() const { return Tensor(shape(), node().value); }

  std::shared_ptr<Node> node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

 private:
  const Node& node() const {
    if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
    return *node_;
  }
  Node& node() {
    if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
    return *node_;
  }
  std::shared_ptr<Node> node_;
};

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for its lifetime (inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

/// Builds an op result. `backward` receives the output node; inputs are
/// reachable through the captured tensors.
inline Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(values));
  bool needs = false;
  if (grad_mode())
    for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    auto n = out.node_ptr();
    n->requires_grad = true;
    for (const Tensor& t : inputs) n->inputs.push_back(t.node_ptr());
    n->backward_fn = std::move(backward);
  }
  return out;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
}

inline std::vector<double>& grad_of(const std::shared_ptr<Node>& n) {
  n->ensure_grad();
  return n->grad;
}

}  // namespace detail

/// Reverse-mode accumulation from a scalar. Gradients accumulate into every
/// tensor with requires_grad; call zero_grad on parameters between steps.
inline void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::logic_error("backward: no forward result to differentiate");
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  auto root = loss.node_ptr();
  if (!root->requires_grad) return;  // constant loss: nothing to propagate
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }
  // Intermediate gradients start from zero on every pass.
  for (Node* n : topo)
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

// ---------------------------------------------------------------------------
// Elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<double> v(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += b.values()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result(a.shape(), std::move(v), {a, b}, [an, bn](Node& o) {
    if (an->requires_grad) {
      auto& g = detail::grad_of(an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = detail::grad_of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<double> v(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] -= b.values()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result(a.shape(), std::move(v), {a, b}, [an, bn](Node& o) {
    if (an->requires_grad) {
      auto& g = detail::grad_of(an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = detail::grad_of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.values()[i] * b.values()[i];
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result(a.shape(), std::move(v), {a, b}, [an, bn](Node& o) {
    if (an->requires_grad) {
      auto& g = detail::grad_of(an);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = detail::grad_of(bn);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * an->value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x *= s;
  auto an = a.node_ptr();
  return detail::make_result(a.shape(), std::move(v), {a}, [an, s](Node& o) {
    auto& g = detail::grad_of(an);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o.grad[i];
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> v(a.values().begin(), a.values().end());
  for (double& x : v) x += s;
  auto an = a.node_ptr();
  return detail::make_result(a.shape(), std::move(v), {a}, [an](Node& o) {
    auto& g = detail::grad_of(an);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

namespace detail {

template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(a.values()[i]);
  auto an = a.node_ptr();
  return make_result(a.shape(), std::move(v), {a}, [an, df](Node& o) {
    auto& g = grad_of(an);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * df(an->value[i], o.value[i]);
  });
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor abs(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::abs(x); },
                       [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor sin(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Tensor cos(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

/// Quadratic below |x| < beta, linear above: 0.5 x^2 / beta or |x| - 0.5 beta.
inline Tensor smooth_l1(const Tensor& a, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("smooth_l1: beta must be positive");
  return detail::unary(
      a,
      [beta](double x) {
        const double ax = std::abs(x);
        return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
      },
      [beta](double x, double) {
        if (std::abs(x) < beta) return x / beta;
        return x > 0.0 ? 1.0 : -1.0;
      });
}

/// Elementwise minimum; the gradient flows to the smaller operand (a on ties).
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "minimum");
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::min(a.values()[i], b.values()[i]);
  auto an = a.node_ptr(), bn = b.node_ptr();
  return detail::make_result(a.shape(), std::move(v), {a, b}, [an, bn](Node& o) {
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const bool take_a = an->value[i] <= bn->value[i];
      const auto& n = take_a ? an : bn;
      if (n->requires_grad) detail::grad_of(n)[i] += o.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  auto an = a.node_ptr();
  return detail::make_result({1}, {s}, {a}, [an](Node& o) {
    auto& g = detail::grad_of(an);
    for (double& x : g) x += o.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Row sums: (rows x cols) -> (rows x 1).
inline Tensor sum_cols(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> v(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[i] += a.values()[i * c + j];
  auto an = a.node_ptr();
  return detail::make_result({r, 1}, std::move(v), {a}, [an, r, c](Node& o) {
    auto& g = detail::grad_of(an);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[i];
  });
}

/// Column means over rows: (rows x cols) -> (1 x cols).
inline Tensor mean_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0) throw std::invalid_argument("mean_rows: no rows");
  std::vector<double> v(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j] += a.values()[i * c + j];
  for (double& x : v) x /= static_cast<double>(r);
  auto an = a.node_ptr();
  return detail::make_result({1, c}, std::move(v), {a}, [an, r, c](Node& o) {
    auto& g = detail::grad_of(an);
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j] * inv;
  });
}

// ---------------------------------------------------------------------------
// Structural ops

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) throw std::invalid_argument("reshape: size mismatch");
  std::vector<double> v(a.values().begin(), a.values().end());
  auto an = a.node_ptr();
  return detail::make_result(std::move(shape), std::move(v), {a}, [an](Node& o) {
    auto& g = detail::grad_of(an);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

/// Rows selected (with repetition) by `idx`.
inline Tensor gather_rows(const Tensor& a, std::span<const std::uint32_t> idx) {
  const std::size_t c = a.cols();
  std::vector<double> v(idx.size() * c);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.rows()) throw std::out_of_range("gather_rows: index out of range");
    std::copy_n(a.values().begin() + static_cast<std::ptrdiff_t>(idx[r] * c), c, v.begin() + static_cast<std::ptrdiff_t>(r * c));
  }
  auto an = a.node_ptr();
  std::vector<std::uint32_t> keep(idx.begin(), idx.end());
  return detail::make_result({idx.size(), c}, std::move(v), {a}, [an, keep = std::move(keep), c](Node& o) {
    auto& g = detail::grad_of(an);
    for (std::size_t r = 0; r < keep.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) g[keep[r] * c + j] += o.grad[r * c + j];
  });
}

inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx) {
  std::vector<std::uint32_t> i32(idx.begin(), idx.end());
  return gather_rows(a, std::span<const std::uint32_t>(i32));
}

/// Columns [begin, end).
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  const std::size_t r = a.rows(), c = a.cols();
  if (begin > end || end > c) throw std::invalid_argument("slice_cols: bad range");
  const std::size_t w = end - begin;
  std::vector<double> v(r * w);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < w; ++j) v[i * w + j] = a.values()[i * c + begin + j];
  auto an = a.node_ptr();
  return detail::make_result({r, w}, std::move(v), {a}, [an, r, c, w, begin](Node& o) {
    auto& g = detail::grad_of(an);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += o.grad[i * w + j];
  });
}

/// One column per row: out[i] = a[i, col[i]].
inline Tensor pick_cols(const Tensor& a, std::span<const std::size_t> col) {
  const std::size_t r = a.rows(), c = a.cols();
  if (col.size() != r) throw std::invalid_argument("pick_cols: one column index per row required");
  std::vector<double> v(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (col[i] >= c) throw std::out_of_range("pick_cols: column out of range");
    v[i] = a.values()[i * c + col[i]];
  }
  auto an = a.node_ptr();
  std::vector<std::size_t> keep(col.begin(), col.end());
  return detail::make_result({r, 1}, std::move(v), {a}, [an, keep = std::move(keep), c](Node& o) {
    auto& g = detail::grad_of(an);
    for (std::size_t i = 0; i < keep.size(); ++i) g[i * c + keep[i]] += o.grad[i];
  });
}

/// Concatenation along the last dimension; all parts share the row count.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: nothing to concatenate");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.cols();
  }
  std::vector<double> v(r * total);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.values().begin() + static_cast<std::ptrdiff_t>(i * c), c,
                  v.begin() + static_cast<std::ptrdiff_t>(i * total + off));
    off += c;
  }
  std::vector<std::shared_ptr<Node>> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node_ptr());
  return detail::make_result({r, total}, std::move(v), parts, [nodes, r, total](Node& o) {
    std::size_t off = 0;
    for (const auto& n : nodes) {
      const std::size_t c = n->shape.empty() ? 1 : n->shape.back();
      if (n->requires_grad) {
        auto& g = detail::grad_of(n);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[i * total + off + j];
      }
      off += c;
    }
  });
}

/// Max over consecutive groups of `group` rows: (M*group x C) -> (M x C).
/// The gradient goes to the first maximal row of each group.
inline Tensor max_pool_groups(const Tensor& a, std::size_t group) {
  const std::size_t c = a.cols();
  if (group == 0 || a.rows() % group != 0) throw std::invalid_argument("max_pool_groups: bad group size");
  const std::size_t m = a.rows() / group;
  std::vector<double> v(m * c);
  std::vector<std::uint32_t> arg(m * c);
  const auto x = a.values();
  for (std::size_t g = 0; g < m; ++g)
    for (std::size_t j = 0; j < c; ++j) {
      std::size_t best = g * group;
      double bv = x[best * c + j];
      for (std::size_t q = 1; q < group; ++q) {
        const double cand = x[(g * group + q) * c + j];
        if (cand > bv) {
          bv = cand;
          best = g * group + q;
        }
      }
      v[g * c + j] = bv;
      arg[g * c + j] = static_cast<std::uint32_t>(best);
    }
  auto an = a.node_ptr();
  return detail::make_result({m, c}, std::move(v), {a}, [an, arg = std::move(arg), c](Node& o) {
    auto& g = detail::grad_of(an);
    for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k] * c + k % c] += o.grad[k];
  });
}

// ---------------------------------------------------------------------------
// Dense layers

/// x (R x I) * W (I x O) + b (O) -> (R x O).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t r = x.rows(), in = x.cols();
  if (w.shape().size() != 2 || w.shape()[0] != in)
    throw std::invalid_argument("linear: input width " + std::to_string(in) + " does not match weight " +
                                shape_string(w.shape()));
  const std::size_t out = w.shape()[1];
  if (b.size() != out) throw std::invalid_argument("linear: bias width mismatch");
  std::vector<double> v(r * out);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  const double* bv = b.values().data();
  for (std::size_t i = 0; i < r; ++i) {
    double* row = v.data() + i * out;
    std::copy_n(bv, out, row);
    for (std::size_t k = 0; k < in; ++k) {
      const double a = xv[i * in + k];
      if (a == 0.0) continue;
      const double* wr = wv + k * out;
      for (std::size_t j = 0; j < out; ++j) row[j] += a * wr[j];
    }
  }
  auto xn = x.node_ptr(), wn = w.node_ptr(), bn = b.node_ptr();
  return detail::make_result({r, out}, std::move(v), {x, w, b}, [xn, wn, bn, r, in, out](Node& o) {
    const double* gy = o.grad.data();
    if (xn->requires_grad) {
      auto& gx = detail::grad_of(xn);
      const double* wv = wn->value.data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < in; ++k) {
          const double* wr = wv + k * out;
          const double* gr = gy + i * out;
          double acc = 0.0;
          for (std::size_t j = 0; j < out; ++j) acc += gr[j] * wr[j];
          gx[i * in + k] += acc;
        }
    }
    if (wn->requires_grad) {
      auto& gw = detail::grad_of(wn);
      const double* xv = xn->value.data();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < in; ++k) {
          const double a = xv[i * in + k];
          if (a == 0.0) continue;
          double* gwr = gw.data() + k * out;
          const double* gr = gy + i * out;
          for (std::size_t j = 0; j < out; ++j) gwr[j] += a * gr[j];
        }
    }
    if (bn->requires_grad) {
      auto& gb = detail::grad_of(bn);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < out; ++j) gb[j] += gy[i * out + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Fused classification losses

/// Per-class sigmoid binary cross-entropy with a foreground weight:
///   l_i = -sum_c ( w_i * s_ic * log(p_ic) + (1 - s_ic) * log(1 - p_ic) ),
/// p = sigmoid(logit), logs clamped at `eps`. Returns mean_i l_i.
inline Tensor weighted_sigmoid_bce(const Tensor& logits, std::span<const double> labels,
                                   std::span<const double> fg_weight, double eps = 1e-12) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n * c) throw std::invalid_argument("sigmoid_bce: label shape mismatch");
  if (fg_weight.size() != n) throw std::invalid_argument("sigmoid_bce: weight count mismatch");
  if (n == 0) throw std::invalid_argument("sigmoid_bce: no rows");
  const auto z = logits.values();
  std::vector<double> dz(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t k = i * c + j;
      const double x = z[k];
      const double p = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      const double q = x >= 0.0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
      const double s = labels[k];
      const double wpos = fg_weight[i] * s;
      const double wneg = 1.0 - s;
      total -= wpos * std::log(std::max(p, eps)) + wneg * std::log(std::max(q, eps));
      // d/dx log p = q, d/dx log q = -p; zero where the clamp is active.
      const double dpos = p > eps ? q : 0.0;
      const double dneg = q > eps ? -p : 0.0;
      dz[k] = -(wpos * dpos + wneg * dneg) / static_cast<double>(n);
    }
  auto ln = logits.node_ptr();
  return detail::make_result({1}, {total / static_cast<double>(n)}, {logits}, [ln, dz = std::move(dz)](Node& o) {
    auto& g = detail::grad_of(ln);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += o.grad[0] * dz[k];
  });
}

/// Softmax cross-entropy per row against integer targets -> (rows x 1).
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> target) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (target.size() != n) throw std::invalid_argument("softmax_cross_entropy: target count mismatch");
  const auto z = logits.values();
  std::vector<double> v(n);
  std::vector<double> prob(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    if (target[i] >= c) throw std::out_of_range("softmax_cross_entropy: target out of range");
    double mx = z[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[i * c + j]);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(z[i * c + j] - mx);
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] = std::exp(z[i * c + j] - mx) / se;
    v[i] = -(z[i * c + target[i]] - mx - std::log(se));
  }
  auto ln = logits.node_ptr();
  std::vector<std::size_t> t(target.begin(), target.end());
  return detail::make_result({n, 1}, std::move(v), {logits},
                             [ln, prob = std::move(prob), t = std::move(t), c](Node& o) {
                               auto& g = detail::grad_of(ln);
                               for (std::size_t i = 0; i < t.size(); ++i)
                                 for (std::size_t j = 0; j < c; ++j)
                                   g[i * c + j] += o.grad[i] * (prob[i * c + j] - (j == t[i] ? 1.0 : 0.0));
                             });
}

}  // namespace iassd::nn
