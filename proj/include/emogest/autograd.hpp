#pragma once

// Reverse-mode automatic differentiation on Tensor, dynamic tape style.
// Each op returns a Var holding the forward value and a closure that routes
// output-gradients to its parents. Graphs are built per forward pass and
// freed when the last Var goes out of scope.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "emogest/tensor.hpp"

namespace emogest::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;

  Node(Tensor v, bool rg) : value(std::move(v)), requires_grad(rg) {}

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
};

inline Var constant(Tensor v) { return std::make_shared<Node>(std::move(v), false); }

// A trainable leaf; gradients accumulate into n->grad across backward passes
// until cleared by the optimizer.
inline Var leaf(Tensor v) { return std::make_shared<Node>(std::move(v), true); }

inline Var detach(const Var& a) { return constant(a->value); }

inline void accum(const Var& p, const Tensor& g) {
  if (!p->requires_grad) return;
  Tensor& pg = p->ensure_grad();
  flat(pg) += flat(g);
}

inline Var make_op(Tensor out, std::vector<Var> parents, std::function<void(Node&)> fn) {
  bool rg = false;
  for (const auto& p : parents)
    if (p->requires_grad) rg = true;
  auto n = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    n->parents = std::move(parents);
    n->backprop = std::move(fn);
  }
  return n;
}

// Backpropagate from a scalar (1x1) root.
inline void backward(const Var& root) {
  if (root->value.size() != 1)
    throw std::logic_error("backward: root must be scalar, got " + root->value.shape_str());
  if (!root->requires_grad) return;

  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && !n->grad.empty()) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// shape helpers
// ---------------------------------------------------------------------------

inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                " vs " + b->value.shape_str());
}

inline void check_rank2(const Var& a, const char* op) {
  if (a->value.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected rank-2, got " +
                                a->value.shape_str());
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  flat(out) += flat(b->value);
  return make_op(std::move(out), {a, b}, [](Node& self) {
    accum(self.parents[0], self.grad);
    accum(self.parents[1], self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  flat(out) -= flat(b->value);
  return make_op(std::move(out), {a, b}, [](Node& self) {
    accum(self.parents[0], self.grad);
    Tensor g = self.grad;
    flat(g) = -flat(g);
    accum(self.parents[1], g);
  });
}

inline Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  flat(out) *= flat(b->value);
  return make_op(std::move(out), {a, b}, [](Node& self) {
    Tensor ga(self.grad.shape()), gb(self.grad.shape());
    flat(ga) = flat(self.grad) * flat(self.parents[1]->value);
    flat(gb) = flat(self.grad) * flat(self.parents[0]->value);
    accum(self.parents[0], ga);
    accum(self.parents[1], gb);
  });
}

inline Var add_scalar(const Var& a, double s) {
  Tensor out = a->value;
  flat(out) += s;
  return make_op(std::move(out), {a}, [](Node& self) { accum(self.parents[0], self.grad); });
}

inline Var mul_scalar(const Var& a, double s) {
  Tensor out = a->value;
  flat(out) *= s;
  return make_op(std::move(out), {a}, [s](Node& self) {
    Tensor g = self.grad;
    flat(g) *= s;
    accum(self.parents[0], g);
  });
}

inline Var neg(const Var& a) { return mul_scalar(a, -1.0); }

// Unary op with elementwise derivative computed from (input, output).
template <class Fwd, class Dfn>
inline Var unary(const Var& a, Fwd fwd, Dfn dfn) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->value[i]);
  Tensor saved = out;
  return make_op(std::move(out), {a}, [saved, dfn](Node& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor g(self.grad.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * dfn(x[i], saved[i]);
    accum(self.parents[0], g);
  });
}

inline Var exp_(const Var& a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// log with a hard floor on the argument; derivative is zero below the floor.
inline Var log_clamped(const Var& a, double floor = 1e-12) {
  return unary(
      a, [floor](double x) { return std::log(std::max(x, floor)); },
      [floor](double x, double) { return x > floor ? 1.0 / x : 0.0; });
}

inline Var sqrt_(const Var& a) {
  return unary(
      a, [](double x) { return std::sqrt(std::max(x, 0.0)); },
      [](double x, double y) { return x > 0.0 ? 0.5 / y : 0.0; });
}

inline Var sigmoid(const Var& a) {
  return unary(
      a,
      [](double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh_(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(const Var& a, double alpha = 0.2) {
  return unary(
      a, [alpha](double x) { return x > 0.0 ? x : alpha * x; },
      [alpha](double x, double) { return x > 0.0 ? 1.0 : alpha; });
}

inline Var softplus(const Var& a) {
  return unary(
      a,
      [](double x) { return x > 30.0 ? x : std::log1p(std::exp(std::min(x, 30.0))); },
      [](double x, double) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      });
}

inline Var abs_(const Var& a) {
  return unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var clamp_min(const Var& a, double lo) {
  return unary(
      a, [lo](double x) { return std::max(x, lo); },
      [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

inline Var clamp_(const Var& a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  check_rank2(a, "matmul");
  check_rank2(b, "matmul");
  if (a->value.cols() != b->value.rows())
    throw std::invalid_argument("matmul: inner dims " + a->value.shape_str() + " vs " +
                                b->value.shape_str());
  Tensor out({a->value.rows(), b->value.cols()});
  mat(out).noalias() = mat(a->value) * mat(b->value);
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Var& a = self.parents[0];
    const Var& b = self.parents[1];
    if (a->requires_grad) {
      Tensor& ga = a->ensure_grad();
      mat(ga).noalias() += mat(self.grad) * mat(b->value).transpose();
    }
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      mat(gb).noalias() += mat(a->value).transpose() * mat(self.grad);
    }
  });
}

inline Var transpose(const Var& a) {
  check_rank2(a, "transpose");
  Tensor out({a->value.cols(), a->value.rows()});
  mat(out) = mat(a->value).transpose();
  return make_op(std::move(out), {a}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& ga = self.parents[0]->ensure_grad();
    mat(ga) += mat(self.grad).transpose();
  });
}

inline Var row_softmax(const Var& a) {
  check_rank2(a, "row_softmax");
  const std::size_t R = a->value.rows(), C = a->value.cols();
  Tensor out({R, C});
  for (std::size_t r = 0; r < R; ++r) {
    double m = a->value(r, 0);
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, a->value(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      out(r, c) = std::exp(a->value(r, c) - m);
      z += out(r, c);
    }
    for (std::size_t c = 0; c < C; ++c) out(r, c) /= z;
  }
  Tensor y = out;
  return make_op(std::move(out), {a}, [y](Node& self) {
    const std::size_t R = y.rows(), C = y.cols();
    Tensor g({R, C});
    for (std::size_t r = 0; r < R; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += self.grad(r, c) * y(r, c);
      for (std::size_t c = 0; c < C; ++c) g(r, c) = y(r, c) * (self.grad(r, c) - dot);
    }
    accum(self.parents[0], g);
  });
}

inline Var log_row_softmax(const Var& a) {
  check_rank2(a, "log_row_softmax");
  const std::size_t R = a->value.rows(), C = a->value.cols();
  Tensor out({R, C});
  for (std::size_t r = 0; r < R; ++r) {
    double m = a->value(r, 0);
    for (std::size_t c = 1; c < C; ++c) m = std::max(m, a->value(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(a->value(r, c) - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < C; ++c) out(r, c) = a->value(r, c) - lse;
  }
  Tensor y = out;
  return make_op(std::move(out), {a}, [y](Node& self) {
    const std::size_t R = y.rows(), C = y.cols();
    Tensor g({R, C});
    for (std::size_t r = 0; r < R; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < C; ++c) gsum += self.grad(r, c);
      for (std::size_t c = 0; c < C; ++c)
        g(r, c) = self.grad(r, c) - std::exp(y(r, c)) * gsum;
    }
    accum(self.parents[0], g);
  });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_op(Tensor::scalar(s), {a}, [](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    flat(g) = self.grad[0];
    accum(self.parents[0], g);
  });
}

inline Var mean_all(const Var& a) {
  const double n = static_cast<double>(a->value.size());
  double s = 0.0;
  for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  return make_op(Tensor::scalar(s / n), {a}, [n](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    flat(g) = self.grad[0] / n;
    accum(self.parents[0], g);
  });
}

// Column means: {R,C} -> {1,C}
inline Var mean_axis0(const Var& a) {
  check_rank2(a, "mean_axis0");
  const std::size_t R = a->value.rows(), C = a->value.cols();
  Tensor out({1, C});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out(0, c) += a->value(r, c);
  for (std::size_t c = 0; c < C; ++c) out(0, c) /= static_cast<double>(R);
  return make_op(std::move(out), {a}, [R, C](Node& self) {
    Tensor g({R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) g(r, c) = self.grad(0, c) / static_cast<double>(R);
    accum(self.parents[0], g);
  });
}

// Row means: {R,C} -> {R,1}
inline Var mean_axis1(const Var& a) {
  check_rank2(a, "mean_axis1");
  const std::size_t R = a->value.rows(), C = a->value.cols();
  Tensor out({R, 1});
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += a->value(r, c);
    out(r, 0) = s / static_cast<double>(C);
  }
  return make_op(std::move(out), {a}, [R, C](Node& self) {
    Tensor g({R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) g(r, c) = self.grad(r, 0) / static_cast<double>(C);
    accum(self.parents[0], g);
  });
}

// Global max of all entries -> {1,1}; gradient routes to the first argmax.
inline Var max_all(const Var& a) {
  std::size_t arg = 0;
  for (std::size_t i = 1; i < a->value.size(); ++i)
    if (a->value[i] > a->value[arg]) arg = i;
  return make_op(Tensor::scalar(a->value[arg]), {a}, [arg](Node& self) {
    Tensor g(self.parents[0]->value.shape());
    g[arg] = self.grad[0];
    accum(self.parents[0], g);
  });
}

// ---------------------------------------------------------------------------
// broadcast arithmetic: rv is {1,C}, cv is {R,1}
// ---------------------------------------------------------------------------

namespace detail {

enum class BOp { Add, Sub, Mul, Div };

inline Var broadcast_rv(const Var& a, const Var& v, BOp op) {
  check_rank2(a, "broadcast_rv");
  const std::size_t R = a->value.rows(), C = a->value.cols();
  if (v->value.rank() != 2 || v->value.rows() != 1 || v->value.cols() != C)
    throw std::invalid_argument("broadcast_rv: vector must be {1," + std::to_string(C) + "}");
  Tensor out({R, C});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double x = a->value(r, c), y = v->value(0, c);
      out(r, c) = op == BOp::Add ? x + y : op == BOp::Sub ? x - y : op == BOp::Mul ? x * y : x / y;
    }
  return make_op(std::move(out), {a, v}, [R, C, op](Node& self) {
    const Var& a = self.parents[0];
    const Var& v = self.parents[1];
    if (a->requires_grad) {
      Tensor ga({R, C});
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          const double g = self.grad(r, c);
          ga(r, c) = op == BOp::Mul   ? g * v->value(0, c)
                     : op == BOp::Div ? g / v->value(0, c)
                                      : g;
        }
      accum(a, ga);
    }
    if (v->requires_grad) {
      Tensor gv({1, C});
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          const double g = self.grad(r, c);
          const double x = a->value(r, c), y = v->value(0, c);
          gv(0, c) += op == BOp::Add   ? g
                      : op == BOp::Sub ? -g
                      : op == BOp::Mul ? g * x
                                       : -g * x / (y * y);
        }
      accum(v, gv);
    }
  });
}

inline Var broadcast_cv(const Var& a, const Var& v, BOp op) {
  check_rank2(a, "broadcast_cv");
  const std::size_t R = a->value.rows(), C = a->value.cols();
  if (v->value.rank() != 2 || v->value.rows() != R || v->value.cols() != 1)
    throw std::invalid_argument("broadcast_cv: vector must be {" + std::to_string(R) + ",1}");
  Tensor out({R, C});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const double x = a->value(r, c), y = v->value(r, 0);
      out(r, c) = op == BOp::Add ? x + y : op == BOp::Sub ? x - y : op == BOp::Mul ? x * y : x / y;
    }
  return make_op(std::move(out), {a, v}, [R, C, op](Node& self) {
    const Var& a = self.parents[0];
    const Var& v = self.parents[1];
    if (a->requires_grad) {
      Tensor ga({R, C});
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          const double g = self.grad(r, c);
          ga(r, c) = op == BOp::Mul   ? g * v->value(r, 0)
                     : op == BOp::Div ? g / v->value(r, 0)
                                      : g;
        }
      accum(a, ga);
    }
    if (v->requires_grad) {
      Tensor gv({R, 1});
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) {
          const double g = self.grad(r, c);
          const double x = a->value(r, c), y = v->value(r, 0);
          gv(r, 0) += op == BOp::Add   ? g
                      : op == BOp::Sub ? -g
                      : op == BOp::Mul ? g * x
                                       : -g * x / (y * y);
        }
      accum(v, gv);
    }
  });
}

}  // namespace detail

inline Var add_rv(const Var& a, const Var& v) { return detail::broadcast_rv(a, v, detail::BOp::Add); }
inline Var sub_rv(const Var& a, const Var& v) { return detail::broadcast_rv(a, v, detail::BOp::Sub); }
inline Var mul_rv(const Var& a, const Var& v) { return detail::broadcast_rv(a, v, detail::BOp::Mul); }
inline Var div_rv(const Var& a, const Var& v) { return detail::broadcast_rv(a, v, detail::BOp::Div); }
inline Var add_cv(const Var& a, const Var& v) { return detail::broadcast_cv(a, v, detail::BOp::Add); }
inline Var sub_cv(const Var& a, const Var& v) { return detail::broadcast_cv(a, v, detail::BOp::Sub); }
inline Var mul_cv(const Var& a, const Var& v) { return detail::broadcast_cv(a, v, detail::BOp::Mul); }
inline Var div_cv(const Var& a, const Var& v) { return detail::broadcast_cv(a, v, detail::BOp::Div); }

// y = a * s with s a {1,1} node (scalar from the graph, e.g. a mixture weight).
inline Var scale_by(const Var& a, const Var& s) {
  if (s->value.size() != 1) throw std::invalid_argument("scale_by: s must be scalar");
  Tensor out = a->value;
  flat(out) *= s->value[0];
  return make_op(std::move(out), {a, s}, [](Node& self) {
    const Var& a = self.parents[0];
    const Var& s = self.parents[1];
    if (a->requires_grad) {
      Tensor ga = self.grad;
      flat(ga) *= s->value[0];
      accum(a, ga);
    }
    if (s->requires_grad) {
      double d = 0.0;
      for (std::size_t i = 0; i < a->value.size(); ++i) d += self.grad[i] * a->value[i];
      accum(s, Tensor::scalar(d));
    }
  });
}

// ---------------------------------------------------------------------------
// slicing / concatenation / gathering (rank-2, row-major)
// ---------------------------------------------------------------------------

inline Var slice_rows(const Var& a, std::size_t r0, std::size_t r1) {
  check_rank2(a, "slice_rows");
  const std::size_t R = a->value.rows(), C = a->value.cols();
  if (r0 >= r1 || r1 > R) throw std::invalid_argument("slice_rows: bad range");
  Tensor out({r1 - r0, C});
  std::copy(a->value.data() + r0 * C, a->value.data() + r1 * C, out.data());
  return make_op(std::move(out), {a}, [r0, C](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& ga = self.parents[0]->ensure_grad();
    const std::size_t n = self.grad.size();
    for (std::size_t i = 0; i < n; ++i) ga[r0 * C + i] += self.grad[i];
  });
}

inline Var slice_cols(const Var& a, std::size_t c0, std::size_t c1) {
  check_rank2(a, "slice_cols");
  const std::size_t R = a->value.rows(), C = a->value.cols();
  if (c0 >= c1 || c1 > C) throw std::invalid_argument("slice_cols: bad range");
  Tensor out({R, c1 - c0});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = c0; c < c1; ++c) out(r, c - c0) = a->value(r, c);
  return make_op(std::move(out), {a}, [R, c0, c1](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& ga = self.parents[0]->ensure_grad();
    const std::size_t C = self.parents[0]->value.cols();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = c0; c < c1; ++c) ga[r * C + c] += self.grad(r, c - c0);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  const std::size_t C = parts[0]->value.cols();
  std::size_t R = 0;
  for (const auto& p : parts) {
    check_rank2(p, "concat_rows");
    if (p->value.cols() != C) throw std::invalid_argument("concat_rows: column mismatch");
    R += p->value.rows();
  }
  Tensor out({R, C});
  std::size_t r = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + r * C);
    r += p->value.rows();
  }
  return make_op(std::move(out), parts, [C](Node& self) {
    std::size_t r = 0;
    for (auto& p : self.parents) {
      const std::size_t pr = p->value.rows();
      if (p->requires_grad) {
        Tensor& gp = p->ensure_grad();
        for (std::size_t i = 0; i < pr * C; ++i) gp[i] += self.grad[r * C + i];
      }
      r += pr;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  const std::size_t R = parts[0]->value.rows();
  std::size_t C = 0;
  for (const auto& p : parts) {
    check_rank2(p, "concat_cols");
    if (p->value.rows() != R) throw std::invalid_argument("concat_cols: row mismatch");
    C += p->value.cols();
  }
  Tensor out({R, C});
  std::size_t c = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p->value.cols();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t j = 0; j < pc; ++j) out(r, c + j) = p->value(r, j);
    c += pc;
  }
  return make_op(std::move(out), parts, [R](Node& self) {
    std::size_t c = 0;
    for (auto& p : self.parents) {
      const std::size_t pc = p->value.cols();
      if (p->requires_grad) {
        Tensor& gp = p->ensure_grad();
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t j = 0; j < pc; ++j) gp[r * pc + j] += self.grad(r, c + j);
      }
      c += pc;
    }
  });
}

inline Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
  check_rank2(a, "gather_rows");
  const std::size_t C = a->value.cols();
  Tensor out({idx.size(), C});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= a->value.rows()) throw std::invalid_argument("gather_rows: index out of range");
    std::copy(a->value.data() + idx[i] * C, a->value.data() + (idx[i] + 1) * C,
              out.data() + i * C);
  }
  return make_op(std::move(out), {a}, [idx, C](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& ga = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < C; ++c) ga[idx[i] * C + c] += self.grad(i, c);
  });
}

inline Var reshape(const Var& a, std::vector<std::size_t> shape) {
  Tensor out = a->value.reshaped(shape);
  return make_op(std::move(out), {a}, [](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& ga = self.parents[0]->ensure_grad();
    flat(ga) += flat(self.grad);
  });
}

// ---------------------------------------------------------------------------
// temporal resampling: {T,C} -> {T2,C}, endpoint-aligned linear interpolation
// ---------------------------------------------------------------------------

inline Var time_resample(const Var& a, std::size_t t2) {
  check_rank2(a, "time_resample");
  const std::size_t T = a->value.rows(), C = a->value.cols();
  if (t2 == 0) throw std::invalid_argument("time_resample: target length must be positive");
  // Per output row: (source index, blend weight toward index+1).
  std::vector<std::pair<std::size_t, double>> map(t2);
  for (std::size_t t = 0; t < t2; ++t) {
    double src = 0.0;
    if (T > 1)
      src = t2 > 1 ? static_cast<double>(t) * static_cast<double>(T - 1) /
                         static_cast<double>(t2 - 1)
                   : static_cast<double>(T - 1) / 2.0;
    std::size_t i = std::min(static_cast<std::size_t>(src), T - 1);
    double w = src - static_cast<double>(i);
    if (i + 1 >= T) {
      i = T - 1;
      w = 0.0;
    }
    map[t] = {i, w};
  }
  Tensor out({t2, C});
  for (std::size_t t = 0; t < t2; ++t) {
    const auto [i, w] = map[t];
    const std::size_t j = std::min(i + 1, T - 1);
    for (std::size_t c = 0; c < C; ++c)
      out(t, c) = (1.0 - w) * a->value(i, c) + w * a->value(j, c);
  }
  return make_op(std::move(out), {a}, [map, T, C](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& ga = self.parents[0]->ensure_grad();
    for (std::size_t t = 0; t < map.size(); ++t) {
      const auto [i, w] = map[t];
      const std::size_t j = std::min(i + 1, T - 1);
      for (std::size_t c = 0; c < C; ++c) {
        ga[i * C + c] += (1.0 - w) * self.grad(t, c);
        ga[j * C + c] += w * self.grad(t, c);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

// 2-D convolution. x {Ci,H,W}, w {Co, Ci*kh*kw}, b {1,Co} -> {Co,Ho,Wo}.
inline Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t kh, std::size_t kw,
                  std::size_t sh, std::size_t sw, std::size_t ph, std::size_t pw) {
  if (x->value.rank() != 3) throw std::invalid_argument("conv2d: input must be {C,H,W}");
  const std::size_t Ci = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const std::size_t Co = w->value.rows();
  if (w->value.cols() != Ci * kh * kw) throw std::invalid_argument("conv2d: weight shape mismatch");
  if (H + 2 * ph < kh || W + 2 * pw < kw) throw std::invalid_argument("conv2d: kernel larger than input");
  const std::size_t Ho = (H + 2 * ph - kh) / sh + 1;
  const std::size_t Wo = (W + 2 * pw - kw) / sw + 1;

  // im2col: {Ci*kh*kw, Ho*Wo}
  Tensor cols({Ci * kh * kw, Ho * Wo});
  for (std::size_t ci = 0; ci < Ci; ++ci)
    for (std::size_t dy = 0; dy < kh; ++dy)
      for (std::size_t dx = 0; dx < kw; ++dx) {
        const std::size_t row = (ci * kh + dy) * kw + dx;
        for (std::size_t oy = 0; oy < Ho; ++oy)
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const long iy = static_cast<long>(oy * sh + dy) - static_cast<long>(ph);
            const long ix = static_cast<long>(ox * sw + dx) - static_cast<long>(pw);
            double v = 0.0;
            if (iy >= 0 && iy < static_cast<long>(H) && ix >= 0 && ix < static_cast<long>(W))
              v = x->value(ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            cols(row, oy * Wo + ox) = v;
          }
      }

  Tensor out({Co, Ho, Wo});
  {
    Eigen::Map<RowMat> y(out.data(), static_cast<Eigen::Index>(Co),
                         static_cast<Eigen::Index>(Ho * Wo));
    y.noalias() = mat(w->value) * mat(cols);
    for (std::size_t co = 0; co < Co; ++co) y.row(static_cast<Eigen::Index>(co)).array() += b->value(0, co);
  }

  Tensor saved_cols = cols;
  return make_op(std::move(out), {x, w, b},
                 [saved_cols, Ci, H, W, Co, Ho, Wo, kh, kw, sh, sw, ph, pw](Node& self) {
    const Var& x = self.parents[0];
    const Var& w = self.parents[1];
    const Var& b = self.parents[2];
    Eigen::Map<const RowMat> g(self.grad.data(), static_cast<Eigen::Index>(Co),
                               static_cast<Eigen::Index>(Ho * Wo));
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (std::size_t co = 0; co < Co; ++co)
        gb(0, co) += g.row(static_cast<Eigen::Index>(co)).sum();
    }
    if (w->requires_grad) {
      Tensor& gw = w->ensure_grad();
      mat(gw).noalias() += g * mat(saved_cols).transpose();
    }
    if (x->requires_grad) {
      Tensor dcols({Ci * kh * kw, Ho * Wo});
      mat(dcols).noalias() = mat(w->value).transpose() * g;
      Tensor& gx = x->ensure_grad();
      for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t dy = 0; dy < kh; ++dy)
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const std::size_t row = (ci * kh + dy) * kw + dx;
            for (std::size_t oy = 0; oy < Ho; ++oy)
              for (std::size_t ox = 0; ox < Wo; ++ox) {
                const long iy = static_cast<long>(oy * sh + dy) - static_cast<long>(ph);
                const long ix = static_cast<long>(ox * sw + dx) - static_cast<long>(pw);
                if (iy >= 0 && iy < static_cast<long>(H) && ix >= 0 && ix < static_cast<long>(W))
                  gx[(ci * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] +=
                      dcols(row, oy * Wo + ox);
              }
          }
    }
  });
}

// 1-D temporal convolution. x {T,Ci}, w {Co, Ci*k}, b {1,Co} -> {To,Co}.
inline Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t k, std::size_t stride,
                  std::size_t pad) {
  check_rank2(x, "conv1d");
  const std::size_t T = x->value.rows(), Ci = x->value.cols();
  const std::size_t Co = w->value.rows();
  if (w->value.cols() != Ci * k) throw std::invalid_argument("conv1d: weight shape mismatch");
  if (T + 2 * pad < k) throw std::invalid_argument("conv1d: kernel larger than input");
  const std::size_t To = (T + 2 * pad - k) / stride + 1;

  Tensor cols({To, Ci * k});
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t d = 0; d < k; ++d) {
      const long it = static_cast<long>(t * stride + d) - static_cast<long>(pad);
      for (std::size_t ci = 0; ci < Ci; ++ci) {
        double v = 0.0;
        if (it >= 0 && it < static_cast<long>(T)) v = x->value(static_cast<std::size_t>(it), ci);
        cols(t, d * Ci + ci) = v;
      }
    }

  Tensor out({To, Co});
  mat(out).noalias() = mat(cols) * mat(w->value).transpose();
  for (std::size_t t = 0; t < To; ++t)
    for (std::size_t co = 0; co < Co; ++co) out(t, co) += b->value(0, co);

  Tensor saved_cols = cols;
  return make_op(std::move(out), {x, w, b},
                 [saved_cols, T, Ci, Co, To, k, stride, pad](Node& self) {
    const Var& x = self.parents[0];
    const Var& w = self.parents[1];
    const Var& b = self.parents[2];
    if (b->requires_grad) {
      Tensor& gb = b->ensure_grad();
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t co = 0; co < Co; ++co) gb(0, co) += self.grad(t, co);
    }
    if (w->requires_grad) {
      Tensor& gw = w->ensure_grad();
      mat(gw).noalias() += mat(self.grad).transpose() * mat(saved_cols);
    }
    if (x->requires_grad) {
      Tensor dcols({To, Ci * k});
      mat(dcols).noalias() = mat(self.grad) * mat(w->value);
      Tensor& gx = x->ensure_grad();
      for (std::size_t t = 0; t < To; ++t)
        for (std::size_t d = 0; d < k; ++d) {
          const long it = static_cast<long>(t * stride + d) - static_cast<long>(pad);
          if (it < 0 || it >= static_cast<long>(T)) continue;
          for (std::size_t ci = 0; ci < Ci; ++ci)
            gx[static_cast<std::size_t>(it) * Ci + ci] += dcols(t, d * Ci + ci);
        }
    }
  });
}

// ---------------------------------------------------------------------------
// channel ops on {C,H,W} feature maps
// ---------------------------------------------------------------------------

inline Var channel_mean(const Var& x) {
  if (x->value.rank() != 3) throw std::invalid_argument("channel_mean: input must be {C,H,W}");
  const std::size_t C = x->value.dim(0), HW = x->value.dim(1) * x->value.dim(2);
  Tensor out({1, C});
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += x->value[c * HW + i];
    out(0, c) = s / static_cast<double>(HW);
  }
  return make_op(std::move(out), {x}, [C, HW](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    Tensor& gx = self.parents[0]->ensure_grad();
    for (std::size_t c = 0; c < C; ++c) {
      const double g = self.grad(0, c) / static_cast<double>(HW);
      for (std::size_t i = 0; i < HW; ++i) gx[c * HW + i] += g;
    }
  });
}

inline Var scale_channels(const Var& x, const Var& s) {
  if (x->value.rank() != 3) throw std::invalid_argument("scale_channels: input must be {C,H,W}");
  const std::size_t C = x->value.dim(0), HW = x->value.dim(1) * x->value.dim(2);
  if (s->value.rank() != 2 || s->value.rows() != 1 || s->value.cols() != C)
    throw std::invalid_argument("scale_channels: scale must be {1,C}");
  Tensor out = x->value;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i) out[c * HW + i] *= s->value(0, c);
  return make_op(std::move(out), {x, s}, [C, HW](Node& self) {
    const Var& x = self.parents[0];
    const Var& s = self.parents[1];
    if (x->requires_grad) {
      Tensor& gx = x->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < HW; ++i) gx[c * HW + i] += self.grad[c * HW + i] * s->value(0, c);
    }
    if (s->requires_grad) {
      Tensor& gs = s->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) {
        double d = 0.0;
        for (std::size_t i = 0; i < HW; ++i) d += self.grad[c * HW + i] * x->value[c * HW + i];
        gs(0, c) += d;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// common compositions
// ---------------------------------------------------------------------------

inline Var l1_loss(const Var& a, const Var& b) { return mean_all(abs_(sub(a, b))); }

// Scaled dot-product attention: softmax(q k^T / sqrt(d)) v.
inline Var attention(const Var& q, const Var& k, const Var& v) {
  const double d = static_cast<double>(q->value.cols());
  Var scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(d));
  return matmul(row_softmax(scores), v);
}

}  // namespace emogest::ag
