#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cmcr/matrix.hpp"

// Minimal reverse-mode differentiation over dense real matrices. A DiffValue
// is a handle to a tape node; operations record parents plus a backward rule,
// and backward() on a 1x1 root accumulates exact derivatives into every leaf
// that requires gradients. One tape (graph) belongs to one worker; distinct
// graphs may be evaluated in parallel.
namespace cmcr::ad {

constexpr double kLogFloor = 1e-12;  // log(x) evaluates log(max(x, kLogFloor))

struct Node {
  Matrix data;
  Matrix grad;  // always same shape as data
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
};

class DiffValue {
 public:
  DiffValue() = default;

  static DiffValue leaf(Matrix data, bool requires_grad = true) {
    auto n = std::make_shared<Node>();
    n->grad = Matrix(data.rows, data.cols);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return DiffValue(std::move(n));
  }

  static DiffValue constant(Matrix data) { return leaf(std::move(data), false); }

  static DiffValue scalar(double x, bool requires_grad = false) {
    return leaf(Matrix(1, 1, x), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix& data() const { return node_->data; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::size_t rows() const { return node_->data.rows; }
  std::size_t cols() const { return node_->data.cols; }

  double item() const {
    detail::require(node_->data.is_scalar(),
                    "item: value is " + shape_str(node_->data) + ", expected 1x1");
    return node_->data.v[0];
  }

  void zero_grad() { node_->grad.fill(0.0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit DiffValue(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;

  friend DiffValue make_op(Matrix, std::vector<DiffValue>, std::function<void(Node&)>);
};

// Builds an interior node; drops the backward rule when no input needs grads.
inline DiffValue make_op(Matrix data, std::vector<DiffValue> inputs,
                         std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->grad = Matrix(data.rows, data.cols);
  n->data = std::move(data);
  for (const auto& in : inputs) {
    n->requires_grad = n->requires_grad || in.requires_grad();
    n->parents.push_back(in.node());
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return DiffValue(std::move(n));
}

// ---------------------------------------------------------------------------
// core ops

inline DiffValue matmul(const DiffValue& a, const DiffValue& b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimensions differ: " +
                                            shape_str(a.data()) + " * " + shape_str(b.data()));
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(matmul_nn(a.data(), b.data()), {a, b}, [pa, pb](Node& n) {
    if (pa->requires_grad) add_in_place(pa->grad, matmul_nt(n.grad, pb->data));
    if (pb->requires_grad) add_in_place(pb->grad, matmul_tn(pa->data, n.grad));
  });
}

inline DiffValue transpose(const DiffValue& x) {
  Node* px = x.node().get();
  return make_op(transposed(x.data()), {x}, [px](Node& n) {
    if (px->requires_grad) add_in_place(px->grad, transposed(n.grad));
  });
}

namespace ew {

// Broadcast layout for binary elementwise ops: identical shapes, or one side
// is a 1x1 scalar.
enum class Bcast { kSame, kScalarLeft, kScalarRight };

inline Bcast classify(const Matrix& a, const Matrix& b, const char* name) {
  if (a.same_shape(b)) return Bcast::kSame;
  if (a.is_scalar()) return Bcast::kScalarLeft;
  if (b.is_scalar()) return Bcast::kScalarRight;
  detail::fail(std::string(name) + ": shapes not broadcast-compatible: " + shape_str(a) + " vs " +
               shape_str(b));
}

// f(x, y), with dfa/dfb the partials evaluated at the broadcast operand pair.
template <class F, class DA, class DB>
DiffValue binary(const DiffValue& a, const DiffValue& b, const char* name, F f, DA dfa, DB dfb) {
  const Matrix& A = a.data();
  const Matrix& B = b.data();
  const Bcast bc = classify(A, B, name);
  const Matrix& big = (bc == Bcast::kScalarLeft) ? B : A;
  Matrix out(big.rows, big.cols);
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    const double x = (bc == Bcast::kScalarLeft) ? A.v[0] : A.v[i];
    const double y = (bc == Bcast::kScalarRight) ? B.v[0] : B.v[i];
    out.v[i] = f(x, y);
  }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [pa, pb, bc, dfa, dfb](Node& n) {
    const Matrix& A2 = pa->data;
    const Matrix& B2 = pb->data;
    for (std::size_t i = 0; i < n.grad.v.size(); ++i) {
      const double g = n.grad.v[i];
      const double x = (bc == Bcast::kScalarLeft) ? A2.v[0] : A2.v[i];
      const double y = (bc == Bcast::kScalarRight) ? B2.v[0] : B2.v[i];
      if (pa->requires_grad) pa->grad.v[bc == Bcast::kScalarLeft ? 0 : i] += g * dfa(x, y);
      if (pb->requires_grad) pb->grad.v[bc == Bcast::kScalarRight ? 0 : i] += g * dfb(x, y);
    }
  });
}

template <class F, class D>
DiffValue unary(const DiffValue& x, F f, D df) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = f(x.data().v[i]);
  Node* px = x.node().get();
  return make_op(std::move(out), {x}, [px, df](Node& n) {
    if (!px->requires_grad) return;
    for (std::size_t i = 0; i < n.grad.v.size(); ++i)
      px->grad.v[i] += n.grad.v[i] * df(px->data.v[i]);
  });
}

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace ew

inline DiffValue add(const DiffValue& a, const DiffValue& b) {
  return ew::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline DiffValue sub(const DiffValue& a, const DiffValue& b) {
  return ew::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline DiffValue mul(const DiffValue& a, const DiffValue& b) {
  return ew::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline DiffValue exp(const DiffValue& x) {
  return ew::unary(
      x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

// Input is clamped to >= kLogFloor before evaluation; the clamp is part of
// the function, so the derivative vanishes below the floor.
inline DiffValue log(const DiffValue& x) {
  return ew::unary(
      x, [](double v) { return std::log(v < kLogFloor ? kLogFloor : v); },
      [](double v) { return v < kLogFloor ? 0.0 : 1.0 / v; });
}

// Subgradient at 0 is defined as 0.
inline DiffValue relu(const DiffValue& x) {
  return ew::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline DiffValue sigmoid(const DiffValue& x) {
  return ew::unary(
      x, [](double v) { return ew::sigmoid_value(v); },
      [](double v) {
        const double s = ew::sigmoid_value(v);
        return s * (1.0 - s);
      });
}

inline DiffValue square(const DiffValue& x) {
  return ew::unary(
      x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

inline DiffValue scale(const DiffValue& x, double c) {
  return ew::unary(
      x, [c](double v) { return c * v; }, [c](double) { return c; });
}

inline DiffValue add_scalar(const DiffValue& x, double c) {
  return ew::unary(
      x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

inline DiffValue softmax_rows(const DiffValue& x) {
  const Matrix& X = x.data();
  Matrix out(X.rows, X.cols);
  for (std::size_t i = 0; i < X.rows; ++i) {
    const double* xr = X.row_ptr(i);
    double* yr = out.row_ptr(i);
    double m = xr[0];
    for (std::size_t j = 1; j < X.cols; ++j) m = std::max(m, xr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < X.cols; ++j) {
      yr[j] = std::exp(xr[j] - m);
      s += yr[j];
    }
    for (std::size_t j = 0; j < X.cols; ++j) yr[j] /= s;
  }
  Node* px = x.node().get();
  return make_op(std::move(out), {x}, [px](Node& n) {
    if (!px->requires_grad) return;
    const Matrix& y = n.data;  // forward output
    for (std::size_t i = 0; i < y.rows; ++i) {
      const double* yr = y.row_ptr(i);
      const double* gr = n.grad.row_ptr(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) dot += gr[j] * yr[j];
      double* xr = px->grad.row_ptr(i);
      for (std::size_t j = 0; j < y.cols; ++j) xr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

inline DiffValue l2_normalize_rows(const DiffValue& x) {
  const Matrix& X = x.data();
  Matrix out(X.rows, X.cols);
  std::vector<double> norms(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) {
    const double* xr = X.row_ptr(i);
    double s = 0.0;
    for (std::size_t j = 0; j < X.cols; ++j) s += xr[j] * xr[j];
    const double nrm = std::sqrt(s);
    detail::require(nrm > 1e-12, "l2_normalize_rows: row " + std::to_string(i) +
                                     " has near-zero norm (degenerate input)");
    norms[i] = nrm;
    double* yr = out.row_ptr(i);
    for (std::size_t j = 0; j < X.cols; ++j) yr[j] = xr[j] / nrm;
  }
  Node* px = x.node().get();
  return make_op(std::move(out), {x}, [px, norms = std::move(norms)](Node& n) {
    if (!px->requires_grad) return;
    const Matrix& y = n.data;
    for (std::size_t i = 0; i < y.rows; ++i) {
      const double* yr = y.row_ptr(i);
      const double* gr = n.grad.row_ptr(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols; ++j) dot += gr[j] * yr[j];
      double* xr = px->grad.row_ptr(i);
      for (std::size_t j = 0; j < y.cols; ++j) xr[j] += (gr[j] - yr[j] * dot) / norms[i];
    }
  });
}

// Same data, no parents, no gradient flow; realizes the stop-gradient sg(.).
inline DiffValue detach(const DiffValue& x) { return DiffValue::constant(x.data()); }

// Forward value is exactly `forwarded`; backward passes the incoming gradient
// to x unchanged. Used by nearest-codeword quantization.
inline DiffValue straight_through(const DiffValue& x, Matrix forwarded) {
  detail::require(forwarded.same_shape(x.data()),
                  "straight_through: forwarded shape " + shape_str(forwarded) +
                      " differs from input " + shape_str(x.data()));
  Node* px = x.node().get();
  return make_op(std::move(forwarded), {x}, [px](Node& n) {
    if (px->requires_grad) add_in_place(px->grad, n.grad);
  });
}

inline DiffValue gather_rows(const DiffValue& x, std::vector<std::size_t> indices) {
  const Matrix& X = x.data();
  Matrix out(indices.size(), X.cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    detail::require(indices[r] < X.rows, "gather_rows: index " + std::to_string(indices[r]) +
                                             " out of range for " + shape_str(X));
    std::copy_n(X.row_ptr(indices[r]), X.cols, out.row_ptr(r));
  }
  Node* px = x.node().get();
  return make_op(std::move(out), {x}, [px, indices = std::move(indices)](Node& n) {
    if (!px->requires_grad) return;
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const double* gr = n.grad.row_ptr(r);
      double* xr = px->grad.row_ptr(indices[r]);
      for (std::size_t j = 0; j < n.grad.cols; ++j) xr[j] += gr[j];
    }
  });
}

// Constant sparse linear map over rows: out[r] = sum_k w[r][k] * x[idx[r][k]].
// Carries all geometry-derived structure (k-NN pooling, patch pooling,
// bilinear upsampling, masked substitution) as fixed weights.
struct RowMix {
  std::size_t out_rows = 0;
  std::size_t in_rows = 0;
  std::vector<std::uint32_t> offsets;  // out_rows + 1
  std::vector<std::uint32_t> index;
  std::vector<double> weight;

  static RowMix build(std::size_t out_rows, std::size_t in_rows,
                      const std::vector<std::vector<std::pair<std::size_t, double>>>& rows) {
    detail::require(rows.size() == out_rows, "RowMix: row list size mismatch");
    RowMix m;
    m.out_rows = out_rows;
    m.in_rows = in_rows;
    m.offsets.reserve(out_rows + 1);
    m.offsets.push_back(0);
    for (const auto& r : rows) {
      for (const auto& [i, w] : r) {
        detail::require(i < in_rows, "RowMix: input row index out of range");
        m.index.push_back(static_cast<std::uint32_t>(i));
        m.weight.push_back(w);
      }
      m.offsets.push_back(static_cast<std::uint32_t>(m.index.size()));
    }
    return m;
  }
};

inline DiffValue row_mix(const RowMix& mix, const DiffValue& x) {
  detail::require(x.rows() == mix.in_rows, "row_mix: input has " + std::to_string(x.rows()) +
                                               " rows, map expects " +
                                               std::to_string(mix.in_rows));
  const Matrix& X = x.data();
  Matrix out(mix.out_rows, X.cols);
  for (std::size_t r = 0; r < mix.out_rows; ++r) {
    double* orow = out.row_ptr(r);
    for (std::uint32_t e = mix.offsets[r]; e < mix.offsets[r + 1]; ++e) {
      const double w = mix.weight[e];
      const double* xrow = X.row_ptr(mix.index[e]);
      for (std::size_t j = 0; j < X.cols; ++j) orow[j] += w * xrow[j];
    }
  }
  Node* px = x.node().get();
  // The map is captured by value; weights are constants, not differentiated.
  return make_op(std::move(out), {x}, [px, mix](Node& n) {
    if (!px->requires_grad) return;
    for (std::size_t r = 0; r < mix.out_rows; ++r) {
      const double* gr = n.grad.row_ptr(r);
      for (std::uint32_t e = mix.offsets[r]; e < mix.offsets[r + 1]; ++e) {
        const double w = mix.weight[e];
        double* xrow = px->grad.row_ptr(mix.index[e]);
        for (std::size_t j = 0; j < n.grad.cols; ++j) xrow[j] += w * gr[j];
      }
    }
  });
}

inline DiffValue hcat(const DiffValue& a, const DiffValue& b) {
  detail::require(a.rows() == b.rows(), "hcat: row counts differ: " + shape_str(a.data()) +
                                            " vs " + shape_str(b.data()));
  const Matrix& A = a.data();
  const Matrix& B = b.data();
  Matrix out(A.rows, A.cols + B.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    std::copy_n(A.row_ptr(i), A.cols, out.row_ptr(i));
    std::copy_n(B.row_ptr(i), B.cols, out.row_ptr(i) + A.cols);
  }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  const std::size_t ac = A.cols;
  return make_op(std::move(out), {a, b}, [pa, pb, ac](Node& n) {
    for (std::size_t i = 0; i < n.grad.rows; ++i) {
      const double* gr = n.grad.row_ptr(i);
      if (pa->requires_grad) {
        double* ar = pa->grad.row_ptr(i);
        for (std::size_t j = 0; j < ac; ++j) ar[j] += gr[j];
      }
      if (pb->requires_grad) {
        double* br = pb->grad.row_ptr(i);
        for (std::size_t j = 0; j < n.grad.cols - ac; ++j) br[j] += gr[ac + j];
      }
    }
  });
}

// Adds a 1 x n bias row to every row of x.
inline DiffValue add_rowvec(const DiffValue& x, const DiffValue& b) {
  detail::require(b.rows() == 1 && b.cols() == x.cols(),
                  "add_rowvec: bias must be 1x" + std::to_string(x.cols()) + ", got " +
                      shape_str(b.data()));
  const Matrix& X = x.data();
  Matrix out(X.rows, X.cols);
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t j = 0; j < X.cols; ++j) out(i, j) = X(i, j) + b.data()(0, j);
  Node* px = x.node().get();
  Node* pb = b.node().get();
  return make_op(std::move(out), {x, b}, [px, pb](Node& n) {
    if (px->requires_grad) add_in_place(px->grad, n.grad);
    if (pb->requires_grad) {
      for (std::size_t i = 0; i < n.grad.rows; ++i)
        for (std::size_t j = 0; j < n.grad.cols; ++j) pb->grad(0, j) += n.grad(i, j);
    }
  });
}

// Row-wise dot products: out is m x 1 with out_i = <a_i, b_i>.
inline DiffValue rows_dot(const DiffValue& a, const DiffValue& b) {
  detail::require(a.data().same_shape(b.data()), "rows_dot: shape mismatch: " +
                                                     shape_str(a.data()) + " vs " +
                                                     shape_str(b.data()));
  const Matrix& A = a.data();
  const Matrix& B = b.data();
  Matrix out(A.rows, 1);
  for (std::size_t i = 0; i < A.rows; ++i) {
    double s = 0.0;
    const double* ar = A.row_ptr(i);
    const double* br = B.row_ptr(i);
    for (std::size_t j = 0; j < A.cols; ++j) s += ar[j] * br[j];
    out(i, 0) = s;
  }
  Node* pa = a.node().get();
  Node* pb = b.node().get();
  return make_op(std::move(out), {a, b}, [pa, pb](Node& n) {
    for (std::size_t i = 0; i < n.grad.rows; ++i) {
      const double g = n.grad(i, 0);
      if (pa->requires_grad) {
        double* ar = pa->grad.row_ptr(i);
        const double* br = pb->data.row_ptr(i);
        for (std::size_t j = 0; j < pa->grad.cols; ++j) ar[j] += g * br[j];
      }
      if (pb->requires_grad) {
        double* br = pb->grad.row_ptr(i);
        const double* ar = pa->data.row_ptr(i);
        for (std::size_t j = 0; j < pb->grad.cols; ++j) br[j] += g * ar[j];
      }
    }
  });
}

inline DiffValue row_sums(const DiffValue& x) {
  const Matrix& X = x.data();
  Matrix out(X.rows, 1);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double s = 0.0;
    const double* xr = X.row_ptr(i);
    for (std::size_t j = 0; j < X.cols; ++j) s += xr[j];
    out(i, 0) = s;
  }
  Node* px = x.node().get();
  return make_op(std::move(out), {x}, [px](Node& n) {
    if (!px->requires_grad) return;
    for (std::size_t i = 0; i < px->grad.rows; ++i) {
      const double g = n.grad(i, 0);
      double* xr = px->grad.row_ptr(i);
      for (std::size_t j = 0; j < px->grad.cols; ++j) xr[j] += g;
    }
  });
}

inline DiffValue sum_all(const DiffValue& x) {
  double s = 0.0;
  for (double v : x.data().v) s += v;
  Node* px = x.node().get();
  return make_op(Matrix(1, 1, s), {x}, [px](Node& n) {
    if (!px->requires_grad) return;
    const double g = n.grad.v[0];
    for (double& gv : px->grad.v) gv += g;
  });
}

inline DiffValue mean_all(const DiffValue& x) {
  detail::require(x.data().size() > 0, "mean_all: empty matrix");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.data().size()));
}

// ---------------------------------------------------------------------------
// backward

// Exact reverse accumulation from a scalar root. Interior adjoints are
// recomputed from scratch on every call; leaf grads accumulate across calls
// until explicitly zeroed.
inline void backward(const DiffValue& root) {
  detail::require(root.data().is_scalar(),
                  "backward: root must be 1x1, got " + shape_str(root.data()));
  Node* r = root.node().get();
  if (!r->requires_grad) return;  // no reachable node accumulates gradient
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS over grad-requiring nodes.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(r, 0);
  visited.insert(r);
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* p = node->parents[next_child++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->parents.empty()) n->grad.fill(0.0);
  r->grad.v[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace cmcr::ad
