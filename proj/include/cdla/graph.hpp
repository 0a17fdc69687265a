#pragma once

// Reverse-mode differentiation over small dense tensors.
//
// A Graph is built eagerly (define-by-run): every op computes its value when it
// is created and appends a node. Node ids are therefore a topological order,
// and backward() walks them once in reverse. Learnable values live in
// Parameter objects outside the graph; backward() accumulates into them.

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cdla/error.hpp"
#include "cdla/tensor.hpp"

namespace cdla {

struct Parameter {
  std::string name;
  Tensor value;
  std::optional<Tensor> grad;
};

enum class OpKind {
  kConstant,
  kInput,
  kParameter,
  kMatMul,
  kAdd,
  kAddRow,
  kSub,
  kMul,
  kScale,
  kElu,
  kSoftplus,
  kExp,
  kSum,
  kGatherRows,
  kLogSoftmax,
  kSoftmax,
  kLayerNorm,
  kAttention,
};

constexpr std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::kConstant: return "constant";
    case OpKind::kInput: return "input";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kElu: return "elu";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kExp: return "exp";
    case OpKind::kSum: return "sum";
    case OpKind::kGatherRows: return "gather_rows";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLayerNorm: return "layer_norm";
    case OpKind::kAttention: return "attention";
  }
  return "?";
}

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // Propagates the output gradient of a node to its inputs.
  using Backprop = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value) { return leaf(OpKind::kConstant, std::move(value), false, nullptr); }

  Var input(Tensor value, bool requires_grad = true) {
    return leaf(OpKind::kInput, std::move(value), requires_grad, nullptr);
  }

  Var parameter(Parameter& p) { return leaf(OpKind::kParameter, p.value, true, &p); }

  const Tensor& value(Var v) const { return nodes_.at(v.id()).value; }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  OpKind kind(Var v) const { return nodes_.at(v.id()).kind; }
  std::span<const std::size_t> inputs(Var v) const { return nodes_.at(v.id()).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradient of the last backward() root with respect to v.
  const Tensor& grad(Var v) const {
    const Node& n = nodes_.at(v.id());
    if (!n.has_grad) {
      throw Error("graph", "no gradient at node #" + std::to_string(v.id()) + " (" +
                               std::string(op_name(n.kind)) + ")");
    }
    return n.grad;
  }

  // Mutable gradient slot, zero-initialized on first access. Used by ops.
  Tensor& grad_slot(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return n.grad;
  }

  // Appends an op node. Values must be finite; requires_grad is inherited from
  // the inputs.
  Var push(OpKind kind, std::vector<std::size_t> inputs, Tensor value, Backprop backprop) {
    bool rg = false;
    for (std::size_t i : inputs) rg = rg || nodes_[i].requires_grad;
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), Tensor{}, false, rg,
                          rg ? std::move(backprop) : Backprop{}, nullptr});
    return Var(this, nodes_.size() - 1);
  }

  // Populates gradients of `root` (a 1x1 node) with respect to every node that
  // requires grad, and accumulates into the Parameter objects used as leaves.
  void backward(Var root) {
    const Node& r = nodes_.at(root.id());
    if (r.value.size() != 1) {
      throw ShapeError("backward root must be scalar, node #" + std::to_string(root.id()) +
                       " has shape " + r.value.shape_string());
    }
    if (!r.value.all_finite()) {
      throw NumericError("backward root is not finite: " + std::to_string(r.value[0]));
    }
    for (Node& n : nodes_) {
      n.has_grad = false;
      n.grad = Tensor{};
    }
    grad_slot(root.id())[0] = 1.0;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.requires_grad) continue;
      if (n.backprop) {
        // Copy out: the callback may touch other nodes' grad slots.
        const Tensor g = n.grad;
        n.backprop(*this, g);
      } else if (n.param != nullptr) {
        if (!n.param->grad) n.param->grad = Tensor(n.value.rows(), n.value.cols());
        as_matrix(*n.param->grad) += as_matrix(n.grad);
      }
    }
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Tensor value;
    Tensor grad;
    bool has_grad;
    bool requires_grad;
    Backprop backprop;
    Parameter* param;
  };

  Var leaf(OpKind kind, Tensor value, bool requires_grad, Parameter* p) {
    if (!value.all_finite()) {
      throw NumericError("non-finite value entering graph as " + std::string(op_name(kind)) +
                         (p != nullptr ? " '" + p->name + "'" : std::string{}));
    }
    nodes_.push_back(Node{kind, {}, std::move(value), Tensor{}, false, requires_grad, {}, p});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }

namespace detail {

inline std::string where(const Graph& g, OpKind k) {
  return std::string(op_name(k)) + " (node #" + std::to_string(g.size()) + ")";
}

inline void require_same_graph(Var a, Var b, OpKind k) {
  if (&a.graph() != &b.graph()) {
    throw Error("graph", std::string(op_name(k)) + ": operands belong to different graphs");
  }
}

inline void require_same_shape(Var a, Var b, OpKind k) {
  require_same_graph(a, b, k);
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(where(a.graph(), k) + ": operand shapes differ, " +
                     a.value().shape_string() + " vs " + b.value().shape_string());
  }
}

inline void require_column(Var a, const Segments& seg, OpKind k) {
  if (a.cols() != 1 || a.rows() != seg.total()) {
    throw ShapeError(where(a.graph(), k) + ": expected a " + std::to_string(seg.total()) +
                     "x1 column, got " + a.value().shape_string());
  }
}

inline void accumulate(Graph& g, std::size_t id, const Tensor& delta) {
  if (g.requires_grad(id)) as_matrix(g.grad_slot(id)) += as_matrix(delta);
}

}  // namespace detail

// a (m x k) times b (k x n).
inline Var matmul(Var a, Var b) {
  detail::require_same_graph(a, b, OpKind::kMatMul);
  Graph& g = a.graph();
  if (a.cols() != b.rows()) {
    throw ShapeError(detail::where(g, OpKind::kMatMul) + ": inner dimensions differ, " +
                     a.value().shape_string() + " . " + b.value().shape_string());
  }
  Tensor out(a.rows(), b.cols());
  as_matrix(out).noalias() = as_matrix(a.value()) * as_matrix(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return g.push(OpKind::kMatMul, {ia, ib}, std::move(out), [ia, ib](Graph& gr, const Tensor& go) {
    if (gr.requires_grad(ia)) {
      as_matrix(gr.grad_slot(ia)).noalias() += as_matrix(go) * as_matrix(gr.value(Var(&gr, ib))).transpose();
    }
    if (gr.requires_grad(ib)) {
      as_matrix(gr.grad_slot(ib)).noalias() += as_matrix(gr.value(Var(&gr, ia))).transpose() * as_matrix(go);
    }
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, OpKind::kAdd);
  Tensor out = a.value();
  as_matrix(out) += as_matrix(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().push(OpKind::kAdd, {ia, ib}, std::move(out), [ia, ib](Graph& gr, const Tensor& go) {
    detail::accumulate(gr, ia, go);
    detail::accumulate(gr, ib, go);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, OpKind::kSub);
  Tensor out = a.value();
  as_matrix(out) -= as_matrix(b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().push(OpKind::kSub, {ia, ib}, std::move(out), [ia, ib](Graph& gr, const Tensor& go) {
    detail::accumulate(gr, ia, go);
    if (gr.requires_grad(ib)) as_matrix(gr.grad_slot(ib)) -= as_matrix(go);
  });
}

// Adds a (1 x n) row to every row of a (m x n).
inline Var add_row(Var a, Var row) {
  detail::require_same_graph(a, row, OpKind::kAddRow);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError(detail::where(a.graph(), OpKind::kAddRow) + ": cannot broadcast " +
                     row.value().shape_string() + " over " + a.value().shape_string());
  }
  Tensor out = a.value();
  as_matrix(out).rowwise() += as_matrix(row.value()).row(0);
  const std::size_t ia = a.id(), ib = row.id();
  return a.graph().push(OpKind::kAddRow, {ia, ib}, std::move(out), [ia, ib](Graph& gr, const Tensor& go) {
    detail::accumulate(gr, ia, go);
    if (gr.requires_grad(ib)) as_matrix(gr.grad_slot(ib)) += as_matrix(go).colwise().sum();
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, OpKind::kMul);
  Tensor out = a.value();
  as_matrix(out).array() *= as_matrix(b.value()).array();
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().push(OpKind::kMul, {ia, ib}, std::move(out), [ia, ib](Graph& gr, const Tensor& go) {
    if (gr.requires_grad(ia)) {
      as_matrix(gr.grad_slot(ia)).array() += as_matrix(go).array() * as_matrix(gr.value(Var(&gr, ib))).array();
    }
    if (gr.requires_grad(ib)) {
      as_matrix(gr.grad_slot(ib)).array() += as_matrix(go).array() * as_matrix(gr.value(Var(&gr, ia))).array();
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  as_matrix(out) *= s;
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::kScale, {ia}, std::move(out), [ia, s](Graph& gr, const Tensor& go) {
    if (gr.requires_grad(ia)) as_matrix(gr.grad_slot(ia)) += s * as_matrix(go);
  });
}

// ELU with alpha = 1.
inline Var elu(Var a) {
  Tensor out = a.value();
  for (double& x : out.values()) x = x > 0.0 ? x : std::expm1(x);
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::kElu, {ia}, std::move(out), [ia](Graph& gr, const Tensor& go) {
    const Tensor& x = gr.value(Var(&gr, ia));
    Tensor& gi = gr.grad_slot(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gi[i] += go[i] * (x[i] > 0.0 ? 1.0 : std::exp(x[i]));
  });
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var softplus(Var a) {
  Tensor out = a.value();
  for (double& x : out.values()) x = softplus(x);
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::kSoftplus, {ia}, std::move(out), [ia](Graph& gr, const Tensor& go) {
    const Tensor& x = gr.value(Var(&gr, ia));
    Tensor& gi = gr.grad_slot(ia);
    for (std::size_t i = 0; i < x.size(); ++i) gi[i] += go[i] * sigmoid(x[i]);
  });
}

inline Var exp(Var a) {
  Tensor out = a.value();
  for (double& x : out.values()) x = std::exp(x);
  const std::size_t ia = a.id(), io = a.graph().size();
  return a.graph().push(OpKind::kExp, {ia}, std::move(out), [ia, io](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(Var(&gr, io));
    Tensor& gi = gr.grad_slot(ia);
    for (std::size_t i = 0; i < y.size(); ++i) gi[i] += go[i] * y[i];
  });
}

// Sum of all entries, 1x1.
inline Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  const std::size_t ia = a.id();
  return a.graph().push(OpKind::kSum, {ia}, Tensor::scalar(s), [ia](Graph& gr, const Tensor& go) {
    if (gr.requires_grad(ia)) as_matrix(gr.grad_slot(ia)).array() += go[0];
  });
}

// out.row(r) = a.row(index[r]).
inline Var gather_rows(Var a, std::vector<std::size_t> index) {
  Graph& g = a.graph();
  Tensor out(index.size(), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= a.rows()) {
      throw ShapeError(detail::where(g, OpKind::kGatherRows) + ": row index " +
                       std::to_string(index[r]) + " out of range for " + a.value().shape_string());
    }
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a.value()(index[r], c);
  }
  const std::size_t ia = a.id();
  return g.push(OpKind::kGatherRows, {ia}, std::move(out),
                [ia, index = std::move(index)](Graph& gr, const Tensor& go) {
                  Tensor& gi = gr.grad_slot(ia);
                  for (std::size_t r = 0; r < index.size(); ++r) {
                    for (std::size_t c = 0; c < gi.cols(); ++c) gi(index[r], c) += go(r, c);
                  }
                });
}

namespace detail {

// Log-softmax of x[begin, end) into out, via max subtraction.
inline void log_softmax_range(const double* x, double* out, std::size_t n) {
  double m = x[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - m);
  const double lz = m + std::log(z);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - lz;
}

}  // namespace detail

// Log-softmax of a column vector, independently within each segment.
inline Var log_softmax(Var a, const Segments& seg) {
  detail::require_column(a, seg, OpKind::kLogSoftmax);
  Tensor out(a.rows(), 1);
  for (std::size_t s = 0; s < seg.count(); ++s) {
    if (seg.size(s) == 0) continue;
    detail::log_softmax_range(a.value().data() + seg.begin(s), out.data() + seg.begin(s), seg.size(s));
  }
  const std::size_t ia = a.id(), io = a.graph().size();
  return a.graph().push(OpKind::kLogSoftmax, {ia}, std::move(out), [ia, io, seg](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(Var(&gr, io));
    Tensor& gi = gr.grad_slot(ia);
    for (std::size_t s = 0; s < seg.count(); ++s) {
      double total = 0.0;
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) total += go[i];
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) gi[i] += go[i] - std::exp(y[i]) * total;
    }
  });
}

inline Var log_softmax(Var a) { return log_softmax(a, Segments::single(a.rows())); }

// Softmax of a column vector, independently within each segment.
inline Var softmax(Var a, const Segments& seg) {
  detail::require_column(a, seg, OpKind::kSoftmax);
  Tensor out(a.rows(), 1);
  for (std::size_t s = 0; s < seg.count(); ++s) {
    if (seg.size(s) == 0) continue;
    detail::log_softmax_range(a.value().data() + seg.begin(s), out.data() + seg.begin(s), seg.size(s));
  }
  for (double& v : out.values()) v = std::exp(v);
  const std::size_t ia = a.id(), io = a.graph().size();
  return a.graph().push(OpKind::kSoftmax, {ia}, std::move(out), [ia, io, seg](Graph& gr, const Tensor& go) {
    const Tensor& y = gr.value(Var(&gr, io));
    Tensor& gi = gr.grad_slot(ia);
    for (std::size_t s = 0; s < seg.count(); ++s) {
      double dot = 0.0;
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) dot += go[i] * y[i];
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) gi[i] += y[i] * (go[i] - dot);
    }
  });
}

inline Var softmax(Var a) { return softmax(a, Segments::single(a.rows())); }

// Row-wise layer normalization with learned gain and bias (both 1 x d).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  Graph& g = x.graph();
  const std::size_t n = x.rows(), d = x.cols();
  if (gain.rows() != 1 || gain.cols() != d || !gain.value().same_shape(bias.value())) {
    throw ShapeError(detail::where(g, OpKind::kLayerNorm) + ": gain/bias " + gain.value().shape_string() +
                     "/" + bias.value().shape_string() + " do not match width " + std::to_string(d));
  }
  Tensor xhat(n, d);
  std::vector<double> inv_std(n);
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xv(r, c);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xv(r, c) - mean) * (xv(r, c) - mean);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
  }
  Tensor out = xhat;
  as_matrix(out).array().rowwise() *= as_matrix(gain.value()).row(0).array();
  as_matrix(out).rowwise() += as_matrix(bias.value()).row(0);
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return g.push(OpKind::kLayerNorm, {ix, ig, ib}, std::move(out),
                [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& gr, const Tensor& go) {
                  const std::size_t rows = xhat.rows(), cols = xhat.cols();
                  if (gr.requires_grad(ig)) {
                    Tensor& gg = gr.grad_slot(ig);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t c = 0; c < cols; ++c) gg[c] += go(r, c) * xhat(r, c);
                  }
                  if (gr.requires_grad(ib)) {
                    as_matrix(gr.grad_slot(ib)) += as_matrix(go).colwise().sum();
                  }
                  if (gr.requires_grad(ix)) {
                    const Tensor& gain_v = gr.value(Var(&gr, ig));
                    Tensor& gx = gr.grad_slot(ix);
                    std::vector<double> dxhat(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double mean_d = 0.0, mean_dx = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        dxhat[c] = go(r, c) * gain_v[c];
                        mean_d += dxhat[c];
                        mean_dx += dxhat[c] * xhat(r, c);
                      }
                      mean_d /= static_cast<double>(cols);
                      mean_dx /= static_cast<double>(cols);
                      for (std::size_t c = 0; c < cols; ++c) {
                        gx(r, c) += inv_std[r] * (dxhat[c] - mean_d - xhat(r, c) * mean_dx);
                      }
                    }
                  }
                });
}

// Multi-head scaled dot-product self-attention core. q, k, v are (N x d)
// stacks of several lists; attention is restricted to rows of the same
// segment. Head h uses columns [h*d/heads, (h+1)*d/heads).
inline Var attention(Var q, Var k, Var v, const Segments& seg, std::size_t heads) {
  detail::require_same_shape(q, k, OpKind::kAttention);
  detail::require_same_shape(q, v, OpKind::kAttention);
  Graph& g = q.graph();
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (q.rows() != seg.total()) {
    throw ShapeError(detail::where(g, OpKind::kAttention) + ": " + std::to_string(q.rows()) +
                     " rows but segments cover " + std::to_string(seg.total()));
  }
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  Tensor out(q.rows(), d);
  // probs[s * heads + h] is the (n x n) attention matrix of segment s, head h.
  std::vector<RowMatrix> probs(seg.count() * heads);
  const Eigen::Index ld = static_cast<Eigen::Index>(d);
  using Stride = Eigen::OuterStride<>;
  using Block = Eigen::Map<const RowMatrix, 0, Stride>;
  using MutBlock = Eigen::Map<RowMatrix, 0, Stride>;
  for (std::size_t s = 0; s < seg.count(); ++s) {
    const auto n = static_cast<Eigen::Index>(seg.size(s));
    if (n == 0) continue;
    const std::size_t base = seg.begin(s) * d;
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = base + h * dh;
      const auto edh = static_cast<Eigen::Index>(dh);
      Block qs(qv.data() + off, n, edh, Stride(ld));
      Block ks(kv.data() + off, n, edh, Stride(ld));
      Block vs(vv.data() + off, n, edh, Stride(ld));
      RowMatrix p = (qs * ks.transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < n; ++r) {
        const double m = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - m).exp();
        p.row(r) /= p.row(r).sum();
      }
      MutBlock os(out.data() + off, n, edh, Stride(ld));
      os.noalias() = p * vs;
      probs[s * heads + h] = std::move(p);
    }
  }
  const std::size_t iq = q.id(), ik = k.id(), iv = v.id();
  return g.push(
      OpKind::kAttention, {iq, ik, iv}, std::move(out),
      [iq, ik, iv, seg, heads, dh, inv_sqrt, probs = std::move(probs)](Graph& gr, const Tensor& go) {
        const std::size_t width = heads * dh;
        const Eigen::Index ldw = static_cast<Eigen::Index>(width);
        const auto edh = static_cast<Eigen::Index>(dh);
        const Tensor& qv = gr.value(Var(&gr, iq));
        const Tensor& kv = gr.value(Var(&gr, ik));
        const Tensor& vv = gr.value(Var(&gr, iv));
        Tensor* gq = gr.requires_grad(iq) ? &gr.grad_slot(iq) : nullptr;
        Tensor* gk = gr.requires_grad(ik) ? &gr.grad_slot(ik) : nullptr;
        Tensor* gv = gr.requires_grad(iv) ? &gr.grad_slot(iv) : nullptr;
        for (std::size_t s = 0; s < seg.count(); ++s) {
          const auto n = static_cast<Eigen::Index>(seg.size(s));
          if (n == 0) continue;
          const std::size_t base = seg.begin(s) * width;
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = base + h * dh;
            const RowMatrix& p = probs[s * heads + h];
            Block qs(qv.data() + off, n, edh, Stride(ldw));
            Block ks(kv.data() + off, n, edh, Stride(ldw));
            Block vs(vv.data() + off, n, edh, Stride(ldw));
            Block gos(go.data() + off, n, edh, Stride(ldw));
            if (gv != nullptr) {
              MutBlock(gv->data() + off, n, edh, Stride(ldw)).noalias() += p.transpose() * gos;
            }
            if (gq == nullptr && gk == nullptr) continue;
            RowMatrix dp = gos * vs.transpose();
            // Softmax backward per row, then the 1/sqrt(dh) scaling.
            RowMatrix ds = p.array() * (dp.colwise() - (dp.array() * p.array()).rowwise().sum().matrix()).array();
            ds *= inv_sqrt;
            if (gq != nullptr) MutBlock(gq->data() + off, n, edh, Stride(ldw)).noalias() += ds * ks;
            if (gk != nullptr) MutBlock(gk->data() + off, n, edh, Stride(ldw)).noalias() += ds.transpose() * qs;
          }
        }
      });
}

// Copies the value into a new constant node: no gradient flows back.
inline Var detach(Var a) { return a.graph().constant(a.value()); }

}  // namespace cdla
