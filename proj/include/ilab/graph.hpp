#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ilab/errors.hpp"
#include "ilab/tensor.hpp"

namespace ilab {

// ---------------------------------------------------------------------------
// standalone kernels (also used by the tape; fixed row-major reduction order)
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> matmul_val(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw DimError("matmul: operands must be matrices");
  if (a.cols() != b.rows()) throw DimError("matmul: inner extents disagree");
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  auto c = TensorT<S>::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    const S* arow = a.data.data() + i * k;
    S* crow = c.data.data() + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b.data.data() + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// a [m×k] times b^T where b is [n×k]
template <class S>
TensorT<S> matmul_nt_val(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2)
    throw DimError("matmul_nt: operands must be matrices");
  if (a.cols() != b.cols()) throw DimError("matmul_nt: inner extents disagree");
  const std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
  auto c = TensorT<S>::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    const S* arow = a.data.data() + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const S* brow = b.data.data() + j * k;
      S acc = 0;
      for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c.at(i, j) = acc;
    }
  }
  return c;
}

/// Max-stabilized softmax over a vector (or a 1×n / n-vector tensor).
template <class S>
TensorT<S> softmax_row_val(const TensorT<S>& v) {
  if (v.numel() < 1) throw DimError("softmax_row: empty input");
  TensorT<S> out = v;
  out.requires_grad = false;
  S mx = v.data[0];
  for (S x : v.data) mx = std::max(mx, x);
  S sum = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    out.data[i] = std::exp(v.data[i] - mx);
    sum += out.data[i];
  }
  for (auto& x : out.data) x /= sum;
  return out;
}

/// -log softmax(logits)[target], natural log, stabilized.
template <class S>
double cross_entropy_val(const TensorT<S>& logits, std::int64_t target) {
  if (target < 0 || target >= logits.numel())
    throw IndexError("cross_entropy: target out of range");
  S mx = logits.data[0];
  for (S x : logits.data) mx = std::max(mx, x);
  S lse = 0;
  for (S x : logits.data) lse += std::exp(x - mx);
  return static_cast<double>(mx + std::log(lse) - logits.data[static_cast<std::size_t>(target)]);
}

template <class S>
S gelu_scalar(S x) {
  return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865475)));
}

template <class S>
S gelu_deriv_scalar(S x) {
  const S phi = std::exp(S(-0.5) * x * x) * S(0.3989422804014327);
  return S(0.5) * (S(1) + std::erf(x * S(0.7071067811865475))) + x * phi;
}

// ---------------------------------------------------------------------------
// tape
// ---------------------------------------------------------------------------

enum class OpKind {
  Input,
  MatMul,
  MatMulNT,
  Add,
  AddRowVec,
  Scale,
  LayerNormRows,
  CausalSoftmaxRows,
  SoftmaxRows,
  Gelu,
  GatherRows,
  SliceCols,
  ConcatCols,
  SelectRow,
  ReplaceRow,
  DasPatch,
  CrossEntropy,
  SumScalars,
};

struct NodeId {
  std::int32_t v = -1;
  bool valid() const { return v >= 0; }
  friend bool operator==(NodeId a, NodeId b) { return a.v == b.v; }
};

/// Reverse-mode tape over TensorT<S>. Nodes are appended in topological
/// order by construction; replay() recomputes every non-input value in
/// the recorded order, bit-identically.
template <class S>
class GraphT {
 public:
  using Tensor = TensorT<S>;

  struct Node {
    OpKind op = OpKind::Input;
    std::vector<NodeId> inputs;
    std::vector<std::int64_t> iaux;  // indices, targets, split points
    S saux = 0;                      // scale factor / layernorm eps
    Tensor value;
    bool requires_grad = false;
  };

  NodeId input(Tensor t) {
    Node n;
    n.op = OpKind::Input;
    n.requires_grad = t.requires_grad;
    n.value = std::move(t);
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) { return unary_or_binary(OpKind::MatMul, {a, b}); }
  NodeId matmul_nt(NodeId a, NodeId b) { return unary_or_binary(OpKind::MatMulNT, {a, b}); }

  NodeId add(NodeId a, NodeId b) {
    if (!val(a).same_shape(val(b))) throw DimError("add: shape mismatch");
    return unary_or_binary(OpKind::Add, {a, b});
  }

  NodeId add_rowvec(NodeId x, NodeId v) {
    if (val(x).cols() != val(v).numel()) throw DimError("add_rowvec: width mismatch");
    return unary_or_binary(OpKind::AddRowVec, {x, v});
  }

  NodeId scale(NodeId a, S c) {
    Node n;
    n.op = OpKind::Scale;
    n.inputs = {a};
    n.saux = c;
    return finish(std::move(n));
  }

  NodeId layernorm_rows(NodeId x, NodeId gain, NodeId bias, S eps) {
    if (val(x).cols() != val(gain).numel() || val(x).cols() != val(bias).numel())
      throw DimError("layernorm_rows: gain/bias width mismatch");
    Node n;
    n.op = OpKind::LayerNormRows;
    n.inputs = {x, gain, bias};
    n.saux = eps;
    return finish(std::move(n));
  }

  NodeId causal_softmax_rows(NodeId s) { return unary_or_binary(OpKind::CausalSoftmaxRows, {s}); }
  NodeId softmax_rows(NodeId s) { return unary_or_binary(OpKind::SoftmaxRows, {s}); }
  NodeId gelu(NodeId x) { return unary_or_binary(OpKind::Gelu, {x}); }

  NodeId gather_rows(NodeId table, std::vector<std::int64_t> idx) {
    for (auto i : idx)
      if (i < 0 || i >= val(table).rows()) throw IndexError("gather_rows: index out of range");
    Node n;
    n.op = OpKind::GatherRows;
    n.inputs = {table};
    n.iaux = std::move(idx);
    return finish(std::move(n));
  }

  NodeId slice_cols(NodeId x, std::int64_t c0, std::int64_t c1) {
    if (c0 < 0 || c1 > val(x).cols() || c0 >= c1) throw IndexError("slice_cols: bad range");
    Node n;
    n.op = OpKind::SliceCols;
    n.inputs = {x};
    n.iaux = {c0, c1};
    return finish(std::move(n));
  }

  NodeId concat_cols(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw DimError("concat_cols: empty");
    Node n;
    n.op = OpKind::ConcatCols;
    n.inputs = xs;
    return finish(std::move(n));
  }

  NodeId select_row(NodeId x, std::int64_t r) {
    if (r < 0 || r >= val(x).rows()) throw IndexError("select_row: row out of range");
    Node n;
    n.op = OpKind::SelectRow;
    n.inputs = {x};
    n.iaux = {r};
    return finish(std::move(n));
  }

  NodeId replace_row(NodeId x, std::int64_t r, NodeId v) {
    if (r < 0 || r >= val(x).rows()) throw IndexError("replace_row: row out of range");
    if (val(v).numel() != val(x).cols()) throw PatchError("replace_row: width mismatch");
    Node n;
    n.op = OpKind::ReplaceRow;
    n.inputs = {x, v};
    n.iaux = {r};
    return finish(std::move(n));
  }

  /// b + ((s - b)·a) a over flat vectors of equal length.
  NodeId das_patch(NodeId b, NodeId s, NodeId a) {
    if (val(b).numel() != val(s).numel() || val(b).numel() != val(a).numel())
      throw PatchError("das_patch: dimension mismatch");
    return unary_or_binary(OpKind::DasPatch, {b, s, a});
  }

  NodeId cross_entropy(NodeId logits, std::int64_t target) {
    if (target < 0 || target >= val(logits).numel())
      throw IndexError("cross_entropy: target out of range");
    Node n;
    n.op = OpKind::CrossEntropy;
    n.inputs = {logits};
    n.iaux = {target};
    return finish(std::move(n));
  }

  NodeId sum_scalars(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw DimError("sum_scalars: empty");
    for (auto x : xs)
      if (!val(x).is_scalar()) throw ContractError("sum_scalars: non-scalar input");
    Node n;
    n.op = OpKind::SumScalars;
    n.inputs = xs;
    return finish(std::move(n));
  }

  NodeId mean_scalars(const std::vector<NodeId>& xs) {
    return scale(sum_scalars(xs), S(1) / static_cast<S>(xs.size()));
  }

  const Tensor& value(NodeId id) const { return nodes_[idx(id)].value; }
  bool requires_grad(NodeId id) const { return nodes_[idx(id)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward()'s loss w.r.t. this node. Zero tensor
  /// for nodes not on any path to the loss.
  const Tensor& grad(NodeId id) const {
    if (grads_.empty()) throw ContractError("grad: backward has not run");
    return grads_[idx(id)];
  }

  void backward(NodeId loss) {
    const auto& ln = nodes_[idx(loss)];
    if (ln.value.numel() != 1) throw ContractError("backward: loss must be scalar");
    grads_.assign(nodes_.size(), Tensor{});
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      grads_[i] = Tensor::zeros(nodes_[i].value.shape);
    grads_[idx(loss)].data[0] = S(1);
    for (std::int32_t i = loss.v; i >= 0; --i) backward_node(i);
  }

  /// Recompute every non-input node from its recorded inputs, in order.
  void replay() {
    for (auto& n : nodes_)
      if (n.op != OpKind::Input) n.value = compute(n);
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;

  static std::size_t idx(NodeId id) { return static_cast<std::size_t>(id.v); }

  const Tensor& val(NodeId id) const { return nodes_[idx(id)].value; }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return NodeId{static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  NodeId unary_or_binary(OpKind op, std::vector<NodeId> in) {
    Node n;
    n.op = op;
    n.inputs = std::move(in);
    return finish(std::move(n));
  }

  NodeId finish(Node n) {
    n.requires_grad = false;
    for (auto i : n.inputs) n.requires_grad = n.requires_grad || nodes_[idx(i)].requires_grad;
    n.value = compute(n);
    return push(std::move(n));
  }

  Tensor compute(const Node& n) const {
    switch (n.op) {
      case OpKind::Input:
        return n.value;
      case OpKind::MatMul:
        return matmul_val(val(n.inputs[0]), val(n.inputs[1]));
      case OpKind::MatMulNT:
        return matmul_nt_val(val(n.inputs[0]), val(n.inputs[1]));
      case OpKind::Add: {
        Tensor out = val(n.inputs[0]);
        const auto& b = val(n.inputs[1]);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
        return out;
      }
      case OpKind::AddRowVec: {
        Tensor out = val(n.inputs[0]);
        const auto& v = val(n.inputs[1]);
        const std::int64_t c = out.cols();
        for (std::int64_t r = 0; r < out.rows(); ++r)
          for (std::int64_t j = 0; j < c; ++j) out.at(r, j) += v.data[static_cast<std::size_t>(j)];
        return out;
      }
      case OpKind::Scale: {
        Tensor out = val(n.inputs[0]);
        for (auto& x : out.data) x *= n.saux;
        return out;
      }
      case OpKind::LayerNormRows:
        return layernorm_forward(val(n.inputs[0]), val(n.inputs[1]), val(n.inputs[2]), n.saux);
      case OpKind::CausalSoftmaxRows:
        return causal_softmax_forward(val(n.inputs[0]));
      case OpKind::SoftmaxRows: {
        const auto& x = val(n.inputs[0]);
        if (x.shape.size() != 2) {
          auto out = softmax_row_val(x);
          out.requires_grad = false;
          return out;
        }
        Tensor out = x;
        for (std::int64_t r = 0; r < x.rows(); ++r) {
          S mx = x.at(r, 0);
          for (std::int64_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(r, j));
          S sum = 0;
          for (std::int64_t j = 0; j < x.cols(); ++j) {
            out.at(r, j) = std::exp(x.at(r, j) - mx);
            sum += out.at(r, j);
          }
          for (std::int64_t j = 0; j < x.cols(); ++j) out.at(r, j) /= sum;
        }
        return out;
      }
      case OpKind::Gelu: {
        Tensor out = val(n.inputs[0]);
        for (auto& x : out.data) x = gelu_scalar(x);
        return out;
      }
      case OpKind::GatherRows: {
        const auto& t = val(n.inputs[0]);
        const std::int64_t c = t.cols();
        auto out = Tensor::zeros({static_cast<std::int64_t>(n.iaux.size()), c});
        for (std::size_t r = 0; r < n.iaux.size(); ++r)
          for (std::int64_t j = 0; j < c; ++j)
            out.at(static_cast<std::int64_t>(r), j) = t.at(n.iaux[r], j);
        return out;
      }
      case OpKind::SliceCols: {
        const auto& x = val(n.inputs[0]);
        const std::int64_t c0 = n.iaux[0], c1 = n.iaux[1];
        auto out = Tensor::zeros({x.rows(), c1 - c0});
        for (std::int64_t r = 0; r < x.rows(); ++r)
          for (std::int64_t j = c0; j < c1; ++j) out.at(r, j - c0) = x.at(r, j);
        return out;
      }
      case OpKind::ConcatCols: {
        std::int64_t rows = val(n.inputs[0]).rows(), cols = 0;
        for (auto in : n.inputs) {
          if (val(in).rows() != rows) throw DimError("concat_cols: row mismatch");
          cols += val(in).cols();
        }
        auto out = Tensor::zeros({rows, cols});
        std::int64_t off = 0;
        for (auto in : n.inputs) {
          const auto& x = val(in);
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < x.cols(); ++j) out.at(r, off + j) = x.at(r, j);
          off += x.cols();
        }
        return out;
      }
      case OpKind::SelectRow: {
        const auto& x = val(n.inputs[0]);
        auto out = Tensor::zeros({x.cols()});
        for (std::int64_t j = 0; j < x.cols(); ++j)
          out.data[static_cast<std::size_t>(j)] = x.at(n.iaux[0], j);
        return out;
      }
      case OpKind::ReplaceRow: {
        Tensor out = val(n.inputs[0]);
        const auto& v = val(n.inputs[1]);
        for (std::int64_t j = 0; j < out.cols(); ++j)
          out.at(n.iaux[0], j) = v.data[static_cast<std::size_t>(j)];
        return out;
      }
      case OpKind::DasPatch: {
        const auto& b = val(n.inputs[0]);
        const auto& s = val(n.inputs[1]);
        const auto& a = val(n.inputs[2]);
        Tensor out = b;
        S t = 0;
        for (std::size_t i = 0; i < b.data.size(); ++i)
          t += (s.data[i] - b.data[i]) * a.data[i];
        for (std::size_t i = 0; i < b.data.size(); ++i) out.data[i] += t * a.data[i];
        return out;
      }
      case OpKind::CrossEntropy:
        return Tensor::scalar(static_cast<S>(cross_entropy_val(val(n.inputs[0]), n.iaux[0])));
      case OpKind::SumScalars: {
        S acc = 0;
        for (auto in : n.inputs) acc += val(in).data[0];
        return Tensor::scalar(acc);
      }
    }
    throw ContractError("compute: unknown op");
  }

  static Tensor layernorm_forward(const Tensor& x, const Tensor& g, const Tensor& b, S eps) {
    Tensor out = x;
    const std::int64_t c = x.cols();
    for (std::int64_t r = 0; r < x.rows(); ++r) {
      S mu = 0;
      for (std::int64_t j = 0; j < c; ++j) mu += x.at(r, j);
      mu /= static_cast<S>(c);
      S var = 0;
      for (std::int64_t j = 0; j < c; ++j) {
        S d = x.at(r, j) - mu;
        var += d * d;
      }
      var /= static_cast<S>(c);
      const S inv = S(1) / std::sqrt(var + eps);
      for (std::int64_t j = 0; j < c; ++j)
        out.at(r, j) = g.data[static_cast<std::size_t>(j)] * (x.at(r, j) - mu) * inv +
                       b.data[static_cast<std::size_t>(j)];
    }
    return out;
  }

  // softmax over columns j <= r of each row r; columns j > r are zero
  static Tensor causal_softmax_forward(const Tensor& x) {
    if (x.shape.size() != 2) throw DimError("causal_softmax_rows: matrix required");
    Tensor out = Tensor::zeros(x.shape);
    for (std::int64_t r = 0; r < x.rows(); ++r) {
      const std::int64_t lim = std::min(r + 1, x.cols());
      S mx = x.at(r, 0);
      for (std::int64_t j = 1; j < lim; ++j) mx = std::max(mx, x.at(r, j));
      S sum = 0;
      for (std::int64_t j = 0; j < lim; ++j) {
        out.at(r, j) = std::exp(x.at(r, j) - mx);
        sum += out.at(r, j);
      }
      for (std::int64_t j = 0; j < lim; ++j) out.at(r, j) /= sum;
    }
    return out;
  }

  void accum(NodeId id, const Tensor& g) {
    auto& dst = grads_[idx(id)];
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
  }

  void backward_node(std::int32_t i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.op == OpKind::Input) return;
    const Tensor& gy = grads_[static_cast<std::size_t>(i)];
    switch (n.op) {
      case OpKind::MatMul: {
        // C = A B : dA += gy B^T ; dB += A^T gy
        const auto& a = val(n.inputs[0]);
        const auto& b = val(n.inputs[1]);
        if (nodes_[idx(n.inputs[0])].requires_grad) accum(n.inputs[0], matmul_nt_val(gy, b));
        if (nodes_[idx(n.inputs[1])].requires_grad) {
          // A^T gy computed with fixed order: iterate a rows
          auto& db = grads_[idx(n.inputs[1])];
          const std::int64_t m = a.rows(), k = a.cols(), nn = b.cols();
          for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t p = 0; p < k; ++p) {
              const S av = a.at(r, p);
              for (std::int64_t j = 0; j < nn; ++j) db.at(p, j) += av * gy.at(r, j);
            }
        }
        return;
      }
      case OpKind::MatMulNT: {
        // C = A B^T : dA += gy B ; dB += gy^T A
        const auto& a = val(n.inputs[0]);
        const auto& b = val(n.inputs[1]);
        if (nodes_[idx(n.inputs[0])].requires_grad) accum(n.inputs[0], matmul_val(gy, b));
        if (nodes_[idx(n.inputs[1])].requires_grad) {
          auto& db = grads_[idx(n.inputs[1])];
          const std::int64_t m = a.rows(), k = a.cols(), nn = b.rows();
          for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t j = 0; j < nn; ++j) {
              const S gv = gy.at(r, j);
              for (std::int64_t p = 0; p < k; ++p) db.at(j, p) += gv * a.at(r, p);
            }
        }
        return;
      }
      case OpKind::Add: {
        for (int s = 0; s < 2; ++s)
          if (nodes_[idx(n.inputs[s])].requires_grad) accum(n.inputs[s], gy);
        return;
      }
      case OpKind::AddRowVec: {
        if (nodes_[idx(n.inputs[0])].requires_grad) accum(n.inputs[0], gy);
        if (nodes_[idx(n.inputs[1])].requires_grad) {
          auto& dv = grads_[idx(n.inputs[1])];
          for (std::int64_t r = 0; r < gy.rows(); ++r)
            for (std::int64_t j = 0; j < gy.cols(); ++j)
              dv.data[static_cast<std::size_t>(j)] += gy.at(r, j);
        }
        return;
      }
      case OpKind::Scale: {
        if (nodes_[idx(n.inputs[0])].requires_grad) {
          Tensor g = gy;
          for (auto& x : g.data) x *= n.saux;
          accum(n.inputs[0], g);
        }
        return;
      }
      case OpKind::LayerNormRows: {
        layernorm_backward(n, gy);
        return;
      }
      case OpKind::CausalSoftmaxRows:
      case OpKind::SoftmaxRows: {
        if (!nodes_[idx(n.inputs[0])].requires_grad) return;
        const Tensor& p = n.value;
        Tensor dx = Tensor::zeros(p.shape);
        const bool causal = n.op == OpKind::CausalSoftmaxRows;
        if (p.shape.size() != 2) {
          S acc = 0;
          for (std::size_t j = 0; j < p.data.size(); ++j) acc += gy.data[j] * p.data[j];
          for (std::size_t j = 0; j < p.data.size(); ++j)
            dx.data[j] = p.data[j] * (gy.data[j] - acc);
        } else {
          for (std::int64_t r = 0; r < p.rows(); ++r) {
            const std::int64_t lim = causal ? std::min(r + 1, p.cols()) : p.cols();
            S acc = 0;
            for (std::int64_t j = 0; j < lim; ++j) acc += gy.at(r, j) * p.at(r, j);
            for (std::int64_t j = 0; j < lim; ++j)
              dx.at(r, j) = p.at(r, j) * (gy.at(r, j) - acc);
          }
        }
        accum(n.inputs[0], dx);
        return;
      }
      case OpKind::Gelu: {
        if (!nodes_[idx(n.inputs[0])].requires_grad) return;
        const auto& x = val(n.inputs[0]);
        Tensor dx = gy;
        for (std::size_t j = 0; j < x.data.size(); ++j) dx.data[j] *= gelu_deriv_scalar(x.data[j]);
        accum(n.inputs[0], dx);
        return;
      }
      case OpKind::GatherRows: {
        if (!nodes_[idx(n.inputs[0])].requires_grad) return;
        auto& dt = grads_[idx(n.inputs[0])];
        for (std::size_t r = 0; r < n.iaux.size(); ++r)
          for (std::int64_t j = 0; j < dt.cols(); ++j)
            dt.at(n.iaux[r], j) += gy.at(static_cast<std::int64_t>(r), j);
        return;
      }
      case OpKind::SliceCols: {
        if (!nodes_[idx(n.inputs[0])].requires_grad) return;
        auto& dx = grads_[idx(n.inputs[0])];
        const std::int64_t c0 = n.iaux[0];
        for (std::int64_t r = 0; r < gy.rows(); ++r)
          for (std::int64_t j = 0; j < gy.cols(); ++j) dx.at(r, c0 + j) += gy.at(r, j);
        return;
      }
      case OpKind::ConcatCols: {
        std::int64_t off = 0;
        for (auto in : n.inputs) {
          const std::int64_t w = val(in).cols();
          if (nodes_[idx(in)].requires_grad) {
            auto& dx = grads_[idx(in)];
            for (std::int64_t r = 0; r < gy.rows(); ++r)
              for (std::int64_t j = 0; j < w; ++j) dx.at(r, j) += gy.at(r, off + j);
          }
          off += w;
        }
        return;
      }
      case OpKind::SelectRow: {
        if (!nodes_[idx(n.inputs[0])].requires_grad) return;
        auto& dx = grads_[idx(n.inputs[0])];
        for (std::int64_t j = 0; j < dx.cols(); ++j)
          dx.at(n.iaux[0], j) += gy.data[static_cast<std::size_t>(j)];
        return;
      }
      case OpKind::ReplaceRow: {
        if (nodes_[idx(n.inputs[0])].requires_grad) {
          Tensor g = gy;
          for (std::int64_t j = 0; j < g.cols(); ++j) g.at(n.iaux[0], j) = 0;
          accum(n.inputs[0], g);
        }
        if (nodes_[idx(n.inputs[1])].requires_grad) {
          auto& dv = grads_[idx(n.inputs[1])];
          for (std::int64_t j = 0; j < gy.cols(); ++j)
            dv.data[static_cast<std::size_t>(j)] += gy.at(n.iaux[0], j);
        }
        return;
      }
      case OpKind::DasPatch: {
        const auto& b = val(n.inputs[0]);
        const auto& s = val(n.inputs[1]);
        const auto& a = val(n.inputs[2]);
        S t = 0, ga = 0;
        for (std::size_t j = 0; j < b.data.size(); ++j) {
          t += (s.data[j] - b.data[j]) * a.data[j];
          ga += gy.data[j] * a.data[j];
        }
        if (nodes_[idx(n.inputs[0])].requires_grad) {
          Tensor db = gy;
          for (std::size_t j = 0; j < db.data.size(); ++j) db.data[j] -= ga * a.data[j];
          accum(n.inputs[0], db);
        }
        if (nodes_[idx(n.inputs[1])].requires_grad) {
          Tensor ds = Tensor::zeros(s.shape);
          for (std::size_t j = 0; j < ds.data.size(); ++j) ds.data[j] = ga * a.data[j];
          accum(n.inputs[1], ds);
        }
        if (nodes_[idx(n.inputs[2])].requires_grad) {
          Tensor da = Tensor::zeros(a.shape);
          for (std::size_t j = 0; j < da.data.size(); ++j)
            da.data[j] = ga * (s.data[j] - b.data[j]) + t * gy.data[j];
          accum(n.inputs[2], da);
        }
        return;
      }
      case OpKind::CrossEntropy: {
        if (!nodes_[idx(n.inputs[0])].requires_grad) return;
        const auto& z = val(n.inputs[0]);
        auto p = softmax_row_val(z);
        p.data[static_cast<std::size_t>(n.iaux[0])] -= S(1);
        for (auto& x : p.data) x *= gy.data[0];
        accum(n.inputs[0], p);
        return;
      }
      case OpKind::SumScalars: {
        for (auto in : n.inputs)
          if (nodes_[idx(in)].requires_grad) grads_[idx(in)].data[0] += gy.data[0];
        return;
      }
      case OpKind::Input:
        return;
    }
  }

  void layernorm_backward(const Node& n, const Tensor& gy) {
    const auto& x = val(n.inputs[0]);
    const auto& g = val(n.inputs[1]);
    const std::int64_t c = x.cols();
    const bool need_x = nodes_[idx(n.inputs[0])].requires_grad;
    const bool need_g = nodes_[idx(n.inputs[1])].requires_grad;
    const bool need_b = nodes_[idx(n.inputs[2])].requires_grad;
    for (std::int64_t r = 0; r < x.rows(); ++r) {
      S mu = 0;
      for (std::int64_t j = 0; j < c; ++j) mu += x.at(r, j);
      mu /= static_cast<S>(c);
      S var = 0;
      for (std::int64_t j = 0; j < c; ++j) {
        S d = x.at(r, j) - mu;
        var += d * d;
      }
      var /= static_cast<S>(c);
      const S inv = S(1) / std::sqrt(var + n.saux);
      S m1 = 0, m2 = 0;  // mean(g*gy), mean(g*gy*xhat)
      for (std::int64_t j = 0; j < c; ++j) {
        const S xh = (x.at(r, j) - mu) * inv;
        const S gg = g.data[static_cast<std::size_t>(j)] * gy.at(r, j);
        m1 += gg;
        m2 += gg * xh;
      }
      m1 /= static_cast<S>(c);
      m2 /= static_cast<S>(c);
      for (std::int64_t j = 0; j < c; ++j) {
        const S xh = (x.at(r, j) - mu) * inv;
        if (need_x) {
          const S gg = g.data[static_cast<std::size_t>(j)] * gy.at(r, j);
          grads_[idx(n.inputs[0])].at(r, j) += (gg - m1 - xh * m2) * inv;
        }
        if (need_g) grads_[idx(n.inputs[1])].data[static_cast<std::size_t>(j)] += gy.at(r, j) * xh;
        if (need_b) grads_[idx(n.inputs[2])].data[static_cast<std::size_t>(j)] += gy.at(r, j);
      }
    }
  }
};

using Graph = GraphT<double>;
using Graph32 = GraphT<float>;

}  // namespace ilab
