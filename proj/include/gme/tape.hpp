#pragma once

// Reverse-mode differentiation over a recorded sequence of tensor operations.
//
// A Tape is append-only. Every recorded node stores its forward value, so a
// reverse sweep needs no recomputation and can be repeated any number of
// times. Nodes whose inputs are all constants are marked as not requiring a
// gradient and are skipped during the sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gme/tensor.hpp"

namespace gme {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

enum class Op : std::uint8_t {
  Leaf,
  Const,
  MatMul,       // [m,k] x [k,n] -> [m,n]
  MatVec,       // [m,k] x [k] -> [m]
  VecMat,       // [n] x [n,k] -> [k]
  Add,
  Sub,
  AddRowBias,   // [m,n] + [n]
  AddScalar,    // [...] + [1]
  Concat,       // 1-D inputs -> 1-D
  ConcatCols,   // [m,k_i] inputs -> [m, sum k_i]
  Stack,        // n inputs of [k] -> [n,k]
  RepeatRows,   // [k] -> [count,k]
  EmbeddingBag, // table [V,d], per-row index lists -> [rows,d], mean pooled
  Tanh,
  Sigmoid,
  LeakyRelu,
  Elu,
  Softmax,      // 1-D
  Mean,         // all elements -> [1]
  Scale,
  Dot,          // [k] . [k] -> [1]
  Bce,          // mean binary cross-entropy of predictions against constant labels -> [1]
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Const: return "const";
    case Op::MatMul: return "matmul";
    case Op::MatVec: return "matvec";
    case Op::VecMat: return "vecmat";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::AddRowBias: return "add_row_bias";
    case Op::AddScalar: return "add_scalar";
    case Op::Concat: return "concat";
    case Op::ConcatCols: return "concat_cols";
    case Op::Stack: return "stack";
    case Op::RepeatRows: return "repeat_rows";
    case Op::EmbeddingBag: return "embedding_bag";
    case Op::Tanh: return "tanh";
    case Op::Sigmoid: return "sigmoid";
    case Op::LeakyRelu: return "leaky_relu";
    case Op::Elu: return "elu";
    case Op::Softmax: return "softmax";
    case Op::Mean: return "mean";
    case Op::Scale: return "scale";
    case Op::Dot: return "dot";
    case Op::Bce: return "bce";
  }
  return "?";
}

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kEluAlpha = 1.0;
inline constexpr double kBceClamp = 1e-12;

/// Index lists for EmbeddingBag in CSR form: row r pools indices[offsets[r] .. offsets[r+1]).
struct BagIndices {
  std::vector<std::uint32_t> offsets{0};
  std::vector<std::uint32_t> indices;

  std::size_t rows() const { return offsets.size() - 1; }
  void push_row(std::span<const std::uint32_t> idx) {
    indices.insert(indices.end(), idx.begin(), idx.end());
    offsets.push_back(static_cast<std::uint32_t>(indices.size()));
  }
};

/// Mean of the selected rows of `table` for every bag; an empty bag pools to zero.
inline Tensor pool_rows(const Tensor& table, const BagIndices& bags) {
  if (table.rank() != 2) throw shape_error("embedding_bag: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t d = table.cols();
  Tensor out({bags.rows(), d});
  for (std::size_t r = 0; r < bags.rows(); ++r) {
    const auto lo = bags.offsets[r], hi = bags.offsets[r + 1];
    if (hi == lo) continue;
    auto o = out.row(r);
    for (auto k = lo; k < hi; ++k) {
      const auto idx = bags.indices[k];
      if (idx >= table.rows())
        throw contract_violation("embedding_bag: index " + std::to_string(idx) + " outside table of " +
                                 std::to_string(table.rows()) + " rows");
      auto src = table.row(idx);
      for (std::size_t c = 0; c < d; ++c) o[c] += src[c];
    }
    const double inv = 1.0 / static_cast<double>(hi - lo);
    for (auto& v : o) v *= inv;
  }
  return out;
}

/// Gradients of a scalar output with respect to every leaf of a tape.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const {
    auto it = by_leaf_.find(leaf.id);
    if (it == by_leaf_.end()) throw contract_violation("gradient requested for a non-leaf node");
    return it->second;
  }
  bool contains(Var v) const { return by_leaf_.count(v.id) != 0; }
  std::size_t size() const { return by_leaf_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> by_leaf_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  Op kind(Var v) const { return nodes_.at(v.id).op; }

  Var leaf(Tensor t) { return push(Op::Leaf, {}, std::move(t), true); }
  Var constant(Tensor t) { return push(Op::Const, {}, std::move(t), false); }

  Var matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows())
      throw mismatch("matmul", A, B);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double* o = &out.storage()[i * n];
      for (std::size_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        if (aip == 0.0) continue;
        const double* brow = &B.storage()[p * n];
        for (std::size_t j = 0; j < n; ++j) o[j] += aip * brow[j];
      }
    }
    return push(Op::MatMul, {a, b}, std::move(out));
  }

  Var matvec(Var a, Var x) {
    const auto& A = value(a);
    const auto& X = value(x);
    if (A.rank() != 2 || X.rank() != 1 || A.cols() != X.size()) throw mismatch("matvec", A, X);
    Tensor out({A.rows()});
    for (std::size_t i = 0; i < A.rows(); ++i) out[i] = gme::dot(A.row(i), X.data());
    return push(Op::MatVec, {a, x}, std::move(out));
  }

  Var vecmat(Var w, Var h) {
    const auto& W = value(w);
    const auto& H = value(h);
    if (W.rank() != 1 || H.rank() != 2 || W.size() != H.rows()) throw mismatch("vecmat", W, H);
    Tensor out({H.cols()});
    for (std::size_t r = 0; r < H.rows(); ++r) {
      auto row = H.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) out[c] += W[r] * row[c];
    }
    return push(Op::VecMat, {w, h}, std::move(out));
  }

  Var add(Var a, Var b) {
    if (value(a).shape() != value(b).shape()) throw mismatch("add", value(a), value(b));
    return push(Op::Add, {a, b}, value(a) + value(b));
  }

  Var sub(Var a, Var b) {
    if (value(a).shape() != value(b).shape()) throw mismatch("sub", value(a), value(b));
    return push(Op::Sub, {a, b}, value(a) - value(b));
  }

  Var add_row_bias(Var m, Var b) {
    const auto& M = value(m);
    const auto& B = value(b);
    if (M.rank() != 2 || B.rank() != 1 || M.cols() != B.size()) throw mismatch("add_row_bias", M, B);
    Tensor out = M;
    for (std::size_t r = 0; r < M.rows(); ++r) {
      auto row = out.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += B[c];
    }
    return push(Op::AddRowBias, {m, b}, std::move(out));
  }

  Var add_scalar(Var x, Var s) {
    const auto& S = value(s);
    if (S.size() != 1) throw mismatch("add_scalar", value(x), S);
    Tensor out = value(x);
    for (auto& v : out.storage()) v += S[0];
    return push(Op::AddScalar, {x, s}, std::move(out));
  }

  Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat: no inputs");
    std::vector<double> out;
    for (auto p : parts) {
      const auto& t = value(p);
      if (t.rank() != 1) throw shape_error("concat: expected 1-D input, got " + shape_str(t.shape()));
      out.insert(out.end(), t.storage().begin(), t.storage().end());
    }
    return push(Op::Concat, parts, Tensor::vector(std::move(out)));
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw shape_error("concat_cols: no inputs");
    const std::size_t m = value(parts[0]).rows();
    std::size_t width = 0;
    for (auto p : parts) {
      const auto& t = value(p);
      if (t.rank() != 2 || t.rows() != m) throw mismatch("concat_cols", value(parts[0]), t);
      width += t.cols();
    }
    Tensor out({m, width});
    std::size_t off = 0;
    for (auto p : parts) {
      const auto& t = value(p);
      for (std::size_t r = 0; r < m; ++r)
        std::copy(t.row(r).begin(), t.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(off));
      off += t.cols();
    }
    return push(Op::ConcatCols, parts, std::move(out));
  }

  Var stack(const std::vector<Var>& rows) {
    if (rows.empty()) throw shape_error("stack: no inputs");
    const auto& first = value(rows[0]);
    if (first.rank() != 1) throw shape_error("stack: expected 1-D input, got " + shape_str(first.shape()));
    Tensor out({rows.size(), first.size()});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& t = value(rows[r]);
      if (t.shape() != first.shape()) throw mismatch("stack", first, t);
      std::copy(t.storage().begin(), t.storage().end(), out.row(r).begin());
    }
    return push(Op::Stack, rows, std::move(out));
  }

  Var repeat_rows(Var x, std::size_t count) {
    const auto& X = value(x);
    if (X.rank() != 1 || count == 0) throw shape_error("repeat_rows: bad input " + shape_str(X.shape()));
    Tensor out({count, X.size()});
    for (std::size_t r = 0; r < count; ++r) std::copy(X.storage().begin(), X.storage().end(), out.row(r).begin());
    return push(Op::RepeatRows, {x}, std::move(out));
  }

  Var embedding_bag(Var table, BagIndices bags) {
    Var v = push(Op::EmbeddingBag, {table}, pool_rows(value(table), bags));
    nodes_[v.id].bags = std::move(bags);
    return v;
  }

  Var tanh(Var x) { return unary(Op::Tanh, x, [](double v) { return std::tanh(v); }); }
  Var sigmoid(Var x) { return unary(Op::Sigmoid, x, sigmoid_fn); }
  Var leaky_relu(Var x) {
    return unary(Op::LeakyRelu, x, [](double v) { return v > 0.0 ? v : kLeakySlope * v; });
  }
  Var elu(Var x) { return unary(Op::Elu, x, elu_fn); }

  Var softmax(Var x) {
    const auto& X = value(x);
    if (X.rank() != 1) throw shape_error("softmax: expected 1-D input, got " + shape_str(X.shape()));
    return push(Op::Softmax, {x}, softmax_fn(X));
  }

  Var mean(Var x) {
    const auto& X = value(x);
    double s = 0.0;
    for (double v : X.storage()) s += v;
    return push(Op::Mean, {x}, Tensor::scalar(s / static_cast<double>(X.size())));
  }

  Var scale(Var x, double s) {
    Var v = push(Op::Scale, {x}, s * value(x));
    nodes_[v.id].scalar = s;
    return v;
  }

  Var dot(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.rank() != 1 || A.shape() != B.shape()) throw mismatch("dot", A, B);
    return push(Op::Dot, {a, b}, Tensor::scalar(gme::dot(A.data(), B.data())));
  }

  /// Labels must be 0 or 1; predictions are clamped to [1e-12, 1-1e-12] before the log.
  Var bce(Var pred, std::vector<double> labels) {
    const auto& P = value(pred);
    if (P.rank() != 1 || P.size() != labels.size())
      throw shape_error("bce: predictions " + shape_str(P.shape()) + " vs " + std::to_string(labels.size()) +
                        " labels");
    double s = 0.0;
    for (std::size_t i = 0; i < P.size(); ++i) {
      const double p = std::clamp(P[i], kBceClamp, 1.0 - kBceClamp);
      s += labels[i] > 0.5 ? -std::log(p) : -std::log(1.0 - p);
    }
    Var v = push(Op::Bce, {pred}, Tensor::scalar(s / static_cast<double>(P.size())));
    nodes_[v.id].labels = std::move(labels);
    return v;
  }

  /// Reverse sweep from a scalar node. Leaves the tape unchanged.
  Gradients backward(Var output) const {
    if (output.tape != this) throw contract_violation("backward: output belongs to another tape");
    if (value(output).size() != 1)
      throw contract_violation("backward: output must be scalar, got " + shape_str(value(output).shape()));
    std::vector<Tensor> adj(output.id + 1);
    adj[output.id] = Tensor::scalar(1.0);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (!n.requires_grad || adj[i].size() == 0) continue;
      propagate(n, adj[i], adj);
    }
    Gradients g;
    for (std::size_t i = 0; i <= output.id; ++i) {
      if (nodes_[i].op != Op::Leaf) continue;
      g.by_leaf_.emplace(i, adj[i].size() ? std::move(adj[i]) : Tensor(nodes_[i].value.shape()));
    }
    for (std::size_t i = output.id + 1; i < nodes_.size(); ++i)
      if (nodes_[i].op == Op::Leaf) g.by_leaf_.emplace(i, Tensor(nodes_[i].value.shape()));
    return g;
  }

  static double sigmoid_fn(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  }
  static double elu_fn(double v) { return v > 0.0 ? v : kEluAlpha * std::expm1(v); }
  static Tensor softmax_fn(const Tensor& x) {
    const double mx = *std::max_element(x.storage().begin(), x.storage().end());
    Tensor out = x;
    double s = 0.0;
    for (auto& v : out.storage()) s += (v = std::exp(v - mx));
    for (auto& v : out.storage()) v /= s;
    return out;
  }

 private:
  struct Node {
    Op op = Op::Leaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    bool requires_grad = false;
    double scalar = 0.0;
    std::vector<double> labels;
    BagIndices bags;
  };

  static shape_error mismatch(const char* op, const Tensor& a, const Tensor& b) {
    return shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }

  template <class F>
  Var unary(Op op, Var x, F f) {
    Tensor out = value(x);
    for (auto& v : out.storage()) v = f(v);
    return push(op, {x}, std::move(out));
  }

  Var push(Op op, const std::vector<Var>& in, Tensor value, bool is_leaf = false) {
    if (!value.all_finite())
      throw numeric_overflow(std::string(op_name(op)) + ": non-finite result");
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.requires_grad = is_leaf;
    n.inputs.reserve(in.size());
    for (auto v : in) {
      if (v.tape != this) throw contract_violation(std::string(op_name(op)) + ": input from another tape");
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  void accumulate(std::vector<Tensor>& adj, std::size_t id, Tensor&& g) const {
    if (!nodes_[id].requires_grad) return;
    if (adj[id].size() == 0)
      adj[id] = std::move(g);
    else
      axpy(1.0, g, adj[id]);
  }

  bool wants(std::size_t id) const { return nodes_[id].requires_grad; }

  void propagate(const Node& n, const Tensor& g, std::vector<Tensor>& adj) const {
    const auto in = [&](std::size_t k) -> const Tensor& { return nodes_[n.inputs[k]].value; };
    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;
      case Op::MatMul: {
        const auto& A = in(0);
        const auto& B = in(1);
        const std::size_t m = A.rows(), k = A.cols(), p = B.cols();
        if (wants(n.inputs[0])) {
          Tensor ga({m, k});
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t q = 0; q < k; ++q) ga[i * k + q] = gme::dot(g.row(i), B.row(q));
          accumulate(adj, n.inputs[0], std::move(ga));
        }
        if (wants(n.inputs[1])) {
          Tensor gb({k, p});
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t q = 0; q < k; ++q) {
              const double a = A[i * k + q];
              if (a == 0.0) continue;
              auto grow = g.row(i);
              auto brow = gb.row(q);
              for (std::size_t j = 0; j < p; ++j) brow[j] += a * grow[j];
            }
          accumulate(adj, n.inputs[1], std::move(gb));
        }
        break;
      }
      case Op::MatVec: {
        const auto& A = in(0);
        const auto& X = in(1);
        if (wants(n.inputs[0])) {
          Tensor ga(A.shape());
          for (std::size_t i = 0; i < A.rows(); ++i) {
            auto row = ga.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] = g[i] * X[j];
          }
          accumulate(adj, n.inputs[0], std::move(ga));
        }
        if (wants(n.inputs[1])) {
          Tensor gx(X.shape());
          for (std::size_t i = 0; i < A.rows(); ++i) {
            auto row = A.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) gx[j] += g[i] * row[j];
          }
          accumulate(adj, n.inputs[1], std::move(gx));
        }
        break;
      }
      case Op::VecMat: {
        const auto& W = in(0);
        const auto& H = in(1);
        if (wants(n.inputs[0])) {
          Tensor gw(W.shape());
          for (std::size_t r = 0; r < H.rows(); ++r) gw[r] = gme::dot(H.row(r), g.data());
          accumulate(adj, n.inputs[0], std::move(gw));
        }
        if (wants(n.inputs[1])) {
          Tensor gh(H.shape());
          for (std::size_t r = 0; r < H.rows(); ++r) {
            auto row = gh.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] = W[r] * g[c];
          }
          accumulate(adj, n.inputs[1], std::move(gh));
        }
        break;
      }
      case Op::Add:
        accumulate(adj, n.inputs[0], Tensor(g));
        accumulate(adj, n.inputs[1], Tensor(g));
        break;
      case Op::Sub:
        accumulate(adj, n.inputs[0], Tensor(g));
        accumulate(adj, n.inputs[1], -1.0 * g);
        break;
      case Op::AddRowBias: {
        accumulate(adj, n.inputs[0], Tensor(g));
        if (wants(n.inputs[1])) {
          Tensor gb(in(1).shape());
          for (std::size_t r = 0; r < g.rows(); ++r) {
            auto row = g.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
          }
          accumulate(adj, n.inputs[1], std::move(gb));
        }
        break;
      }
      case Op::AddScalar: {
        accumulate(adj, n.inputs[0], Tensor(g));
        double s = 0.0;
        for (double v : g.storage()) s += v;
        accumulate(adj, n.inputs[1], Tensor::scalar(s));
        break;
      }
      case Op::Concat: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto len = in(k).size();
          if (wants(n.inputs[k])) {
            std::vector<double> part(g.storage().begin() + static_cast<std::ptrdiff_t>(off),
                                     g.storage().begin() + static_cast<std::ptrdiff_t>(off + len));
            accumulate(adj, n.inputs[k], Tensor::vector(std::move(part)));
          }
          off += len;
        }
        break;
      }
      case Op::ConcatCols: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto& t = in(k);
          if (wants(n.inputs[k])) {
            Tensor part(t.shape());
            for (std::size_t r = 0; r < t.rows(); ++r) {
              auto src = g.row(r).subspan(off, t.cols());
              std::copy(src.begin(), src.end(), part.row(r).begin());
            }
            accumulate(adj, n.inputs[k], std::move(part));
          }
          off += t.cols();
        }
        break;
      }
      case Op::Stack:
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          if (!wants(n.inputs[k])) continue;
          auto src = g.row(k);
          accumulate(adj, n.inputs[k], Tensor::vector(std::vector<double>(src.begin(), src.end())));
        }
        break;
      case Op::RepeatRows: {
        Tensor gx(in(0).shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto row = g.row(r);
          for (std::size_t c = 0; c < row.size(); ++c) gx[c] += row[c];
        }
        accumulate(adj, n.inputs[0], std::move(gx));
        break;
      }
      case Op::EmbeddingBag: {
        const auto& T = in(0);
        Tensor gt(T.shape());
        const std::size_t d = T.cols();
        for (std::size_t r = 0; r < n.bags.rows(); ++r) {
          const auto lo = n.bags.offsets[r], hi = n.bags.offsets[r + 1];
          if (hi == lo) continue;
          const double inv = 1.0 / static_cast<double>(hi - lo);
          auto src = g.row(r);
          for (auto k = lo; k < hi; ++k) {
            auto dst = gt.row(n.bags.indices[k]);
            for (std::size_t c = 0; c < d; ++c) dst[c] += inv * src[c];
          }
        }
        accumulate(adj, n.inputs[0], std::move(gt));
        break;
      }
      case Op::Tanh: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 1.0 - n.value[i] * n.value[i];
        accumulate(adj, n.inputs[0], std::move(gx));
        break;
      }
      case Op::Sigmoid: {
        Tensor gx = g;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= n.value[i] * (1.0 - n.value[i]);
        accumulate(adj, n.inputs[0], std::move(gx));
        break;
      }
      case Op::LeakyRelu: {
        Tensor gx = g;
        const auto& X = in(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= X[i] > 0.0 ? 1.0 : kLeakySlope;
        accumulate(adj, n.inputs[0], std::move(gx));
        break;
      }
      case Op::Elu: {
        Tensor gx = g;
        const auto& X = in(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= X[i] > 0.0 ? 1.0 : n.value[i] + kEluAlpha;
        accumulate(adj, n.inputs[0], std::move(gx));
        break;
      }
      case Op::Softmax: {
        const auto& Y = n.value;
        const double s = gme::dot(g.data(), Y.data());
        Tensor gx(Y.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = Y[i] * (g[i] - s);
        accumulate(adj, n.inputs[0], std::move(gx));
        break;
      }
      case Op::Mean: {
        const auto& X = in(0);
        accumulate(adj, n.inputs[0], Tensor(X.shape(), g[0] / static_cast<double>(X.size())));
        break;
      }
      case Op::Scale:
        accumulate(adj, n.inputs[0], n.scalar * g);
        break;
      case Op::Dot:
        accumulate(adj, n.inputs[0], g[0] * in(1));
        accumulate(adj, n.inputs[1], g[0] * in(0));
        break;
      case Op::Bce: {
        const auto& P = in(0);
        const double inv = g[0] / static_cast<double>(P.size());
        Tensor gp(P.shape());
        for (std::size_t i = 0; i < P.size(); ++i) {
          if (P[i] < kBceClamp || P[i] > 1.0 - kBceClamp) continue;  // clamped region is flat
          gp[i] = n.labels[i] > 0.5 ? -inv / P[i] : inv / (1.0 - P[i]);
        }
        accumulate(adj, n.inputs[0], std::move(gp));
        break;
      }
    }
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

}  // namespace gme
