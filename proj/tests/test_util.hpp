#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gme/optim.hpp"
#include "gme/random.hpp"
#include "gme/tape.hpp"

namespace gme::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = uniform(rng, lo, hi);
  return t;
}

/// Same, but every entry at least `gap` away from zero (keeps kinks out of FD stencils).
inline Tensor random_away_from_zero(Shape shape, Rng& rng, double gap = 0.05) {
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) {
    double x = uniform(rng, gap, 1.0);
    v = uniform01(rng) < 0.5 ? -x : x;
  }
  return t;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double rel_err(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

using TapeFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Fixed, shape-dependent weights so a tensor output becomes a generic scalar.
inline Tensor probe_weights(std::size_t n) {
  Tensor w({n});
  for (std::size_t i = 0; i < n; ++i) w[i] = std::sin(1.3 * static_cast<double>(i) + 0.7);
  return w;
}

inline Var reduce(Tape& t, Var v) {
  const auto& s = v.shape();
  if (s.size() == 2) v = t.matvec(v, t.constant(probe_weights(s[1])));
  return t.dot(v, t.constant(probe_weights(v.shape()[0])));
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over all inputs of a scalar tape function.
inline double grad_check(const TapeFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  auto g = tape.backward(f(tape, leaves));
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto fk = [&](const Tensor& x) {
      Tape t2;
      std::vector<Var> l2;
      for (std::size_t j = 0; j < inputs.size(); ++j) l2.push_back(t2.leaf(j == k ? x : inputs[j]));
      return f(t2, l2).value()[0];
    };
    worst = std::max(worst, rel_err(g[leaves[k]], finite_diff_grad(fk, inputs[k], h)));
  }
  return worst;
}

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  TapeFn fn;
  /// Inputs drawn from (0.05, 0.95) instead of (-1, 1).
  bool probabilities = false;
  bool avoid_zero = false;
};

/// One scalar-valued probe per differentiable tape op.
inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> c;
  c.push_back({"matmul", {{3, 4}, {4, 2}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.matmul(x[0], x[1])); }});
  c.push_back({"matvec", {{3, 4}, {4}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.matvec(x[0], x[1])); }});
  c.push_back({"vecmat", {{3}, {3, 5}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.vecmat(x[0], x[1])); }});
  c.push_back({"add", {{4}, {4}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.add(x[0], x[1])); }});
  c.push_back({"sub", {{2, 3}, {2, 3}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.sub(x[0], x[1])); }});
  c.push_back({"add_row_bias", {{3, 4}, {4}},
               [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.add_row_bias(x[0], x[1])); }});
  c.push_back({"add_scalar", {{5}, {1}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.add_scalar(x[0], x[1])); }});
  c.push_back({"concat", {{2}, {3}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.concat({x[0], x[1], x[0]})); }});
  c.push_back({"concat_cols", {{3, 2}, {3, 1}},
               [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.concat_cols({x[0], x[1]})); }});
  c.push_back({"stack", {{3}, {3}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.stack({x[0], x[1], x[0]})); }});
  c.push_back({"repeat_rows", {{4}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.repeat_rows(x[0], 3)); }});
  c.push_back({"embedding_bag", {{5, 3}}, [](Tape& t, const std::vector<Var>& x) {
                 BagIndices b;
                 const std::uint32_t r0[] = {0, 2}, r1[] = {4}, r2[] = {1, 1, 3};
                 b.push_row(r0);
                 b.push_row(r1);
                 b.push_row({});
                 b.push_row(r2);
                 return reduce(t, t.embedding_bag(x[0], std::move(b)));
               }});
  c.push_back({"tanh", {{6}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.tanh(x[0])); }});
  c.push_back({"sigmoid", {{2, 3}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.sigmoid(x[0])); }});
  c.push_back({"leaky_relu", {{6}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.leaky_relu(x[0])); }, false, true});
  c.push_back({"elu", {{6}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.elu(x[0])); }, false, true});
  c.push_back({"softmax", {{5}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.softmax(x[0])); }});
  c.push_back({"mean", {{3, 3}}, [](Tape& t, const std::vector<Var>& x) { return t.mean(t.tanh(x[0])); }});
  c.push_back({"scale", {{4}}, [](Tape& t, const std::vector<Var>& x) { return reduce(t, t.scale(x[0], -2.5)); }});
  c.push_back({"dot", {{4}, {4}}, [](Tape& t, const std::vector<Var>& x) { return t.dot(x[0], x[1]); }});
  c.push_back({"bce", {{6}}, [](Tape& t, const std::vector<Var>& x) { return t.bce(x[0], {1, 0, 0, 1, 1, 0}); }, true});
  return c;
}

inline std::vector<Tensor> draw_inputs(const OpCase& c, Rng& rng) {
  std::vector<Tensor> in;
  for (const auto& s : c.shapes) {
    if (c.probabilities)
      in.push_back(random_tensor(s, rng, 0.05, 0.95));
    else if (c.avoid_zero)
      in.push_back(random_away_from_zero(s, rng));
    else
      in.push_back(random_tensor(s, rng));
  }
  return in;
}

}  // namespace gme::test
