#include <gtest/gtest.h>

#include <cmath>

#include "gme/optim.hpp"
#include "gme/tape.hpp"
#include "test_util.hpp"

using namespace gme;
using gme::test::rel_err;

TEST(Tensor, RejectsZeroExtentAndLengthMismatch) {
  EXPECT_THROW(Tensor({0, 3}), shape_error);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), shape_error);
}

TEST(Tensor, ArithmeticChecksShapes) {
  auto a = Tensor::vector({1, 2});
  auto b = Tensor::vector({3, 4, 5});
  EXPECT_THROW(a + b, shape_error);
  EXPECT_EQ(a + a, Tensor::vector({2, 4}));
}

TEST(Tape, ForwardExamples) {
  Tape t;
  auto z = t.tanh(t.constant(Tensor({3})));
  EXPECT_EQ(z.value(), Tensor({3}));
  auto s = t.softmax(t.constant(Tensor({4}, 1.7)));
  for (double v : s.value().storage()) EXPECT_DOUBLE_EQ(v, 0.25);
  EXPECT_DOUBLE_EQ(t.leaky_relu(t.constant(Tensor::scalar(-1.0))).value()[0], -0.2);
}

TEST(Tape, SigmoidSlopeAtZero) {
  Tape t;
  auto x = t.leaf(Tensor::scalar(0.0));
  auto g = t.backward(t.sigmoid(x));
  EXPECT_DOUBLE_EQ(g[x][0], 0.25);
}

TEST(Tape, MatVecWeightGradient) {
  Tape t;
  auto W = t.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  auto y = t.matvec(W, t.constant(Tensor::vector({1, 1})));
  auto g = t.backward(t.dot(y, t.constant(Tensor::vector({1, 1}))));
  EXPECT_EQ(g[W], Tensor::matrix(2, 2, {1, 1, 1, 1}));
}

TEST(Tape, ShapeMismatchNamesBothShapes) {
  Tape t;
  auto a = t.constant(Tensor({2, 3}));
  auto b = t.constant(Tensor({4, 5}));
  try {
    t.matmul(a, b);
    FAIL() << "expected shape_error";
  } catch (const shape_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2,3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4,5)"), std::string::npos) << msg;
  }
}

TEST(Tape, NonFiniteResultRaises) {
  Tape t;
  auto big = t.constant(Tensor::vector({1e308, 1e308}));
  EXPECT_THROW(t.add(big, big), numeric_overflow);
}

TEST(Tape, BackwardRequiresScalar) {
  Tape t;
  auto x = t.leaf(Tensor({3}));
  EXPECT_THROW(t.backward(t.tanh(x)), contract_violation);
}

TEST(Tape, ConstantsGetNoGradientAndUnusedLeavesGetZero) {
  Tape t;
  auto x = t.leaf(Tensor::vector({1, 2}));
  auto c = t.constant(Tensor::vector({3, 4}));
  auto unused = t.leaf(Tensor::vector({5}));
  auto g = t.backward(t.dot(x, c));
  EXPECT_EQ(g[x], Tensor::vector({3, 4}));
  EXPECT_EQ(g[unused], Tensor({1}));
  EXPECT_THROW(g[c], contract_violation);
}

TEST(Tape, BceClampsAtTheFloor) {
  Tape t;
  auto p = t.constant(Tensor::vector({1.0, 0.0}));
  double l = t.bce(p, {1, 0}).value()[0];
  EXPECT_LE(l, -std::log(1.0 - 1e-12) + 1e-18);
  EXPECT_TRUE(std::isfinite(t.bce(p, {0, 1}).value()[0]));
}

TEST(Tape, BackwardIsDeterministic) {
  Rng rng = make_rng(3, "test");
  auto A = test::random_tensor({4, 4}, rng);
  auto run = [&] {
    Tape t;
    auto a = t.leaf(A);
    auto h = t.elu(t.matmul(a, a));
    return t.backward(test::reduce(t, h))[a];
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, KinkedOpsAreContinuousAtZero) {
  Tape t;
  for (double eps : {1e-9, -1e-9}) {
    EXPECT_NEAR(t.leaky_relu(t.constant(Tensor::scalar(eps))).value()[0], 0.0, 1e-9);
    EXPECT_NEAR(t.elu(t.constant(Tensor::scalar(eps))).value()[0], 0.0, 1e-9);
  }
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto c = test::op_cases()[GetParam()];
  Rng rng = make_rng(11, c.name);
  for (int point = 0; point < 20; ++point) {
    auto in = test::draw_inputs(c, rng);
    EXPECT_LT(test::grad_check(c.fn, in), 1e-4) << c.name << " point " << point;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, test::op_cases().size()),
                         [](const auto& info) { return test::op_cases()[info.param].name; });

TEST(Adam, ZeroGradientLeavesParamUnchanged) {
  Tensor p = Tensor::vector({1.5, -2});
  AdamState st({2}, AdamConfig{});
  adam_step(p, Tensor({2}), st);
  EXPECT_EQ(p, Tensor::vector({1.5, -2}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamConfig c;
  c.lr = 0.1;
  auto [p, st] = adam_update(Tensor::scalar(0.0), Tensor::scalar(1.0), AdamState({1}, c));
  EXPECT_NEAR(p[0], -0.1, 1e-7);
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, ConvergesOnQuadratic) {
  AdamConfig c;
  c.lr = 0.1;
  AdamState st({1}, c);
  Tensor x = Tensor::scalar(0.0);
  for (int i = 0; i < 1000; ++i) adam_step(x, Tensor::scalar(2.0 * (x[0] - 3.0)), st);
  EXPECT_NEAR(x[0], 3.0, 1e-3);
}

TEST(Adam, ShapeMismatchRejected) {
  Tensor p({2});
  AdamState st;
  EXPECT_THROW(adam_step(p, Tensor({3}), st), shape_error);
}

TEST(FiniteDiff, Examples) {
  auto sq = [](const Tensor& x) { return x[0] * x[0] + x[1] * x[1]; };
  auto g = finite_diff_grad(sq, Tensor::vector({1, 2}));
  EXPECT_NEAR(g[0], 2.0, 1e-8);
  EXPECT_NEAR(g[1], 4.0, 1e-8);
  EXPECT_EQ(finite_diff_grad([](const Tensor&) { return 7.0; }, Tensor::vector({1, 2, 3})), Tensor({3}));
}

TEST(Hvp, IdentityHessian) {
  auto grad = [](const Tensor& x) { return x; };
  auto h = hvp_fd(grad, Tensor::vector({0.3, -4}), Tensor::vector({1, 0}));
  EXPECT_NEAR(h[0], 1.0, 1e-9);
  EXPECT_NEAR(h[1], 0.0, 1e-9);
}

TEST(Hvp, CubicExample) {
  // f = x1^2 x2, grad = (2 x1 x2, x1^2)
  auto grad = [](const Tensor& x) { return Tensor::vector({2 * x[0] * x[1], x[0] * x[0]}); };
  auto h = hvp_fd(grad, Tensor::vector({1, 1}), Tensor::vector({1, 0}));
  EXPECT_NEAR(h[0], 2.0, 1e-7);
  EXPECT_NEAR(h[1], 2.0, 1e-7);
}

TEST(Hvp, QuadraticFormMatchesMatrixProduct) {
  Rng rng = make_rng(5, "test");
  auto A = test::random_tensor({4, 4}, rng);
  Tensor S({4, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) S.at(i, j) = A.at(i, j) + A.at(j, i);
  auto grad = [&](const Tensor& x) {
    Tensor g({4});
    for (std::size_t i = 0; i < 4; ++i) g[i] = dot(S.row(i), x.data());
    return g;
  };
  auto v = test::random_tensor({4}, rng);
  EXPECT_LT(rel_err(hvp_fd(grad, test::random_tensor({4}, rng), v), grad(v)), 1e-9);
}

TEST(Hvp, NonFiniteRaises) {
  auto grad = [](const Tensor& x) { return Tensor::vector({1.0 / (x[0] - x[0])}); };
  EXPECT_THROW(hvp_fd(grad, Tensor::scalar(1.0), Tensor::scalar(1.0)), numeric_overflow);
}
