#include <gtest/gtest.h>

#include "hfc/autodiff.hpp"
#include "hfc/gradcheck.hpp"
#include "hfc/ops.hpp"
#include "hfc/rng.hpp"

namespace {

using namespace hfc;

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = 2.0 * uniform01(rng) - 1.0;
  return t;
}

TEST(Autodiff, ParentsPrecedeChildren) {
  Graph g;
  Var a = g.parameter(Tensor::vector({1, 2}));
  Var b = g.parameter(Tensor::vector({3, 4}));
  Var c = mul(a, b);
  Var d = sum(add(c, a));
  EXPECT_LT(a.id(), c.id());
  EXPECT_LT(b.id(), c.id());
  EXPECT_LT(c.id(), d.id());
}

TEST(Autodiff, SumGivesOnes) {
  Graph g;
  Var x = g.parameter(Tensor({2, 3}, 0.7));
  g.backward(sum(x));
  EXPECT_EQ(x.grad(), Tensor({2, 3}, 1.0));
}

TEST(Autodiff, ZeroTimesBranchGivesZeroGradient) {
  Graph g;
  Var x = g.parameter(Tensor::vector({0.3, -1.2, 2.0}));
  g.backward(scale(sum(exp(x)), 0.0));
  EXPECT_EQ(x.grad(), Tensor({3}, 0.0));
}

TEST(Autodiff, UnreachableNodesHaveZeroGradient) {
  Graph g;
  Var x = g.parameter(Tensor::vector({1, 2}));
  Var unused = g.parameter(Tensor::matrix({{1, 2}, {3, 4}}));
  g.backward(sum(x));
  EXPECT_EQ(unused.grad(), Tensor({2, 2}, 0.0));
}

TEST(Autodiff, GradientShapesMatchValues) {
  Graph g;
  Var x = g.parameter(Tensor({2, 3}, 0.5));
  Var w = g.parameter(Tensor({3, 4}, 0.1));
  Var y = matmul(x, w);
  Var loss = mean(y);
  g.backward(loss);
  EXPECT_EQ(x.grad().shape(), x.value().shape());
  EXPECT_EQ(w.grad().shape(), w.value().shape());
  EXPECT_EQ(y.grad().shape(), y.value().shape());
}

TEST(Autodiff, NonScalarLossIsRejected) {
  Graph g;
  Var x = g.parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Autodiff, InferenceRecordCannotBackward) {
  Graph g(Graph::Mode::inference);
  Var x = g.parameter(Tensor::vector({1, 2}));
  EXPECT_THROW(g.backward(sum(x)), std::logic_error);
}

TEST(Autodiff, BackwardIsDeterministic) {
  Rng rng = make_rng(3, "test");
  const Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
  auto run = [&] {
    Graph g;
    Var x = g.parameter(a);
    g.backward(sum(gelu(matmul(x, g.constant(b)))));
    return x.grad();
  };
  EXPECT_EQ(run(), run());
}

// grad(αL1 + βL2) == α grad(L1) + β grad(L2) on a shared subgraph.
TEST(AutodiffProperty, BackwardIsLinear) {
  Rng rng = make_rng(11, "linearity");
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({3, 4}, rng), w = random_tensor({4, 4}, rng);
    const double alpha = 2.0 * uniform01(rng) - 1.0, beta = 2.0 * uniform01(rng) - 1.0;
    auto grad_of = [&](double ca, double cb) {
      Graph g;
      Var x = g.parameter(a);
      Var shared = gelu(matmul(x, g.constant(w)));
      Var l1 = sum(mul(shared, shared));
      Var l2 = mean(softmax(shared, 1));
      g.backward(add(scale(l1, ca), scale(l2, cb)));
      return x.grad();
    };
    const Tensor combined = grad_of(alpha, beta);
    const Tensor g1 = grad_of(1.0, 0.0), g2 = grad_of(0.0, 1.0);
    for (std::size_t i = 0; i < combined.size(); ++i) {
      EXPECT_NEAR(combined[i], alpha * g1[i] + beta * g2[i], 1e-10);
    }
  }
}

TEST(FiniteDiff, SumOfSquaresIsExact) {
  const double err = finite_diff_check([](Graph&, Var x) { return sum(mul(x, x)); }, Tensor::vector({1, 2}));
  EXPECT_LT(err, 1e-9);
}

TEST(FiniteDiff, SoftmaxThenPick) {
  Rng rng = make_rng(5, "softmax-pick");
  const Tensor x = random_tensor({1, 4}, rng);
  const std::size_t idx[] = {2};
  const double err = finite_diff_check([&](Graph&, Var v) { return sum(pick(softmax(v, 1), idx)); }, x);
  EXPECT_LT(err, 1e-6);
}

TEST(FiniteDiff, DeadBranchMatchesZero) {
  const double err = finite_diff_check(
      [](Graph& g, Var x) { return mul(sum(exp(x)), g.constant(Tensor::scalar(0.0))); }, Tensor::vector({0.5, 1.5}));
  EXPECT_EQ(err, 0.0);
}

TEST(FiniteDiff, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-9), 1e-9 / 1e-8);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}

TEST(FiniteDiff, DetectsInjectedFault) {
  hfc::testing::inject_backward_fault("exp", 1.5);
  const double err = finite_diff_check([](Graph&, Var x) { return sum(exp(x)); }, Tensor::vector({0.1, 0.2}));
  hfc::testing::clear_backward_fault();
  EXPECT_GT(err, 0.1);
  EXPECT_LT(finite_diff_check([](Graph&, Var x) { return sum(exp(x)); }, Tensor::vector({0.1, 0.2})), 1e-8);
}

}  // namespace
