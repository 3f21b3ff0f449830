#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "hfc/gradcheck.hpp"
#include "hfc/ops.hpp"
#include "hfc/rng.hpp"

namespace {

using namespace hfc;

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

Tensor eval(const std::function<Var(Graph&)>& f) {
  Graph g(Graph::Mode::inference);
  return f(g).value();
}

TEST(Matmul, IdentityAndZero) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_EQ(eval([&](Graph& g) { return matmul(g.constant(eye), g.constant(m)); }), m);
  EXPECT_EQ(eval([&](Graph& g) { return matmul(g.constant(eye), g.constant(Tensor({2, 1}, 0.0))); }),
            Tensor({2, 1}, 0.0));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph g;
  try {
    matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({2, 3})));
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesCentralDifferences) {
  Rng rng = make_rng(1, "matmul");
  const Tensor a = random_tensor({3, 3}, rng), b = random_tensor({3, 3}, rng);
  const double err =
      finite_diff_check([&](Graph& g, Var x) { return sum(matmul(x, g.constant(b))); }, a);
  EXPECT_LT(err, 1e-6);
}

TEST(Softmax, SymmetricInput) {
  const Tensor out = eval([](Graph& g) { return softmax(g.constant(Tensor::vector({0, 0})), 0); });
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], 0.5);
}

TEST(Softmax, LargeEqualInputsDoNotOverflow) {
  const Tensor out = eval([](Graph& g) { return softmax(g.constant(Tensor::vector({1000, 1000, 1000})), 0); });
  for (double v : out.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, NonFiniteInputRejected) {
  Graph g;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(softmax(g.constant(Tensor::vector({0, nan})), 0), std::domain_error);
  EXPECT_THROW(softmax(g.constant(Tensor::vector({0, INFINITY})), 0), std::domain_error);
}

TEST(Softmax, AxisOutOfRangeRejected) {
  Graph g;
  EXPECT_THROW(softmax(g.constant(Tensor({2, 2})), 2), ShapeError);
}

TEST(Softmax, JacobianVectorProduct) {
  Rng rng = make_rng(2, "softmax-jvp");
  const Tensor v = random_tensor({5}, rng);
  const Tensor x = random_tensor({5}, rng, -3, 3);
  const double err = finite_diff_check([&](Graph& g, Var in) { return sum(mul(softmax(in, 0), g.constant(v))); }, x);
  EXPECT_LT(err, 1e-6);
}

TEST(SoftmaxProperty, SlicesSumToOneAndShiftInvariant) {
  Rng rng = make_rng(3, "softmax-prop");
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor({4, 6}, rng, -20, 20);
    const double shift = 100.0 * uniform01(rng) - 50.0;
    Tensor shifted = x;
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 6; ++c) shifted[r * 6 + c] += shift + static_cast<double>(r);
    const std::size_t axis = trial % 2;
    const Tensor p = eval([&](Graph& g) { return softmax(g.constant(x), 1); });
    const Tensor q = eval([&](Graph& g) { return softmax(g.constant(shifted), 1); });
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        s += p[r * 6 + c];
        EXPECT_GE(p[r * 6 + c], 0.0);
        EXPECT_NEAR(p[r * 6 + c], q[r * 6 + c], 1e-12);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    const Tensor cols = eval([&](Graph& g) { return sum_axis(softmax(g.constant(x), axis), axis); });
    for (double v : cols.data()) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Tensor out = eval([](Graph& g) {
    return layer_norm(g.constant(Tensor({1, 4}, 3.0)), g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4}, 0.0)));
  });
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, PlusMinusOneRow) {
  const Tensor out = eval([](Graph& g) {
    return layer_norm(g.constant(Tensor::matrix({{1, -1}})), g.constant(Tensor({2}, 1.0)), g.constant(Tensor({2}, 0.0)));
  });
  // mean 0, biased variance 1, so each entry is ±1/sqrt(1 + eps).
  const double expected = 1.0 / std::sqrt(1.0 + kLayerNormEps);
  EXPECT_NEAR(out[0], expected, 1e-15);
  EXPECT_NEAR(out[1], -expected, 1e-15);
}

TEST(LayerNorm, EmptyFeatureAxisRejected) {
  Graph g;
  EXPECT_THROW(layer_norm(g.constant(Tensor({2, 0})), g.constant(Tensor({0})), g.constant(Tensor({0}))),
               std::invalid_argument);
}

TEST(LayerNorm, GradientWrtAllInputs) {
  Rng rng = make_rng(4, "ln");
  const std::vector<Tensor> in{random_tensor({3, 5}, rng), random_tensor({5}, rng, 0.5, 1.5), random_tensor({5}, rng)};
  const Tensor w = random_tensor({3, 5}, rng);
  const auto errs = finite_diff_check(
      [&](Graph& g, std::span<const Var> v) { return sum(mul(layer_norm(v[0], v[1], v[2]), g.constant(w))); }, in);
  for (double e : errs) EXPECT_LT(e, 1e-5);
}

TEST(Elementwise, ConcatAndGeluExamples) {
  const Tensor c = eval(
      [](Graph& g) { return concat({g.constant(Tensor::vector({1, 2})), g.constant(Tensor::vector({3}))}, 0); });
  EXPECT_EQ(c, Tensor::vector({1, 2, 3}));
  EXPECT_EQ(eval([](Graph& g) { return gelu(g.constant(Tensor::scalar(0.0))); }).item(), 0.0);
}

TEST(Elementwise, ShapeMismatchRejected) {
  Graph g;
  EXPECT_THROW(add(g.constant(Tensor({2})), g.constant(Tensor({3}))), ShapeError);
  EXPECT_THROW(concat({g.constant(Tensor({2, 2})), g.constant(Tensor({2, 3}))}, 0), ShapeError);
  EXPECT_THROW(slice(g.constant(Tensor({4})), 0, 3, 2), ShapeError);
}

TEST(Elementwise, LogIsClampedAtFloor) {
  const Tensor out = eval([](Graph& g) { return log(g.constant(Tensor::vector({0.0, 1.0}))); });
  EXPECT_DOUBLE_EQ(out[0], std::log(kLogFloor));
  EXPECT_EQ(out[1], 0.0);
}

TEST(Elementwise, PowZeroToZeroIsOne) {
  const Tensor out = eval([](Graph& g) { return pow_scalar(g.constant(Tensor::vector({0.0, 0.25})), 0.0); });
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[1], 1.0);
}

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  double lo, hi;
  std::function<Var(std::span<const Var>)> op;
};

// Every op at 20 random inputs against central differences.
TEST(OpsProperty, GradientsMatchFiniteDifferences) {
  const std::vector<OpCase> cases = {
      {"matmul", {{3, 4}, {4, 2}}, -1, 1, [](auto v) { return matmul(v[0], v[1]); }},
      {"matmul_t", {{3, 4}, {2, 4}}, -1, 1, [](auto v) { return matmul(v[0], v[1], true); }},
      {"bmm", {{2, 3, 4}, {2, 4, 2}}, -1, 1, [](auto v) { return bmm(v[0], v[1]); }},
      {"bmm_t", {{2, 3, 4}, {2, 2, 4}}, -1, 1, [](auto v) { return bmm(v[0], v[1], true); }},
      {"add", {{2, 3}, {2, 3}}, -1, 1, [](auto v) { return add(v[0], v[1]); }},
      {"sub", {{2, 3}, {2, 3}}, -1, 1, [](auto v) { return sub(v[0], v[1]); }},
      {"mul", {{2, 3}, {2, 3}}, -1, 1, [](auto v) { return mul(v[0], v[1]); }},
      {"div", {{2, 3}, {2, 3}}, 0.5, 2, [](auto v) { return div(v[0], v[1]); }},
      {"add_broadcast", {{2, 3, 4}, {4}}, -1, 1, [](auto v) { return add_broadcast(v[0], v[1]); }},
      {"broadcast_to", {{2, 3}}, -1, 1, [](auto v) { return broadcast_to(v[0], 2); }},
      {"scale", {{4}}, -1, 1, [](auto v) { return scale(v[0], 3.0); }},
      {"add_scalar", {{4}}, -1, 1, [](auto v) { return add_scalar(v[0], -2.0); }},
      {"log", {{4}}, 0.1, 3, [](auto v) { return log(v[0]); }},
      {"exp", {{4}}, -2, 2, [](auto v) { return exp(v[0]); }},
      {"gelu", {{6}}, -3, 3, [](auto v) { return gelu(v[0]); }},
      {"pow_scalar", {{4}}, 0.1, 1, [](auto v) { return pow_scalar(v[0], 0.5); }},
      {"softmax", {{3, 4}}, -3, 3, [](auto v) { return softmax(v[0], 1); }},
      {"layer_norm", {{2, 5}, {5}, {5}}, -1, 1, [](auto v) { return layer_norm(v[0], v[1], v[2]); }},
      {"concat", {{2, 2}, {2, 3}}, -1, 1, [](auto v) { return concat({v[0], v[1]}, 1); }},
      {"slice", {{4, 3}}, -1, 1, [](auto v) { return slice(v[0], 1, 1, 2); }},
      {"split", {{5, 2}}, -1, 1,
       [](auto v) {
         const std::size_t sizes[] = {3, 2};
         auto p = split(v[0], 0, sizes);
         return concat({p[1], scale(p[0], -1.0)}, 0);
       }},
      {"reshape", {{2, 6}}, -1, 1, [](auto v) { return reshape(v[0], {4, 3}); }},
      {"mean", {{2, 3}}, -1, 1, [](auto v) { return mean(v[0]); }},
      {"sum", {{2, 3}}, -1, 1, [](auto v) { return sum(v[0]); }},
      {"sum_axis", {{2, 3, 2}}, -1, 1, [](auto v) { return sum_axis(v[0], 2); }},
      {"pick", {{3, 3}}, -1, 1,
       [](auto v) {
         const std::size_t idx[] = {1, 1, 0};
         return pick(v[0], idx);
       }},
      {"linear", {{2, 3}, {3, 2}, {2}}, -1, 1, [](auto v) { return linear(v[0], v[1], v[2]); }},
  };
  Rng rng = make_rng(9, "ops-property");
  for (const OpCase& c : cases) {
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Tensor> inputs;
      for (const Shape& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.lo, c.hi));
      const Tensor probe = [&] {
        Graph g(Graph::Mode::inference);
        std::vector<Var> vs;
        for (const Tensor& t : inputs) vs.push_back(g.constant(t));
        return random_tensor(c.op(vs).value().shape(), rng, 0.5, 1.5);
      }();
      const auto errs = finite_diff_check(
          [&](Graph& g, std::span<const Var> v) { return sum(mul(c.op(v), g.constant(probe))); }, inputs);
      for (double e : errs) EXPECT_LT(e, 1e-5) << c.name << " trial " << trial;
    }
  }
}

}  // namespace
