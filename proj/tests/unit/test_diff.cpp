#include "covae/diff/adam.hpp"
#include "covae/diff/tensor.hpp"
#include "covae/stein.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace covae;
using diff::Tensor;
using covae::testing::grad_check;
using covae::testing::probe;
using covae::testing::random_param;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::constant(2, 2, {1, 2, 3}), ShapeError);
  const Tensor t = Tensor::constant(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t(1, 2), 6.0);
}

TEST(Tensor, NonFiniteValuesAreRejected) {
  EXPECT_THROW(Tensor::constant(1, 1, {std::nan("")}), NumericalError);
  EXPECT_THROW(diff::log(Tensor::constant(1, 1, {0.0})), NumericalError);
  EXPECT_THROW(diff::exp(Tensor::constant(1, 1, {1000.0})), NumericalError);
}

TEST(Tensor, GradHasSameShapeAsData) {
  Tensor x = Tensor::parameter(2, 3, std::vector<double>(6, 1.0));
  diff::backward(diff::reduce_sum(diff::square(x)));
  EXPECT_EQ(x.grad().size(), x.size());
}

TEST(Ops, LeakyRelu) {
  const Tensor y = diff::leaky_relu(Tensor::constant(1, 2, {-1.0, 2.0}), 0.2);
  EXPECT_DOUBLE_EQ(y(0, 0), -0.2);
  EXPECT_DOUBLE_EQ(y(0, 1), 2.0);
}

TEST(Ops, SoftmaxOfEqualLogits) {
  const Tensor y = diff::softmax(Tensor::constant(1, 2, {0.0, 0.0}), 1);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.5);
}

TEST(Ops, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = covae::testing::random_const(rng, 4, 7, -30.0, 30.0);
    const Tensor y = diff::softmax(x, 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 7; ++c) s += y(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Ops, CholeskySolveIdentity) {
  const Tensor b = Tensor::constant(3, 1, {1.0, -2.0, 0.5});
  const Tensor x = diff::cholesky_solve(Tensor::identity(3), b);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x(i, 0), b(i, 0));
}

TEST(Ops, CholeskySolveRecoversX) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const diff::RowMatrix m = covae::testing::random_const(rng, n, n).matrix();
    diff::RowMatrix a = m * m.transpose();
    a.diagonal().array() += 0.5;
    Eigen::JacobiSVD<diff::RowMatrix> svd(a);
    const double cond = svd.singularValues()(0) / svd.singularValues().tail(1)(0);
    ASSERT_LT(cond, 1e6);
    const diff::RowMatrix x = covae::testing::random_const(rng, n, 2).matrix();
    const diff::RowMatrix b = a * x;
    const Tensor sol = diff::cholesky_solve(Tensor::from_matrix(a), Tensor::from_matrix(b));
    EXPECT_LT((sol.matrix() - x).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Ops, CholeskySolveRejectsIndefinite) {
  const Tensor a = Tensor::constant(2, 2, {1.0, 2.0, 2.0, 1.0});
  EXPECT_THROW(diff::cholesky_solve(a, Tensor::constant(2, 1, {1.0, 1.0})), NotPositiveDefinite);
  const Tensor asym = Tensor::constant(2, 2, {2.0, 1.0, 0.0, 2.0});
  EXPECT_THROW(diff::cholesky_solve(asym, Tensor::constant(2, 1, {1.0, 1.0})), ShapeError);
}

TEST(Ops, ShapeMismatchThrows) {
  const Tensor a = Tensor::zeros(2, 3), b = Tensor::zeros(3, 2);
  EXPECT_THROW(diff::add(a, b), ShapeError);
  EXPECT_THROW(diff::matmul(a, a), ShapeError);
  EXPECT_THROW(diff::slice_cols(a, 2, 4), ShapeError);
}

TEST(Ops, VarianceOfConstantIsExactlyZero) {
  for (double c : {0.1, -3.7, 1e6 + 0.3, 1.0 / 3.0}) {
    const Tensor v = diff::variance(Tensor::full(17, 3, c), 0, true);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(v(0, j), 0.0);
    EXPECT_EQ(diff::variance(Tensor::full(2, 9, c), 1, false)(1, 0), 0.0);
  }
}

TEST(Backward, SumOfSquares) {
  Tensor x = Tensor::parameter(1, 2, {1.0, 2.0});
  diff::backward(diff::reduce_sum(diff::mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, ConstantLossGivesZeroGradient) {
  Tensor x = Tensor::parameter(1, 2, {1.0, 2.0});
  Tensor y = Tensor::parameter(1, 1, {3.0});
  diff::backward(diff::reduce_sum(diff::square(y)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
}

TEST(Backward, RejectsNonScalarAndRepeatedCalls) {
  Tensor x = Tensor::parameter(1, 2, {1.0, 2.0});
  EXPECT_THROW(diff::backward(diff::square(x)), ShapeError);
  const Tensor loss = diff::reduce_sum(diff::square(x));
  diff::backward(loss);
  EXPECT_THROW(diff::backward(loss), std::logic_error);
}

TEST(Backward, QuadraticFormThroughSolve) {
  std::mt19937_64 rng(5);
  Tensor m = random_param(rng, 4, 4);
  Tensor x = random_param(rng, 4, 1);
  std::vector<Tensor> params{m, x};
  auto f = [&] {
    const Tensor a = diff::add_diagonal(diff::matmul(m, diff::transpose(m)), 1.0);
    return diff::reduce_sum(diff::mul(x, diff::cholesky_solve(a, x)));
  };
  EXPECT_LT(grad_check(params, f).max_rel_error, 1e-4);
}

using covae::testing::op_cases;

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto cases = op_cases();
  const auto& c = cases[GetParam()];
  std::mt19937_64 rng(1000 + GetParam());
  double worst = 0.0;
  std::string where;
  for (int trial = 0; trial < 100; ++trial) {
    auto params = c.make(rng);
    const std::uint64_t probe_seed = rng();
    const auto r = grad_check(params, [&] { return probe(c.apply(params), probe_seed); });
    if (r.max_rel_error > worst) {
      worst = r.max_rel_error;
      where = r.worst;
    }
  }
  EXPECT_LT(worst, 1e-4) << c.name << ": " << where;
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, op_cases().size()),
                         [](const auto& info) { return std::string(op_cases()[info.param].name); });

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<Tensor> p{Tensor::parameter(1, 3, {1.0, -2.0, 3.0})};
  auto st = diff::AdamState::for_params(p, 1e-3);
  p[0].zero_grad();
  diff::adam_step(st, p);
  EXPECT_EQ(p[0](0, 0), 1.0);
  EXPECT_EQ(p[0](0, 1), -2.0);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // m1 = 0.1 g, v1 = 0.001 g^2; bias correction gives mhat = g, vhat = g^2,
  // so the step is lr * g / (|g| + eps).
  std::vector<Tensor> p{Tensor::parameter(1, 1, {0.5})};
  auto st = diff::AdamState::for_params(p, 1e-3);
  diff::backward(diff::reduce_sum(p[0]));  // g = 1
  diff::adam_step(st, p);
  EXPECT_NEAR(p[0].item(), 0.5 - 1e-3 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, SecondMomentGrowsUnderRepeatedGradient) {
  std::vector<Tensor> p{Tensor::parameter(1, 1, {0.5})};
  auto st = diff::AdamState::for_params(p, 1e-3);
  double prev = 0.0;
  for (int i = 0; i < 3; ++i) {
    p[0].zero_grad();
    diff::backward(diff::scale(diff::reduce_sum(p[0]), 2.0));
    diff::adam_step(st, p);
    EXPECT_GT(st.second_moment[0][0], prev);
    prev = st.second_moment[0][0];
  }
  EXPECT_EQ(st.step, 3u);
}
