#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "groundbox/gradcheck.hpp"
#include "groundbox/tensor.hpp"

using namespace groundbox;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(r * c);
  for (auto& x : v) x = u(rng);
  return Tensor::matrix(r, c, std::move(v), grad);
}

}  // namespace

// Hand-computed values

TEST(TensorOracle, MatmulByHand) {
  auto a = Tensor::matrix(2, 2, {1, 2, 3, 4});
  auto b = Tensor::matrix(2, 1, {1, 1});
  EXPECT_EQ(values(matmul(a, b)), (std::vector<double>{3, 7}));
}

TEST(TensorOracle, MatmulIdentityAndZero) {
  Rng rng(3);
  auto a = random_matrix(2, 3, rng);
  EXPECT_EQ(values(matmul(Tensor::identity(2), a)), values(a));
  EXPECT_EQ(values(matmul(Tensor::zeros({4, 2}), a)), std::vector<double>(12, 0.0));
}

TEST(TensorOracle, SigmoidValues) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_NEAR(sigmoid(Tensor::scalar(2.0)).item(), 0.8807970779778823, 1e-15);
  auto s = sigmoid(Tensor::vector({-1.7, 1.7}));
  EXPECT_NEAR(s[0], 1.0 - s[1], 1e-15);
}

TEST(TensorOracle, SoftmaxClosedForm) {
  auto s = softmax_rows(Tensor::matrix(1, 2, {0.0, std::log(3.0)}));
  EXPECT_NEAR(s[0], 0.25, 1e-15);
  EXPECT_NEAR(s[1], 0.75, 1e-15);
  auto u = softmax_rows(Tensor::matrix(1, 4, {2, 2, 2, 2}));
  for (double v : u.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(TensorOracle, ElementwiseExamples) {
  EXPECT_EQ(relu(Tensor::scalar(-3.0)).item(), 0.0);
  auto [mx, idx] = max_reduce(Tensor::vector({0.2, 0.9, 0.4}));
  EXPECT_DOUBLE_EQ(mx.item(), 0.9);
  EXPECT_EQ(idx, 1u);
  EXPECT_DOUBLE_EQ(mean(Tensor::vector({1, 2, 3})).item(), 2.0);
}

TEST(TensorOracle, BackwardQuadratic) {
  auto w = Tensor::vector({1, 2}, true);
  backward(sum(mul(w, w)));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{2, 4}));
}

TEST(TensorOracle, BackwardSigmoidAtZero) {
  auto w = Tensor::scalar(0.0, true);
  backward(sigmoid(w));
  EXPECT_DOUBLE_EQ(w.grad()[0], 0.25);
}

// Errors

TEST(TensorErrors, MatmulShapeMismatchNamesShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
  }
}

TEST(TensorErrors, LogOfNonPositive) {
  EXPECT_THROW(log(Tensor::scalar(0.0)), DomainError);
  EXPECT_THROW(log(Tensor::vector({1.0, -2.0})), DomainError);
}

TEST(TensorErrors, BackwardNeedsScalar) {
  auto w = Tensor::vector({1, 2}, true);
  EXPECT_THROW(backward(mul(w, w)), ContractError);
}

TEST(TensorErrors, DropoutProbabilityRange) {
  Rng rng(1);
  auto x = Tensor::vector({1, 2, 3});
  EXPECT_THROW(dropout(x, 1.0, true, rng), ParameterError);
  EXPECT_THROW(dropout(x, -0.1, true, rng), ParameterError);
}

TEST(TensorErrors, ShapeDataMismatch) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor({0}, {}), DimensionError);
}

// Dropout

TEST(Dropout, EvalModeAndZeroProbabilityAreIdentity) {
  Rng rng(5);
  auto x = random_matrix(3, 4, rng);
  EXPECT_EQ(values(dropout(x, 0.5, false, rng)), values(x));
  EXPECT_EQ(values(dropout(x, 0.0, true, rng)), values(x));
}

TEST(Dropout, ZeroFractionNearHalf) {
  Rng rng(11);
  auto x = Tensor::full({10000}, 1.0);
  auto y = dropout(x, 0.5, true, rng);
  std::size_t zeros = 0;
  for (double v : y.data()) {
    if (v == 0.0) ++zeros;
    else EXPECT_DOUBLE_EQ(v, 2.0);
  }
  EXPECT_NEAR(static_cast<double>(zeros) / 1e4, 0.5, 0.05);
}

// Properties

TEST(TensorProperty, SoftmaxRowsSumToOneOnWideInputs) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = softmax_rows(random_matrix(4, 7, rng, -50.0, 50.0));
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(s.at(i, j), 0.0);
        total += s.at(i, j);
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(TensorProperty, SoftmaxShiftInvariant) {
  Rng rng(19);
  auto x = random_matrix(2, 5, rng);
  auto a = softmax_rows(x);
  auto b = softmax_rows(add_scalar(x, 123.0));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(TensorProperty, SigmoidStaysInsideOpenInterval) {
  for (double x : {-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6}) {
    const double s = sigmoid(Tensor::scalar(x)).item();
    EXPECT_GT(s, 0.0) << x;
    EXPECT_LT(s, 1.0) << x;
  }
}

TEST(TensorProperty, MaxGradientIsOneHot) {
  auto x = Tensor::vector({0.3, 1.5, -0.2, 1.1}, true);
  backward(max_reduce(x).first);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0, 0}));
}

TEST(TensorProperty, RowMaxTiesPickLowestIndex) {
  auto r = row_max(Tensor::matrix(2, 3, {0.5, 0.5, 0.1, 0.2, 0.7, 0.7}));
  EXPECT_EQ(r.indices, (std::vector<std::size_t>{0, 1}));
}

TEST(TensorProperty, ReluSubgradientAtZeroIsZero) {
  auto x = Tensor::vector({-1.0, 0.0, 2.0}, true);
  backward(sum(relu(x)));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 0, 1}));
}

TEST(TensorProperty, InteriorNodesReleasedAfterBackward) {
  auto w = Tensor::vector({1.0, 2.0}, true);
  auto hidden = mul(w, w);
  backward(sum(hidden));
  EXPECT_TRUE(w.has_grad());
  EXPECT_EQ(hidden.node()->parents.size(), 0u);
}

TEST(TensorProperty, NoGradGuardSkipsRecording) {
  auto w = Tensor::vector({1.0, 2.0}, true);
  NoGradGuard guard;
  auto y = sum(mul(w, w));
  EXPECT_FALSE(y.requires_grad());
}

TEST(TensorProperty, ComposedGraphMatchesFiniteDifferences) {
  Rng rng(23);
  auto a = random_matrix(3, 4, rng, -1, 1, true);
  auto b = random_matrix(4, 2, rng, -1, 1, true);
  auto g = Tensor::vector({0.9, 1.2, 1.1, 0.8}, true);
  auto bias = Tensor::vector({0.1, -0.2, 0.05, 0.0}, true);
  auto fn = [&] {
    auto h = layer_norm_rows(a, g, bias);
    auto s = softmax_rows(matmul(h, b));
    auto t = sigmoid(concat({s, transpose(slice_rows(b, 0, 2))}, 0));
    return mean(log(add_scalar(mean_rows(t), 0.5)));
  };
  auto r = finite_diff_check(fn, {{"a", a}, {"b", b}, {"g", g}, {"bias", bias}}, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-4) << r.worst_param << "[" << r.worst_index << "]";
}

TEST(TensorProperty, GatherAndSliceGradientsRouteCorrectly) {
  auto a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(add(gather_cols(a, {2, 0, 2}), Tensor::zeros({2, 3}))));
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()), (std::vector<double>{1, 0, 2, 1, 0, 2}));
}

TEST(TensorProperty, FirstNonFiniteOpNamesTheCulprit) {
  auto x = Tensor::vector({1e308, 1e308}, true);
  auto y = sum(scale(x, 10.0));
  EXPECT_EQ(first_nonfinite_op(y), "scale");
}
