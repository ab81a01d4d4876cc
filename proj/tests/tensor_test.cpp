#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aupipe/tensor/ops.hpp"
#include "support/finite_diff.hpp"

using namespace aupipe;
using aupipe::testing::max_gradient_error;
using aupipe::testing::random_tensor;
using aupipe::testing::weighted_sum;

namespace {

Tensor mat(Shape s, std::vector<double> v) { return Tensor(std::move(s), std::move(v)); }

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 0) {
  ASSERT_EQ(t.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], tol) << "at " << i;
}

}  // namespace

TEST(TensorCore, RejectsLengthMismatch) {
  EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor({0, 2}, {}), ShapeError);
}

TEST(Matmul, IdentityAndHandProduct) {
  auto a = mat({2, 2}, {1, 2, 3, 4});
  expect_values(matmul(mat({2, 2}, {1, 0, 0, 1}), a), {1, 2, 3, 4});
  expect_values(matmul(a, mat({2, 2}, {5, 6, 7, 8})), {19, 22, 43, 50});
  EXPECT_THROW(matmul(a, mat({3, 1}, {1, 2, 3})), ShapeError);
}

TEST(Matmul, GradientOfSumIsBTransposeBroadcast) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({3, 4}, rng).with_fresh_grad();
  auto b = random_tensor({4, 2}, rng);
  {
    GradTape tape;
    backward(sum(matmul(a, b)));
  }
  // d/dA_ij sum(AB) = sum_k B_jk
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(a.grad()[i * 4 + j], b[j * 2] + b[j * 2 + 1], 1e-14);
  auto f = [](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); };
  EXPECT_LT(max_gradient_error(f, {a.detach(), b}), 1e-4);
}

TEST(Softmax, ClosedFormValues) {
  expect_values(softmax(mat({3}, {0, 0, 0}), 0), {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-15);
  expect_values(softmax(mat({2}, {0, std::log(3.0)}), 0), {0.25, 0.75}, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndNormalization) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({4, 5, 3}, rng, -5, 5);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    std::vector<double> shifted = x.values();
    for (auto& v : shifted) v += 17.25;
    auto y = softmax(x, axis);
    auto ys = softmax(Tensor(x.shape(), shifted), axis);
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_GE(y[i], 0.0);
      EXPECT_NEAR(y[i], ys[i], 1e-14);
    }
    auto sums = mean_axis(y, axis);
    for (std::size_t i = 0; i < sums.size(); ++i) EXPECT_NEAR(sums[i] * x.dim(axis), 1.0, 1e-12);
  }
}

TEST(Softmax, NegativeInfinityGetsExactlyZeroWeight) {
  const double inf = std::numeric_limits<double>::infinity();
  auto y = softmax(mat({3}, {0.5, -inf, 1.0}), 0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_NEAR(y[0] + y[2], 1.0, 1e-15);
}

TEST(LayerNorm, ConstantRowBecomesZero) {
  auto g = Tensor::full({4}, 1.0), b = Tensor::zeros({4});
  expect_values(layer_norm(Tensor::full({2, 4}, 3.5), g, b), std::vector<double>(8, 0.0));
}

TEST(LayerNorm, HandComputedPair) {
  auto y = layer_norm(mat({2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
  // variance 1, so eps shifts the result by ~5e-6
  expect_values(y, {-1, 1}, 1e-5);
}

TEST(LayerNorm, MomentsOfRandomInput) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({6, 32}, rng, -3, 3);
  auto y = layer_norm(x, Tensor::full({32}, 1.0), Tensor::zeros({32}), 0.0);
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 32; ++i) mu += y[r * 32 + i];
    mu /= 32;
    for (std::size_t i = 0; i < 32; ++i) var += (y[r * 32 + i] - mu) * (y[r * 32 + i] - mu);
    var /= 32;
    EXPECT_LT(std::abs(mu), 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
  EXPECT_THROW(layer_norm(x, Tensor::full({31}, 1.0), Tensor::zeros({32})), ShapeError);
}

TEST(Gelu, KnownValues) {
  auto y = gelu(mat({3}, {0, 10, 1}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 10.0, 1e-9);
  // 0.5 * (1 + erf(1/sqrt 2))
  EXPECT_NEAR(y[2], 0.841344746, 1e-4);
}

TEST(Roll, IndexArithmeticAndInverse) {
  auto x = mat({4}, {1, 2, 3, 4});
  expect_values(roll(x, 1, 0), {4, 1, 2, 3});
  expect_values(roll(x, -1, 0), {2, 3, 4, 1});
  expect_values(roll(x, 0, 0), {1, 2, 3, 4});
  std::mt19937_64 rng(4);
  auto g = random_tensor({5, 6, 3}, rng);
  for (long s : {-7L, -2L, 3L, 11L})
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto back = roll(roll(g, s, axis), -s, axis);
      EXPECT_EQ(back.values(), g.values());
    }
}

TEST(Permute, ReshapeAndPermuteAreBijections) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 3, 4, 5}, rng);
  auto p = permute(x, {2, 0, 3, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 5, 3}));
  // inverse of (2,0,3,1) is (1,3,0,2)
  EXPECT_EQ(permute(p, {1, 3, 0, 2}).values(), x.values());
  EXPECT_EQ(reshape(reshape(x, {6, 20}), {2, 3, 4, 5}).values(), x.values());
  EXPECT_THROW(permute(x, {0, 0, 1, 2}), ShapeError);
  EXPECT_THROW(reshape(x, {7}), ShapeError);
}

TEST(Bce, ClosedForms) {
  auto zeros = Tensor::zeros({2, 3});
  auto t = mat({2, 3}, {1, 0, 1, 0, 0, 1});
  EXPECT_NEAR(bce_with_logits(zeros, t).item(), std::log(2.0), 1e-15);
  EXPECT_LT(bce_with_logits(Tensor::full({4}, 20.0), Tensor::full({4}, 1.0)).item(), 1e-8);
  // -ln sigmoid(1)
  EXPECT_NEAR(bce_with_logits(mat({1}, {1.0}), mat({1}, {1.0})).item(), 0.31326, 1e-5);
  EXPECT_THROW(bce_with_logits(zeros, Tensor::full({2, 3}, 0.5)), ValidationError);
  EXPECT_THROW(bce_with_logits(zeros, Tensor::zeros({3, 2})), ShapeError);
}

TEST(Backward, SumAndProductRule) {
  std::mt19937_64 rng(6);
  auto x = random_tensor({3, 2}, rng).with_fresh_grad();
  auto y = random_tensor({3, 2}, rng);
  {
    GradTape tape;
    backward(sum(x));
  }
  for (auto g : x.grad()) EXPECT_EQ(g, 1.0);
  x.zero_grad();
  {
    GradTape tape;
    backward(sum(mul(x, y)));
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(x.grad()[i], y[i]);
}

TEST(Backward, ErrorsOnNonScalarAndConsumedGraph) {
  auto x = Tensor::full({3}, 2.0).with_fresh_grad();
  GradTape tape;
  auto y = scale(x, 2.0);
  EXPECT_THROW(backward(y), ShapeError);
  auto loss = sum(y);
  backward(loss);
  EXPECT_THROW(backward(loss), Error);
  EXPECT_THROW(backward(sum(Tensor::zeros({2}))), Error);  // untracked
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  auto x = Tensor::full({2}, 1.5).with_fresh_grad();
  GradTape tape;
  auto h = scale(x, 3.0);
  auto loss = sum(add(h, h));
  // leaf, scale, add, sum
  EXPECT_EQ(backward(loss), 4u);
  EXPECT_EQ(x.grad()[0], 6.0);
}

// Every differentiable op against central differences on inputs in [-1, 1].
TEST(Backward, EveryOpMatchesFiniteDifferences) {
  using aupipe::testing::TensorFn;
  std::mt19937_64 rng(8);
  auto r = [&](Shape s) { return random_tensor(std::move(s), rng); };
  struct Case {
    const char* name;
    TensorFn f;
    std::vector<Tensor> inputs;
  };
  std::vector<Case> cases = {
      {"add", [](auto& in) { return weighted_sum(add(in[0], in[1])); }, {r({3, 4}), r({3, 4})}},
      {"add_bias", [](auto& in) { return weighted_sum(add(in[0], in[1])); }, {r({2, 3, 4}), r({3, 4})}},
      {"sub", [](auto& in) { return weighted_sum(sub(in[0], in[1])); }, {r({5}), r({5})}},
      {"mul", [](auto& in) { return weighted_sum(mul(in[0], in[1])); }, {r({2, 3}), r({2, 3})}},
      {"matmul", [](auto& in) { return weighted_sum(matmul(in[0], in[1])); }, {r({3, 5}), r({5, 2})}},
      {"bmm", [](auto& in) { return weighted_sum(bmm(in[0], in[1])); }, {r({2, 3, 3, 4}), r({2, 3, 4, 2})}},
      {"permute", [](auto& in) { return weighted_sum(permute(in[0], {2, 0, 1})); }, {r({2, 3, 4})}},
      {"roll", [](auto& in) { return weighted_sum(roll(in[0], -2, 1)); }, {r({3, 5, 2})}},
      {"slice", [](auto& in) { return weighted_sum(slice(in[0], 1, 1, 2)); }, {r({2, 4, 3})}},
      {"concat", [](auto& in) { return weighted_sum(concat(TensorList<double>{in[0], in[1]}, 1)); },
       {r({2, 3}), r({2, 4})}},
      {"index_rows", [](auto& in) { return weighted_sum(index_rows(in[0], {2, 0, 2, 1})); }, {r({3, 2})}},
      {"softmax", [](auto& in) { return weighted_sum(softmax(in[0], 1)); }, {r({3, 4, 2})}},
      {"layer_norm", [](auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2])); },
       {r({4, 6}), r({6}), r({6})}},
      {"gelu", [](auto& in) { return weighted_sum(gelu(in[0])); }, {r({7})}},
      {"sigmoid", [](auto& in) { return weighted_sum(sigmoid(in[0])); }, {r({7})}},
      {"mean_axis", [](auto& in) { return weighted_sum(mean_axis(in[0], 0)); }, {r({4, 3})}},
      {"scale", [](auto& in) { return weighted_sum(scale(in[0], 0.37)); }, {r({4})}},
      {"bce", [](auto& in) { return bce_with_logits(in[0], Tensor({2, 3}, {1, 0, 0, 1, 1, 0})); }, {r({2, 3})}},
      {"bce_pos_weight",
       [](auto& in) {
         std::vector<double> w{2.0, 0.5, 3.0};
         return bce_with_logits(in[0], Tensor({2, 3}, {1, 0, 0, 1, 1, 0}), w);
       },
       {r({2, 3})}},
  };
  for (const auto& c : cases) EXPECT_LT(max_gradient_error(c.f, c.inputs), 1e-4) << c.name;
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({8, 6}, rng), w = random_tensor({6, 6}, rng);
  auto run = [&] { return softmax(gelu(matmul(x, w)), 1).values(); };
  EXPECT_EQ(run(), run());
}

TEST(FloatMode, MatchesDoubleWithinTolerance) {
  std::mt19937_64 rng(10);
  auto x = random_tensor({8, 16}, rng), w = random_tensor({16, 16}, rng);
  auto g = Tensor::full({16}, 1.0), b = Tensor::zeros({16});
  auto ref = softmax(gelu(layer_norm(matmul(x, w), g, b)), 1);
  auto fast = softmax(gelu(layer_norm(matmul(x.cast<float>(), w.cast<float>()), g.cast<float>(), b.cast<float>())), 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(ref[i], fast[i], 1e-3);
}
