#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "simmtm/grad_check.hpp"
#include "simmtm/tensor.hpp"

namespace simmtm {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), v);
}

// Values bounded away from zero so kinked ops are differentiable everywhere.
Tensor random_away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor::from(std::move(shape), v);
}

// Scalarizes an op output with fixed random weights so that no coordinate
// has a structurally zero gradient.
std::function<Tensor(const Tensor&)> weighted(std::function<Tensor(const Tensor&)> op, Shape out_shape,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(std::move(out_shape), rng);
  return [op, w](const Tensor& x) { return sum(op(x) * w); };
}

TEST(Matmul, IdentityLeftOperand) {
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(eye, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(c.values(), b.values());
}

TEST(Matmul, RowTimesColumn) {
  Tensor c = matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4}));
  EXPECT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(c.item(), 11.0);
}

TEST(Matmul, InnerDimensionMismatchIsDimensionError) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected dimension error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({3, 4}, rng).set_requires_grad(true);
  Tensor b = random_tensor({4, 2}, rng).set_requires_grad(true);
  Tensor w = random_tensor({3, 2}, rng);
  const std::vector<Tensor> params{a, b};
  auto report = grad_check([&] { return sum(matmul(a, b) * w); }, params, 1e-5);
  EXPECT_LE(report.max_relative_error, 1e-5);
}

TEST(Matmul, BatchedAndSharedForms) {
  std::mt19937_64 rng(3);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor shared = random_tensor({4, 5}, rng);
  Tensor batched = random_tensor({2, 4, 5}, rng);
  Tensor c1 = matmul(a, shared);
  Tensor c2 = matmul(a, batched);
  ASSERT_EQ(c1.shape(), (Shape{2, 3, 5}));
  ASSERT_EQ(c2.shape(), (Shape{2, 3, 5}));
  for (Index p = 0; p < 2; ++p)
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 5; ++j) {
        double s1 = 0, s2 = 0;
        for (Index k = 0; k < 4; ++k) {
          s1 += a.at({p, i, k}) * shared.at({k, j});
          s2 += a.at({p, i, k}) * batched.at({p, k, j});
        }
        EXPECT_NEAR(c1.at({p, i, j}), s1, 1e-12);
        EXPECT_NEAR(c2.at({p, i, j}), s2, 1e-12);
      }
}

TEST(Softmax, UniformInputGivesUniformOutput) {
  Tensor y = softmax(Tensor::from({3}, {0, 0, 0}));
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(y.values()[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  Tensor y = softmax(Tensor::from({2}, {1000, 0}));
  EXPECT_NEAR(y.values()[0], 1.0, 1e-12);
  EXPECT_NEAR(y.values()[1], 0.0, 1e-12);
}

TEST(Softmax, TwoLogitEvaluation) {
  Tensor y = softmax(Tensor::from({2}, {4.5, 0.5}));
  EXPECT_NEAR(y.values()[0], 0.98201, 1e-5);
  EXPECT_NEAR(y.values()[1], 0.01799, 1e-5);
}

TEST(Softmax, RowsSumToOneAcrossWideRange) {
  std::mt19937_64 rng(11);
  for (int axis : {0, 1, 2}) {
    Tensor x = random_tensor({3, 5, 4}, rng, -1e3, 1e3);
    Tensor y = softmax(x, axis);
    Tensor s = sum(y, axis);
    for (Index i = 0; i < s.numel(); ++i) EXPECT_NEAR(s.values()[i], 1.0, 1e-9);
    EXPECT_TRUE((y.values().array() >= 0.0).all());
  }
}

TEST(Backward, RequiresScalarLoss) {
  Tensor x = Tensor::zeros({2}, true);
  try {
    (x * 2.0).backward();
    FAIL() << "expected contract error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
}

TEST(Backward, RepeatedCallsAccumulateUntilZeroGrad) {
  Tensor x = Tensor::from({3}, {1, 2, 3}, true);
  Tensor loss = sum(square(x));
  loss.backward();
  loss.backward();
  EXPECT_NEAR(x.grad()[2], 12.0, 1e-12);
  x.zero_grad();
  loss.backward();
  EXPECT_NEAR(x.grad()[2], 6.0, 1e-12);
}

TEST(Backward, IgnoredLeafGetsExactlyZeroGradient) {
  Tensor used = Tensor::from({2}, {1, 2}, true);
  Tensor unused = Tensor::from({2}, {3, 4}, true);
  Tensor both = concat({used, unused}, 0);
  Tensor loss = sum(exp(slice(both, 0, 0, 2)));
  loss.backward();
  EXPECT_EQ(unused.grad(), Eigen::VectorXd::Zero(2));
  EXPECT_GT(used.grad()[0], 0.0);
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  Tensor y = x * x;
  Tensor loss = sum(y + y);  // d/dx 2x^2 = 4x
  loss.backward();
  EXPECT_NEAR(x.grad()[0], 12.0, 1e-12);
}

TEST(Tensor, RejectsNonFiniteConstructionAndCompute) {
  EXPECT_THROW(Tensor::from({1}, {std::nan("")}), Error);
  try {
    log(Tensor::from({1}, {-1.0}));
    FAIL() << "expected numeric error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

TEST(Tensor, ShapeMustMatchValues) { EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), Error); }

TEST(GradCheck, SumOfSquares) {
  Tensor x = Tensor::from({3}, {1, 2, 3});
  double err = grad_check([](const Tensor& v) { return sum(square(v)); }, x, 1e-5);
  EXPECT_LE(err, 1e-6);
  Tensor leaf = x.detach().set_requires_grad(true);
  sum(square(leaf)).backward();
  EXPECT_NEAR(leaf.grad()[0], 2.0, 1e-12);
  EXPECT_NEAR(leaf.grad()[1], 4.0, 1e-12);
  EXPECT_NEAR(leaf.grad()[2], 6.0, 1e-12);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  Tensor x = Tensor::from({3}, {1, 2, 3});
  double err = grad_check([](const Tensor&) { return Tensor::scalar(4.0); }, x, 1e-5);
  EXPECT_EQ(err, 0.0);
}

struct OpCase {
  const char* name;
  Shape input;
  Shape output;
  std::function<Tensor(const Tensor&)> op;
  bool away_from_zero = false;
  bool positive = false;
};

std::vector<OpCase> op_cases() {
  std::mt19937_64 rng(99);
  Tensor other = random_away_from_zero({3, 4}, rng);
  Tensor row = random_away_from_zero({4}, rng);
  Tensor gain = random_tensor({4}, rng);
  Tensor bias = random_tensor({4}, rng);
  Tensor kernel = random_tensor({3, 4, 2}, rng);
  Tensor kbias = random_tensor({2}, rng);
  std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1, 1, 1, 1, 1, 0, 0};
  return {
      {"add", {3, 4}, {3, 4}, [other](const Tensor& x) { return x + other; }},
      {"add_broadcast", {3, 4}, {3, 4}, [row](const Tensor& x) { return row + x; }},
      {"sub", {3, 4}, {3, 4}, [other](const Tensor& x) { return other - x; }},
      {"mul", {3, 4}, {3, 4}, [row](const Tensor& x) { return x * row; }},
      {"div_numerator", {3, 4}, {3, 4}, [other](const Tensor& x) { return x / other; }},
      {"div_denominator", {3, 4}, {3, 4}, [other](const Tensor& x) { return other / x; }, true},
      {"div_column_broadcast", {3, 1}, {3, 4}, [other](const Tensor& x) { return other / x; }, true},
      {"exp", {3, 4}, {3, 4}, [](const Tensor& x) { return exp(x); }},
      {"log", {3, 4}, {3, 4}, [](const Tensor& x) { return log(x); }, false, true},
      {"sqrt", {3, 4}, {3, 4}, [](const Tensor& x) { return sqrt(x); }, false, true},
      {"square", {3, 4}, {3, 4}, [](const Tensor& x) { return square(x); }},
      {"abs", {3, 4}, {3, 4}, [](const Tensor& x) { return abs(x); }, true},
      {"relu", {3, 4}, {3, 4}, [](const Tensor& x) { return relu(x); }, true},
      {"gelu", {3, 4}, {3, 4}, [](const Tensor& x) { return gelu(x); }},
      {"clamp_min", {3, 4}, {3, 4}, [](const Tensor& x) { return clamp_min(x, 0.05); }, true},
      {"sum_axis", {3, 4}, {3}, [](const Tensor& x) { return sum(x, 1); }},
      {"mean_axis", {3, 4}, {1, 4}, [](const Tensor& x) { return mean(x, 0, true); }},
      {"mean_all", {3, 4}, {1}, [](const Tensor& x) { return mean(x); }},
      {"transpose", {3, 4}, {4, 3}, [](const Tensor& x) { return transpose(x); }},
      {"permute", {2, 3, 4}, {4, 2, 3}, [](const Tensor& x) { return permute(x, {2, 0, 1}); }},
      {"reshape", {3, 4}, {2, 6}, [](const Tensor& x) { return reshape(x, {2, 6}); }},
      {"concat", {3, 4}, {3, 8}, [other](const Tensor& x) { return concat({x, other * x}, 1); }},
      {"slice", {3, 4}, {3, 2}, [](const Tensor& x) { return slice(x, 1, 1, 2); }},
      {"index_select", {3, 4}, {4, 4}, [](const Tensor& x) {
         std::vector<Index> rows{2, 0, 2, 1};
         return index_select(x, rows);
       }},
      {"matmul_left", {2, 3}, {2, 4}, [other](const Tensor& x) { return matmul(x, other); }},
      {"softmax_last", {3, 4}, {3, 4}, [](const Tensor& x) { return softmax(x * 3.0); }},
      {"softmax_first", {3, 4}, {3, 4}, [](const Tensor& x) { return softmax(x, 0); }},
      {"log_softmax", {3, 4}, {3, 4}, [](const Tensor& x) { return log_softmax(x); }},
      {"masked_softmax", {3, 4}, {3, 4}, [mask](const Tensor& x) { return masked_softmax(x, mask); }},
      {"masked_log_softmax", {3, 4}, {3, 4}, [mask](const Tensor& x) { return masked_log_softmax(x, mask); }},
      {"layer_norm", {3, 4}, {3, 4}, [gain, bias](const Tensor& x) { return layer_norm(x, gain, bias); }},
      {"conv1d", {2, 5, 4}, {2, 5, 2}, [kernel, kbias](const Tensor& x) { return conv1d(x, kernel, kbias); }},
  };
}

TEST(GradCheck, EveryOpOnRandomInputs) {
  for (const auto& c : op_cases()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      Tensor x = c.positive         ? random_tensor(c.input, rng, 0.3, 2.0)
                 : c.away_from_zero ? random_away_from_zero(c.input, rng)
                                    : random_tensor(c.input, rng);
      double err = grad_check(weighted(c.op, c.output, seed), x, 1e-5);
      EXPECT_LE(err, 1e-5) << c.name << " seed " << seed;
    }
  }
}

TEST(Conv1d, MatchesDirectSum) {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 6, 3}, rng);
  Tensor w = random_tensor({3, 3, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor y = conv1d(x, w, b);
  for (Index n = 0; n < 2; ++n)
    for (Index t = 0; t < 6; ++t)
      for (Index o = 0; o < 2; ++o) {
        double acc = b.values()[o];
        for (Index k = 0; k < 3; ++k) {
          const Index s = t + k - 1;
          if (s < 0 || s >= 6) continue;
          for (Index c = 0; c < 3; ++c) acc += x.at({n, s, c}) * w.at({k, c, o});
        }
        EXPECT_NEAR(y.at({n, t, o}), acc, 1e-12);
      }
}

TEST(LayerNorm, NormalizesRows) {
  Tensor x = Tensor::from({2, 3}, {1, 2, 3, -4, 0, 10});
  Tensor y = layer_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3}), 0.0);
  for (Index r = 0; r < 2; ++r) {
    const auto row = y.values().segment(r * 3, 3);
    EXPECT_NEAR(row.mean(), 0.0, 1e-12);
    EXPECT_NEAR((row.array().square()).mean(), 1.0, 1e-12);
  }
}

TEST(NoGrad, SkipsGraphConstruction) {
  Tensor x = Tensor::from({2}, {1, 2}, true);
  NoGradGuard guard;
  Tensor y = x * 2.0;
  EXPECT_FALSE(y.requires_grad());
}

}  // namespace
}  // namespace simmtm
