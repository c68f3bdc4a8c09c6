#include <gtest/gtest.h>

#include <cmath>

#include "simmtm/grad_check.hpp"
#include "simmtm/losses.hpp"
#include "simmtm/similarity.hpp"

namespace simmtm {
namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool rg = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Eigen::VectorXd v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from_vector(std::move(shape), v, rg);
}

TEST(ReconstructionLoss, ClosedFormCases) {
  const Tensor x = random_tensor({3, 4, 2}, 1);
  EXPECT_EQ(loss_reconstruction(x, x).item(), 0.0);
  EXPECT_DOUBLE_EQ(loss_reconstruction(Tensor::zeros({1, 2, 1}), Tensor::full({1, 2, 1}, 1.0)).item(), 1.0);
  EXPECT_GT(loss_reconstruction(x, x + 1e-3).item(), 0.0);
  EXPECT_THROW(loss_reconstruction(x, Tensor::zeros({3, 4, 1})), Error);
}

TEST(ReconstructionLoss, MatchesScalarLoop) {
  const Tensor x = random_tensor({3, 5, 2}, 2), y = random_tensor({3, 5, 2}, 3);
  double total = 0.0;
  for (Index i = 0; i < 3; ++i) {
    double per = 0.0;
    for (Index t = 0; t < 5; ++t)
      for (Index c = 0; c < 2; ++c) per += std::pow(x.at({i, t, c}) - y.at({i, t, c}), 2);
    total += per / 10.0;
  }
  EXPECT_NEAR(loss_reconstruction(x, y).item(), total / 3.0, 1e-12);
}

TEST(Pairs, Construction) {
  const PairSpec one = build_pairs(GroupIndex(1, 2));
  EXPECT_EQ(one.positives(0), (std::vector<Index>{1, 2}));
  EXPECT_EQ(one.positives(1), (std::vector<Index>{0, 2}));
  const PairSpec two = build_pairs(GroupIndex(2, 1));
  EXPECT_EQ(two.positives(0), (std::vector<Index>{1}));
  EXPECT_EQ(two.negatives(0), (std::vector<Index>{2, 3}));
  const PairSpec big = build_pairs(GroupIndex(3, 4));
  for (Index s = 0; s < big.rows(); ++s) {
    EXPECT_FALSE(big.positive(s, s));
    EXPECT_EQ(big.positives(s).size(), 4u);
  }
}

// Triple loop over rows, positives and the denominator.
double brute_force_constraint(const Tensor& r, const PairSpec& pairs, double tau) {
  const Index d = pairs.rows();
  long double total = 0;
  for (Index s = 0; s < d; ++s)
    for (Index p = 0; p < d; ++p) {
      if (!pairs.positive(s, p)) continue;
      long double denom = 0;
      for (Index q = 0; q < d; ++q)
        if (q != s) denom += std::exp(static_cast<long double>(r.at({s, q})) / tau);
      total -= std::log(std::exp(static_cast<long double>(r.at({s, p})) / tau) / denom);
    }
  return static_cast<double>(total);
}

TEST(ConstraintLoss, UniformSimilarityClosedForm) {
  EXPECT_NEAR(loss_constraint(Tensor::full({4, 4}, 0.3), build_pairs(GroupIndex(2, 1)), 0.02).item(), 4.0 * std::log(3.0),
              1e-12);
  EXPECT_NEAR(4.0 * std::log(3.0), 4.39445, 1e-5);
  for (auto [n, m] : {std::pair<Index, Index>{2, 2}, {3, 3}, {4, 1}}) {
    const GroupIndex index(n, m);
    const Index d = index.rows();
    const PairSpec pairs = build_pairs(index);
    const Tensor r = Tensor::full({d, d}, -0.4);
    const double expected = static_cast<double>(d * m) * std::log(static_cast<double>(d - 1));
    EXPECT_NEAR(loss_constraint(r, pairs, 0.1).item(), expected, 1e-10);
    EXPECT_NEAR(brute_force_constraint(r, pairs, 0.1), expected, 1e-10);
  }
}

TEST(ConstraintLoss, MatchesBruteForce) {
  for (auto [n, m, tau] : {std::tuple<Index, Index, double>{2, 2, 0.5}, {3, 3, 0.2}, {4, 2, 1.0}, {2, 5, 0.3}}) {
    const GroupIndex index(n, m);
    const Index d = index.rows();
    const Tensor r = Tensor::from_vector(
        {d, d}, cosine_matrix_values(Eigen::MatrixXd(random_tensor({d, 4}, static_cast<std::uint64_t>(d)).matrix()))
                    .transpose()
                    .reshaped());
    const PairSpec pairs = build_pairs(index);
    EXPECT_NEAR(loss_constraint(r, pairs, tau).item(), brute_force_constraint(r, pairs, tau), 1e-10);
  }
}

TEST(ConstraintLoss, SeparatedPairsBeatUniform) {
  const GroupIndex index(3, 2);
  const PairSpec pairs = build_pairs(index);
  const Index d = index.rows();
  Eigen::VectorXd v(d * d);
  for (Index s = 0; s < d; ++s)
    for (Index t = 0; t < d; ++t) v[s * d + t] = (s == t || index.same_group(s, t)) ? 1.0 : -1.0;
  const double separated = loss_constraint(Tensor::from_vector({d, d}, v), pairs, 0.02).item();
  const double uniform = loss_constraint(Tensor::zeros({d, d}), pairs, 0.02).item();
  EXPECT_LT(separated, uniform);
}

TEST(ConstraintLoss, RaisingPositiveSimilarityLowersLoss) {
  const GroupIndex index(2, 2);
  const PairSpec pairs = build_pairs(index);
  Eigen::MatrixXd r = cosine_matrix_values(Eigen::MatrixXd(random_tensor({6, 3}, 4).matrix()));
  auto loss = [&](const Eigen::MatrixXd& m) {
    return loss_constraint(Tensor::from_vector({6, 6}, m.transpose().reshaped()), pairs, 0.2).item();
  };
  const double before = loss(r);
  r(0, 1) += 0.05;
  EXPECT_LT(loss(r), before);
}

TEST(ConstraintLoss, InvariantToGroupRespectingPermutation) {
  const GroupIndex index(3, 2);
  const PairSpec pairs = build_pairs(index);
  const Eigen::MatrixXd r = cosine_matrix_values(Eigen::MatrixXd(random_tensor({9, 4}, 5).matrix()));
  // Swap samples 0 and 2, and the two variants inside sample 1.
  const std::vector<Index> perm{6, 7, 8, 3, 5, 4, 0, 1, 2};
  Eigen::MatrixXd p(9, 9);
  for (Index u = 0; u < 9; ++u)
    for (Index v = 0; v < 9; ++v) p(u, v) = r(perm[static_cast<std::size_t>(u)], perm[static_cast<std::size_t>(v)]);
  auto loss = [&](const Eigen::MatrixXd& m) {
    return loss_constraint(Tensor::from_vector({9, 9}, m.transpose().reshaped()), pairs, 0.1).item();
  };
  EXPECT_NEAR(loss(p), loss(r), 1e-10);
}

TEST(ConstraintLoss, GradCheck) {
  const GroupIndex index(2, 2);
  const PairSpec pairs = build_pairs(index);
  Tensor r = random_tensor({6, 6}, 7, true);
  EXPECT_LE(grad_check([&](const Tensor& x) { return loss_constraint(x, pairs, 0.5); }, r), 1e-5);
}

TEST(Adaptive, InitialIdentityAndStationarity) {
  AdaptiveWeights w;
  const Tensor rec = Tensor::scalar(1.0), con = Tensor::scalar(2.5);
  auto [total, report] = combine_adaptive(rec, con, w);
  EXPECT_DOUBLE_EQ(report.total, 3.5);
  EXPECT_DOUBLE_EQ(report.weight_rec, 1.0);
  EXPECT_DOUBLE_EQ(report.weight_con, 1.0);
  total.backward();
  EXPECT_NEAR(w.a.grad()[0], 0.0, 1e-15);
  EXPECT_NEAR(w.b.grad()[0], 1.0 - 2.5, 1e-15);
}

TEST(Adaptive, GradCheckOverLogVariances) {
  AdaptiveWeights w;
  w.a.mutable_values()[0] = 0.3;
  w.b.mutable_values()[0] = -0.7;
  const Tensor rec = Tensor::scalar(0.8), con = Tensor::scalar(5.0);
  std::vector<Tensor> params{w.a, w.b};
  EXPECT_LE(grad_check([&] { return combine_adaptive(rec, con, w).first; }, params, 1e-5).max_relative_error, 1e-6);
}

TEST(Adaptive, AblationSwitches) {
  AdaptiveWeights w;
  w.b.mutable_values()[0] = 0.5;
  const Tensor rec = Tensor::scalar(2.0), con = Tensor::scalar(3.0);
  EXPECT_NEAR(combine_adaptive(rec, con, w, {true, false}).second.total, 2.0, 1e-15);
  EXPECT_NEAR(combine_adaptive(rec, con, w, {false, true}).second.total, std::exp(-0.5) * 3.0 + 0.5, 1e-15);
  EXPECT_THROW(combine_adaptive(rec, con, w, {false, false}), Error);
}

TEST(FullObjective, ToyGradCheck) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.input_length = 8;
  ReconstructionNetwork net(cfg, 3);
  AdaptiveWeights weights;
  const Tensor batch = random_tensor({2, 8, 1}, 5);
  MaskConfig mcfg;
  mcfg.count = 2;
  mcfg.seed = 4;
  const MaskedSet masked = apply_mask(batch, mcfg);
  AggregationConfig agg;
  NamedTensors named = net.parameters();
  std::vector<Tensor> params{weights.a, weights.b};
  for (auto& [n, t] : named) params.push_back(t);
  const auto objective = [&] {
    const Reconstruction out = reconstruct(batch, masked, net, agg);
    const Tensor rec = loss_reconstruction(batch, out.x_hat);
    const Tensor con = loss_constraint(out.r, build_pairs(out.index), agg.temperature);
    return combine_adaptive(rec, con, weights).first;
  };
  const auto report = grad_check(objective, params, 1e-5);
  EXPECT_LE(report.max_relative_error, 1e-4) << report.worst_tensor << "[" << report.worst_index << "]";
}

}  // namespace
}  // namespace simmtm
