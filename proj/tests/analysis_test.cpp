#include <gtest/gtest.h>

#include <sstream>

#include "simmtm/analysis.hpp"
#include "simmtm/training.hpp"

namespace simmtm {
namespace {

Eigen::MatrixXd gaussian(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Eigen::MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  const Eigen::MatrixXd m = gaussian(numel(shape), 1, seed);
  return Tensor::from_vector(std::move(shape), m.col(0));
}

// Direct evaluation of the defining formula with explicit centering matrices.
double cka_reference(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Index n = x.rows();
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const Eigen::MatrixXd xc = h * x, yc = h * y;
  const double num = (yc.transpose() * xc).squaredNorm();
  return num / ((xc.transpose() * xc).norm() * (yc.transpose() * yc).norm());
}

TEST(Cka, SelfSimilarityIsOne) {
  const Eigen::MatrixXd x = gaussian(30, 5, 1);
  EXPECT_NEAR(cka(x, x), 1.0, 1e-9);
}

TEST(Cka, OrthogonalInvarianceAndReference) {
  const Eigen::MatrixXd x = gaussian(40, 6, 2);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(6, 6, 3));
  const Eigen::MatrixXd q = qr.householderQ();
  EXPECT_NEAR(cka(x, x * q), 1.0, 1e-9);
  const Eigen::MatrixXd y = gaussian(40, 3, 4);
  EXPECT_NEAR(cka(x, y), cka_reference(x, y), 1e-12);
}

TEST(Cka, SymmetryAndScaleInvariance) {
  const Eigen::MatrixXd x = gaussian(25, 4, 5), y = gaussian(25, 7, 6);
  EXPECT_LE(std::abs(cka(x, y) - cka(y, x)), 1e-12);
  EXPECT_NEAR(cka(3.7 * x, y), cka(x, y), 1e-9);
  EXPECT_NEAR(cka(x, 0.01 * y), cka(x, y), 1e-9);
}

TEST(Cka, GramFormAgreesOnWideFeatures) {
  const Eigen::MatrixXd x = gaussian(6, 40, 7), y = gaussian(6, 30, 8);
  EXPECT_NEAR(cka(x, y), cka_reference(x, y), 1e-12);
}

TEST(Cka, IndependentMatricesAreDissimilar) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const double v = cka(gaussian(200, 4, 100 + seed), gaussian(200, 4, 200 + seed));
    EXPECT_LT(v, 0.3);
    total += v;
  }
  EXPECT_LT(total / 10.0, 0.3);
}

TEST(Cka, DegenerateInput) {
  const Eigen::MatrixXd same = Eigen::MatrixXd::Ones(5, 3);
  try {
    cka(same, gaussian(5, 2, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDegenerateInput);
  }
}

TEST(Cka, FloatInputs) {
  const Eigen::MatrixXd x = gaussian(20, 3, 9), y = gaussian(20, 3, 10);
  EXPECT_NEAR(cka(x.cast<float>(), y.cast<float>()), cka(x, y), 1e-5);
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.e_layers = 3;
  cfg.input_length = 12;
  return cfg;
}

TEST(RepresentationGap, SameEncoderIsZeroAndRecomputes) {
  const Encoder a(small_model(), 1), b(small_model(), 2);
  const Tensor probe = random_tensor({10, 12, 1}, 3);
  const RepresentationGap same = representation_gap(a, a, probe);
  EXPECT_EQ(same.gap, 0.0);
  EXPECT_EQ(same.pretrained.first_layer, "layer0");
  EXPECT_EQ(same.pretrained.last_layer, "layer2");
  EXPECT_EQ(same.pretrained.samples, 10);

  const RepresentationGap diff = representation_gap(a, b, probe);
  const auto la = a.layer_outputs(probe), lb = b.layer_outputs(probe);
  const double ca = cka_reference(layer_features(la.front()), layer_features(la.back()));
  const double cb = cka_reference(layer_features(lb.front()), layer_features(lb.back()));
  EXPECT_NEAR(diff.gap, std::abs(ca - cb), 1e-12);
}

TEST(RepresentationGap, ConfigMismatch) {
  ModelConfig other = small_model();
  other.e_layers = 2;
  EXPECT_THROW(representation_gap(Encoder(small_model(), 1), Encoder(other, 1), random_tensor({4, 12, 1}, 1)), Error);
}

TEST(RepresentationGap, PercentFormatting) {
  EXPECT_EQ(format_percent(0.123456), "12.35");
  EXPECT_EQ(format_percent(0.0), "0.00");
  EXPECT_EQ(format_percent(1.0), "100.00");
}

TEST(ReconstructionDemo, RowsMaskedZerosAndDeterminism) {
  ModelConfig cfg = small_model();
  cfg.e_layers = 1;
  const ReconstructionNetwork simmtm(cfg, 1), direct(cfg, 2);
  const Tensor series = random_tensor({3, 12, 1}, 4);
  MaskConfig mask;
  mask.seed = 5;
  const MaskedSet masked = apply_mask(series, mask);
  const ReconstructionDemo demo = reconstruction_demo(series, masked, simmtm, direct, AggregationConfig{});
  std::istringstream in(demo.csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "sample,t,original_0,masked_0,simmtm_0,direct_0,simmtm_mse,direct_mse");
  Index rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    const Index i = std::stol(cells[0]), t = std::stol(cells[1]);
    if (masked.masked(i, 0, t)) {
      EXPECT_EQ(cells[3], "0");
    } else {
      EXPECT_EQ(std::stod(cells[3]), series.at({i, t, 0}));
    }
    ++rows;
  }
  EXPECT_EQ(rows, 3 * 12);
  EXPECT_GT(demo.simmtm_mse, 0.0);
  EXPECT_EQ(reconstruction_demo(series, masked, simmtm, direct, AggregationConfig{}).csv, demo.csv);
}

}  // namespace
}  // namespace simmtm
