#pragma once

#include <Eigen/Dense>
#include <string>

#include "simmtm/errors.hpp"
#include "simmtm/masking.hpp"
#include "simmtm/model.hpp"
#include "simmtm/similarity.hpp"

namespace simmtm {

// Linear CKA between feature matrices over the same n rows:
// |Yc^T Xc|_F^2 / (|Xc^T Xc|_F |Yc^T Yc|_F), columns centered internally.
template <class DX, class DY>
double cka(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
  if (x.rows() != y.rows()) fail(ErrorKind::kDimension, "cka inputs have different row counts");
  if (x.rows() < 2) fail(ErrorKind::kDimension, "cka needs at least two rows");
  const Eigen::MatrixXd xc = x.template cast<double>().rowwise() - x.template cast<double>().colwise().mean();
  const Eigen::MatrixXd yc = y.template cast<double>().rowwise() - y.template cast<double>().colwise().mean();
  if (xc.squaredNorm() == 0.0 || yc.squaredNorm() == 0.0) {
    fail(ErrorKind::kDegenerateInput, "cka input has zero variance (all rows identical)");
  }
  // Gram-side evaluation is cheaper when features outnumber samples; both
  // forms are algebraically equal.
  if (xc.cols() + yc.cols() > 2 * xc.rows()) {
    const Eigen::MatrixXd kx = xc * xc.transpose(), ky = yc * yc.transpose();
    return kx.cwiseProduct(ky).sum() / (kx.norm() * ky.norm());
  }
  return (yc.transpose() * xc).squaredNorm() / ((xc.transpose() * xc).norm() * (yc.transpose() * yc).norm());
}

struct CkaReport {
  double cka_first_last = 0.0;
  std::string first_layer;
  std::string last_layer;
  Index samples = 0;
};

// Per-sample encoder layer outputs flattened over time: [n, L * d_model].
Eigen::MatrixXd layer_features(const Tensor& layer_output);

CkaReport cka_first_last(const Encoder& encoder, const Tensor& probe);

struct RepresentationGap {
  CkaReport pretrained;
  CkaReport finetuned;
  double gap = 0.0;  // |cka_pretrained - cka_finetuned|
};

RepresentationGap representation_gap(const Encoder& pretrained, const Encoder& finetuned, const Tensor& probe);

// Fraction as a percentage with two decimals.
std::string format_percent(double fraction);

struct ReconstructionDemo {
  std::string csv;  // N * L rows
  double simmtm_mse = 0.0;
  double direct_mse = 0.0;
};

// Reconstructs each series from its masked variants with the SimMTM network
// and from the first variant alone with the direct baseline.
ReconstructionDemo reconstruction_demo(const Tensor& series, const MaskedSet& masked, const ReconstructionNetwork& simmtm,
                                       const ReconstructionNetwork& direct, const AggregationConfig& aggregation);

}  // namespace simmtm
