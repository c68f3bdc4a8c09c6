#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "simmtm/masking.hpp"
#include "simmtm/model.hpp"
#include "simmtm/tensor.hpp"

namespace simmtm {

inline constexpr double kCosineEps = 1e-8;

enum class CandidateSet {
  kPNSA,  // every other row of the assembled set
  kPSA,   // only the sample's own masked variants
};

struct AggregationConfig {
  CandidateSet candidates = CandidateSet::kPNSA;
  double temperature = 0.02;

  void validate() const;
};

// R[u, v] = <u, v> / (max(|u|, eps) max(|v|, eps)) over rows of S [D, d].
Tensor cosine_matrix(const Tensor& s);

// Non-differentiable evaluation of the same matrix for any Eigen expression.
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> cosine_matrix_values(
    const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto norms = s.rowwise().norm().array().max(Scalar(kCosineEps)).matrix().eval();
  const Matrix unit = norms.asDiagonal().inverse() * s;
  return unit * unit.transpose();
}

// Candidate include mask [N, D] for the original rows: 1 where row c may
// contribute to the aggregate of sample i. Self is never included.
std::vector<std::uint8_t> candidate_mask(const GroupIndex& index, CandidateSet set);

// Softmax weights [N, D] over candidates of each original row, computed from
// a plain similarity matrix. Entries may be -infinity; they get weight 0.
Eigen::MatrixXd aggregation_weights(const Eigen::MatrixXd& r, const GroupIndex& index, const AggregationConfig& cfg);

// z_hat_i = sum_c w_ic z_c over candidate rows c, w_i = softmax(R[i, c] / tau).
// Z [D, L, d], R [D, D] -> [N, L, d].
Tensor aggregate_with_similarity(const Tensor& z, const Tensor& r, const GroupIndex& index,
                                 const AggregationConfig& cfg);
Tensor aggregate(const Tensor& z, const Tensor& s, const GroupIndex& index, const AggregationConfig& cfg);

struct Reconstruction {
  Tensor x_hat;  // [N, L, C]
  Tensor r;      // [D, D]
  Tensor z;      // [D, L, d_model]
  Tensor s;      // [D, d_model]
  GroupIndex index;
};

// assemble -> encode -> project -> cosine -> aggregate -> decode.
Reconstruction reconstruct(const Tensor& batch, const MaskedSet& masked, const ReconstructionNetwork& net,
                           const AggregationConfig& cfg);

}  // namespace simmtm
