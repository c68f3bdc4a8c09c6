#include "simmtm/similarity.hpp"

#include <limits>

namespace simmtm {

void AggregationConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    fail(ErrorKind::kConfig, "temperature must be a positive finite number");
  }
}

Tensor cosine_matrix(const Tensor& s) {
  if (s.rank() != 2) fail(ErrorKind::kDimension, "cosine_matrix expects [D, d], got " + shape_string(s.shape()));
  if (s.dim(0) < 2) fail(ErrorKind::kDimension, "cosine_matrix needs D >= 2");
  // max(|u|, eps) == sqrt(max(|u|^2, eps^2)); clamping before the root keeps
  // zero rows differentiable.
  const Tensor norms = sqrt(clamp_min(sum(square(s), 1, true), kCosineEps * kCosineEps));
  const Tensor unit = s / norms;
  return matmul(unit, transpose(unit));
}

std::vector<std::uint8_t> candidate_mask(const GroupIndex& index, CandidateSet set) {
  const Index n = index.samples(), d = index.rows();
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n * d), 0);
  for (Index i = 0; i < n; ++i) {
    const Index self = index.original_row(i);
    for (Index c = 0; c < d; ++c) {
      const bool allowed = set == CandidateSet::kPNSA || index.same_group(self, c);
      mask[static_cast<std::size_t>(i * d + c)] = (c != self && allowed) ? 1 : 0;
    }
  }
  return mask;
}

Eigen::MatrixXd aggregation_weights(const Eigen::MatrixXd& r, const GroupIndex& index, const AggregationConfig& cfg) {
  cfg.validate();
  const Index n = index.samples(), d = index.rows();
  if (r.rows() != d || r.cols() != d) fail(ErrorKind::kDimension, "similarity matrix does not match the grouping");
  const auto mask = candidate_mask(index, cfg.candidates);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, d);
  for (Index i = 0; i < n; ++i) {
    const Index self = index.original_row(i);
    double top = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < d; ++c)
      if (mask[static_cast<std::size_t>(i * d + c)]) top = std::max(top, r(self, c) / cfg.temperature);
    if (!std::isfinite(top)) fail(ErrorKind::kNumeric, "no finite candidate similarity for sample " + std::to_string(i));
    double total = 0.0;
    for (Index c = 0; c < d; ++c)
      if (mask[static_cast<std::size_t>(i * d + c)]) total += w(i, c) = std::exp(r(self, c) / cfg.temperature - top);
    w.row(i) /= total;
  }
  return w;
}

Tensor aggregate_with_similarity(const Tensor& z, const Tensor& r, const GroupIndex& index,
                                 const AggregationConfig& cfg) {
  cfg.validate();
  const Index d = index.rows();
  if (z.rank() != 3 || z.dim(0) != d) fail(ErrorKind::kDimension, "aggregate expects Z [D, L, d] matching the grouping");
  if (r.shape() != Shape{d, d}) fail(ErrorKind::kDimension, "aggregate expects R [D, D]");
  const auto originals = index.original_rows();
  const Tensor logits = index_select(r, originals) * (1.0 / cfg.temperature);  // [N, D]
  const Tensor weights = masked_softmax(logits, candidate_mask(index, cfg.candidates));
  const Tensor flat = reshape(z, {d, z.dim(1) * z.dim(2)});
  return reshape(matmul(weights, flat), {index.samples(), z.dim(1), z.dim(2)});
}

Tensor aggregate(const Tensor& z, const Tensor& s, const GroupIndex& index, const AggregationConfig& cfg) {
  return aggregate_with_similarity(z, cosine_matrix(s), index, cfg);
}

Reconstruction reconstruct(const Tensor& batch, const MaskedSet& masked, const ReconstructionNetwork& net,
                           const AggregationConfig& cfg) {
  cfg.validate();
  if (masked.count < 1) fail(ErrorKind::kConfig, "reconstruction needs M >= 1 masked variants");
  Reconstruction out;
  AssembledInputs assembled = assemble_inputs(batch, masked);
  out.index = assembled.index;
  out.z = net.encoder(assembled.inputs);
  out.s = net.projector(out.z);
  out.r = cosine_matrix(out.s);
  out.x_hat = net.decoder(aggregate_with_similarity(out.z, out.r, out.index, cfg));
  return out;
}

}  // namespace simmtm
