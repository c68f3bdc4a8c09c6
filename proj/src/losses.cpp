#include "simmtm/losses.hpp"

#include <cmath>

namespace simmtm {

Tensor loss_reconstruction(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape()) {
    fail(ErrorKind::kDimension,
         "reconstruction loss shapes differ: " + shape_string(x.shape()) + " vs " + shape_string(x_hat.shape()));
  }
  return mean(square(x_hat - x));
}

PairSpec::PairSpec(const GroupIndex& index) : rows_(index.rows()) {
  mask_.assign(static_cast<std::size_t>(rows_ * rows_), 0);
  for (Index s = 0; s < rows_; ++s)
    for (Index t = 0; t < rows_; ++t)
      if (s != t && index.same_group(s, t)) mask_[static_cast<std::size_t>(s * rows_ + t)] = 1;
}

std::vector<Index> PairSpec::positives(Index s) const {
  std::vector<Index> out;
  for (Index t = 0; t < rows_; ++t)
    if (positive(s, t)) out.push_back(t);
  return out;
}

std::vector<Index> PairSpec::negatives(Index s) const {
  std::vector<Index> out;
  for (Index t = 0; t < rows_; ++t)
    if (t != s && !positive(s, t)) out.push_back(t);
  return out;
}

PairSpec build_pairs(const GroupIndex& index) { return PairSpec(index); }

Tensor loss_constraint(const Tensor& r, const PairSpec& pairs, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::kConfig, "temperature must be positive");
  const Index d = pairs.rows();
  if (r.shape() != Shape{d, d}) fail(ErrorKind::kDimension, "constraint loss expects R [D, D] matching the pairs");
  std::vector<std::uint8_t> others(static_cast<std::size_t>(d * d), 1);
  for (Index s = 0; s < d; ++s) others[static_cast<std::size_t>(s * d + s)] = 0;
  const Tensor log_p = masked_log_softmax(r * (1.0 / temperature), others);
  Eigen::VectorXd selector(d * d);
  for (Index k = 0; k < d * d; ++k) selector[k] = pairs.mask()[static_cast<std::size_t>(k)];
  return -sum(log_p * Tensor::from_vector({d, d}, selector));
}

std::pair<Tensor, LossReport> combine_adaptive(const Tensor& rec, const Tensor& con, const AdaptiveWeights& weights,
                                               const LossSwitches& switches) {
  if (!switches.reconstruction && !switches.constraint) fail(ErrorKind::kConfig, "both losses are disabled");
  LossReport report;
  report.rec = switches.reconstruction ? rec.item() : 0.0;
  report.con = switches.constraint ? con.item() : 0.0;
  report.weight_rec = std::exp(-weights.a.item());
  report.weight_con = std::exp(-weights.b.item());
  Tensor total;
  if (switches.reconstruction) total = exp(-weights.a) * rec + weights.a;
  if (switches.constraint) {
    Tensor term = exp(-weights.b) * con + weights.b;
    total = switches.reconstruction ? total + term : term;
  }
  report.total = total.item();
  return {total, report};
}

}  // namespace simmtm
