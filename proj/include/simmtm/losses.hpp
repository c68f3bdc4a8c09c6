#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "simmtm/masking.hpp"
#include "simmtm/tensor.hpp"

namespace simmtm {

// Mean squared error per element.
Tensor loss_reconstruction(const Tensor& x, const Tensor& x_hat);

// Rows of the assembled set that count as close to each row. An original's
// positives are its M variants; a variant's are its original and its M-1
// siblings. Every other row is a negative.
class PairSpec {
public:
  explicit PairSpec(const GroupIndex& index);

  Index rows() const { return rows_; }
  bool positive(Index s, Index t) const { return mask_[static_cast<std::size_t>(s * rows_ + t)] != 0; }
  std::vector<Index> positives(Index s) const;
  std::vector<Index> negatives(Index s) const;
  // [D, D] indicator, row-major.
  const std::vector<std::uint8_t>& mask() const { return mask_; }

private:
  Index rows_ = 0;
  std::vector<std::uint8_t> mask_;
};

PairSpec build_pairs(const GroupIndex& index);

// -sum_s sum_{s' in S+(s)} log softmax_{s'' != s}(R[s, .] / tau)[s'].
Tensor loss_constraint(const Tensor& r, const PairSpec& pairs, double temperature);

// Learnable log-variances a (reconstruction) and b (constraint).
struct AdaptiveWeights {
  Tensor a = Tensor::scalar(0.0, true);
  Tensor b = Tensor::scalar(0.0, true);
};

struct LossSwitches {
  bool reconstruction = true;
  bool constraint = true;
};

struct LossReport {
  double rec = 0.0;
  double con = 0.0;
  double weight_rec = 1.0;
  double weight_con = 1.0;
  double total = 0.0;
};

// exp(-a) rec + a + exp(-b) con + b, dropping the terms of a disabled loss.
// A disabled loss is reported as 0.
std::pair<Tensor, LossReport> combine_adaptive(const Tensor& rec, const Tensor& con, const AdaptiveWeights& weights,
                                               const LossSwitches& switches = {});

}  // namespace simmtm
