#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "simmtm/tensor.hpp"

namespace simmtm {

enum class MaskKind { kRandom, kGeometric };

struct MaskConfig {
  double ratio = 0.5;
  int count = 3;  // masked variants per sample
  MaskKind kind = MaskKind::kGeometric;
  int mean_span = 3;  // mean masked-run length, geometric only
  std::uint64_t seed = 0;

  void validate() const;
};

// M masked variants per sample. A masked time point is zeroed in every
// variate.
struct MaskedSet {
  Index samples = 0;
  Index count = 0;
  Index length = 0;
  std::vector<std::uint8_t> masks;  // [N, M, L], 1 = masked
  Tensor variants;                  // [N, M, L, C]
  Tensor source;                    // [N, L, C]

  bool masked(Index n, Index j, Index t) const { return masks[static_cast<std::size_t>((n * count + j) * length + t)]; }
};

// Exactly round(r * L) uniformly chosen points per variant.
std::vector<std::uint8_t> random_mask_row(Index length, double ratio, std::mt19937_64& rng);

// Two-state run process: masked runs have geometric lengths with mean
// `mean_span`, unmasked runs with mean mean_span * (1 - r) / r, and the first
// state is drawn from the stationary distribution.
std::vector<std::uint8_t> geometric_mask_row(Index length, double ratio, int mean_span, std::mt19937_64& rng);

MaskedSet mask_random(const Tensor& batch, const MaskConfig& cfg);
MaskedSet mask_geometric(const Tensor& batch, const MaskConfig& cfg);
MaskedSet apply_mask(const Tensor& batch, const MaskConfig& cfg);

// Row layout of the assembled D = N(M+1) set: row i(M+1) is original i,
// rows i(M+1)+1 .. i(M+1)+M are its masked variants.
class GroupIndex {
public:
  struct Member {
    Index sample;
    Index variant;  // 0 = original, 1..M = masked variant
    bool original() const { return variant == 0; }
  };

  GroupIndex() = default;
  GroupIndex(Index samples, Index count);

  Index samples() const { return samples_; }
  Index count() const { return count_; }
  Index rows() const { return samples_ * (count_ + 1); }
  Index original_row(Index sample) const { return sample * (count_ + 1); }
  Index variant_row(Index sample, Index variant) const { return sample * (count_ + 1) + variant; }
  Member group(Index row) const;
  bool same_group(Index a, Index b) const { return a / (count_ + 1) == b / (count_ + 1); }
  std::vector<Index> original_rows() const;

private:
  Index samples_ = 0;
  Index count_ = 0;
};

struct AssembledInputs {
  Tensor inputs;  // [D, L, C]
  GroupIndex index;
};

AssembledInputs assemble_inputs(const Tensor& batch, const MaskedSet& masked);

}  // namespace simmtm
