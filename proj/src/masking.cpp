#include "simmtm/masking.hpp"

#include <cmath>

namespace simmtm {

void MaskConfig::validate() const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) fail(ErrorKind::kConfig, "mask ratio must lie in [0, 1]");
  if (count < 1) fail(ErrorKind::kConfig, "mask count M must be >= 1");
  if (kind == MaskKind::kGeometric && mean_span < 1) fail(ErrorKind::kConfig, "mask mean_span must be >= 1");
}

std::vector<std::uint8_t> random_mask_row(Index length, double ratio, std::mt19937_64& rng) {
  const auto target = static_cast<Index>(std::llround(ratio * static_cast<double>(length)));
  std::vector<Index> order(static_cast<std::size_t>(length));
  for (Index t = 0; t < length; ++t) order[static_cast<std::size_t>(t)] = t;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(length), 0);
  // Partial Fisher-Yates: the first `target` slots form a uniform subset.
  for (Index i = 0; i < target; ++i) {
    const Index j = std::uniform_int_distribution<Index>(i, length - 1)(rng);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    row[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
  }
  return row;
}

std::vector<std::uint8_t> geometric_mask_row(Index length, double ratio, int mean_span, std::mt19937_64& rng) {
  std::vector<std::uint8_t> row(static_cast<std::size_t>(length), 0);
  if (ratio <= 0.0) return row;
  if (ratio >= 1.0) {
    std::fill(row.begin(), row.end(), 1);
    return row;
  }
  const double leave_masked = 1.0 / static_cast<double>(mean_span);
  // Unmasked runs of mean mean_span(1-r)/r keep the stationary fraction at r;
  // a run cannot be shorter than one step, so the rate saturates at 1.
  const double leave_unmasked = std::min(1.0, leave_masked * ratio / (1.0 - ratio));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  bool state = unit(rng) < ratio;
  for (Index t = 0; t < length; ++t) {
    row[static_cast<std::size_t>(t)] = state ? 1 : 0;
    if (unit(rng) < (state ? leave_masked : leave_unmasked)) state = !state;
  }
  return row;
}

namespace {

template <class RowFn>
MaskedSet build(const Tensor& batch, const MaskConfig& cfg, RowFn make_row) {
  cfg.validate();
  if (batch.rank() != 3) fail(ErrorKind::kDimension, "masking expects a batch [N, L, C]");
  MaskedSet out;
  out.samples = batch.dim(0);
  out.count = cfg.count;
  out.length = batch.dim(1);
  out.source = batch;
  const Index channels = batch.dim(2);
  std::mt19937_64 rng(cfg.seed);
  out.masks.reserve(static_cast<std::size_t>(out.samples * out.count * out.length));
  for (Index n = 0; n < out.samples; ++n)
    for (Index j = 0; j < out.count; ++j) {
      const auto row = make_row(rng);
      out.masks.insert(out.masks.end(), row.begin(), row.end());
    }

  Eigen::VectorXd values(out.samples * out.count * out.length * channels);
  const Eigen::VectorXd& src = batch.values();
  for (Index n = 0; n < out.samples; ++n)
    for (Index j = 0; j < out.count; ++j)
      for (Index t = 0; t < out.length; ++t) {
        const bool m = out.masked(n, j, t);
        for (Index c = 0; c < channels; ++c) {
          values[((n * out.count + j) * out.length + t) * channels + c] =
              m ? 0.0 : src[(n * out.length + t) * channels + c];
        }
      }
  out.variants = Tensor::from_vector({out.samples, out.count, out.length, channels}, values);
  return out;
}

}  // namespace

MaskedSet mask_random(const Tensor& batch, const MaskConfig& cfg) {
  if (cfg.kind != MaskKind::kRandom) fail(ErrorKind::kConfig, "mask_random called with a non-random config");
  const Index length = batch.dim(1);
  return build(batch, cfg, [&](std::mt19937_64& rng) { return random_mask_row(length, cfg.ratio, rng); });
}

MaskedSet mask_geometric(const Tensor& batch, const MaskConfig& cfg) {
  if (cfg.kind != MaskKind::kGeometric) fail(ErrorKind::kConfig, "mask_geometric called with a non-geometric config");
  const Index length = batch.dim(1);
  return build(batch, cfg,
               [&](std::mt19937_64& rng) { return geometric_mask_row(length, cfg.ratio, cfg.mean_span, rng); });
}

MaskedSet apply_mask(const Tensor& batch, const MaskConfig& cfg) {
  return cfg.kind == MaskKind::kRandom ? mask_random(batch, cfg) : mask_geometric(batch, cfg);
}

GroupIndex::GroupIndex(Index samples, Index count) : samples_(samples), count_(count) {
  if (samples < 1 || count < 1) fail(ErrorKind::kConfig, "group index needs N >= 1 and M >= 1");
}

GroupIndex::Member GroupIndex::group(Index row) const {
  if (row < 0 || row >= rows()) fail(ErrorKind::kDimension, "group(): row out of range");
  return {row / (count_ + 1), row % (count_ + 1)};
}

std::vector<Index> GroupIndex::original_rows() const {
  std::vector<Index> rows;
  for (Index i = 0; i < samples_; ++i) rows.push_back(original_row(i));
  return rows;
}

AssembledInputs assemble_inputs(const Tensor& batch, const MaskedSet& masked) {
  if (batch.rank() != 3 || batch.dim(0) != masked.samples || batch.dim(1) != masked.length) {
    fail(ErrorKind::kDimension, "assemble_inputs: batch and masked set disagree");
  }
  const Index n = masked.samples, m = masked.count, block = batch.dim(1) * batch.dim(2);
  Eigen::VectorXd values((n * (m + 1)) * block);
  for (Index i = 0; i < n; ++i) {
    values.segment(i * (m + 1) * block, block) = batch.values().segment(i * block, block);
    values.segment((i * (m + 1) + 1) * block, m * block) = masked.variants.values().segment(i * m * block, m * block);
  }
  return {Tensor::from_vector({n * (m + 1), batch.dim(1), batch.dim(2)}, values), GroupIndex(n, m)};
}

}  // namespace simmtm
