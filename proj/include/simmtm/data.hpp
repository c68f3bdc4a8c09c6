#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "simmtm/tensor.hpp"

namespace simmtm {

// T x C table of observations, optionally with one integer label per row.
struct RawDataset {
  std::string name;
  std::vector<std::string> columns;
  RowMatrix values;         // rows = time, cols = variates
  std::vector<int> labels;  // empty when unlabeled

  Index length() const { return values.rows(); }
  Index channels() const { return values.cols(); }
  bool labeled() const { return !labels.empty(); }
  int num_classes() const;
};

struct CsvSchema {
  std::string label_column = "label";
  // Expected variate columns in order; empty means infer from the header.
  std::vector<std::string> columns;
};

// Shortest text that reads back to the same double.
std::string format_double(double v);

RawDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
void write_csv(const RawDataset& data, const std::filesystem::path& path);

struct SplitSpec {
  double train_fraction = 0.7;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  bool chronological = true;

  void validate() const;
};

struct ChronologicalSplit {
  RawDataset train;
  RawDataset val;
  RawDataset test;
  Index val_start = 0;   // first row of val in the source
  Index test_start = 0;  // first row of test in the source
};

ChronologicalSplit split_chronological(const RawDataset& data, const SplitSpec& spec);

// Per-variate statistics, population convention. Constant variates get
// stdev 1 and are listed in `constant_columns`.
struct Normalization {
  Eigen::VectorXd mean;
  Eigen::VectorXd stdev;
  std::vector<Index> constant_columns;
};

Normalization fit_normalization(const RawDataset& train);
RawDataset standardize(const RawDataset& data, const Normalization& stats);
RawDataset destandardize(const RawDataset& data, const Normalization& stats);
std::string ingestion_report(const RawDataset& data, const Normalization& stats);

struct SeriesBatch {
  Tensor values;              // [N, L, C]
  std::vector<Index> origin;  // start row of each window
  Normalization normalization;

  Index size() const { return values.dim(0); }
};

struct WindowSet {
  SeriesBatch inputs;
  Tensor targets;  // [N, O, C]; undefined when O == 0
};

// Sliding windows; the target of each window is the O rows that follow it.
WindowSet make_windows(const RawDataset& data, Index input_length, Index horizon, Index stride = 1);

// [N, L, C] -> [N*C, L, 1]; stream n*C + c holds variate c of window n.
SeriesBatch flatten_channels(const SeriesBatch& batch);
Tensor flatten_channels(const Tensor& windows);
// Inverse of flatten_channels for any per-stream length: [N*C, T, 1] -> [N, T, C].
Tensor unflatten_channels(const Tensor& streams, Index channels);

struct LabeledSamples {
  Tensor values;  // [N, L, C]
  std::vector<int> labels;
  Index size() const { return static_cast<Index>(labels.size()); }
};

// Cuts a labeled table into fixed-length consecutive row groups.
LabeledSamples segment_samples(const RawDataset& data, Index sample_length);

struct SampleSplit {
  LabeledSamples train;
  LabeledSamples val;
  LabeledSamples test;
};

// Deterministic seeded shuffle, then fractions in order.
SampleSplit split_samples(const LabeledSamples& samples, const SplitSpec& spec, std::uint64_t seed);

// Per-variate standardization of samples using the statistics of `train`.
Normalization fit_normalization(const LabeledSamples& train);
LabeledSamples standardize(const LabeledSamples& samples, const Normalization& stats);

}  // namespace simmtm
