#include "simmtm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace simmtm {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? line.npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* begin = cell.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, cell.data() + cell.size(), out);
  return ec == std::errc() && ptr == cell.data() + cell.size() && std::isfinite(out);
}

RawDataset row_range(const RawDataset& data, Index start, Index count) {
  RawDataset out;
  out.name = data.name;
  out.columns = data.columns;
  out.values = data.values.middleRows(start, count);
  if (data.labeled()) out.labels.assign(data.labels.begin() + start, data.labels.begin() + start + count);
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

int RawDataset::num_classes() const {
  if (labels.empty()) return 0;
  return *std::max_element(labels.begin(), labels.end()) + 1;
}

RawDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::kMissingFile, "no such file " + path.string());
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) fail(ErrorKind::kEmptyInput, path.string() + " is empty");

  const std::vector<std::string> header = split_fields(line);
  Index label_col = -1;
  std::vector<std::string> columns;
  std::vector<Index> value_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!schema.label_column.empty() && header[i] == schema.label_column) {
      label_col = static_cast<Index>(i);
    } else {
      columns.push_back(header[i]);
      value_cols.push_back(static_cast<Index>(i));
    }
  }
  if (!schema.columns.empty() && schema.columns != columns) {
    fail(ErrorKind::kIngestion, path.string() + ": header does not match the expected columns");
  }
  if (columns.empty()) fail(ErrorKind::kIngestion, path.string() + ": no variate columns");

  std::vector<double> values;
  std::vector<int> labels;
  Index row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != header.size()) {
      fail(ErrorKind::kIngestion, "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                                      " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < value_cols.size(); ++c) {
      double v = 0.0;
      if (!parse_double(fields[static_cast<std::size_t>(value_cols[c])], v)) {
        fail(ErrorKind::kIngestion, "row " + std::to_string(row) + ", column " +
                                        std::to_string(value_cols[c] + 1) + ": cannot parse '" +
                                        fields[static_cast<std::size_t>(value_cols[c])] + "'");
      }
      values.push_back(v);
    }
    if (label_col >= 0) {
      const std::string& cell = fields[static_cast<std::size_t>(label_col)];
      int label = 0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), label);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || label < 0) {
        fail(ErrorKind::kIngestion, "row " + std::to_string(row) + ", column " + std::to_string(label_col + 1) +
                                        ": label must be a non-negative integer, got '" + cell + "'");
      }
      labels.push_back(label);
    }
  }
  if (row == 0) fail(ErrorKind::kEmptyInput, path.string() + " has a header but no rows");

  RawDataset out;
  out.name = path.stem().string();
  out.columns = std::move(columns);
  out.values = ConstRowMatrixMap(values.data(), row, static_cast<Index>(out.columns.size()));
  out.labels = std::move(labels);
  return out;
}

void write_csv(const RawDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (std::size_t c = 0; c < data.columns.size(); ++c) out << (c ? "," : "") << data.columns[c];
  if (data.labeled()) out << ",label";
  out << '\n';
  for (Index t = 0; t < data.length(); ++t) {
    for (Index c = 0; c < data.channels(); ++c) out << (c ? "," : "") << format_double(data.values(t, c));
    if (data.labeled()) out << ',' << data.labels[static_cast<std::size_t>(t)];
    out << '\n';
  }
}

void SplitSpec::validate() const {
  for (double f : {train_fraction, val_fraction, test_fraction}) {
    if (!(f > 0.0 && f < 1.0)) fail(ErrorKind::kConfig, "split fractions must lie in (0, 1)");
  }
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
    fail(ErrorKind::kConfig, "split fractions must sum to 1");
  }
}

ChronologicalSplit split_chronological(const RawDataset& data, const SplitSpec& spec) {
  spec.validate();
  const Index total = data.length();
  const auto n_train = static_cast<Index>(std::floor(static_cast<double>(total) * spec.train_fraction));
  const auto n_val = static_cast<Index>(std::floor(static_cast<double>(total) * spec.val_fraction));
  const Index n_test = total - n_train - n_val;
  if (n_train <= 0 || n_val <= 0 || n_test <= 0) {
    fail(ErrorKind::kInsufficientData, "dataset of " + std::to_string(total) + " rows is too short to split");
  }
  ChronologicalSplit out;
  out.train = row_range(data, 0, n_train);
  out.val = row_range(data, n_train, n_val);
  out.test = row_range(data, n_train + n_val, n_test);
  out.val_start = n_train;
  out.test_start = n_train + n_val;
  return out;
}

Normalization fit_normalization(const RawDataset& train) {
  if (train.length() == 0) fail(ErrorKind::kEmptyInput, "cannot fit normalization on an empty split");
  Normalization stats;
  stats.mean = train.values.colwise().mean().transpose();
  stats.stdev.resize(train.channels());
  for (Index c = 0; c < train.channels(); ++c) {
    const double var = (train.values.col(c).array() - stats.mean[c]).square().mean();
    double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      sd = 1.0;
      stats.constant_columns.push_back(c);
    }
    stats.stdev[c] = sd;
  }
  return stats;
}

RawDataset standardize(const RawDataset& data, const Normalization& stats) {
  RawDataset out = data;
  out.values = ((data.values.rowwise() - stats.mean.transpose()).array().rowwise() / stats.stdev.transpose().array())
                   .matrix();
  return out;
}

RawDataset destandardize(const RawDataset& data, const Normalization& stats) {
  RawDataset out = data;
  out.values = ((data.values.array().rowwise() * stats.stdev.transpose().array()).matrix().rowwise() +
                stats.mean.transpose());
  return out;
}

std::string ingestion_report(const RawDataset& data, const Normalization& stats) {
  std::ostringstream out;
  out << "dataset " << data.name << ": rows=" << data.length() << " variates=" << data.channels();
  if (data.labeled()) out << " classes=" << data.num_classes();
  out << '\n';
  for (Index c = 0; c < data.channels(); ++c) {
    out << "  " << data.columns[static_cast<std::size_t>(c)] << ": mean=" << stats.mean[c]
        << " stdev=" << stats.stdev[c];
    if (std::find(stats.constant_columns.begin(), stats.constant_columns.end(), c) != stats.constant_columns.end()) {
      out << " (constant on train split; stdev set to 1)";
    }
    out << '\n';
  }
  return out.str();
}

WindowSet make_windows(const RawDataset& data, Index input_length, Index horizon, Index stride) {
  if (input_length <= 0 || horizon < 0 || stride <= 0) fail(ErrorKind::kConfig, "invalid window geometry");
  const Index total = data.length();
  if (total < input_length + horizon) {
    fail(ErrorKind::kInsufficientData, "need at least " + std::to_string(input_length + horizon) +
                                           " rows for windows, have " + std::to_string(total));
  }
  const Index count = (total - input_length - horizon) / stride + 1;
  const Index channels = data.channels();
  Eigen::VectorXd inputs(count * input_length * channels);
  Eigen::VectorXd targets(count * std::max<Index>(horizon, 1) * channels);
  WindowSet out;
  for (Index n = 0; n < count; ++n) {
    const Index start = n * stride;
    out.inputs.origin.push_back(start);
    for (Index t = 0; t < input_length; ++t)
      for (Index c = 0; c < channels; ++c) inputs[(n * input_length + t) * channels + c] = data.values(start + t, c);
    for (Index t = 0; t < horizon; ++t)
      for (Index c = 0; c < channels; ++c)
        targets[(n * horizon + t) * channels + c] = data.values(start + input_length + t, c);
  }
  out.inputs.values = Tensor::from_vector({count, input_length, channels}, inputs);
  if (horizon > 0) out.targets = Tensor::from_vector({count, horizon, channels}, targets);
  return out;
}

Tensor flatten_channels(const Tensor& windows) {
  if (windows.rank() != 3) fail(ErrorKind::kDimension, "flatten_channels expects [N, L, C]");
  const Index n = windows.dim(0), l = windows.dim(1), c = windows.dim(2);
  return reshape(permute(windows, {0, 2, 1}), {n * c, l, 1});
}

SeriesBatch flatten_channels(const SeriesBatch& batch) {
  SeriesBatch out;
  out.values = flatten_channels(batch.values);
  const Index channels = batch.values.dim(2);
  for (Index origin : batch.origin)
    for (Index c = 0; c < channels; ++c) out.origin.push_back(origin);
  out.normalization = batch.normalization;
  return out;
}

Tensor unflatten_channels(const Tensor& streams, Index channels) {
  if (streams.rank() != 3 || streams.dim(2) != 1 || streams.dim(0) % channels != 0) {
    fail(ErrorKind::kDimension, "unflatten_channels expects [N*C, T, 1]");
  }
  const Index n = streams.dim(0) / channels, t = streams.dim(1);
  return permute(reshape(streams, {n, channels, t}), {0, 2, 1});
}

LabeledSamples segment_samples(const RawDataset& data, Index sample_length) {
  if (!data.labeled()) fail(ErrorKind::kIngestion, "classification data needs a label column");
  if (sample_length <= 0 || data.length() % sample_length != 0) {
    fail(ErrorKind::kIngestion, "row count " + std::to_string(data.length()) +
                                    " is not a multiple of the sample length " + std::to_string(sample_length));
  }
  const Index count = data.length() / sample_length;
  LabeledSamples out;
  for (Index n = 0; n < count; ++n) {
    const int label = data.labels[static_cast<std::size_t>(n * sample_length)];
    for (Index t = 1; t < sample_length; ++t) {
      if (data.labels[static_cast<std::size_t>(n * sample_length + t)] != label) {
        fail(ErrorKind::kIngestion, "sample " + std::to_string(n) + " mixes labels");
      }
    }
    out.labels.push_back(label);
  }
  out.values = Tensor::from_vector({count, sample_length, data.channels()},
                                   Eigen::Map<const Eigen::VectorXd>(data.values.data(), data.values.size()));
  return out;
}

namespace {

LabeledSamples pick(const LabeledSamples& samples, const std::vector<Index>& rows) {
  LabeledSamples out;
  out.values = index_select(samples.values, rows);
  for (Index r : rows) out.labels.push_back(samples.labels[static_cast<std::size_t>(r)]);
  return out;
}

}  // namespace

SampleSplit split_samples(const LabeledSamples& samples, const SplitSpec& spec, std::uint64_t seed) {
  spec.validate();
  const Index total = samples.size();
  std::vector<Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<Index>(std::floor(static_cast<double>(total) * spec.train_fraction));
  const auto n_val = static_cast<Index>(std::floor(static_cast<double>(total) * spec.val_fraction));
  if (n_train <= 0 || n_val <= 0 || total - n_train - n_val <= 0) {
    fail(ErrorKind::kInsufficientData, std::to_string(total) + " samples are too few to split");
  }
  SampleSplit out;
  out.train = pick(samples, {order.begin(), order.begin() + n_train});
  out.val = pick(samples, {order.begin() + n_train, order.begin() + n_train + n_val});
  out.test = pick(samples, {order.begin() + n_train + n_val, order.end()});
  return out;
}

Normalization fit_normalization(const LabeledSamples& train) {
  const Index channels = train.values.dim(2);
  RawDataset flat;
  flat.values = ConstRowMatrixMap(train.values.values().data(), train.values.numel() / channels, channels);
  return fit_normalization(flat);
}

LabeledSamples standardize(const LabeledSamples& samples, const Normalization& stats) {
  const Index channels = samples.values.dim(2);
  RowMatrix flat = ConstRowMatrixMap(samples.values.values().data(), samples.values.numel() / channels, channels);
  flat = ((flat.rowwise() - stats.mean.transpose()).array().rowwise() / stats.stdev.transpose().array()).matrix();
  LabeledSamples out;
  out.labels = samples.labels;
  out.values = Tensor::from_vector(samples.values.shape(), Eigen::Map<const Eigen::VectorXd>(flat.data(), flat.size()));
  return out;
}

}  // namespace simmtm
