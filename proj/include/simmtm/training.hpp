#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "simmtm/losses.hpp"
#include "simmtm/masking.hpp"
#include "simmtm/model.hpp"
#include "simmtm/similarity.hpp"
#include "simmtm/tensor.hpp"

namespace simmtm {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 5;
  std::uint64_t seed = 1;

  void validate() const;
};

class Adam {
public:
  explicit Adam(std::vector<Tensor> params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void zero_grad();
  void step();
  double learning_rate() const { return lr_; }

private:
  std::vector<Tensor> params_;
  std::vector<Eigen::VectorXd> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long steps_ = 0;
};

std::vector<Tensor> tensors_of(const NamedTensors& named);

// Deterministic shuffled mini-batches of row indices for one epoch.
std::vector<std::vector<Index>> epoch_batches(Index rows, int batch_size, std::uint64_t seed, int epoch);

struct PretrainOptions {
  ModelConfig model;
  MaskConfig mask;
  AggregationConfig aggregation;
  TrainConfig train;
  LossSwitches losses;
  // Start the log-variances at log(loss) of the first batch, where the
  // weighting is stationary, instead of at 0.
  bool calibrate_weights = true;
};

// Batch-mean losses of one epoch.
struct EpochLog {
  int epoch = 0;
  LossReport loss;
};

std::string epoch_log_header();
std::string format_epoch_log(const EpochLog& log);

struct PretrainResult {
  ReconstructionNetwork network;
  AdaptiveWeights weights;
  std::vector<EpochLog> log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Pre-trains on samples [N, L, C] with the adaptive joint objective. Each
// batch draws its masks from a seed fixed by (train seed, mask seed, epoch,
// batch).
PretrainResult pretrain(const Tensor& samples, const PretrainOptions& options, const EpochCallback& on_epoch = {});

// Direct masked reconstruction baseline: one masked variant per sample,
// encode -> decode, mean squared error against the original. Projector,
// aggregation and constraint are unused.
PretrainResult pretrain_direct(const Tensor& samples, const PretrainOptions& options,
                               const EpochCallback& on_epoch = {});
Tensor reconstruct_direct(const ReconstructionNetwork& net, const MaskedSet& masked);

struct ForecastData {
  Tensor train_inputs, train_targets;  // [N, L, C], [N, O, C]
  Tensor test_inputs, test_targets;
};

struct ForecastMetrics {
  double mse = 0.0;
  double mae = 0.0;
};

ForecastMetrics forecast_metrics(const Tensor& prediction, const Tensor& target);

struct ForecastResult {
  ForecastModel model;
  ForecastMetrics test;
  std::vector<double> epoch_loss;
};

// Fine-tunes a fresh forecaster. With `pretrained`, its encoder weights
// replace the fresh encoder's; the head is initialized the same either way.
ForecastResult finetune_forecast(const Encoder* pretrained, const ModelConfig& model, Index horizon,
                                 const ForecastData& data, const TrainConfig& train);

Tensor predict(const ForecastModel& model, const Tensor& inputs, int batch_size);

struct ClassifyData {
  Tensor train_inputs;  // [N, L, C]
  std::vector<int> train_labels;
  Tensor test_inputs;
  std::vector<int> test_labels;
  int classes = 0;
};

// Percentages; precision, recall and F1 are macro averages over all K
// classes, with 0 for a class whose denominator is empty.
struct ClassificationMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Eigen::MatrixXi confusion;  // [true, predicted]
};

ClassificationMetrics classification_metrics(const std::vector<int>& predicted, const std::vector<int>& truth,
                                             int classes);

struct ClassifyResult {
  ClassifierModel model;
  ClassificationMetrics test;
  std::vector<double> epoch_loss;
};

ClassifyResult finetune_classify(const Encoder* pretrained, const ModelConfig& model, const ClassifyData& data,
                                 const TrainConfig& train);

std::vector<int> predict_labels(const ClassifierModel& model, const Tensor& inputs, int batch_size);

// Cartesian grid over named axes; each cell is evaluated by `run_cell` and
// the rows come back in axis order regardless of evaluation order.
struct GridAxis {
  std::string key;
  std::vector<std::string> values;
};

struct GridRow {
  std::vector<std::string> cell;  // one value per axis
  std::map<std::string, double> metrics;
};

using GridCell = std::vector<std::pair<std::string, std::string>>;

std::vector<GridCell> grid_cells(const std::vector<GridAxis>& axes);
std::vector<GridRow> grid_search(const std::vector<GridAxis>& axes,
                                 const std::function<std::map<std::string, double>(const GridCell&)>& run_cell,
                                 const std::vector<std::size_t>& order = {});
std::string grid_csv(const std::vector<GridAxis>& axes, const std::vector<GridRow>& rows);

}  // namespace simmtm
