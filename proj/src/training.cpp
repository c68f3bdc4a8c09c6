#include "simmtm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "simmtm/data.hpp"
#include "simmtm/random.hpp"

namespace simmtm {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) fail(ErrorKind::kConfig, "train.lr must be >= 0");
  if (batch_size < 1) fail(ErrorKind::kConfig, "train.batch_size must be >= 1");
  if (epochs < 1) fail(ErrorKind::kConfig, "train.epochs must be >= 1");
}

Adam::Adam(std::vector<Tensor> params, double learning_rate, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.push_back(Eigen::VectorXd::Zero(p.numel()));
    v_.push_back(Eigen::VectorXd::Zero(p.numel()));
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Eigen::VectorXd g = params_[i].grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    if (lr_ == 0.0) continue;
    params_[i].mutable_values().array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

std::vector<Tensor> tensors_of(const NamedTensors& named) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

std::vector<std::vector<Index>> epoch_batches(Index rows, int batch_size, std::uint64_t seed, int epoch) {
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  return batches;
}

std::string epoch_log_header() { return "epoch,loss_rec,loss_con,weight_rec,weight_con,total"; }

std::string format_epoch_log(const EpochLog& log) {
  std::ostringstream out;
  out << log.epoch << ',' << format_double(log.loss.rec) << ',' << format_double(log.loss.con) << ','
      << format_double(log.loss.weight_rec) << ',' << format_double(log.loss.weight_con) << ','
      << format_double(log.loss.total);
  return out.str();
}

namespace {

void check_samples(const Tensor& samples, const ModelConfig& model) {
  if (samples.rank() != 3 || samples.dim(1) != model.input_length || samples.dim(2) != model.input_channels) {
    fail(ErrorKind::kDimension, "training samples " + shape_string(samples.shape()) + " do not match the model input [N, " +
                                    std::to_string(model.input_length) + ", " +
                                    std::to_string(model.input_channels) + "]");
  }
  if (samples.dim(0) < 1) fail(ErrorKind::kInsufficientData, "no training samples");
}

MaskConfig batch_mask(const PretrainOptions& options, int epoch, std::size_t batch) {
  MaskConfig cfg = options.mask;
  const std::uint64_t base = derive_seed(options.train.seed, options.mask.seed);
  cfg.seed = derive_seed(base, (static_cast<std::uint64_t>(epoch) << 32) + batch);
  return cfg;
}

std::string where(int epoch, std::size_t batch) {
  return "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch);
}

// Runs one optimization step, turning non-finite values anywhere along the
// way into a divergence error that names the batch and the stage.
template <class Forward>
LossReport guarded_step(Adam& opt, const std::vector<Tensor>& params, int epoch, std::size_t batch,
                        Forward forward) {
  std::string stage = "forward";
  try {
    auto [total, report] = forward(stage);
    stage = "backward";
    opt.zero_grad();
    total.backward();
    for (const auto& p : params)
      if (!p.grad().allFinite()) fail(ErrorKind::kNumeric, "non-finite gradient");
    stage = "optimizer step";
    opt.step();
    for (const auto& p : params)
      if (!p.values().allFinite()) fail(ErrorKind::kNumeric, "non-finite parameter");
    return report;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumeric) throw;
    fail(ErrorKind::kDivergence, "diverged at " + where(epoch, batch) + " in " + stage + ": " + e.what());
  }
}

void accumulate(LossReport& sum, const LossReport& r) {
  sum.rec += r.rec;
  sum.con += r.con;
  sum.total += r.total;
}

EpochLog finish_epoch(int epoch, LossReport sum, std::size_t batches, const AdaptiveWeights& weights) {
  const double n = static_cast<double>(batches);
  sum.rec /= n;
  sum.con /= n;
  sum.total /= n;
  sum.weight_rec = std::exp(-weights.a.item());
  sum.weight_con = std::exp(-weights.b.item());
  return {epoch, sum};
}

void calibrate(AdaptiveWeights& weights, const Tensor& rec, const Tensor& con) {
  if (rec.item() > 0.0) weights.a.mutable_values()[0] = std::log(rec.item());
  if (con.item() > 0.0) weights.b.mutable_values()[0] = std::log(con.item());
}

}  // namespace

PretrainResult pretrain(const Tensor& samples, const PretrainOptions& options, const EpochCallback& on_epoch) {
  options.model.validate();
  options.mask.validate();
  options.aggregation.validate();
  options.train.validate();
  check_samples(samples, options.model);

  PretrainResult result{ReconstructionNetwork(options.model, options.train.seed), AdaptiveWeights{}, {}};
  std::vector<Tensor> params = tensors_of(result.network.parameters());
  params.push_back(result.weights.a);
  params.push_back(result.weights.b);
  Adam opt(params, options.train.learning_rate);
  const Tensor zero = Tensor::scalar(0.0);

  for (int epoch = 1; epoch <= options.train.epochs; ++epoch) {
    const auto batches = epoch_batches(samples.dim(0), options.train.batch_size, options.train.seed, epoch);
    LossReport sum;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor batch = index_select(samples, batches[b]);
      const MaskedSet masked = apply_mask(batch, batch_mask(options, epoch, b));
      accumulate(sum, guarded_step(opt, params, epoch, b, [&](std::string& stage) {
                   const Reconstruction out = reconstruct(batch, masked, result.network, options.aggregation);
                   stage = "loss_rec";
                   const Tensor rec = options.losses.reconstruction ? loss_reconstruction(batch, out.x_hat) : zero;
                   stage = "loss_con";
                   const Tensor con = options.losses.constraint
                                          ? loss_constraint(out.r, build_pairs(out.index), options.aggregation.temperature)
                                          : zero;
                   stage = "total";
                   if (options.calibrate_weights && epoch == 1 && b == 0) calibrate(result.weights, rec, con);
                   return combine_adaptive(rec, con, result.weights, options.losses);
                 }));
    }
    result.log.push_back(finish_epoch(epoch, sum, batches.size(), result.weights));
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

Tensor reconstruct_direct(const ReconstructionNetwork& net, const MaskedSet& masked) {
  const Shape& v = masked.variants.shape();
  const Tensor first = slice(masked.variants, 1, 0, 1);
  return net.decoder(net.encoder(reshape(first, {v[0], v[2], v[3]})));
}

PretrainResult pretrain_direct(const Tensor& samples, const PretrainOptions& options, const EpochCallback& on_epoch) {
  options.model.validate();
  options.mask.validate();
  options.train.validate();
  check_samples(samples, options.model);

  PretrainResult result{ReconstructionNetwork(options.model, options.train.seed), AdaptiveWeights{}, {}};
  NamedTensors named = result.network.encoder.parameters();
  result.network.decoder.collect("decoder", named);
  const std::vector<Tensor> params = tensors_of(named);
  Adam opt(params, options.train.learning_rate);
  PretrainOptions single = options;
  single.mask.count = 1;

  for (int epoch = 1; epoch <= options.train.epochs; ++epoch) {
    const auto batches = epoch_batches(samples.dim(0), options.train.batch_size, options.train.seed, epoch);
    LossReport sum;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor batch = index_select(samples, batches[b]);
      const MaskedSet masked = apply_mask(batch, batch_mask(single, epoch, b));
      accumulate(sum, guarded_step(opt, params, epoch, b, [&](std::string& stage) {
                   const Tensor x_hat = reconstruct_direct(result.network, masked);
                   stage = "loss_rec";
                   const Tensor rec = loss_reconstruction(batch, x_hat);
                   LossReport report;
                   report.rec = report.total = rec.item();
                   return std::pair<Tensor, LossReport>{rec, report};
                 }));
    }
    result.log.push_back(finish_epoch(epoch, sum, batches.size(), result.weights));
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

ForecastMetrics forecast_metrics(const Tensor& prediction, const Tensor& target) {
  if (prediction.shape() != target.shape()) fail(ErrorKind::kDimension, "prediction and target shapes differ");
  if (prediction.numel() == 0) fail(ErrorKind::kEmptyInput, "no forecasts to score");
  const Eigen::ArrayXd diff = prediction.values().array() - target.values().array();
  return {diff.square().mean(), diff.abs().mean()};
}

namespace {

Encoder fresh_encoder(const Encoder* pretrained, const ModelConfig& cfg, std::uint64_t seed) {
  Encoder enc(cfg, seed);
  if (pretrained != nullptr) {
    if (!(pretrained->config() == cfg)) fail(ErrorKind::kConfig, "checkpoint encoder config differs from the run config");
    assign_parameters(enc.parameters(), pretrained->parameters());
  }
  return enc;
}

template <class Run>
Tensor batched_inference(const Tensor& inputs, int batch_size, Run run) {
  NoGradGuard no_grad;
  std::vector<Tensor> parts;
  for (Index start = 0; start < inputs.dim(0); start += batch_size) {
    const Index count = std::min<Index>(batch_size, inputs.dim(0) - start);
    parts.push_back(run(slice(inputs, 0, start, count)));
  }
  if (parts.empty()) fail(ErrorKind::kEmptyInput, "no inputs to evaluate");
  return parts.size() == 1 ? parts.front() : concat(parts, 0);
}

}  // namespace

Tensor predict(const ForecastModel& model, const Tensor& inputs, int batch_size) {
  return batched_inference(inputs, batch_size, [&](const Tensor& x) { return model(x); });
}

ForecastResult finetune_forecast(const Encoder* pretrained, const ModelConfig& model, Index horizon,
                                 const ForecastData& data, const TrainConfig& train) {
  train.validate();
  check_samples(flatten_channels(data.train_inputs), model);
  if (data.test_inputs.rank() != 3 || data.test_inputs.dim(0) < 1) {
    fail(ErrorKind::kInsufficientData, "no test windows for the requested horizon");
  }
  if (data.train_targets.rank() != 3 || data.train_targets.dim(1) != horizon) {
    fail(ErrorKind::kDimension, "forecast targets do not match the horizon " + std::to_string(horizon));
  }
  ForecastResult result{ForecastModel(fresh_encoder(pretrained, model, train.seed), horizon, train.seed), {}, {}};
  const std::vector<Tensor> params = tensors_of(result.model.parameters());
  Adam opt(params, train.learning_rate);
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    const auto batches = epoch_batches(data.train_inputs.dim(0), train.batch_size, train.seed, epoch);
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor x = index_select(data.train_inputs, batches[b]);
      const Tensor y = index_select(data.train_targets, batches[b]);
      epoch_total += guarded_step(opt, params, epoch, b, [&](std::string& stage) {
               const Tensor pred = result.model(x);
               stage = "loss_mse";
               const Tensor loss = mean(square(pred - y));
               LossReport report;
               report.rec = report.total = loss.item();
               return std::pair<Tensor, LossReport>{loss, report};
             }).total;
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(batches.size()));
  }
  result.test = forecast_metrics(predict(result.model, data.test_inputs, train.batch_size), data.test_targets);
  return result;
}

ClassificationMetrics classification_metrics(const std::vector<int>& predicted, const std::vector<int>& truth,
                                             int classes) {
  if (predicted.size() != truth.size()) fail(ErrorKind::kDimension, "prediction and label counts differ");
  if (truth.empty()) fail(ErrorKind::kEmptyInput, "no labels to score");
  ClassificationMetrics m;
  m.confusion = Eigen::MatrixXi::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || predicted[i] < 0 || predicted[i] >= classes) {
      fail(ErrorKind::kContract, "label outside [0, K)");
    }
    ++m.confusion(truth[i], predicted[i]);
  }
  auto ratio = [](double num, double den) { return den > 0.0 ? num / den : 0.0; };
  for (int k = 0; k < classes; ++k) {
    const double tp = m.confusion(k, k);
    const double p = ratio(tp, m.confusion.col(k).sum());
    const double r = ratio(tp, m.confusion.row(k).sum());
    m.precision += p;
    m.recall += r;
    m.f1 += ratio(2.0 * p * r, p + r);
  }
  const double k = static_cast<double>(classes);
  m.accuracy = 100.0 * m.confusion.trace() / static_cast<double>(truth.size());
  m.precision *= 100.0 / k;
  m.recall *= 100.0 / k;
  m.f1 *= 100.0 / k;
  return m;
}

std::vector<int> predict_labels(const ClassifierModel& model, const Tensor& inputs, int batch_size) {
  const Tensor logits = batched_inference(inputs, batch_size, [&](const Tensor& x) { return model(x); });
  std::vector<int> labels;
  const auto m = logits.matrix();
  for (Index i = 0; i < m.rows(); ++i) {
    Index best = 0;
    m.row(i).maxCoeff(&best);
    labels.push_back(static_cast<int>(best));
  }
  return labels;
}

ClassifyResult finetune_classify(const Encoder* pretrained, const ModelConfig& model, const ClassifyData& data,
                                 const TrainConfig& train) {
  train.validate();
  check_samples(data.train_inputs, model);
  if (static_cast<Index>(data.train_labels.size()) != data.train_inputs.dim(0)) {
    fail(ErrorKind::kDimension, "train label count differs from the sample count");
  }
  if (data.test_inputs.rank() != 3 || data.test_inputs.dim(0) < 1) fail(ErrorKind::kInsufficientData, "no test samples");
  std::vector<int> seen(static_cast<std::size_t>(std::max(data.classes, 0)), 0);
  for (int label : data.train_labels) {
    if (label < 0 || label >= data.classes) fail(ErrorKind::kConfig, "label " + std::to_string(label) + " outside [0, K)");
    seen[static_cast<std::size_t>(label)] = 1;
  }
  for (int k = 0; k < data.classes; ++k)
    if (!seen[static_cast<std::size_t>(k)]) fail(ErrorKind::kConfig, "class " + std::to_string(k) + " is absent from the train split");

  ClassifyResult result{ClassifierModel(fresh_encoder(pretrained, model, train.seed), data.classes, train.seed), {}, {}};
  const std::vector<Tensor> params = tensors_of(result.model.parameters());
  Adam opt(params, train.learning_rate);
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    const auto batches = epoch_batches(data.train_inputs.dim(0), train.batch_size, train.seed, epoch);
    double epoch_total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor x = index_select(data.train_inputs, batches[b]);
      Eigen::VectorXd onehot = Eigen::VectorXd::Zero(static_cast<Index>(batches[b].size()) * data.classes);
      for (std::size_t i = 0; i < batches[b].size(); ++i) {
        onehot[static_cast<Index>(i) * data.classes + data.train_labels[static_cast<std::size_t>(batches[b][i])]] = 1.0;
      }
      const Tensor target = Tensor::from_vector({static_cast<Index>(batches[b].size()), data.classes}, onehot);
      epoch_total += guarded_step(opt, params, epoch, b, [&](std::string& stage) {
               const Tensor logits = result.model(x);
               stage = "loss_ce";
               const Tensor loss = -mean(sum(log_softmax(logits, -1) * target, 1));
               LossReport report;
               report.rec = report.total = loss.item();
               return std::pair<Tensor, LossReport>{loss, report};
             }).total;
    }
    result.epoch_loss.push_back(epoch_total / static_cast<double>(batches.size()));
  }
  result.test = classification_metrics(predict_labels(result.model, data.test_inputs, train.batch_size),
                                       data.test_labels, data.classes);
  return result;
}

std::vector<GridCell> grid_cells(const std::vector<GridAxis>& axes) {
  std::vector<GridCell> cells{{}};
  for (const auto& axis : axes) {
    if (axis.values.empty()) fail(ErrorKind::kConfig, "grid axis " + axis.key + " has no values");
    std::vector<GridCell> next;
    for (const auto& cell : cells)
      for (const auto& value : axis.values) {
        GridCell c = cell;
        c.emplace_back(axis.key, value);
        next.push_back(std::move(c));
      }
    cells = std::move(next);
  }
  return cells;
}

std::vector<GridRow> grid_search(const std::vector<GridAxis>& axes,
                                 const std::function<std::map<std::string, double>(const GridCell&)>& run_cell,
                                 const std::vector<std::size_t>& order) {
  const auto cells = grid_cells(axes);
  std::vector<std::size_t> schedule = order;
  if (schedule.empty()) {
    schedule.resize(cells.size());
    std::iota(schedule.begin(), schedule.end(), std::size_t{0});
  }
  std::vector<std::size_t> sorted = schedule;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != i || sorted.size() != cells.size()) fail(ErrorKind::kContract, "grid order is not a permutation of the cells");

  std::vector<GridRow> rows(cells.size());
  for (std::size_t idx : schedule) {
    for (const auto& [key, value] : cells[idx]) rows[idx].cell.push_back(value);
    rows[idx].metrics = run_cell(cells[idx]);
  }
  return rows;
}

std::string grid_csv(const std::vector<GridAxis>& axes, const std::vector<GridRow>& rows) {
  std::ostringstream out;
  std::vector<std::string> metric_names;
  if (!rows.empty())
    for (const auto& [name, value] : rows.front().metrics) metric_names.push_back(name);
  for (std::size_t i = 0; i < axes.size(); ++i) out << (i ? "," : "") << axes[i].key;
  for (const auto& name : metric_names) out << ',' << name;
  out << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.cell.size(); ++i) out << (i ? "," : "") << row.cell[i];
    for (const auto& name : metric_names) out << ',' << format_double(row.metrics.at(name));
    out << '\n';
  }
  return out.str();
}

}  // namespace simmtm
