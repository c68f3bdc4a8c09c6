#include "simmtm/pipeline.hpp"

#include <fstream>
#include <sstream>

#include "simmtm/analysis.hpp"
#include "simmtm/random.hpp"
#include "simmtm/synthetic.hpp"

namespace simmtm {

namespace {

// Stream ids for seeds derived from the run seed.
constexpr std::uint64_t kDemoMaskStream = 7001;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "failed writing " + path.string());
}

class Run {
public:
  Run(std::string subcommand, const RunConfig& cfg) : cfg_(cfg) {
    report_.subcommand = std::move(subcommand);
    cfg_.validate();
    std::error_code ec;
    std::filesystem::create_directories(cfg_.output_dir, ec);
    if (ec) fail(ErrorKind::kIo, "cannot create output directory " + cfg_.output_dir.string() + ": " + ec.message());
    write("_config.cfg", config_text(cfg_));
  }

  const RunConfig& cfg() const { return cfg_; }

  std::filesystem::path path(const std::string& suffix) const {
    return cfg_.output_dir / artifact_name(report_.subcommand, cfg_.seed, suffix);
  }

  void write(const std::string& suffix, const std::string& text) {
    write_text(path(suffix), text);
    report_.artifacts.push_back(path(suffix));
  }

  void record(const std::string& suffix) { report_.artifacts.push_back(path(suffix)); }

  void save(const std::string& suffix, const Checkpoint& ck) {
    save_checkpoint(ck, path(suffix));
    report_.artifacts.push_back(path(suffix));
  }

  RunReport finish(std::map<std::string, double> metrics) {
    report_.metrics = std::move(metrics);
    write("_metrics.txt", metrics_text(report_.metrics));
    return report_;
  }

private:
  RunConfig cfg_;
  RunReport report_;
};

std::string loss_log_csv(const std::vector<double>& losses) {
  std::string out = "epoch,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out += std::to_string(i + 1) + "," + format_double(losses[i]) + "\n";
  return out;
}

std::string pretrain_log_csv(const std::vector<EpochLog>& log) {
  std::string out = epoch_log_header() + "\n";
  for (const EpochLog& e : log) out += format_epoch_log(e) + "\n";
  return out;
}

EpochCallback progress_printer(std::ostream* progress) {
  if (progress == nullptr) return {};
  return [progress](const EpochLog& e) { *progress << format_epoch_log(e) << '\n' << std::flush; };
}

// Encoder from cfg.checkpoint (any kind) after checking it fits the run.
std::optional<Encoder> checkpoint_encoder(const RunConfig& cfg, const ModelConfig& model) {
  if (cfg.checkpoint.empty()) return std::nullopt;
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  if (!(ck.model == model)) {
    fail(ErrorKind::kConfig, "checkpoint " + cfg.checkpoint.string() +
                                 " was written for a different model config (compare model.* and data keys)");
  }
  return restore_encoder(ck);
}

std::map<std::string, double> forecast_report(const ForecastModel& model, const Tensor& inputs, const Tensor& targets,
                                              int batch_size, const std::string& prefix) {
  const ForecastMetrics m = forecast_metrics(predict(model, inputs, batch_size), targets);
  return {{prefix + "mse", m.mse}, {prefix + "mae", m.mae}};
}

std::map<std::string, double> classify_report(const ClassifierModel& model, const Tensor& inputs,
                                              const std::vector<int>& labels, int classes, int batch_size,
                                              const std::string& prefix) {
  const ClassificationMetrics m = classification_metrics(predict_labels(model, inputs, batch_size), labels, classes);
  return {{prefix + "accuracy", m.accuracy},
          {prefix + "precision", m.precision},
          {prefix + "recall", m.recall},
          {prefix + "f1", m.f1}};
}

std::string confusion_csv(const Eigen::MatrixXi& confusion) {
  std::ostringstream out;
  out << "true\\predicted";
  for (Index k = 0; k < confusion.cols(); ++k) out << ',' << k;
  out << '\n';
  for (Index i = 0; i < confusion.rows(); ++i) {
    out << i;
    for (Index k = 0; k < confusion.cols(); ++k) out << ',' << confusion(i, k);
    out << '\n';
  }
  return out.str();
}

Tensor first_rows(const Tensor& t, Index count) {
  return count >= t.dim(0) ? t : slice(t, 0, 0, count);
}

}  // namespace

std::string artifact_name(const std::string& subcommand, std::uint64_t seed, const std::string& suffix) {
  return subcommand + "_seed" + std::to_string(seed) + suffix;
}

std::string metrics_text(const std::map<std::string, double>& metrics) {
  std::string out;
  for (const auto& [key, value] : metrics) out += key + "=" + format_double(value) + "\n";
  return out;
}

RawDataset load_dataset(const RunConfig& cfg) {
  if (!cfg.data_path.empty()) {
    CsvSchema schema;
    schema.label_column = cfg.label_column;
    return load_csv(cfg.data_path, schema);
  }
  SynthSpec spec = cfg.synthetic;
  spec.seed = cfg.seed;
  spec.sample_length = cfg.sample_length;
  const bool classify_kind = spec.kind == SynthKind::kClassWaveforms;
  if (classify_kind != (cfg.task == Task::kClassify)) {
    fail(ErrorKind::kConfig, "synthetic.kind=" + to_string(spec.kind) + " does not fit task=" + to_string(cfg.task));
  }
  return generate(spec);
}

ModelConfig effective_model(const RunConfig& cfg, Index data_channels) {
  ModelConfig model = cfg.model;
  if (cfg.task == Task::kForecast) {
    model.input_length = cfg.input_length;
    model.input_channels = 1;
  } else {
    model.input_length = cfg.sample_length;
    model.input_channels = data_channels;
  }
  model.validate();
  return model;
}

PretrainOptions pretrain_options(const RunConfig& cfg, const ModelConfig& model) {
  PretrainOptions options;
  options.model = model;
  options.mask = cfg.mask;
  options.aggregation = cfg.aggregation;
  options.train = cfg.pretrain;
  options.train.seed = cfg.seed;
  options.losses = cfg.losses;
  options.calibrate_weights = cfg.calibrate_weights;
  return options;
}

TrainConfig finetune_options(const RunConfig& cfg) {
  TrainConfig train = cfg.finetune;
  train.seed = cfg.seed;
  return train;
}

ForecastSplits prepare_forecast(const RunConfig& cfg) {
  if (cfg.task != Task::kForecast) fail(ErrorKind::kConfig, "this subcommand needs task=forecast");
  const RawDataset raw = load_dataset(cfg);
  SplitSpec split = cfg.split;
  split.chronological = true;
  const ChronologicalSplit parts = split_chronological(raw, split);
  const Normalization stats = fit_normalization(parts.train);
  const RawDataset train = standardize(parts.train, stats);
  const RawDataset val = standardize(parts.val, stats);
  const RawDataset test = standardize(parts.test, stats);

  ForecastSplits out;
  out.channels = raw.channels();
  out.pretrain_samples = flatten_channels(make_windows(train, cfg.input_length, 0, cfg.pretrain_stride).inputs.values);
  const WindowSet tr = make_windows(train, cfg.input_length, cfg.horizon, cfg.finetune_stride);
  const WindowSet va = make_windows(val, cfg.input_length, cfg.horizon, 1);
  const WindowSet te = make_windows(test, cfg.input_length, cfg.horizon, 1);
  out.data = ForecastData{tr.inputs.values, tr.targets, te.inputs.values, te.targets};
  out.val_inputs = va.inputs.values;
  out.val_targets = va.targets;
  return out;
}

ClassifySplits prepare_classify(const RunConfig& cfg) {
  if (cfg.task != Task::kClassify) fail(ErrorKind::kConfig, "this subcommand needs task=classify");
  const RawDataset raw = load_dataset(cfg);
  const LabeledSamples samples = segment_samples(raw, cfg.sample_length);
  const SampleSplit parts = split_samples(samples, cfg.split, cfg.seed);
  const Normalization stats = fit_normalization(parts.train);
  const LabeledSamples train = standardize(parts.train, stats);
  const LabeledSamples val = standardize(parts.val, stats);
  const LabeledSamples test = standardize(parts.test, stats);

  ClassifySplits out;
  out.pretrain_samples = train.values;
  out.data = ClassifyData{train.values, train.labels, test.values, test.labels, raw.num_classes()};
  out.val_inputs = val.values;
  out.val_labels = val.labels;
  return out;
}

RunReport run_pretrain(const RunConfig& config, std::ostream* progress) {
  Run run("pretrain", config);
  const RunConfig& cfg = run.cfg();
  Tensor samples;
  Index channels = 1;
  if (cfg.task == Task::kForecast) {
    samples = prepare_forecast(cfg).pretrain_samples;
  } else {
    samples = prepare_classify(cfg).pretrain_samples;
    channels = samples.dim(2);
  }
  const PretrainResult result =
      pretrain(samples, pretrain_options(cfg, effective_model(cfg, channels)), progress_printer(progress));
  run.save(".ckpt", make_checkpoint(result, cfg.seed, "pretrain"));
  run.write("_log.csv", pretrain_log_csv(result.log));
  const LossReport& last = result.log.back().loss;
  return run.finish({{"loss_rec", last.rec},
                     {"loss_con", last.con},
                     {"weight_rec", last.weight_rec},
                     {"weight_con", last.weight_con},
                     {"total", last.total},
                     {"samples", static_cast<double>(samples.dim(0))}});
}

RunReport run_finetune_forecast(const RunConfig& config, std::ostream* progress) {
  Run run("finetune-forecast", config);
  const RunConfig& cfg = run.cfg();
  const ForecastSplits splits = prepare_forecast(cfg);
  const ModelConfig model = effective_model(cfg, 1);
  const std::optional<Encoder> encoder = checkpoint_encoder(cfg, model);
  const TrainConfig train = finetune_options(cfg);
  const ForecastResult result =
      finetune_forecast(encoder ? &*encoder : nullptr, model, cfg.horizon, splits.data, train);
  if (progress != nullptr) {
    for (std::size_t i = 0; i < result.epoch_loss.size(); ++i) {
      *progress << "epoch " << i + 1 << " loss " << format_double(result.epoch_loss[i]) << '\n';
    }
  }
  run.save(".ckpt", make_checkpoint(result.model, cfg.seed, "finetune-forecast"));
  run.write("_log.csv", loss_log_csv(result.epoch_loss));
  std::map<std::string, double> metrics = {{"mse", result.test.mse},
                                           {"mae", result.test.mae},
                                           {"pretrained", encoder ? 1.0 : 0.0},
                                           {"test_windows", static_cast<double>(splits.data.test_inputs.dim(0))}};
  metrics.merge(forecast_report(result.model, splits.val_inputs, splits.val_targets, train.batch_size, "val_"));
  return run.finish(std::move(metrics));
}

RunReport run_finetune_classify(const RunConfig& config, std::ostream* progress) {
  Run run("finetune-classify", config);
  const RunConfig& cfg = run.cfg();
  const ClassifySplits splits = prepare_classify(cfg);
  const ModelConfig model = effective_model(cfg, splits.data.train_inputs.dim(2));
  const std::optional<Encoder> encoder = checkpoint_encoder(cfg, model);
  const TrainConfig train = finetune_options(cfg);
  const ClassifyResult result = finetune_classify(encoder ? &*encoder : nullptr, model, splits.data, train);
  if (progress != nullptr) {
    for (std::size_t i = 0; i < result.epoch_loss.size(); ++i) {
      *progress << "epoch " << i + 1 << " loss " << format_double(result.epoch_loss[i]) << '\n';
    }
  }
  run.save(".ckpt", make_checkpoint(result.model, cfg.seed, "finetune-classify"));
  run.write("_log.csv", loss_log_csv(result.epoch_loss));
  run.write("_confusion.csv", confusion_csv(result.test.confusion));
  std::map<std::string, double> metrics = {{"accuracy", result.test.accuracy},
                                           {"precision", result.test.precision},
                                           {"recall", result.test.recall},
                                           {"f1", result.test.f1},
                                           {"pretrained", encoder ? 1.0 : 0.0},
                                           {"test_samples", static_cast<double>(splits.data.test_labels.size())}};
  if (!splits.val_labels.empty()) {
    metrics.merge(classify_report(result.model, splits.val_inputs, splits.val_labels, splits.data.classes,
                                  train.batch_size, "val_"));
  }
  return run.finish(std::move(metrics));
}

RunReport run_evaluate(const RunConfig& config, std::ostream*) {
  Run run("evaluate", config);
  const RunConfig& cfg = run.cfg();
  if (cfg.checkpoint.empty()) fail(ErrorKind::kConfig, "evaluate needs --checkpoint");
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  const int batch = cfg.finetune.batch_size;
  if (ck.kind == CheckpointKind::kForecast) {
    const ForecastSplits splits = prepare_forecast(cfg);
    const ForecastModel model = restore_forecast(ck);
    if (!(ck.model == effective_model(cfg, 1)) || ck.horizon != cfg.horizon) {
      fail(ErrorKind::kConfig, "checkpoint does not match data.input_length / data.horizon / model.* of this run");
    }
    const ForecastMetrics m = forecast_metrics(predict(model, splits.data.test_inputs, batch), splits.data.test_targets);
    return run.finish({{"mse", m.mse}, {"mae", m.mae}});
  }
  if (ck.kind == CheckpointKind::kClassify) {
    const ClassifySplits splits = prepare_classify(cfg);
    const ClassifierModel model = restore_classifier(ck);
    if (!(ck.model == effective_model(cfg, splits.data.test_inputs.dim(2))) || ck.classes != splits.data.classes) {
      fail(ErrorKind::kConfig, "checkpoint does not match the data and model.* of this run");
    }
    const ClassificationMetrics m = classification_metrics(predict_labels(model, splits.data.test_inputs, batch),
                                                           splits.data.test_labels, splits.data.classes);
    run.write("_confusion.csv", confusion_csv(m.confusion));
    return run.finish({{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}});
  }
  fail(ErrorKind::kConfig, "evaluate needs a fine-tuned checkpoint, got kind " + to_string(ck.kind));
}

RunReport run_grid_search(const RunConfig& config, std::ostream* progress) {
  Run run("grid-search", config);
  const RunConfig& base = run.cfg();
  if (base.grid_axes.empty()) fail(ErrorKind::kConfig, "grid-search needs grid.axes");
  const std::vector<GridAxis> axes = parse_grid_axes(base.grid_axes);

  auto run_cell = [&](const GridCell& cell) {
    RunConfig cfg = base;
    for (const auto& [key, value] : cell) config_set(cfg, key, value);
    cfg.validate();
    if (progress != nullptr) {
      *progress << "cell";
      for (const auto& [key, value] : cell) *progress << ' ' << key << '=' << value;
      *progress << '\n' << std::flush;
    }
    const TrainConfig train = finetune_options(cfg);
    std::map<std::string, double> metrics;
    if (cfg.task == Task::kForecast) {
      const ForecastSplits splits = prepare_forecast(cfg);
      const ModelConfig model = effective_model(cfg, 1);
      const PretrainResult pre = pretrain(splits.pretrain_samples, pretrain_options(cfg, model));
      const ForecastResult result = finetune_forecast(&pre.network.encoder, model, cfg.horizon, splits.data, train);
      metrics = {{"test_mse", result.test.mse}, {"test_mae", result.test.mae}};
      metrics.merge(forecast_report(result.model, splits.val_inputs, splits.val_targets, train.batch_size, "val_"));
    } else {
      const ClassifySplits splits = prepare_classify(cfg);
      const ModelConfig model = effective_model(cfg, splits.data.train_inputs.dim(2));
      const PretrainResult pre = pretrain(splits.pretrain_samples, pretrain_options(cfg, model));
      const ClassifyResult result = finetune_classify(&pre.network.encoder, model, splits.data, train);
      metrics = {{"test_accuracy", result.test.accuracy}, {"test_f1", result.test.f1}};
      if (!splits.val_labels.empty()) {
        metrics.merge(classify_report(result.model, splits.val_inputs, splits.val_labels, splits.data.classes,
                                      train.batch_size, "val_"));
      }
    }
    return metrics;
  };

  const std::vector<GridRow> rows = grid_search(axes, run_cell);
  run.write(".csv", grid_csv(axes, rows));
  return run.finish({{"cells", static_cast<double>(rows.size())}});
}

RunReport run_analyze_cka(const RunConfig& config, std::ostream*) {
  Run run("analyze-cka", config);
  const RunConfig& cfg = run.cfg();
  if (cfg.checkpoint.empty() || cfg.finetuned.empty()) {
    fail(ErrorKind::kConfig, "analyze-cka needs --checkpoint (pre-trained) and --analysis.finetuned");
  }
  const Encoder pretrained = restore_encoder(load_checkpoint(cfg.checkpoint));
  const Encoder finetuned = restore_encoder(load_checkpoint(cfg.finetuned));
  Tensor probe;
  if (cfg.task == Task::kForecast) {
    probe = flatten_channels(prepare_forecast(cfg).data.test_inputs);
  } else {
    probe = prepare_classify(cfg).data.test_inputs;
  }
  probe = first_rows(probe, cfg.probe_samples);
  if (probe.dim(1) != pretrained.config().input_length || probe.dim(2) != pretrained.config().input_channels) {
    fail(ErrorKind::kConfig, "probe data does not fit the checkpoint encoder input shape");
  }
  const RepresentationGap gap = representation_gap(pretrained, finetuned, probe);
  run.write("_report.txt", "first_layer=" + gap.pretrained.first_layer + "\nlast_layer=" + gap.pretrained.last_layer +
                               "\ncka_pretrained_percent=" + format_percent(gap.pretrained.cka_first_last) +
                               "\ncka_finetuned_percent=" + format_percent(gap.finetuned.cka_first_last) +
                               "\ngap_percent=" + format_percent(gap.gap) + "\n");
  return run.finish({{"cka_pretrained", gap.pretrained.cka_first_last},
                     {"cka_finetuned", gap.finetuned.cka_first_last},
                     {"gap", gap.gap},
                     {"samples", static_cast<double>(gap.pretrained.samples)}});
}

RunReport run_reconstruct_demo(const RunConfig& config, std::ostream* progress) {
  Run run("reconstruct-demo", config);
  const RunConfig& cfg = run.cfg();
  if (cfg.checkpoint.empty()) fail(ErrorKind::kConfig, "reconstruct-demo needs --checkpoint (pre-trained SimMTM)");
  const PretrainResult simmtm = restore_pretrain(load_checkpoint(cfg.checkpoint));

  Tensor train_samples, held_out;
  Index channels = 1;
  if (cfg.task == Task::kForecast) {
    const ForecastSplits splits = prepare_forecast(cfg);
    train_samples = splits.pretrain_samples;
    held_out = flatten_channels(splits.data.test_inputs);
  } else {
    const ClassifySplits splits = prepare_classify(cfg);
    train_samples = splits.pretrain_samples;
    held_out = splits.data.test_inputs;
    channels = held_out.dim(2);
  }
  const ModelConfig model = effective_model(cfg, channels);
  if (!(simmtm.network.encoder.config() == model)) {
    fail(ErrorKind::kConfig, "checkpoint was written for a different model config");
  }
  held_out = first_rows(held_out, cfg.probe_samples);

  // Same encoder/decoder shape and training budget, one masked variant.
  const PretrainResult direct =
      pretrain_direct(train_samples, pretrain_options(cfg, model), progress_printer(progress));
  run.save("_direct.ckpt", make_checkpoint(direct, cfg.seed, "reconstruct-demo"));

  MaskConfig mask = cfg.mask;
  mask.seed = derive_seed(cfg.seed, kDemoMaskStream);
  const MaskedSet masked = apply_mask(held_out, mask);
  const ReconstructionDemo demo = reconstruction_demo(held_out, masked, simmtm.network, direct.network, cfg.aggregation);
  run.write(".csv", demo.csv);
  return run.finish({{"simmtm_mse", demo.simmtm_mse},
                     {"direct_mse", demo.direct_mse},
                     {"samples", static_cast<double>(held_out.dim(0))}});
}

RunReport run_generate_synthetic(const RunConfig& config, std::ostream*) {
  Run run("generate-synthetic", config);
  const RunConfig& cfg = run.cfg();
  RunConfig synthetic = cfg;
  synthetic.data_path.clear();
  const RawDataset data = load_dataset(synthetic);
  write_csv(data, run.path(".csv"));
  run.record(".csv");
  return run.finish({{"rows", static_cast<double>(data.length())}, {"channels", static_cast<double>(data.channels())}});
}

std::vector<std::string> subcommands() {
  return {"pretrain",    "finetune-forecast", "finetune-classify", "evaluate",
          "grid-search", "analyze-cka",       "reconstruct-demo",  "generate-synthetic"};
}

RunReport run_subcommand(const std::string& name, const RunConfig& cfg, std::ostream* progress) {
  if (name == "pretrain") return run_pretrain(cfg, progress);
  if (name == "finetune-forecast") return run_finetune_forecast(cfg, progress);
  if (name == "finetune-classify") return run_finetune_classify(cfg, progress);
  if (name == "evaluate") return run_evaluate(cfg, progress);
  if (name == "grid-search") return run_grid_search(cfg, progress);
  if (name == "analyze-cka") return run_analyze_cka(cfg, progress);
  if (name == "reconstruct-demo") return run_reconstruct_demo(cfg, progress);
  if (name == "generate-synthetic") return run_generate_synthetic(cfg, progress);
  fail(ErrorKind::kConfig, "unknown subcommand " + name);
}

}  // namespace simmtm
