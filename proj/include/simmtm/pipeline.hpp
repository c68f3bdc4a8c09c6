#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "simmtm/checkpoint.hpp"
#include "simmtm/config.hpp"

namespace simmtm {

// Standardized forecasting splits. Pre-training sees only the training
// range, as channel-independent streams.
struct ForecastSplits {
  Tensor pretrain_samples;  // [N*C, L, 1]
  ForecastData data;        // train windows and test windows
  Tensor val_inputs, val_targets;
  Index channels = 0;
};

struct ClassifySplits {
  Tensor pretrain_samples;  // train samples [N, L, C]
  ClassifyData data;
  Tensor val_inputs;
  std::vector<int> val_labels;
};

RawDataset load_dataset(const RunConfig& cfg);
ForecastSplits prepare_forecast(const RunConfig& cfg);
ClassifySplits prepare_classify(const RunConfig& cfg);
// Model config with input length and channels taken from the data.
ModelConfig effective_model(const RunConfig& cfg, Index data_channels);
PretrainOptions pretrain_options(const RunConfig& cfg, const ModelConfig& model);
TrainConfig finetune_options(const RunConfig& cfg);

// "<subcommand>_seed<seed><suffix>"
std::string artifact_name(const std::string& subcommand, std::uint64_t seed, const std::string& suffix);

struct RunReport {
  std::string subcommand;
  std::map<std::string, double> metrics;
  std::vector<std::filesystem::path> artifacts;
};

// `key=value` per metric, keys sorted.
std::string metrics_text(const std::map<std::string, double>& metrics);

RunReport run_pretrain(const RunConfig& cfg, std::ostream* progress = nullptr);
RunReport run_finetune_forecast(const RunConfig& cfg, std::ostream* progress = nullptr);
RunReport run_finetune_classify(const RunConfig& cfg, std::ostream* progress = nullptr);
RunReport run_evaluate(const RunConfig& cfg, std::ostream* progress = nullptr);
RunReport run_grid_search(const RunConfig& cfg, std::ostream* progress = nullptr);
RunReport run_analyze_cka(const RunConfig& cfg, std::ostream* progress = nullptr);
RunReport run_reconstruct_demo(const RunConfig& cfg, std::ostream* progress = nullptr);
RunReport run_generate_synthetic(const RunConfig& cfg, std::ostream* progress = nullptr);

std::vector<std::string> subcommands();
RunReport run_subcommand(const std::string& name, const RunConfig& cfg, std::ostream* progress = nullptr);

}  // namespace simmtm
