#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "simmtm/data.hpp"
#include "simmtm/losses.hpp"
#include "simmtm/masking.hpp"
#include "simmtm/model.hpp"
#include "simmtm/similarity.hpp"
#include "simmtm/synthetic.hpp"
#include "simmtm/training.hpp"

namespace simmtm {

enum class Task { kForecast, kClassify };

// Effective settings of one run. Every field is addressable by a dotted key
// (`mask.ratio`, `pretrain.epochs`, ...); see config_keys().
struct RunConfig {
  std::uint64_t seed = 1;
  Task task = Task::kForecast;
  std::filesystem::path output_dir = "out";
  std::filesystem::path checkpoint;  // encoder source / model to evaluate
  std::filesystem::path finetuned;   // analyze-cka: fine-tuned checkpoint

  // Empty data_path means synthetic data generated from `synthetic` and seed.
  std::filesystem::path data_path;
  std::string label_column = "label";
  SplitSpec split;
  Index input_length = 64;
  Index horizon = 16;
  Index sample_length = 64;  // classification samples cut from a CSV
  Index pretrain_stride = 4;
  Index finetune_stride = 1;
  SynthSpec synthetic;

  ModelConfig model;  // input_length / input_channels are derived from the data
  MaskConfig mask;
  AggregationConfig aggregation;
  LossSwitches losses;
  bool calibrate_weights = true;
  TrainConfig pretrain{1e-3, 32, 50, 1};
  TrainConfig finetune{1e-4, 32, 10, 1};

  std::string grid_axes;  // "mask.ratio=0.25|0.5;mask.count=1|3"
  Index probe_samples = 64;

  // Value checks plus existence of every referenced input path.
  void validate() const;
};

std::vector<std::string> config_keys();
std::string config_get(const RunConfig& cfg, const std::string& key);
// Unknown keys and unparsable values raise kConfig.
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);
bool is_config_key(const std::string& key);

// `key=value` lines; blank lines and lines starting with '#' are skipped.
std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text);
void apply_config_text(RunConfig& cfg, const std::string& text);
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);

// Every key in canonical order; reading it back reproduces `cfg`.
std::string config_text(const RunConfig& cfg);

// Defaults, then SIMMTM_SEED (if set), then the file, then overrides in order.
RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

std::vector<GridAxis> parse_grid_axes(const std::string& spec);

std::string to_string(Task task);
std::string to_string(EncoderKind kind);
std::string to_string(MaskKind kind);
std::string to_string(CandidateSet set);
std::string to_string(SynthKind kind);

}  // namespace simmtm
