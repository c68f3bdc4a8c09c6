#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "simmtm/losses.hpp"
#include "simmtm/model.hpp"
#include "simmtm/training.hpp"

namespace simmtm {

inline constexpr int kCheckpointVersion = 1;

enum class CheckpointKind { kPretrain, kForecast, kClassify };

std::string to_string(CheckpointKind kind);

// Layout: a text header
//   SIMMTM-CHECKPOINT <version>
//   key=value lines (kind, provenance, model config)
//   tensor <name> <dims...>    one per tensor, payload order
//   payload_bytes=<n>
//   checksum=<fnv1a-64 of the payload, hex>
//   END
// followed by the tensors as raw little-endian 64-bit doubles, row-major.
struct Checkpoint {
  CheckpointKind kind = CheckpointKind::kPretrain;
  ModelConfig model;
  Index horizon = 0;  // forecast
  int classes = 0;    // classify
  std::uint64_t seed = 0;
  std::string created_by;  // subcommand that wrote it
  NamedTensors tensors;    // pretrain also carries loss.a and loss.b
};

Checkpoint make_checkpoint(const PretrainResult& result, std::uint64_t seed, const std::string& created_by);
Checkpoint make_checkpoint(const ForecastModel& model, std::uint64_t seed, const std::string& created_by);
Checkpoint make_checkpoint(const ClassifierModel& model, std::uint64_t seed, const std::string& created_by);

std::string serialize_checkpoint(const Checkpoint& ckpt);
// Validates version, tensor directory against the header model config
// (kShapeMismatch names the tensor), payload length and checksum before
// returning anything.
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Encoder weights from any checkpoint kind.
Encoder restore_encoder(const Checkpoint& ckpt);
PretrainResult restore_pretrain(const Checkpoint& ckpt);
ForecastModel restore_forecast(const Checkpoint& ckpt);
ClassifierModel restore_classifier(const Checkpoint& ckpt);

}  // namespace simmtm
