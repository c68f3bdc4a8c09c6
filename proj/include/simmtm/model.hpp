#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "simmtm/tensor.hpp"

namespace simmtm {

enum class EncoderKind { kTransformer, kConvResNet };

struct ModelConfig {
  EncoderKind encoder = EncoderKind::kTransformer;
  int e_layers = 2;
  int d_model = 16;
  int n_heads = 4;
  int d_ff = 32;
  int kernel_size = 3;  // conv_resnet only
  Index input_length = 64;
  Index input_channels = 1;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

Index parameter_count(const NamedTensors& params);

// Xavier-uniform weights [in, out], zero bias; applies along the last axis.
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(Index in, Index out, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Fixed sinusoidal position table [length, d_model].
Tensor sinusoidal_positions(Index length, Index d_model);

// Maps [D, L, C] to point-wise representations [D, L, d_model]. Every row of
// the D axis is processed independently.
class Encoder {
public:
  Encoder(const ModelConfig& cfg, std::uint64_t seed);

  Tensor operator()(const Tensor& x) const;
  // Output of every encoder layer, first to last.
  std::vector<Tensor> layer_outputs(const Tensor& x) const;
  NamedTensors parameters() const;
  const ModelConfig& config() const { return cfg_; }

private:
  struct AttentionLayer {
    Linear query, key, value, out;
    Tensor norm1_gain, norm1_bias;
    Linear ff1, ff2;
    Tensor norm2_gain, norm2_bias;
  };
  struct ResidualBlock {
    Tensor conv1_weight, conv1_bias, norm1_gain, norm1_bias;
    Tensor conv2_weight, conv2_bias, norm2_gain, norm2_bias;
  };

  Tensor embed(const Tensor& x) const;
  Tensor attention_layer(const AttentionLayer& layer, const Tensor& h) const;
  Tensor residual_block(const ResidualBlock& block, const Tensor& h) const;

  ModelConfig cfg_;
  Linear embedding_;  // transformer
  Tensor positions_;
  std::vector<AttentionLayer> attention_;
  Tensor stem_weight_, stem_bias_;  // conv_resnet
  std::vector<ResidualBlock> blocks_;
};

// One linear map over the time axis, shared by all feature channels, then
// GELU: [D, L, d_model] -> [D, d_model].
struct Projector {
  Tensor weight;  // [L, 1]
  Tensor bias;    // [1]

  Projector() = default;
  Projector(Index length, std::mt19937_64& rng);
  Tensor operator()(const Tensor& z) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

// Per-time-point linear map d_model -> C: [N, L, d_model] -> [N, L, C].
struct Decoder {
  Linear proj;

  Decoder() = default;
  Decoder(Index d_model, Index channels, std::mt19937_64& rng) : proj(d_model, channels, rng) {}
  Tensor operator()(const Tensor& z) const { return proj(z); }
  void collect(const std::string& prefix, NamedTensors& out) const { proj.collect(prefix + ".proj", out); }
};

// Flattens [N, L, d_model] and maps to the horizon: -> [N, O].
struct ForecastHead {
  Linear proj;
  Index horizon = 0;

  ForecastHead() = default;
  ForecastHead(Index length, Index d_model, Index horizon, std::mt19937_64& rng);
  Tensor operator()(const Tensor& z) const;
  void collect(const std::string& prefix, NamedTensors& out) const { proj.collect(prefix + ".proj", out); }
};

// Mean over time, then d_model -> K logits.
struct ClassifierHead {
  Linear proj;
  int classes = 0;

  ClassifierHead() = default;
  ClassifierHead(Index d_model, int classes, std::mt19937_64& rng);
  Tensor operator()(const Tensor& z) const { return proj(mean(z, 1)); }
  void collect(const std::string& prefix, NamedTensors& out) const { proj.collect(prefix + ".proj", out); }
};

// Encoder, projector and decoder used during pre-training.
struct ReconstructionNetwork {
  Encoder encoder;
  Projector projector;
  Decoder decoder;

  ReconstructionNetwork(const ModelConfig& cfg, std::uint64_t seed);
  NamedTensors parameters() const;
};

// Channel-independent forecaster: each variate runs through the encoder
// as its own univariate stream and the horizon is reassembled to [N, O, C].
struct ForecastModel {
  Encoder encoder;
  ForecastHead head;

  ForecastModel(Encoder encoder, Index horizon, std::uint64_t head_seed);
  Tensor operator()(const Tensor& x) const;
  NamedTensors parameters() const;
};

struct ClassifierModel {
  Encoder encoder;
  ClassifierHead head;

  ClassifierModel(Encoder encoder, int classes, std::uint64_t head_seed);
  Tensor operator()(const Tensor& x) const { return head(encoder(x)); }
  NamedTensors parameters() const;
};

// Copies values of `source` into the tensors of `target` by name; every
// target tensor must be present with the same shape.
void assign_parameters(const NamedTensors& target, const NamedTensors& source);

}  // namespace simmtm
