#include "simmtm/model.hpp"

#include <cmath>
#include <map>

#include "simmtm/data.hpp"
#include "simmtm/random.hpp"

namespace simmtm {

void ModelConfig::validate() const {
  if (e_layers < 1) fail(ErrorKind::kConfig, "model.e_layers must be >= 1");
  if (d_model < 1 || d_ff < 1) fail(ErrorKind::kConfig, "model widths must be positive");
  if (input_length < 1 || input_channels < 1) fail(ErrorKind::kConfig, "model input shape must be positive");
  if (encoder == EncoderKind::kTransformer) {
    if (n_heads < 1 || d_model % n_heads != 0) fail(ErrorKind::kConfig, "model.d_model must be divisible by n_heads");
  } else if (kernel_size < 1) {
    fail(ErrorKind::kConfig, "model.kernel_size must be >= 1");
  }
}

Index parameter_count(const NamedTensors& params) {
  Index total = 0;
  for (const auto& [name, t] : params) total += t.numel();
  return total;
}

namespace {

Tensor xavier(Shape shape, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Eigen::VectorXd v(numel(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor::from_vector(std::move(shape), v, true);
}

Tensor ones(Index n) { return Tensor::full({n}, 1.0, true); }
Tensor zeros(Index n) { return Tensor::zeros({n}, true); }

}  // namespace

Linear::Linear(Index in, Index out, std::mt19937_64& rng)
    : weight(xavier({in, out}, in, out, rng)), bias(Tensor::zeros({out}, true)) {}

Tensor Linear::operator()(const Tensor& x) const { return matmul(x, weight) + bias; }

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Tensor sinusoidal_positions(Index length, Index d_model) {
  Eigen::VectorXd v(length * d_model);
  for (Index t = 0; t < length; ++t)
    for (Index i = 0; i < d_model; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model));
      const double angle = static_cast<double>(t) * freq;
      v[t * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return Tensor::from_vector({length, d_model}, v);
}

Encoder::Encoder(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(derive_seed(seed, 0));
  const Index d = cfg_.d_model;
  if (cfg_.encoder == EncoderKind::kTransformer) {
    embedding_ = Linear(cfg_.input_channels, d, rng);
    positions_ = sinusoidal_positions(cfg_.input_length, d);
    for (int l = 0; l < cfg_.e_layers; ++l) {
      AttentionLayer layer;
      layer.query = Linear(d, d, rng);
      layer.key = Linear(d, d, rng);
      layer.value = Linear(d, d, rng);
      layer.out = Linear(d, d, rng);
      layer.norm1_gain = ones(d);
      layer.norm1_bias = zeros(d);
      layer.ff1 = Linear(d, cfg_.d_ff, rng);
      layer.ff2 = Linear(cfg_.d_ff, d, rng);
      layer.norm2_gain = ones(d);
      layer.norm2_bias = zeros(d);
      attention_.push_back(std::move(layer));
    }
  } else {
    const Index k = cfg_.kernel_size;
    stem_weight_ = xavier({k, cfg_.input_channels, d}, k * cfg_.input_channels, k * d, rng);
    stem_bias_ = zeros(d);
    for (int l = 0; l < cfg_.e_layers; ++l) {
      ResidualBlock block;
      block.conv1_weight = xavier({k, d, d}, k * d, k * d, rng);
      block.conv1_bias = zeros(d);
      block.norm1_gain = ones(d);
      block.norm1_bias = zeros(d);
      block.conv2_weight = xavier({k, d, d}, k * d, k * d, rng);
      block.conv2_bias = zeros(d);
      block.norm2_gain = ones(d);
      block.norm2_bias = zeros(d);
      blocks_.push_back(std::move(block));
    }
  }
}

Tensor Encoder::embed(const Tensor& x) const {
  if (x.rank() != 3 || x.dim(1) != cfg_.input_length || x.dim(2) != cfg_.input_channels) {
    fail(ErrorKind::kDimension, "encoder expects [D, " + std::to_string(cfg_.input_length) + ", " +
                                    std::to_string(cfg_.input_channels) + "], got " + shape_string(x.shape()));
  }
  if (cfg_.encoder == EncoderKind::kTransformer) return embedding_(x) + positions_;
  return conv1d(x, stem_weight_, stem_bias_);
}

Tensor Encoder::attention_layer(const AttentionLayer& layer, const Tensor& h) const {
  const Index rows = h.dim(0), len = h.dim(1), d = cfg_.d_model, heads = cfg_.n_heads, dh = d / heads;
  // [D, L, d] -> [D, H, L, dh]
  auto split_heads = [&](const Tensor& t) { return permute(reshape(t, {rows, len, heads, dh}), {0, 2, 1, 3}); };
  // Pre-norm residual layout. With norms after the residual sum, sum(Z)
  // would be flat in every upstream parameter at unit gains.
  const Tensor a = layer_norm(h, layer.norm1_gain, layer.norm1_bias);
  const Tensor q = split_heads(layer.query(a));
  // A key bias shifts every score of a query by the same amount and cancels
  // in the softmax, so keys are projected without it.
  const Tensor k = split_heads(matmul(a, layer.key.weight));
  const Tensor v = split_heads(layer.value(a));
  const Tensor scores = matmul(q, transpose(k, 2, 3)) * (1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor context = matmul(softmax(scores, -1), v);
  const Tensor merged = reshape(permute(context, {0, 2, 1, 3}), {rows, len, d});
  const Tensor h1 = h + layer.out(merged);
  const Tensor f = layer_norm(h1, layer.norm2_gain, layer.norm2_bias);
  return h1 + layer.ff2(gelu(layer.ff1(f)));
}

Tensor Encoder::residual_block(const ResidualBlock& block, const Tensor& h) const {
  Tensor y = relu(layer_norm(conv1d(h, block.conv1_weight, block.conv1_bias), block.norm1_gain, block.norm1_bias));
  y = layer_norm(conv1d(y, block.conv2_weight, block.conv2_bias), block.norm2_gain, block.norm2_bias);
  return relu(h + y);
}

std::vector<Tensor> Encoder::layer_outputs(const Tensor& x) const {
  std::vector<Tensor> outputs;
  Tensor h = embed(x);
  if (cfg_.encoder == EncoderKind::kTransformer) {
    for (const auto& layer : attention_) outputs.push_back(h = attention_layer(layer, h));
  } else {
    for (const auto& block : blocks_) outputs.push_back(h = residual_block(block, h));
  }
  return outputs;
}

Tensor Encoder::operator()(const Tensor& x) const { return layer_outputs(x).back(); }

NamedTensors Encoder::parameters() const {
  NamedTensors out;
  if (cfg_.encoder == EncoderKind::kTransformer) {
    out.emplace_back("encoder.embed.weight", embedding_.weight);
    out.emplace_back("encoder.embed.bias", embedding_.bias);
    for (std::size_t l = 0; l < attention_.size(); ++l) {
      const auto& layer = attention_[l];
      const std::string p = "encoder.layer" + std::to_string(l);
      layer.query.collect(p + ".query", out);
      out.emplace_back(p + ".key.weight", layer.key.weight);
      layer.value.collect(p + ".value", out);
      layer.out.collect(p + ".out", out);
      out.emplace_back(p + ".norm1.gain", layer.norm1_gain);
      out.emplace_back(p + ".norm1.bias", layer.norm1_bias);
      layer.ff1.collect(p + ".ff1", out);
      layer.ff2.collect(p + ".ff2", out);
      out.emplace_back(p + ".norm2.gain", layer.norm2_gain);
      out.emplace_back(p + ".norm2.bias", layer.norm2_bias);
    }
  } else {
    out.emplace_back("encoder.stem.weight", stem_weight_);
    out.emplace_back("encoder.stem.bias", stem_bias_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      const std::string p = "encoder.block" + std::to_string(l);
      out.emplace_back(p + ".conv1.weight", b.conv1_weight);
      out.emplace_back(p + ".conv1.bias", b.conv1_bias);
      out.emplace_back(p + ".norm1.gain", b.norm1_gain);
      out.emplace_back(p + ".norm1.bias", b.norm1_bias);
      out.emplace_back(p + ".conv2.weight", b.conv2_weight);
      out.emplace_back(p + ".conv2.bias", b.conv2_bias);
      out.emplace_back(p + ".norm2.gain", b.norm2_gain);
      out.emplace_back(p + ".norm2.bias", b.norm2_bias);
    }
  }
  return out;
}

Projector::Projector(Index length, std::mt19937_64& rng)
    : weight(xavier({length, 1}, length, 1, rng)), bias(Tensor::zeros({1}, true)) {}

Tensor Projector::operator()(const Tensor& z) const {
  const Tensor pooled = matmul(transpose(z, 1, 2), weight);  // [D, d, 1]
  return gelu(reshape(pooled, {z.dim(0), z.dim(2)}) + bias);
}

void Projector::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

ForecastHead::ForecastHead(Index length, Index d_model, Index horizon_, std::mt19937_64& rng)
    : proj(length * d_model, horizon_, rng), horizon(horizon_) {}

Tensor ForecastHead::operator()(const Tensor& z) const {
  return proj(reshape(z, {z.dim(0), z.dim(1) * z.dim(2)}));
}

ClassifierHead::ClassifierHead(Index d_model, int classes_, std::mt19937_64& rng)
    : proj(d_model, classes_, rng), classes(classes_) {
  if (classes_ < 2) fail(ErrorKind::kConfig, "classification needs K >= 2");
}

ReconstructionNetwork::ReconstructionNetwork(const ModelConfig& cfg, std::uint64_t seed) : encoder(cfg, seed) {
  std::mt19937_64 rng(derive_seed(seed, 1));
  projector = Projector(cfg.input_length, rng);
  decoder = Decoder(cfg.d_model, cfg.input_channels, rng);
}

NamedTensors ReconstructionNetwork::parameters() const {
  NamedTensors out = encoder.parameters();
  projector.collect("projector", out);
  decoder.collect("decoder", out);
  return out;
}

ForecastModel::ForecastModel(Encoder encoder_, Index horizon, std::uint64_t head_seed) : encoder(std::move(encoder_)) {
  if (encoder.config().input_channels != 1) {
    fail(ErrorKind::kConfig, "forecasting runs channel-independent streams; encoder input_channels must be 1");
  }
  if (horizon < 1) fail(ErrorKind::kConfig, "forecast horizon must be >= 1");
  std::mt19937_64 rng(derive_seed(head_seed, 2));
  head = ForecastHead(encoder.config().input_length, encoder.config().d_model, horizon, rng);
}

Tensor ForecastModel::operator()(const Tensor& x) const {
  const Index channels = x.dim(2);
  const Tensor streams = flatten_channels(x);
  const Tensor y = head(encoder(streams));  // [N*C, O]
  return unflatten_channels(reshape(y, {y.dim(0), y.dim(1), 1}), channels);
}

NamedTensors ForecastModel::parameters() const {
  NamedTensors out = encoder.parameters();
  head.collect("head", out);
  return out;
}

ClassifierModel::ClassifierModel(Encoder encoder_, int classes, std::uint64_t head_seed)
    : encoder(std::move(encoder_)) {
  std::mt19937_64 rng(derive_seed(head_seed, 3));
  head = ClassifierHead(encoder.config().d_model, classes, rng);
}

NamedTensors ClassifierModel::parameters() const {
  NamedTensors out = encoder.parameters();
  head.collect("head", out);
  return out;
}

void assign_parameters(const NamedTensors& target, const NamedTensors& source) {
  std::map<std::string, const Tensor*> lookup;
  for (const auto& [name, t] : source) lookup[name] = &t;
  for (const auto& [name, t] : target) {
    auto it = lookup.find(name);
    if (it == lookup.end()) fail(ErrorKind::kShapeMismatch, "missing parameter tensor " + name);
    if (it->second->shape() != t.shape()) {
      fail(ErrorKind::kShapeMismatch, "tensor " + name + " has shape " + shape_string(it->second->shape()) +
                                          ", expected " + shape_string(t.shape()));
    }
    Tensor dst = t;
    dst.mutable_values() = it->second->values();
  }
}

}  // namespace simmtm
