#include "simmtm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "simmtm/config.hpp"
#include "simmtm/data.hpp"

namespace simmtm {

namespace {

constexpr const char* kMagic = "SIMMTM-CHECKPOINT";

std::uint64_t fnv1a(const char* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    std::uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= ((v >> (8 * i)) & 0xffU) << (8 * (7 - i));
    return out;
  }
}

const std::vector<std::pair<std::string, CheckpointKind>> kKinds = {
    {"pretrain", CheckpointKind::kPretrain}, {"forecast", CheckpointKind::kForecast}, {"classify", CheckpointKind::kClassify}};

CheckpointKind parse_kind(const std::string& s) {
  for (const auto& [name, kind] : kKinds) {
    if (name == s) return kind;
  }
  fail(ErrorKind::kIntegrity, "checkpoint has unknown kind " + s);
}

// Tensor layout a checkpoint of this kind and config must contain.
NamedTensors expected_tensors(const Checkpoint& ck) {
  switch (ck.kind) {
    case CheckpointKind::kPretrain: {
      NamedTensors out = ReconstructionNetwork(ck.model, 0).parameters();
      out.emplace_back("loss.a", Tensor::scalar(0.0));
      out.emplace_back("loss.b", Tensor::scalar(0.0));
      return out;
    }
    case CheckpointKind::kForecast:
      return ForecastModel(Encoder(ck.model, 0), ck.horizon, 0).parameters();
    case CheckpointKind::kClassify:
      return ClassifierModel(Encoder(ck.model, 0), ck.classes, 0).parameters();
  }
  return {};
}

NamedTensors snapshot(const NamedTensors& params) {
  NamedTensors out;
  for (const auto& [name, t] : params) out.emplace_back(name, t.detach().clone());
  return out;
}

std::vector<std::pair<std::string, std::string>> model_entries(const ModelConfig& m) {
  return {{"model.encoder", to_string(m.encoder)},          {"model.e_layers", std::to_string(m.e_layers)},
          {"model.d_model", std::to_string(m.d_model)},      {"model.n_heads", std::to_string(m.n_heads)},
          {"model.d_ff", std::to_string(m.d_ff)},            {"model.kernel_size", std::to_string(m.kernel_size)},
          {"model.input_length", std::to_string(m.input_length)},
          {"model.input_channels", std::to_string(m.input_channels)}};
}

long long header_int(const std::map<std::string, std::string>& h, const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) fail(ErrorKind::kIntegrity, "checkpoint header lacks " + key);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    fail(ErrorKind::kIntegrity, "checkpoint header has malformed " + key + "=" + it->second);
  }
}

}  // namespace

std::string to_string(CheckpointKind kind) {
  for (const auto& [name, k] : kKinds) {
    if (k == kind) return name;
  }
  return "?";
}

Checkpoint make_checkpoint(const PretrainResult& result, std::uint64_t seed, const std::string& created_by) {
  Checkpoint ck;
  ck.kind = CheckpointKind::kPretrain;
  ck.model = result.network.encoder.config();
  ck.seed = seed;
  ck.created_by = created_by;
  ck.tensors = snapshot(result.network.parameters());
  ck.tensors.emplace_back("loss.a", result.weights.a.detach().clone());
  ck.tensors.emplace_back("loss.b", result.weights.b.detach().clone());
  return ck;
}

Checkpoint make_checkpoint(const ForecastModel& model, std::uint64_t seed, const std::string& created_by) {
  Checkpoint ck;
  ck.kind = CheckpointKind::kForecast;
  ck.model = model.encoder.config();
  ck.horizon = model.head.horizon;
  ck.seed = seed;
  ck.created_by = created_by;
  ck.tensors = snapshot(model.parameters());
  return ck;
}

Checkpoint make_checkpoint(const ClassifierModel& model, std::uint64_t seed, const std::string& created_by) {
  Checkpoint ck;
  ck.kind = CheckpointKind::kClassify;
  ck.model = model.encoder.config();
  ck.classes = model.head.classes;
  ck.seed = seed;
  ck.created_by = created_by;
  ck.tensors = snapshot(model.parameters());
  return ck;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string payload;
  for (const auto& [name, t] : ck.tensors) {
    for (const double v : t.values()) {
      const std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      char raw[8];
      std::memcpy(raw, &bits, 8);
      payload.append(raw, 8);
    }
  }
  std::ostringstream h;
  h << kMagic << ' ' << kCheckpointVersion << '\n';
  h << "kind=" << to_string(ck.kind) << '\n';
  h << "created_by=" << ck.created_by << '\n';
  h << "seed=" << ck.seed << '\n';
  for (const auto& [key, value] : model_entries(ck.model)) h << key << '=' << value << '\n';
  if (ck.kind == CheckpointKind::kForecast) h << "horizon=" << ck.horizon << '\n';
  if (ck.kind == CheckpointKind::kClassify) h << "classes=" << ck.classes << '\n';
  h << "tensors=" << ck.tensors.size() << '\n';
  for (const auto& [name, t] : ck.tensors) {
    h << "tensor " << name;
    for (const Index d : t.shape()) h << ' ' << d;
    h << '\n';
  }
  h << "payload_bytes=" << payload.size() << '\n';
  h << "checksum=" << hex(fnv1a(payload.data(), payload.size())) << '\n';
  h << "END\n";
  return h.str() + payload;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos) fail(ErrorKind::kIntegrity, "checkpoint header is truncated");
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  const std::string first = next_line();
  const std::string magic = std::string(kMagic) + ' ';
  if (first.rfind(magic, 0) != 0) fail(ErrorKind::kIntegrity, "not a SIMMTM checkpoint");
  if (first.substr(magic.size()) != std::to_string(kCheckpointVersion)) {
    fail(ErrorKind::kVersion, "checkpoint format version " + first.substr(magic.size()) + " is not supported (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
  }

  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, Shape>> directory;
  for (std::string line = next_line(); line != "END"; line = next_line()) {
    if (line.rfind("tensor ", 0) == 0) {
      std::istringstream in(line.substr(7));
      std::string name;
      in >> name;
      Shape shape;
      for (Index d; in >> d;) shape.push_back(d);
      if (!in.eof()) fail(ErrorKind::kIntegrity, "malformed tensor entry: " + line);
      directory.emplace_back(name, shape);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kIntegrity, "malformed checkpoint header line: " + line);
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }

  Checkpoint ck;
  if (!header.count("kind")) fail(ErrorKind::kIntegrity, "checkpoint header lacks kind");
  ck.kind = parse_kind(header["kind"]);
  ck.created_by = header["created_by"];
  ck.seed = static_cast<std::uint64_t>(header_int(header, "seed"));
  {
    RunConfig probe;
    for (const auto& [key, value] : model_entries(ModelConfig{})) {
      if (!header.count(key)) fail(ErrorKind::kIntegrity, "checkpoint header lacks " + key);
      if (key != "model.input_length" && key != "model.input_channels") config_set(probe, key, header[key]);
    }
    ck.model = probe.model;
    ck.model.input_length = header_int(header, "model.input_length");
    ck.model.input_channels = header_int(header, "model.input_channels");
  }
  if (ck.kind == CheckpointKind::kForecast) ck.horizon = header_int(header, "horizon");
  if (ck.kind == CheckpointKind::kClassify) ck.classes = static_cast<int>(header_int(header, "classes"));
  if (header_int(header, "tensors") != static_cast<long long>(directory.size())) {
    fail(ErrorKind::kIntegrity, "checkpoint tensor count does not match its directory");
  }

  const NamedTensors expected = expected_tensors(ck);
  std::map<std::string, const Tensor*> lookup;
  for (const auto& [name, t] : expected) lookup[name] = &t;
  for (const auto& [name, shape] : directory) {
    auto it = lookup.find(name);
    if (it == lookup.end()) fail(ErrorKind::kShapeMismatch, "tensor " + name + " is not part of the header model config");
    if (it->second->shape() != shape) {
      fail(ErrorKind::kShapeMismatch, "tensor " + name + " has shape " + shape_string(shape) +
                                          " but the header model config implies " +
                                          shape_string(it->second->shape()));
    }
  }
  if (directory.size() != expected.size()) {
    for (const auto& [name, t] : expected) {
      bool found = false;
      for (const auto& entry : directory) found = found || entry.first == name;
      if (!found) fail(ErrorKind::kShapeMismatch, "tensor " + name + " is missing from the checkpoint");
    }
  }

  std::size_t expected_bytes = 0;
  for (const auto& [name, shape] : directory) expected_bytes += static_cast<std::size_t>(numel(shape)) * 8;
  if (static_cast<long long>(expected_bytes) != header_int(header, "payload_bytes")) {
    fail(ErrorKind::kIntegrity, "payload_bytes does not match the tensor directory");
  }
  if (bytes.size() - pos != expected_bytes) {
    fail(ErrorKind::kIntegrity, "checkpoint payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                                    std::to_string(expected_bytes) + " (truncated or padded)");
  }
  if (hex(fnv1a(bytes.data() + pos, expected_bytes)) != header["checksum"]) {
    fail(ErrorKind::kIntegrity, "checkpoint payload checksum mismatch");
  }

  for (const auto& [name, shape] : directory) {
    std::vector<double> values(static_cast<std::size_t>(numel(shape)));
    for (double& v : values) {
      std::uint64_t bits;
      std::memcpy(&bits, bytes.data() + pos, 8);
      v = std::bit_cast<double>(to_little_endian(bits));
      pos += 8;
    }
    ck.tensors.emplace_back(name, Tensor::from(shape, std::move(values)));
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::kMissingFile, "no such checkpoint " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

Encoder restore_encoder(const Checkpoint& ckpt) {
  Encoder encoder(ckpt.model, ckpt.seed);
  assign_parameters(encoder.parameters(), ckpt.tensors);
  return encoder;
}

PretrainResult restore_pretrain(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::kPretrain) {
    fail(ErrorKind::kConfig, "expected a pretrain checkpoint, got " + to_string(ckpt.kind));
  }
  PretrainResult result{ReconstructionNetwork(ckpt.model, ckpt.seed), AdaptiveWeights{}, {}};
  assign_parameters(result.network.parameters(), ckpt.tensors);
  assign_parameters({{"loss.a", result.weights.a}, {"loss.b", result.weights.b}}, ckpt.tensors);
  return result;
}

ForecastModel restore_forecast(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::kForecast) {
    fail(ErrorKind::kConfig, "expected a forecast checkpoint, got " + to_string(ckpt.kind));
  }
  ForecastModel model(Encoder(ckpt.model, ckpt.seed), ckpt.horizon, ckpt.seed);
  assign_parameters(model.parameters(), ckpt.tensors);
  return model;
}

ClassifierModel restore_classifier(const Checkpoint& ckpt) {
  if (ckpt.kind != CheckpointKind::kClassify) {
    fail(ErrorKind::kConfig, "expected a classify checkpoint, got " + to_string(ckpt.kind));
  }
  ClassifierModel model(Encoder(ckpt.model, ckpt.seed), ckpt.classes, ckpt.seed);
  assign_parameters(model.parameters(), ckpt.tensors);
  return model;
}

}  // namespace simmtm
