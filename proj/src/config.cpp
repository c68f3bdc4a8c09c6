#include "simmtm/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace simmtm {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  fail(ErrorKind::kConfig, "invalid value '" + value + "' for " + key + " (expected " + expected + ")");
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

template <class E>
E parse_enum(const std::string& key, const std::string& value, const std::vector<std::pair<std::string, E>>& names) {
  std::string expected;
  for (const auto& [name, e] : names) {
    if (name == value) return e;
    expected += (expected.empty() ? "" : "|") + name;
  }
  bad_value(key, value, expected);
}

const std::vector<std::pair<std::string, Task>> kTasks = {{"forecast", Task::kForecast},
                                                         {"classify", Task::kClassify}};
const std::vector<std::pair<std::string, EncoderKind>> kEncoders = {{"transformer", EncoderKind::kTransformer},
                                                                   {"conv_resnet", EncoderKind::kConvResNet}};
const std::vector<std::pair<std::string, MaskKind>> kMasks = {{"random", MaskKind::kRandom},
                                                             {"geometric", MaskKind::kGeometric}};
const std::vector<std::pair<std::string, CandidateSet>> kCandidates = {{"pnsa", CandidateSet::kPNSA},
                                                                      {"psa", CandidateSet::kPSA}};
const std::vector<std::pair<std::string, SynthKind>> kSynth = {{"sin_mix", SynthKind::kSinMix},
                                                              {"trend_season", SynthKind::kTrendSeason},
                                                              {"class_waveforms", SynthKind::kClassWaveforms}};

template <class E>
std::string enum_name(E e, const std::vector<std::pair<std::string, E>>& names) {
  for (const auto& [name, v] : names) {
    if (v == e) return name;
  }
  return "?";
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class T, class Access>
Field number(std::string key, Access access) {
  return {key,
          [access](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(access(c));
            } else {
              return std::to_string(access(c));
            }
          },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_number<T>(key, v); }};
}

template <class Access>
Field flag(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return std::string(access(c) ? "true" : "false"); },
          [access, key](RunConfig& c, const std::string& v) { access(c) = parse_bool(key, v); }};
}

template <class Access>
Field text(std::string key, Access access) {
  return {key, [access](const RunConfig& c) { return std::string(access(c)); },
          [access](RunConfig& c, const std::string& v) { access(c) = v; }};
}

template <class E, class Access>
Field choice(std::string key, Access access, const std::vector<std::pair<std::string, E>>& names) {
  return {key, [access, &names](const RunConfig& c) { return enum_name(access(c), names); },
          [access, key, &names](RunConfig& c, const std::string& v) { access(c) = parse_enum(key, v, names); }};
}

#define SIMMTM_FIELD(member) [](auto& c) -> auto& { return c.member; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number<std::uint64_t>("seed", SIMMTM_FIELD(seed)),
      choice("task", SIMMTM_FIELD(task), kTasks),
      {"output_dir", [](const RunConfig& c) { return c.output_dir.string(); },
       [](RunConfig& c, const std::string& v) { c.output_dir = v; }},
      {"checkpoint", [](const RunConfig& c) { return c.checkpoint.string(); },
       [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
      {"analysis.finetuned", [](const RunConfig& c) { return c.finetuned.string(); },
       [](RunConfig& c, const std::string& v) { c.finetuned = v; }},
      number<Index>("analysis.probe_samples", SIMMTM_FIELD(probe_samples)),

      {"data.path", [](const RunConfig& c) { return c.data_path.string(); },
       [](RunConfig& c, const std::string& v) { c.data_path = v; }},
      text("data.label_column", SIMMTM_FIELD(label_column)),
      number<double>("data.train_fraction", SIMMTM_FIELD(split.train_fraction)),
      number<double>("data.val_fraction", SIMMTM_FIELD(split.val_fraction)),
      number<double>("data.test_fraction", SIMMTM_FIELD(split.test_fraction)),
      number<Index>("data.input_length", SIMMTM_FIELD(input_length)),
      number<Index>("data.horizon", SIMMTM_FIELD(horizon)),
      number<Index>("data.sample_length", SIMMTM_FIELD(sample_length)),
      number<Index>("data.pretrain_stride", SIMMTM_FIELD(pretrain_stride)),
      number<Index>("data.finetune_stride", SIMMTM_FIELD(finetune_stride)),

      choice("synthetic.kind", SIMMTM_FIELD(synthetic.kind), kSynth),
      number<Index>("synthetic.length", SIMMTM_FIELD(synthetic.length)),
      number<Index>("synthetic.channels", SIMMTM_FIELD(synthetic.channels)),
      number<double>("synthetic.min_period", SIMMTM_FIELD(synthetic.min_period)),
      number<double>("synthetic.max_period", SIMMTM_FIELD(synthetic.max_period)),
      number<double>("synthetic.min_amplitude", SIMMTM_FIELD(synthetic.min_amplitude)),
      number<double>("synthetic.max_amplitude", SIMMTM_FIELD(synthetic.max_amplitude)),
      number<double>("synthetic.max_trend", SIMMTM_FIELD(synthetic.max_trend)),
      number<double>("synthetic.noise", SIMMTM_FIELD(synthetic.noise)),
      number<int>("synthetic.classes", SIMMTM_FIELD(synthetic.classes)),
      number<Index>("synthetic.samples", SIMMTM_FIELD(synthetic.samples)),

      choice("model.encoder", SIMMTM_FIELD(model.encoder), kEncoders),
      number<int>("model.e_layers", SIMMTM_FIELD(model.e_layers)),
      number<int>("model.d_model", SIMMTM_FIELD(model.d_model)),
      number<int>("model.n_heads", SIMMTM_FIELD(model.n_heads)),
      number<int>("model.d_ff", SIMMTM_FIELD(model.d_ff)),
      number<int>("model.kernel_size", SIMMTM_FIELD(model.kernel_size)),

      choice("mask.kind", SIMMTM_FIELD(mask.kind), kMasks),
      number<double>("mask.ratio", SIMMTM_FIELD(mask.ratio)),
      number<int>("mask.count", SIMMTM_FIELD(mask.count)),
      number<int>("mask.mean_span", SIMMTM_FIELD(mask.mean_span)),

      choice("aggregation.candidates", SIMMTM_FIELD(aggregation.candidates), kCandidates),
      number<double>("aggregation.temperature", SIMMTM_FIELD(aggregation.temperature)),

      flag("loss.reconstruction", SIMMTM_FIELD(losses.reconstruction)),
      flag("loss.constraint", SIMMTM_FIELD(losses.constraint)),
      flag("loss.calibrate", SIMMTM_FIELD(calibrate_weights)),

      number<double>("pretrain.lr", SIMMTM_FIELD(pretrain.learning_rate)),
      number<int>("pretrain.batch_size", SIMMTM_FIELD(pretrain.batch_size)),
      number<int>("pretrain.epochs", SIMMTM_FIELD(pretrain.epochs)),
      number<double>("finetune.lr", SIMMTM_FIELD(finetune.learning_rate)),
      number<int>("finetune.batch_size", SIMMTM_FIELD(finetune.batch_size)),
      number<int>("finetune.epochs", SIMMTM_FIELD(finetune.epochs)),

      text("grid.axes", SIMMTM_FIELD(grid_axes)),
  };
  return table;
}

#undef SIMMTM_FIELD

const Field& field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  fail(ErrorKind::kConfig, "unknown config key " + key);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, sep);) out.push_back(trim(part));
  return out;
}

void require_file(const std::filesystem::path& path, const std::string& key) {
  if (!path.empty() && !std::filesystem::exists(path)) {
    fail(ErrorKind::kMissingFile, key + " refers to a missing file " + path.string());
  }
}

}  // namespace

std::string to_string(Task task) { return enum_name(task, kTasks); }
std::string to_string(EncoderKind kind) { return enum_name(kind, kEncoders); }
std::string to_string(MaskKind kind) { return enum_name(kind, kMasks); }
std::string to_string(CandidateSet set) { return enum_name(set, kCandidates); }
std::string to_string(SynthKind kind) { return enum_name(kind, kSynth); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

bool is_config_key(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return true;
  }
  return false;
}

std::string config_get(const RunConfig& cfg, const std::string& key) { return field(key).get(cfg); }

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  field(key).set(cfg, trim(value));
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kConfig, "line " + std::to_string(line_no) + " is not key=value: " + body);
    }
    out.emplace_back(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  return out;
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  for (const auto& [key, value] : parse_config_text(text)) config_set(cfg, key, value);
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  require_file(path, "--config");
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_config_text(cfg, buf.str());
}

std::string config_text(const RunConfig& cfg) {
  std::string out;
  for (const Field& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (const char* env = std::getenv("SIMMTM_SEED"); env != nullptr && *env != '\0') config_set(cfg, "seed", env);
  if (!file.empty()) apply_config_file(cfg, file);
  for (const auto& [key, value] : overrides) config_set(cfg, key, value);
  return cfg;
}

void RunConfig::validate() const {
  split.validate();
  if (input_length < 1) fail(ErrorKind::kConfig, "data.input_length must be >= 1");
  if (horizon < 1) fail(ErrorKind::kConfig, "data.horizon must be >= 1");
  if (sample_length < 1) fail(ErrorKind::kConfig, "data.sample_length must be >= 1");
  if (pretrain_stride < 1 || finetune_stride < 1) fail(ErrorKind::kConfig, "window strides must be >= 1");
  if (probe_samples < 2) fail(ErrorKind::kConfig, "analysis.probe_samples must be >= 2");
  SynthSpec synth = synthetic;
  synth.sample_length = sample_length;
  synth.validate();
  ModelConfig m = model;
  m.input_length = task == Task::kForecast ? input_length : sample_length;
  m.validate();
  mask.validate();
  aggregation.validate();
  pretrain.validate();
  finetune.validate();
  if (!losses.reconstruction && !losses.constraint) {
    fail(ErrorKind::kConfig, "loss.reconstruction and loss.constraint cannot both be false");
  }
  if (!grid_axes.empty()) parse_grid_axes(grid_axes);
  require_file(data_path, "data.path");
  require_file(checkpoint, "checkpoint");
  require_file(finetuned, "analysis.finetuned");
}

std::vector<GridAxis> parse_grid_axes(const std::string& spec) {
  std::vector<GridAxis> axes;
  for (const std::string& part : split_on(spec, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kConfig, "grid axis needs key=v1|v2: " + part);
    GridAxis axis{trim(part.substr(0, eq)), split_on(part.substr(eq + 1), '|')};
    if (!is_config_key(axis.key)) fail(ErrorKind::kConfig, "grid axis names unknown config key " + axis.key);
    if (axis.values.empty() || axis.values.front().empty()) {
      fail(ErrorKind::kConfig, "grid axis " + axis.key + " has no values");
    }
    RunConfig probe;
    for (const std::string& v : axis.values) config_set(probe, axis.key, v);
    axes.push_back(std::move(axis));
  }
  if (axes.empty()) fail(ErrorKind::kConfig, "grid.axes is empty");
  return axes;
}

}  // namespace simmtm
