// simmtm command-line front end.
//
//   simmtm <subcommand> [--config file] [--<key> value | --<key>=value]...
//
// Any config key can be overridden (`--mask.ratio 0.75`); overrides win over
// the file, the file wins over SIMMTM_SEED, which wins over defaults.
// --no-constraint and --no-reconstruction switch off one pre-training loss.
// On success metrics and artifact paths go to stdout as key=value lines.
// On failure a single line goes to stderr:
//   error kind=<kind> code=<exit> message=<text>

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "simmtm/pipeline.hpp"

namespace {

enum Exit : int {
  kOk = 0,
  kOther = 1,
  kUsage = 2,
  kConfigError = 3,
  kMissingInput = 4,
  kCheckpointError = 5,
  kDataError = 6,
  kDiverged = 7,
  kIoError = 8,
};

int exit_code(simmtm::ErrorKind kind) {
  using simmtm::ErrorKind;
  switch (kind) {
    case ErrorKind::kConfig: return kConfigError;
    case ErrorKind::kMissingFile: return kMissingInput;
    case ErrorKind::kVersion:
    case ErrorKind::kShapeMismatch:
    case ErrorKind::kIntegrity: return kCheckpointError;
    case ErrorKind::kIngestion:
    case ErrorKind::kEmptyInput:
    case ErrorKind::kInsufficientData: return kDataError;
    case ErrorKind::kDivergence:
    case ErrorKind::kNumeric: return kDiverged;
    case ErrorKind::kIo: return kIoError;
    default: return kOther;
  }
}

int report_error(const std::string& kind, int code, std::string message) {
  for (char& c : message) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "error kind=" << kind << " code=" << code << " message=" << message << '\n';
  return code;
}

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string normalize_key(const std::string& flag) {
  if (simmtm::is_config_key(flag)) return flag;
  std::string alt = flag;
  for (char& c : alt) {
    if (c == '-') c = '_';
  }
  if (simmtm::is_config_key(alt)) return alt;
  throw UsageError("unknown flag --" + flag);
}

// Pairs from the arguments CLI11 left over: --key value or --key=value.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& args) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& arg = args[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2) throw UsageError("unexpected argument " + arg);
    const std::string body = arg.substr(2);
    if (body == "no-constraint" || body == "no-reconstruction") {
      out.emplace_back(body == "no-constraint" ? "loss.constraint" : "loss.reconstruction", "false");
      continue;
    }
    const auto eq = body.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(normalize_key(body.substr(0, eq)), body.substr(eq + 1));
      continue;
    }
    const std::string key = normalize_key(body);
    if (i + 1 >= args.size()) throw UsageError("flag --" + body + " needs a value");
    out.emplace_back(key, args[++i]);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SimMTM masked time-series pre-training"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "Print every config key with its default and exit");

  const std::vector<std::pair<std::string, std::string>> descriptions = {
      {"pretrain", "Pre-train encoder, projector and decoder with the SimMTM objective"},
      {"finetune-forecast", "Fine-tune a forecaster; --checkpoint loads a pre-trained encoder"},
      {"finetune-classify", "Fine-tune a classifier; --checkpoint loads a pre-trained encoder"},
      {"evaluate", "Evaluate a fine-tuned --checkpoint on the test split"},
      {"grid-search", "Pre-train and fine-tune every cell of grid.axes"},
      {"analyze-cka", "First/last layer CKA of --checkpoint and --analysis.finetuned"},
      {"reconstruct-demo", "Compare SimMTM and direct masked reconstruction on held-out series"},
      {"generate-synthetic", "Write the configured synthetic dataset as CSV"},
  };
  std::string config_path;
  for (const auto& [name, text] : descriptions) {
    CLI::App* sub = app.add_subcommand(name, text);
    sub->add_option("--config", config_path, "Flat key=value config file")->check(CLI::ExistingFile);
    sub->allow_extras();
    sub->footer("Any config key may be given as --<key> <value>; see --list-keys.");
  }
  if (argc == 2 && std::string(argv[1]) == "--list-keys") {
    const simmtm::RunConfig defaults;
    for (const std::string& key : simmtm::config_keys()) {
      std::cout << key << '=' << simmtm::config_get(defaults, key) << '\n';
    }
    return kOk;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ValidationError& e) {
    // --config pointing at a missing file.
    return report_error("missing_file", kMissingInput, e.what());
  } catch (const CLI::ParseError& e) {
    return report_error("usage", kUsage, e.what());
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    const auto overrides = parse_overrides(sub->remaining());
    const simmtm::RunConfig cfg = simmtm::load_run_config(config_path, overrides);
    const simmtm::RunReport report = simmtm::run_subcommand(sub->get_name(), cfg, &std::cerr);
    std::cout << simmtm::metrics_text(report.metrics);
    for (const auto& path : report.artifacts) std::cout << "artifact=" << path.string() << '\n';
    return kOk;
  } catch (const UsageError& e) {
    return report_error("usage", kUsage, e.what());
  } catch (const simmtm::Error& e) {
    return report_error(std::string(simmtm::to_string(e.kind())), exit_code(e.kind()), e.what());
  } catch (const std::exception& e) {
    return report_error("internal", kOther, e.what());
  }
}
