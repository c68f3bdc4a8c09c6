#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace simmtm {

enum class ErrorKind {
  kDimension,
  kContract,
  kNumeric,
  kIngestion,
  kEmptyInput,
  kInsufficientData,
  kConfig,
  kDegenerateInput,
  kVersion,
  kShapeMismatch,
  kIntegrity,
  kIo,
  kMissingFile,
  kDivergence,
};

std::string_view to_string(ErrorKind kind);

// All library failures surface as this exception; `kind` lets callers
// (the CLI in particular) map failures onto distinct exit codes.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace simmtm
