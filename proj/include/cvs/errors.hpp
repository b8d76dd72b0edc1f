#pragma once

#include <stdexcept>
#include <string>

namespace cvs {

/// Raised when a caller violates a documented precondition. `code()` is a short
/// machine-readable tag that the CLI echoes in its error record.
class ContractError : public std::logic_error {
 public:
  ContractError(std::string code, const std::string& message)
      : std::logic_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

/// Shape or dimension disagreement between operands.
class DimensionError : public ContractError {
 public:
  explicit DimensionError(const std::string& message)
      : ContractError("dimension_mismatch", message) {}
};

/// Malformed or unreadable file content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const char* code, const std::string& message) {
  if (!condition) throw ContractError(code, message);
}

}  // namespace cvs
