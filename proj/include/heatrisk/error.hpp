#pragma once

#include <stdexcept>
#include <string>

namespace heatrisk {

/// Library-wide exception. `code` is a short machine-readable tag
/// (e.g. "degenerate_polygon", "missing_artifact") surfaced by the CLI
/// in its JSON error payload.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace heatrisk
