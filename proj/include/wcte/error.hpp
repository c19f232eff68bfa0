#pragma once

#include <stdexcept>
#include <string>

namespace wcte {

/// Exception carrying the name of the module that raised it, so the CLI can
/// report "<module>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)), detail_(message) {}

  const std::string& module() const noexcept { return module_; }
  /// Message without the module prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string module_;
  std::string detail_;
};

}  // namespace wcte
