#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mfsim {

// Every failure surfaced by the library carries the module that raised it and
// a coarse kind; the CLI maps the kind onto its exit code.
class Error : public std::runtime_error {
 public:
  enum class Kind { validation, runtime, protocol };

  Error(Kind kind, std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message),
        kind_(kind),
        module_(std::move(module)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  Kind kind_;
  std::string module_;
};

class NotFoundError : public Error {
 public:
  NotFoundError(std::string module, const std::string& message)
      : Error(Kind::runtime, std::move(module), "not found: " + message) {}
};

// Raised to every worker once any of them has timed out waiting.
class StorePoisonedError : public Error {
 public:
  explicit StorePoisonedError(const std::string& message) : Error(Kind::runtime, "sync-store", message) {}
};

inline Error validation_error(std::string module, const std::string& message) {
  return Error(Error::Kind::validation, std::move(module), message);
}

inline Error runtime_error(std::string module, const std::string& message) {
  return Error(Error::Kind::runtime, std::move(module), message);
}

inline Error protocol_error(std::string module, const std::string& message) {
  return Error(Error::Kind::protocol, std::move(module), message);
}

}  // namespace mfsim
