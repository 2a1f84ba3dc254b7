#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace sdecal {

/// Numerical/model failure with a stable machine-readable name
/// (e.g. "SingularGram", "UnstableH", "Blowup").
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(what), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

/// Invalid configuration or input file; the message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void throw_error(const std::string& name, const std::string& msg) {
  throw Error(name, name + ": " + msg);
}

}  // namespace sdecal
