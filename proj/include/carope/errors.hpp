#pragma once

#include <stdexcept>
#include <string>

namespace carope {

/// An invalid configuration value. `field()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Training or verification produced a non-finite or out-of-tolerance number.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corpus or checkpoint input could not be read.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace carope
