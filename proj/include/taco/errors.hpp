#pragma once

#include <stdexcept>
#include <string>

namespace taco {

// All library failures derive from Error so callers (the CLI in particular)
// can separate them from programming errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DegenerateNormError : public Error {
 public:
  using Error::Error;
};

class InsufficientTokensError : public Error {
 public:
  using Error::Error;
};

class GradientError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Input too degenerate for the requested statistic (e.g. fewer distinct
// points than clusters).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents. `field` names the offending header key.
class FormatError : public Error {
 public:
  FormatError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace taco
