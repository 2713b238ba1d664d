#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace npss {

/// Base of every error thrown by the library. The CLI maps the subclass to
/// an exit code, so new error kinds must pick a side (config vs runtime).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration-side errors (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class LookupError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Runtime-side errors (exit code 3).
class DomainError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, std::size_t frame)
      : Error(what + " (frame " + std::to_string(frame) + ")"), frame_(frame) {}
  std::size_t frame() const noexcept { return frame_; }

 private:
  std::size_t frame_;
};

class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace npss
