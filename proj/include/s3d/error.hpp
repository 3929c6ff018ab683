#pragma once

#include <stdexcept>
#include <string>

namespace s3d {

/// Invalid configuration: span grid, layer stack, or run settings that cannot work.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad data handed to an otherwise valid pipeline (class ids, lengths, labels).
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// Model, checkpoint, or video file could not be read back.
class LoadError : public std::runtime_error {
 public:
  explicit LoadError(const std::string& what) : std::runtime_error(what) {}
};

/// Synthetic dataset constraints cannot be satisfied.
class GenerationError : public std::runtime_error {
 public:
  explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

/// Training produced a NaN or infinity.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace s3d
