#pragma once

#include <stdexcept>
#include <string>

namespace autopainter {

/// Invalid argument or configuration value passed to an operation.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Network/config construction failure (bad depth, resolution, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File, checkpoint or manifest could not be read.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape mismatch at a network boundary.
class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the training loop when a loss or parameter goes non-finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed client request (service or CLI input).
class RequestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace autopainter
