#pragma once

#include <stdexcept>
#include <string>

namespace cnpadv {

/// Operand shapes do not fit the requested operation.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// An API contract was violated (e.g. backward before forward).
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad configuration file, flag value, or unknown key.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Data generation or dataset file problem.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Checkpoint serialization problem (corrupt file, version mismatch).
struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& what) : std::runtime_error(what) {}
};

/// Training aborted (NaN loss, diverged optimizer).
struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cnpadv
