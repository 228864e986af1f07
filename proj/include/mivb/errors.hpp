#pragma once

#include <stdexcept>
#include <string>

namespace mivb {

// Invalid configuration (bad architecture, unknown preset, malformed spec).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset files missing or corrupt.
struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointVersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN or infinite loss during optimization.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mivb
