#pragma once

#include <stdexcept>
#include <string>

namespace bioage {

// Error categories map onto the CLI exit-code contract:
// config errors -> 2, runtime/numeric errors -> 3, I/O errors -> 4.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bioage
