#pragma once

#include <stdexcept>
#include <string>

namespace df {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration values, unknown presets, unparseable config files.
struct ConfigError : Error {
  using Error::Error;
};

// Tensor dimensions violate an operation's contract.
struct ShapeError : Error {
  using Error::Error;
};

// Missing/corrupt files, bad manifests, unsupported image encodings.
struct DataError : Error {
  using Error::Error;
};

// Numeric contract violations: empty masks, nonpositive depths, negative widths.
struct DomainError : Error {
  using Error::Error;
};

}  // namespace df
