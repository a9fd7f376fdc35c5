#pragma once

#include <stdexcept>
#include <string>

namespace crowdscale {

// Base of every error thrown by the library. The CLI maps the concrete
// kinds to process exit codes (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not line up: channel mismatches, odd pooling inputs, ...
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid static configuration (even "same" kernels, k > spatial size, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse: backward on a non-scalar, missing inputs, adam at t = 0.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed files (TNSR, CANW, PPM/PGM, JSON annotations).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Degenerate camera geometry: singular homography, nothing below horizon.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Non-finite values during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace crowdscale
