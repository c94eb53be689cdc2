#pragma once

#include <stdexcept>
#include <string>

namespace advgnn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dimension mismatch between a vector/matrix and the layer or ball it is used with.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values, class indices or properties.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input files. Messages carry a path such as "layers[2].bias".
class FormatError : public Error {
 public:
  using Error::Error;
};

// A bound pair that should enclose the reachable set does not (lb > ub).
class SoundnessError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where a finite objective is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace advgnn
