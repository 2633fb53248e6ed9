#pragma once

#include <stdexcept>
#include <string>

namespace plainusr {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes, ranges or parameter geometry are inconsistent.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid model configuration or a model used in the wrong form.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace plainusr
