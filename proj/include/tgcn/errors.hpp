#pragma once

#include <stdexcept>
#include <string>

namespace tgcn {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/graph dimensions that do not line up.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad argument values (probabilities out of range, invalid configs, ...).
class ValueError : public Error {
 public:
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

// File contents we cannot accept: checksums, versions, truncation, missing
// samples. CLI exit code 3.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Command-line misuse. CLI exit code 2.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Non-finite loss during training. CLI exit code 4.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

}  // namespace tgcn
