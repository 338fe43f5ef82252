#pragma once

#include <stdexcept>
#include <string>

namespace ladeep {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid geometric input (degenerate lines, anti-parallel segments, ...).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable data files and directories.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or shape mismatches inside numeric kernels.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or command-line usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ladeep
