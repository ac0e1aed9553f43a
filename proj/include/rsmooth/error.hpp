#pragma once

#include <stdexcept>
#include <string>

namespace rsmooth {

// Base for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid parameters, unknown layouts, mismatched dimensions.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset/model/partition content.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

}  // namespace rsmooth
