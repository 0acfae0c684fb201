// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace torsd {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigSyntaxError : public Error {
public:
  using Error::Error;
};

/// An invariant of TorsdConfig/OptimConfig does not hold. `key()` names the
/// offending field when a single one is responsible.
class ConfigValidationError : public Error {
public:
  explicit ConfigValidationError(const std::string &message, std::string key = {})
      : Error(message), key_(std::move(key)) {}
  const std::string &key() const { return key_; }

private:
  std::string key_;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class SamplingInfeasibleError : public Error {
public:
  using Error::Error;
};

class InvalidImageError : public Error {
public:
  using Error::Error;
};

class InvalidTripletError : public Error {
public:
  using Error::Error;
};

class StateError : public Error {
public:
  using Error::Error;
};

class ArgumentError : public Error {
public:
  using Error::Error;
};

class DegenerateError : public Error {
public:
  using Error::Error;
};

class DataError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace torsd
