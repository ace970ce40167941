#pragma once

#include <stdexcept>
#include <string>

namespace semuq {

// Base for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data: dataset lines, cache files, checkpoints.
class DataError : public Error {
 public:
  using Error::Error;
};

// Violated precondition on a numeric routine (dimension mismatch, too few
// samples, degenerate labels...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Remote endpoint failed after all retries.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int attempts)
      : Error(what), attempts_(attempts) {}
  int attempts() const { return attempts_; }

 private:
  int attempts_;
};

// Endpoint answered, but the payload breaks the client contract.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace semuq
