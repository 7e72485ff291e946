#pragma once

#include <stdexcept>
#include <string>

namespace vircov {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

class NotSymmetric : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input files that do not follow the documented column layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class MalformedRecord : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

class Separation : public Error {
 public:
  using Error::Error;
};

class EmptyMonth : public Error {
 public:
  using Error::Error;
};

class NonFiniteDensity : public Error {
 public:
  using Error::Error;
};

}  // namespace vircov
