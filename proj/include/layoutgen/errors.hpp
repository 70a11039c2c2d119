#pragma once

#include <stdexcept>
#include <string>

namespace layoutgen {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition on an argument violated (shape mismatch, bad enum, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

class SchemaMismatchError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. `where()` carries the line or the JSON field path.
class ParseError : public Error {
 public:
  ParseError(const std::string& where, const std::string& what)
      : Error(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

/// Loss became non-finite during training; the message names the step.
class TrainingError : public Error {
 public:
  using Error::Error;
};

class StatsError : public Error {
 public:
  using Error::Error;
};

/// Every location cell is masked for the object being placed.
class NoSpaceError : public Error {
 public:
  using Error::Error;
};

class InstantiationError : public Error {
 public:
  using Error::Error;
};

}  // namespace layoutgen
