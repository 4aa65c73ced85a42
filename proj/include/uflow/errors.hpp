#pragma once

#include <stdexcept>
#include <string>

namespace uflow {

// All library failures derive from Error so callers (the CLI) can report
// them uniformly. The subclass names the failure class.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error("domain error: " + what) {}
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error("parameter error: " + what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse error: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error("numeric error: " + what) {}
};

class InvertibilityError : public Error {
 public:
  explicit InvertibilityError(const std::string& what)
      : Error("invertibility error: " + what) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& what) : Error("training error: " + what) {}
};

class UndefinedMetricError : public Error {
 public:
  explicit UndefinedMetricError(const std::string& what)
      : Error("undefined metric: " + what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io error: " + what) {}
};

}  // namespace uflow
