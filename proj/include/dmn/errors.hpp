#pragma once

#include <stdexcept>
#include <string>

namespace dmn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: flags, file contents, unsupported combinations.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// File could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Base of the numerical failures (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// The 3x3 interface system of a building block is (numerically) singular.
class SingularInterfaceSystem : public NumericalError {
 public:
  explicit SingularInterfaceSystem(const std::string& what, int node = -1)
      : NumericalError(node >= 0 ? what + " (node " + std::to_string(node) + ")" : what),
        node_(node) {}
  int node() const noexcept { return node_; }

 private:
  int node_;
};

class AllLeavesDeactivated : public NumericalError {
 public:
  AllLeavesDeactivated() : NumericalError("all bottom-layer nodes are deactivated") {}
};

class NonPositiveJacobian : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NoConvergence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class SingularMacroTangent : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class OracleFailure : public NumericalError {
 public:
  OracleFailure(const std::string& what, long sample_id)
      : NumericalError("oracle failed on sample " + std::to_string(sample_id) + ": " + what),
        sample_id_(sample_id) {}
  long sample_id() const noexcept { return sample_id_; }

 private:
  long sample_id_;
};

}  // namespace dmn
