#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace aode {

// Root of every exception thrown by the library. The CLI maps subclasses to
// exit codes, so keep the hierarchy flat and descriptive.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidSchedule : public Error { using Error::Error; };
class GridMismatch : public Error { using Error::Error; };
class IndexError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class SizeLimit : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

// Numerical failures. The CLI reports these with exit code 2.
class NumericalError : public Error { using Error::Error; };

class NumericalBlowup : public NumericalError {
 public:
  NumericalBlowup(std::size_t node, const std::string& what)
      : NumericalError("non-finite state at node " + std::to_string(node) +
                       ": " + what),
        node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

class FixedPointDiverged : public NumericalError { using NumericalError::NumericalError; };
class ConvergenceFailure : public NumericalError { using NumericalError::NumericalError; };

// File format errors.
class FormatError : public Error { using Error::Error; };
class BadMagic : public FormatError { using FormatError::FormatError; };
class TruncatedFile : public FormatError { using FormatError::FormatError; };
class CountMismatch : public FormatError { using FormatError::FormatError; };
class VersionUnsupported : public FormatError { using FormatError::FormatError; };
class ChecksumMismatch : public FormatError { using FormatError::FormatError; };

}  // namespace aode
