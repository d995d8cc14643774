#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace deepwas {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary or text input.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Input parsed fine but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad argument to an operation (wrong sizes, negative variances, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Every eigenvalue of a block fell under the clip threshold.
class DegenerateBlockError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in an iterate, solver non-convergence where convergence is
/// required, or a non-finite training loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures, always carrying the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid or unknown configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Half-open index range [begin, end).
struct Range {
  Index begin = 0;
  Index end = 0;

  Index size() const { return end - begin; }
  bool contains(Index i) const { return i >= begin && i < end; }
  bool contains(const Range& other) const {
    return other.begin >= begin && other.end <= end;
  }
  friend bool operator==(const Range&, const Range&) = default;
};

}  // namespace deepwas
