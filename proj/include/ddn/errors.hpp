#pragma once

#include <stdexcept>
#include <string>

namespace ddn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A Cholesky pivot was not strictly positive. For Hessians this usually
/// means the minimizer is not isolated; retrying with a positive
/// regularization is the standard remedy.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(const std::string& what, std::size_t pivot)
      : Error(what), pivot_(pivot) {}

  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

/// Linear-domain Sinkhorn lost precision (zero kernel entries or overflowing
/// scalings). Retry with the log-domain solver.
class NumericalUnderflow : public Error {
 public:
  using Error::Error;
};

/// The constraint Jacobian has (numerically) dependent rows.
class RankDeficient : public Error {
 public:
  using Error::Error;
};

/// A probe of a forward map produced NaN or Inf.
class NonFinite : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ddn
