#pragma once

#include <stdexcept>
#include <string>

namespace svloc {

/// Base class of every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented precondition or range (bad latitude, shape
/// mismatch, empty database, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A point lies behind the camera / outside the front hemisphere.
class CheiralityError : public Error {
 public:
  using Error::Error;
};

/// Too few inputs for an operation (e.g. fewer than 8 correspondences).
class ArityError : public Error {
 public:
  using Error::Error;
};

/// Degenerate configuration: rank-deficient design matrix, parallel rays,
/// coplanar point set, segment shorter than the sampling radius, ...
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// RANSAC failed to find a consensus set of the required size.
class ConsensusError : public Error {
 public:
  using Error::Error;
};

/// Essential-matrix decomposition could not be disambiguated by cheirality.
class AmbiguousError : public Error {
 public:
  using Error::Error;
};

/// Sensor stream timestamps are not strictly increasing.
class StreamOrderError : public Error {
 public:
  using Error::Error;
};

/// Metric scale is unavailable (AR tracking lost).
class ScaleUnavailableError : public Error {
 public:
  using Error::Error;
};

/// File could not be read/written/parsed; message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace svloc
