// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace enclave {

/// Base class of all errors raised by the runtime.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A mesh operation would exceed the configured depth.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Mesh operation applied to a node of the wrong kind.
class InvalidTargetError : public Error {
 public:
  using Error::Error;
};

class NotCoarsenableError : public Error {
 public:
  using Error::Error;
};

/// Predictor data was requested before the owning task completed.
class NotReadyError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf in the solution or no admissible time step (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A scheduling or ordering contract was broken (CLI exit code 4).
class SchedulingError : public Error {
 public:
  using Error::Error;
};

/// Thrown by traversal visitors to stop a sweep early.
class TraversalAbort : public Error {
 public:
  using Error::Error;
};

}  // namespace enclave
