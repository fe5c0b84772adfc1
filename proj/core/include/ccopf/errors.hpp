#pragma once

#include <stdexcept>
#include <string>

namespace ccopf {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input: feeder files, time series, configs.
class InputError : public Error {
public:
  using Error::Error;
};

/// A numerical routine could not produce a usable answer.
class SolverError : public Error {
public:
  using Error::Error;
};

/// The tightened CCR-OPF has no feasible point (or restoration failed).
class InfeasibleError : public SolverError {
public:
  using SolverError::SolverError;
};

/// Tuning bounds cannot be initialized because every voltage spread is zero.
class TuningDegenerateError : public SolverError {
public:
  using SolverError::SolverError;
};

/// Node lacks one of the three phases needed for sequence components.
class NotThreePhaseError : public Error {
public:
  using Error::Error;
};

/// Positive-sequence voltage is zero, so the unbalance ratio is undefined.
class DegenerateSequenceError : public Error {
public:
  using Error::Error;
};

}  // namespace ccopf
