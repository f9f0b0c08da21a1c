#pragma once

#include <stdexcept>
#include <string>

namespace l1ball {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: non-finite values, dimension mismatches, empty sets.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Input sits on a measure-zero set where a derivative is undefined.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// Factorization or decomposition failure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid model or prior configuration (non-SPD covariance, bad hyperparameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver stopped at its iteration cap.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double primal_residual, double dual_residual)
      : Error(what), primal_residual_(primal_residual), dual_residual_(dual_residual) {}

  double primal_residual() const { return primal_residual_; }
  double dual_residual() const { return dual_residual_; }

 private:
  double primal_residual_;
  double dual_residual_;
};

/// Sampler health check failed (e.g. persistent divergent trajectories).
class DiagnosticsError : public Error {
 public:
  DiagnosticsError(const std::string& what, double divergence_rate)
      : Error(what), divergence_rate_(divergence_rate) {}

  double divergence_rate() const { return divergence_rate_; }

 private:
  double divergence_rate_;
};

}  // namespace l1ball
