#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace regmpc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced a non-finite value or failed to converge.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what,
                          Eigen::VectorXd state = Eigen::VectorXd())
      : Error(what), state_(std::move(state)) {}

  /// The state at which evaluation failed, empty when not applicable.
  const Eigen::VectorXd& state() const { return state_; }

 private:
  Eigen::VectorXd state_;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// The regulator equations are not uniquely solvable.
class ResonanceError : public Error {
 public:
  ResonanceError(const std::string& what, std::complex<double> eigenvalue)
      : Error(what), eigenvalue_(eigenvalue) {}

  /// Eigenvalue of S closest to a transmission zero of the plant.
  std::complex<double> eigenvalue() const { return eigenvalue_; }

 private:
  std::complex<double> eigenvalue_;
};

class DetectabilityError : public Error {
 public:
  using Error::Error;
};

class ObservabilityError : public Error {
 public:
  using Error::Error;
};

class DegenerateSystemError : public Error {
 public:
  using Error::Error;
};

class StabilityError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  /// 1-based line number in the config text, 0 when not tied to a line.
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace regmpc
