#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace dopo {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operands disagree about their tensor factorization (or an index is out of range).
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Fock cutoff cannot represent the requested state to the configured tolerance.
class CutoffTooSmall : public Error {
 public:
  using Error::Error;
};

/// An operation that needs a Hermitian operand received something that is not.
class NotHermitian : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Propagation left the tolerated region (trace drift, Hermiticity, positivity).
class IntegratorDiverged : public Error {
 public:
  IntegratorDiverged(const std::string& what, double time)
      : Error(what + " (t = " + std::to_string(time) + ")"), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// Scan record entry: pump amplitude tried and the steady photon number it produced.
struct CalibrationSample {
  double pump_amplitude;
  double photon_number;
};

class CalibrationFailed : public Error {
 public:
  CalibrationFailed(const std::string& what, std::vector<CalibrationSample> scan)
      : Error(what), scan_(std::move(scan)) {}

  const std::vector<CalibrationSample>& scan() const noexcept { return scan_; }

 private:
  std::vector<CalibrationSample> scan_;
};

/// Malformed or inconsistent scenario configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace dopo
