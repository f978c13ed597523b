#pragma once

#include <stdexcept>
#include <string>

namespace csmil {

/// Root of every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Contract and shape violations. The CLI maps these to exit code 2.
class DimensionError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ParameterError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class MetricError : public Error { using Error::Error; };
class GeometryError : public Error { using Error::Error; };

// Data on disk is missing, unreadable or malformed. The CLI maps these to exit code 3.
class IoError : public Error { using Error::Error; };
class IntegrityError : public IoError { using IoError::IoError; };
class FormatError : public IoError { using IoError::IoError; };

class TrainingError : public Error {
 public:
  TrainingError(int epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

}  // namespace csmil
