#pragma once

#include <stdexcept>
#include <string>

namespace mlma {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data or configuration rejected before any work happened (CLI exit 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DomainError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ContractError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class UnsupportedFormatError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InfeasibleTargetError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OovError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class BudgetError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Checkpoint format version is not the one this build reads.
class VersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Stored payload does not match its declared lengths or digests.
class IntegrityError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failures while running (non-finite loss, I/O on write) (CLI exit 2).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace mlma
