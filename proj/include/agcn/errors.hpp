#pragma once

#include <stdexcept>
#include <string>

namespace agcn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Misuse of the gradient tape (non-scalar loss, replayed tape, ...).
class AutodiffError : public Error {
public:
    using Error::Error;
};

// Invalid skeleton, manifest or model configuration.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Config file problems; the message lists every offending line.
class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Double precision is required (finite differences).
class PrecisionError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public IoError {
public:
    using IoError::IoError;
};

class TruncationError : public IoError {
public:
    using IoError::IoError;
};

class NonFiniteError : public IoError {
public:
    using IoError::IoError;
};

// Training diverged or produced a non-finite loss.
class TrainingError : public Error {
public:
    using Error::Error;
};

} // namespace agcn
