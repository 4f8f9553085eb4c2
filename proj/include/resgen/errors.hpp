#pragma once

#include <stdexcept>
#include <string>

namespace resgen {

/// Base class for all errors thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or inconsistent configuration (unknown profile, bad widths, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shape mismatch in a numeric operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed document while parsing graphs, datasets, or checkpoints.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Flow network without both supply and demand endpoints.
class DegenerateNetworkError : public Error {
public:
    using Error::Error;
};

/// Metric has no defined value for this input (e.g. empty edge set).
class MetricError : public Error {
public:
    using Error::Error;
};

/// Training diverged or produced non-finite values.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Autoregressive decoding exceeded its step guard or hit an impossible state.
class DecodeError : public Error {
public:
    using Error::Error;
};

/// I/O failure reading or writing artifact files.
class IoError : public Error {
public:
    using Error::Error;
};

/// An optimization iteration could not complete (e.g. resample budget spent).
class PipelineError : public Error {
public:
    using Error::Error;
};

}  // namespace resgen
