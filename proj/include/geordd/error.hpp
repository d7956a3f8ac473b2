#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace geordd {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A parameter outside its documented domain (non-positive width, bad order...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or arguments (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or unusable input data (CLI exit code 3).
class DataError : public Error {
public:
    using Error::Error;
};

/// Geometry that violates a type invariant (degenerate polygon, zero-length polyline...).
class GeometryError : public DataError {
public:
    using DataError::DataError;
};

/// Fewer matching candidates than requested matches.
class PoolTooSmallError : public DataError {
public:
    PoolTooSmallError(const std::string& what, std::size_t available)
        : DataError(what), available_(available) {}
    [[nodiscard]] std::size_t available() const { return available_; }

private:
    std::size_t available_;
};

/// A model fit that cannot produce a usable estimate.
class DegenerateFitError : public Error {
public:
    using Error::Error;
};

/// Not enough usable observations for the requested fit.
class InsufficientDataError : public DegenerateFitError {
public:
    using DegenerateFitError::DegenerateFitError;
};

/// A hypothesis test whose null distribution is undefined for the input.
class UndefinedTestError : public Error {
public:
    using Error::Error;
};

} // namespace geordd
