#pragma once

#include <stdexcept>
#include <string>

namespace lvt {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names both shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Argument outside an op's mathematical domain (log of a non-positive value, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Caller violated an operation precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf produced at an op boundary.
class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class CorpusError : public Error {
public:
    using Error::Error;
};

} // namespace lvt
