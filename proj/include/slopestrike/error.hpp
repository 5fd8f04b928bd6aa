#pragma once

#include <stdexcept>
#include <string>

namespace slopestrike {

/// Root of every exception the toolkit throws. The CLI maps the subclasses
/// onto exit codes (usage 2, data 3, numerical 4).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor or container shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Value outside the domain of a function (log of zero, non-positive price...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Operation exists but is not supported in the requested mode.
class UnsupportedError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class CorruptionError : public Error {
public:
    using Error::Error;
};

class VersionError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf appeared in a loss or a divergent optimisation.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace slopestrike
