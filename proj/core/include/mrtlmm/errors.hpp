#pragma once

#include <stdexcept>
#include <string>

namespace mrtlmm {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data or configuration (CLI exit code 2).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Unreadable file content, e.g. a non-numeric CSV cell (CLI exit code 2).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Numerical failure: singular systems, non-PD covariances (CLI exit code 3).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace mrtlmm
