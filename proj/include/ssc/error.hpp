#pragma once

#include <stdexcept>
#include <string>

namespace ssc {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid hyper-parameters or mutually inconsistent options.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed input files.
class FormatError : public Error {
public:
    using Error::Error;
};

// Degenerate numeric input (zero rows, non-finite values, ...).
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace ssc
