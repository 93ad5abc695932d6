#pragma once

#include <stdexcept>
#include <string>

namespace c3ot {

/// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data that does not satisfy a format or schema.
class DataError : public Error {
public:
    using Error::Error;
};

/// Violated precondition on an operation argument.
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// Invalid or incomplete experiment / backend configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Failure talking to an external backend.
class BackendError : public Error {
public:
    BackendError(const std::string& what, bool retryable)
        : Error(what), retryable_(retryable) {}

    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

} // namespace c3ot
