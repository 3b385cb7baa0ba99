#pragma once

#include <stdexcept>
#include <string>

namespace uatest {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad invocation: unknown options, inconsistent investigation setup.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Input data does not satisfy a contract (parse failures, schema mismatch,
/// degenerate tables handed to a metric).
class DataError : public Error {
public:
    using Error::Error;
};

/// Raised by metric evaluation when the metric is undefined on its input.
class MetricError : public DataError {
public:
    using DataError::DataError;
};

/// The data source has handed out all of its held-out test sets.
class BudgetExhausted : public Error {
public:
    using Error::Error;
};

} // namespace uatest
