#pragma once

#include <stdexcept>
#include <string>

namespace mtms {

// Bad flags, malformed config or input files: things the caller got wrong.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Numerical breakdown at runtime (non-finite values, singular systems, ...).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace mtms
