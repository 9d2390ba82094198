#pragma once

#include <stdexcept>
#include <string>

namespace evfi {

/// Dimension or argument mismatch in a tensor/geometry operation.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Malformed or missing input data (files, streams, configs).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite values or failed numerical checks.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Bad command-line usage.
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace evfi
