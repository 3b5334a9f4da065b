#pragma once

#include <stdexcept>
#include <string>

namespace gage {

// Shape/axis mismatches in tensor ops.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration values (thresholds out of range, bad profiles, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric error states (NaN inputs, non-finite loss, degenerate statistics).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File parsing and I/O failures; messages carry path and offset context.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace gage
