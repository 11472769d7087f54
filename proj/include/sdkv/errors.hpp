#pragma once

#include <stdexcept>
#include <string>

namespace sdkv {

// Error taxonomy mirrors the CLI exit-code contract:
// config -> 2, io -> 3, numeric -> 4.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sdkv
