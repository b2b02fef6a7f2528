#pragma once

#include <stdexcept>
#include <string>

namespace ircoco {

// Base for everything the library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape mismatch, empty input, ...).
struct ContractViolation : Error {
    using Error::Error;
};

// An index (e.g. an embedding id) fell outside its table.
struct IndexError : Error {
    using Error::Error;
};

// A primitive produced NaN/Inf, or a loss went non-finite during probing.
struct NumericError : Error {
    using Error::Error;
};

// A checkpoint file is truncated, malformed, or disagrees with its own header.
struct FormatError : Error {
    using Error::Error;
};

// A dataset record could not be parsed; message names the line number.
struct ParseError : Error {
    using Error::Error;
};

// A run was configured inconsistently (e.g. a reward schedule without its critic).
struct ConfigError : Error {
    using Error::Error;
};

// Training produced a non-finite loss; message carries epoch/batch diagnostics.
struct TrainingDiverged : Error {
    using Error::Error;
};

}  // namespace ircoco
