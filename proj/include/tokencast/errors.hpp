#pragma once

#include <stdexcept>
#include <string>

namespace tokencast {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: ConfigError -> 1, DataError -> 2, NumericError -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

// Tensor shape mismatches (carry both shapes in the message).
struct ShapeError : NumericError {
    using NumericError::NumericError;
};

// Out-of-range token ids, targets, dates.
struct IndexError : DataError {
    using DataError::DataError;
};

// Checkpoint file problems, kept distinct so callers can tell a corrupt
// file from a file written by an incompatible library version.
struct FormatError : DataError {
    using DataError::DataError;
};

struct VersionError : DataError {
    using DataError::DataError;
};

}  // namespace tokencast
