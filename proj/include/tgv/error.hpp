#pragma once

#include <stdexcept>
#include <string>

namespace tgv {

// Base class for all library errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension mismatches.
struct ShapeError : Error {
    using Error::Error;
};

// Bad operation parameters (stride <= 0, temperature <= 0, ...).
struct ParamError : Error {
    using Error::Error;
};

// Model / engine configuration mismatches.
struct ConfigError : Error {
    using Error::Error;
};

// Malformed input data (out-of-range event coordinates, ...).
struct DataError : Error {
    using Error::Error;
};

// Unrecognized file magic or version.
struct FormatError : Error {
    using Error::Error;
};

// Structurally valid header but truncated / inconsistent payload.
struct CorruptFileError : Error {
    using Error::Error;
};

// Token id outside the decoder vocabulary.
struct VocabError : Error {
    using Error::Error;
};

// Session state incompatible with the engine configuration.
struct SessionError : Error {
    using Error::Error;
};

// Training failures (divergence, NaN loss).
struct TrainError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
    using Error::Error;
};

} // namespace tgv
