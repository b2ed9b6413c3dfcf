#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lorablend {

// Base class for every error this library raises on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dimension mismatch between operands (matmul, blend, merge, ...).
struct ShapeError : Error {
    using Error::Error;
};

// Out-of-range or otherwise invalid parameter value.
struct ParamError : Error {
    using Error::Error;
};

// Malformed binary file. Carries the byte offset where parsing stopped.
struct FormatError : Error {
    std::size_t offset;
    FormatError(const std::string& msg, std::size_t at)
        : Error(msg + " (at byte offset " + std::to_string(at) + ")"), offset(at) {}
};

// Adapter bundle does not fit the model it is applied to.
struct CompatError : Error {
    using Error::Error;
};

// Records handed to a blend do not belong together.
struct ContractError : Error {
    using Error::Error;
};

// Filesystem-level failure (open/read/write).
struct IoError : Error {
    using Error::Error;
};

}  // namespace lorablend
