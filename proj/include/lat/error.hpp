#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace lat {

// Base type for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor extents do not line up (matmul inner dims, row counts, ...).
struct ShapeError : Error {
    using Error::Error;
};

// Patch/conv geometry does not tile exactly (non-divisible stride etc.).
struct GeometryError : Error {
    using Error::Error;
};

// Class label outside [0, num_classes).
struct LabelError : Error {
    using Error::Error;
};

// Optimizer invoked in an invalid state (e.g. trainable param without grad).
struct OptimizerError : Error {
    using Error::Error;
};

// Parameter name not matching the backbone/head naming scheme.
struct NamingError : Error {
    using Error::Error;
};

// Train-mode batch statistics requested on a batch of size < 2.
struct DegenerateBatchError : Error {
    using Error::Error;
};

// Invalid configuration; carries every validation failure at once.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg, std::vector<std::string> issues = {})
        : Error(msg), issues(std::move(issues)) {}
    std::vector<std::string> issues;
};

// Filename or text that does not match the expected convention.
struct FileParseError : Error {
    using Error::Error;
};

// Unreadable, corrupt, or unwritable file.
struct IoError : Error {
    using Error::Error;
};

// Query has no gallery entries left after the exclusion rule.
struct NoValidGalleryError : Error {
    using Error::Error;
};

// Checkpoint / embedding-file problems, split by kind.
struct VersionError : Error {
    using Error::Error;
};
struct TruncatedFileError : Error {
    using Error::Error;
};
struct UnknownParamError : Error {
    using Error::Error;
};

}  // namespace lat
