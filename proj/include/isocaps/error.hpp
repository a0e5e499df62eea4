#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace isocaps {

// Every failure the library reports. Values double as CLI exit codes.
enum class ErrorKind : int {
    MalformedFile = 3,
    AsymmetricMatrix = 4,
    LabelOutOfRange = 5,
    InconsistentNodeCount = 6,
    IoFailure = 7,
    BadSpec = 8,
    KTooLarge = 9,
    ShapeMismatch = 10,
    NotSymmetric = 11,
    NoConvergence = 12,
    GraphTooSmall = 13,
    BadGamma = 14,
    BadIterations = 15,
    EmptyBatch = 16,
    StaleActivations = 17,
    EmptyEvalSet = 18,
    ModelFormatError = 19,
    UnknownGraphId = 20,
    BadConfig = 21,
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
    ErrorKind kind_;
};

}  // namespace isocaps
