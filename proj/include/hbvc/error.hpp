#pragma once

#include <stdexcept>
#include <string>

namespace hbvc {

enum class ErrorKind {
    InvalidArgument,
    InvalidInput,
    UnsupportedFormat,
    TruncatedInput,
    InconsistentInput,
    Io,
    InvalidGop,
    ScheduleAlignment,
    ScheduleViolation,
    InvalidGain,
    MissingLevel,
    UnderdeterminedFit,
    BitstreamCorruption,
    Format,
    InsufficientData,
    NoOverlap,
    InvalidPairing,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace hbvc
