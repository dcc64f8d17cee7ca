#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace objbridge {

// Error families map onto CLI exit codes: UsageError -> 1, DataError -> 2,
// AssertFailure -> 3, anything else -> 4.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AssertFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Scene sampling exhausted its placement attempts.
struct PlacementError : UsageError {
    using UsageError::UsageError;
};

// Strict reasoning-template parser failure; offset is the byte position of
// the first violation.
struct ParseError : DataError {
    ParseError(const std::string& msg, std::size_t at)
        : DataError(msg + " (at byte " + std::to_string(at) + ")"), offset(at) {}
    std::size_t offset;
};

}  // namespace objbridge
