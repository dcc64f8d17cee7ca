#pragma once

#include <charconv>
#include <string>

namespace objbridge {

// Shortest decimal form that parses back to the identical double.
inline std::string double_repr(double v) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, end);
}

}  // namespace objbridge
