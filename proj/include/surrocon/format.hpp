#pragma once

#include <charconv>
#include <cmath>
#include <string>

namespace surrocon {

/// Shortest decimal that round-trips to the same double; "nan"/"inf" for non-finite.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

}  // namespace surrocon
