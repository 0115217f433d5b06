#pragma once

// Small shared helpers.

#include <charconv>
#include <string>
#include <system_error>

namespace kd3 {

// Shortest round-trip decimal representation; deterministic across runs.
inline std::string fmt_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

}  // namespace kd3
