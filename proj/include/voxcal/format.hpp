#pragma once

#include <charconv>
#include <string>
#include <system_error>

namespace voxcal {

// Shortest round-trip decimal form; used everywhere CSV/JSON bytes must be
// reproducible across runs and thread counts.
[[nodiscard]] inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace voxcal
