#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <system_error>

#include "safeprobe/error.hpp"

namespace safeprobe {

namespace detail {

inline std::string format_double(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, end);
}

inline double parse_double(std::string_view s, const std::string& field) {
    double x = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    require(ec == std::errc{} && end == s.data() + s.size(), field, "not a number: '" + std::string(s) + "'");
    return x;
}

}  // namespace detail

}  // namespace safeprobe
