#pragma once

#include <stdexcept>
#include <string>

namespace safeprobe {

/// Every failure raised by the library. `field()` names the offending
/// field or invariant so CLI diagnostics can point at it.
class Error : public std::runtime_error {
public:
    Error(std::string field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

namespace detail {

[[noreturn]] inline void fail(const std::string& field, const std::string& what) {
    throw Error(field, what);
}

inline void require(bool ok, const std::string& field, const std::string& what) {
    if (!ok) fail(field, what);
}

}  // namespace detail
}  // namespace safeprobe
