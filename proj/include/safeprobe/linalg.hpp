#pragma once

// Small dense-vector helpers shared by the fitting and diagnostic code.
// Hidden states are stored as float; all arithmetic is done in double.

#include <cmath>
#include <span>
#include <vector>

#include "safeprobe/error.hpp"

namespace safeprobe {

using Vec = std::vector<double>;

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

inline double dot(const Vec& a, const Vec& b) { return dot(std::span<const double>(a), std::span<const double>(b)); }

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }
inline double norm(const Vec& a) { return norm(std::span<const double>(a)); }

inline double cosine(const Vec& a, const Vec& b) {
    const double na = norm(a), nb = norm(b);
    detail::require(na > 0.0 && nb > 0.0, "direction", "cosine of a zero vector");
    return dot(a, b) / (na * nb);
}

inline Vec normalized(Vec v) {
    const double n = norm(v);
    detail::require(n > 0.0 && std::isfinite(n), "direction", "cannot normalize a zero vector");
    for (double& x : v) x /= n;
    return v;
}

inline Vec unit_axis(std::size_t d, std::size_t axis) {
    Vec v(d, 0.0);
    v.at(axis) = 1.0;
    return v;
}

inline bool is_unit(const Vec& v, double tol = 1e-6) { return std::abs(norm(v) - 1.0) <= tol; }

}  // namespace safeprobe
