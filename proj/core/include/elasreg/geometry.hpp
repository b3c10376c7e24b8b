// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>

namespace elasreg {

using Vec2 = std::array<double, 2>;

/// Row-major 2x2 tensor; entry (i, j) is `m[i][j]`.
using Mat2 = std::array<std::array<double, 2>, 2>;

inline Vec2 operator+(const Vec2& a, const Vec2& b) { return {a[0] + b[0], a[1] + b[1]}; }
inline Vec2 operator-(const Vec2& a, const Vec2& b) { return {a[0] - b[0], a[1] - b[1]}; }
inline Vec2 operator*(double s, const Vec2& a) { return {s * a[0], s * a[1]}; }
inline double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
inline double norm(const Vec2& a) { return std::hypot(a[0], a[1]); }

inline Vec2 matvec(const Mat2& m, const Vec2& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]};
}

inline double ddot(const Mat2& a, const Mat2& b) {
    return a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1];
}

/// Axis-aligned rectangle [lo, hi] in physical coordinates.
struct Rect {
    Vec2 lo{0.0, 0.0};
    Vec2 hi{1.0, 1.0};

    double width() const { return hi[0] - lo[0]; }
    double height() const { return hi[1] - lo[1]; }
    double area() const { return width() * height(); }
    Vec2 clamp(const Vec2& x) const {
        return {std::fmin(std::fmax(x[0], lo[0]), hi[0]), std::fmin(std::fmax(x[1], lo[1]), hi[1])};
    }
};

} // namespace elasreg
