#pragma once

#include <array>
#include <cmath>

namespace abd {

/// Double-precision 3-vector for geometry math; point clouds store float32
/// but generation, residuals and normalization accumulate in double.
struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}
    explicit Vec3(const std::array<float, 3>& a) : x(a[0]), y(a[1]), z(a[2]) {}

    std::array<float, 3> to_f32() const {
        return {static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)};
    }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
    const double n = norm(a);
    return n > 0 ? a * (1.0 / n) : a;
}

/// Any unit vector orthogonal to a (a must be unit).
inline Vec3 any_orthonormal(const Vec3& a) {
    const Vec3 ref = std::abs(a.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    return normalized(cross(a, ref));
}

}  // namespace abd
