#pragma once

// Shared error types and small helpers used across the library.
//
// Every failure carries a short stable code string (e.g. "JointCountMismatch")
// so callers and tests can dispatch on the condition without parsing prose.
// The CLI maps the categories onto exit codes: DataError -> 2, NumericError -> 3,
// UsageError -> 1.

#include <cmath>
#include <stdexcept>
#include <string>

namespace sigshot {

class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error("[" + code + "] " + msg), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// Malformed external input: files, manifests, configs, wire formats.
class DataError : public Error {
public:
    using Error::Error;
};

// Incompatible operand shapes, bad indices, invalid arguments.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Non-finite results, NaN losses, numeric domain violations.
class NumericError : public Error {
public:
    using Error::Error;
};

// Command-line misuse.
class UsageError : public Error {
public:
    using Error::Error;
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }

    double norm() const { return std::sqrt(x * x + y * y + z * z); }

    bool operator==(const Vec3&) const = default;
};

constexpr double kPi = 3.14159265358979323846;
constexpr double kHalfPi = kPi / 2.0;

// Round-half-up to an 8-bit channel value. The signal-image contracts pin
// 127.5 -> 128, so plain std::lround (half away from zero) is not used.
inline int round_half_up_u8(double v) {
    double r = std::floor(v + 0.5);
    if (r < 0.0) return 0;
    if (r > 255.0) return 255;
    return static_cast<int>(r);
}

} // namespace sigshot
