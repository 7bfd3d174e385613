#pragma once
/**
 * @file common.hpp
 * @brief Shared primitives for the transmission-wave laboratory: planar
 * vectors, the error type, and a small deterministic parallel loop.
 */

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace twv {

inline constexpr double pi = std::numbers::pi;

/// Planar point / vector.
struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    constexpr Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    constexpr Vec2 operator-() const { return {-x, -y}; }
    constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
    constexpr Vec2 operator/(double s) const { return {x / s, y / s}; }
    constexpr Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
    constexpr Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
    constexpr bool operator==(const Vec2&) const = default;
};

constexpr Vec2 operator*(double s, Vec2 v) { return v * s; }
constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
constexpr double norm2(Vec2 v) { return dot(v, v); }
inline Vec2 unit(Vec2 v) { return v / norm(v); }
constexpr Vec2 perp(Vec2 v) { return {-v.y, v.x}; }
inline Vec2 polar_unit(double theta) { return {std::cos(theta), std::sin(theta)}; }
inline double angle_of(Vec2 v) { return std::atan2(v.y, v.x); }

/// Symmetric 2x2 matrix [[xx, xy], [xy, yy]].
struct Sym2 {
    double xx = 0.0;
    double xy = 0.0;
    double yy = 0.0;

    double trace() const { return xx + yy; }
    double det() const { return xx * yy - xy * xy; }
    /// Smallest eigenvalue.
    double min_eig() const {
        const double m = 0.5 * (xx + yy);
        const double d = std::hypot(0.5 * (xx - yy), xy);
        return m - d;
    }
    double quad(Vec2 v) const { return xx * v.x * v.x + 2.0 * xy * v.x * v.y + yy * v.y * v.y; }
};

enum class ErrorKind {
    Domain,      ///< point outside the admissible set
    Parameter,   ///< inconsistent or out-of-range parameters
    Shape,       ///< grid / field size mismatch
    Resolution,  ///< grid too coarse for the geometry
    Numerical,   ///< NaN/Inf, divergence, stagnation
    Config,      ///< config parsing / validation
    Infeasible,  ///< empty admissible parameter window
};

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::Domain: return "domain";
        case ErrorKind::Parameter: return "parameter";
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Resolution: return "resolution";
        case ErrorKind::Numerical: return "numerical";
        case ErrorKind::Config: return "config";
        case ErrorKind::Infeasible: return "infeasible";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool cond, ErrorKind kind, const std::string& what) {
    if (!cond) throw Error(kind, what);
}

/// Thread cap from TWV_THREADS (default: hardware concurrency).
inline unsigned thread_count() {
    unsigned n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("TWV_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) n = static_cast<unsigned>(v);
    }
    return n;
}

/// Runs fn(i) for i in [0, n). Each index is processed by exactly one
/// worker; callers store results per index so reductions stay ordered.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

/// C-infinity step: 0 for t <= 0, 1 for t >= 1, with sigma(1/2) = 1/2.
/// Returns value and first two derivatives.
struct SmoothStep {
    double value = 0.0;
    double d1 = 0.0;
    double d2 = 0.0;
};

inline SmoothStep smooth_step(double t) {
    if (t <= 0.0) return {0.0, 0.0, 0.0};
    if (t >= 1.0) return {1.0, 0.0, 0.0};
    // g(t) = exp(-1/t) and its derivatives
    auto g = [](double x, double& g1, double& g2) {
        const double v = std::exp(-1.0 / x);
        g1 = v / (x * x);
        g2 = v * (1.0 / (x * x * x * x) - 2.0 / (x * x * x));
        return v;
    };
    double n1, n2, m1, m2;
    const double num = g(t, n1, n2);
    const double oth = g(1.0 - t, m1, m2);
    const double den = num + oth;
    const double den1 = n1 - m1;
    const double den2 = n2 + m2;
    const double q = num / den;
    const double q1 = (n1 * den - num * den1) / (den * den);
    const double q2 = (n2 * den - num * den2) / (den * den) - 2.0 * den1 * q1 / den;
    return {q, q1, q2};
}

}  // namespace twv
