#pragma once
/**
 * @file geometry.hpp
 * @brief Nested planar domains with a strictly convex inner interface.
 *
 * Curves are star-shaped about a stored pole and written in polar form
 *   rho(theta) = c0 + sum_k a_k cos(k theta) + b_k sin(k theta).
 * The truncated Fourier series gives exact derivatives of rho, which the
 * Hessian and curvature formulas use directly.
 */

#include <optional>
#include <span>
#include <utility>

#include "twv/common.hpp"

namespace twv {

/// rho and its first three theta-derivatives.
struct RhoDerivs {
    double r = 0.0;
    double r1 = 0.0;
    double r2 = 0.0;
    double r3 = 0.0;
};

inline constexpr std::size_t default_theta_samples = 1024;

class InterfaceCurve {
public:
    InterfaceCurve() = default;

    /// coeffs = [c0, a1, b1, a2, b2, ...]
    InterfaceCurve(Vec2 pole, std::vector<double> coeffs) : pole_(pole), coeffs_(std::move(coeffs)) {
        require(!coeffs_.empty(), ErrorKind::Parameter, "curve needs at least the constant coefficient");
        if (coeffs_.size() % 2 == 0) coeffs_.push_back(0.0);
        for (std::size_t i = 0; i < 256; ++i) {
            const double th = 2.0 * pi * static_cast<double>(i) / 256.0;
            require(rho(th) > 0.0, ErrorKind::Parameter, "polar radius must stay positive");
        }
    }

    static InterfaceCurve circle(Vec2 center, double radius) { return {center, {radius}}; }

    /// Axis-aligned ellipse with semi-axes (a, b) about its center. The polar
    /// radius is analytic, so its Fourier coefficients decay geometrically;
    /// they are computed by a dense DFT and truncated at round-off level.
    static InterfaceCurve ellipse(Vec2 center, double a, double b) {
        require(a > 0.0 && b > 0.0, ErrorKind::Parameter, "ellipse semi-axes must be positive");
        const std::size_t n = 1024;
        std::vector<double> samples(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n);
            const double c = std::cos(th), s = std::sin(th);
            samples[i] = a * b / std::sqrt(b * b * c * c + a * a * s * s);
        }
        return from_samples(center, samples, 1e-17);
    }

    /// Least-squares (DFT) fit of equispaced polar samples; drops trailing
    /// harmonics below rel_tol * c0.
    static InterfaceCurve from_samples(Vec2 center, std::span<const double> samples, double rel_tol) {
        const std::size_t n = samples.size();
        const std::size_t kmax = n / 2 - 1;
        std::vector<double> coeffs{0.0};
        for (double v : samples) coeffs[0] += v;
        coeffs[0] /= static_cast<double>(n);
        std::size_t last = 0;
        for (std::size_t k = 1; k <= kmax; ++k) {
            double ak = 0.0, bk = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double th = 2.0 * pi * static_cast<double>(k * i % n) / static_cast<double>(n);
                ak += samples[i] * std::cos(th);
                bk += samples[i] * std::sin(th);
            }
            ak *= 2.0 / static_cast<double>(n);
            bk *= 2.0 / static_cast<double>(n);
            coeffs.push_back(ak);
            coeffs.push_back(bk);
            if (std::abs(ak) + std::abs(bk) > rel_tol * std::abs(coeffs[0])) last = k;
        }
        coeffs.resize(2 * last + 1);
        return {center, std::move(coeffs)};
    }

    Vec2 pole() const { return pole_; }
    const std::vector<double>& coeffs() const { return coeffs_; }
    std::size_t harmonics() const { return coeffs_.size() / 2; }

    double rho(double theta) const { return derivs(theta).r; }

    RhoDerivs derivs(double theta) const {
        RhoDerivs d{coeffs_[0], 0.0, 0.0, 0.0};
        const double c1 = std::cos(theta), s1 = std::sin(theta);
        double ck = 1.0, sk = 0.0;
        for (std::size_t k = 1; k <= harmonics(); ++k) {
            const double cn = ck * c1 - sk * s1;
            sk = sk * c1 + ck * s1;
            ck = cn;
            const double a = coeffs_[2 * k - 1], b = coeffs_[2 * k];
            const double kk = static_cast<double>(k);
            const double cpart = a * ck + b * sk;   // a cos + b sin
            const double spart = -a * sk + b * ck;  // derivative direction
            d.r += cpart;
            d.r1 += kk * spart;
            d.r2 -= kk * kk * cpart;
            d.r3 -= kk * kk * kk * spart;
        }
        return d;
    }

    /// gamma(theta) = pole + rho(theta) (cos theta, sin theta)
    Vec2 point(double theta) const { return pole_ + rho(theta) * polar_unit(theta); }

    /// d gamma / d theta and d^2 gamma / d theta^2.
    std::pair<Vec2, Vec2> tangent_and_accel(double theta) const {
        const RhoDerivs d = derivs(theta);
        const Vec2 er = polar_unit(theta), et = perp(er);
        const Vec2 g1 = d.r1 * er + d.r * et;
        const Vec2 g2 = (d.r2 - d.r) * er + 2.0 * d.r1 * et;
        return {g1, g2};
    }

    /// Outward unit normal at parameter theta (counter-clockwise curve).
    Vec2 normal(double theta) const {
        const Vec2 t = tangent_and_accel(theta).first;
        return unit(Vec2{t.y, -t.x});
    }

    bool contains(Vec2 x) const {
        const Vec2 v = x - pole_;
        return norm(v) < rho(angle_of(v));
    }

    /// Polar residual |x - pole| - rho(theta(x - pole)); negative inside.
    double polar_residual(Vec2 x) const {
        const Vec2 v = x - pole_;
        return norm(v) - rho(angle_of(v));
    }

    double max_radius(std::size_t n = 512) const {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m = std::max(m, rho(2.0 * pi * static_cast<double>(i) / static_cast<double>(n)));
        return m;
    }

private:
    Vec2 pole_{};
    std::vector<double> coeffs_{1.0};
};

/// Curvature of a polar curve: (r^2 + 2 r'^2 - r r'') / (r^2 + r'^2)^{3/2}.
inline double polar_curvature(const RhoDerivs& d) {
    return (d.r * d.r + 2.0 * d.r1 * d.r1 - d.r * d.r2) / std::pow(d.r * d.r + d.r1 * d.r1, 1.5);
}

inline double curvature(const InterfaceCurve& curve, double theta) { return polar_curvature(curve.derivs(theta)); }

struct ConvexityReport {
    double min_kappa = 0.0;
    double argmin = 0.0;
    bool pass = false;
};

inline ConvexityReport check_strict_convexity(const InterfaceCurve& curve, std::size_t n_samples = default_theta_samples) {
    require(n_samples >= 64, ErrorKind::Parameter, "convexity check needs at least 64 samples");
    ConvexityReport rep{std::numeric_limits<double>::infinity(), 0.0, false};
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n_samples);
        const double k = curvature(curve, th);
        if (k < rep.min_kappa) {
            rep.min_kappa = k;
            rep.argmin = th;
        }
    }
    rep.pass = rep.min_kappa > 0.0;
    return rep;
}

/// The curve seen in polar coordinates about an arbitrary interior pole.
/// When the pole differs from the curve's own, rho is found by bisection
/// along each ray (unique crossing for strictly convex curves) and its
/// theta-derivatives follow from the chain rule through the original
/// parametrization.
class PolarView {
public:
    PolarView(const InterfaceCurve& curve, Vec2 pole) : curve_(&curve), pole_(pole) {
        const Vec2 off = pole - curve.pole();
        native_ = norm(off) <= 1e-15 * (1.0 + curve.coeffs()[0]);
        if (!native_) {
            require(curve.contains(pole), ErrorKind::Domain, "pole must lie inside the curve");
            t_hi_ = 2.0 * (curve.max_radius() + norm(off)) + 1.0;
        }
    }

    Vec2 pole() const { return pole_; }
    const InterfaceCurve& curve() const { return *curve_; }

    RhoDerivs derivs(double theta) const {
        if (native_) return curve_->derivs(theta);
        const Vec2 u = polar_unit(theta);
        // bisection along the ray for the crossing point
        double lo = 0.0, hi = t_hi_;
        const double tol = 1e-13 * t_hi_;
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            if (curve_->polar_residual(pole_ + mid * u) < 0.0) lo = mid; else hi = mid;
        }
        const Vec2 y = pole_ + (0.5 * (lo + hi)) * u;
        double psi = angle_of(y - curve_->pole());
        // polish: cross(u, gamma(psi) - pole) = 0
        for (int it = 0; it < 3; ++it) {
            const Vec2 g = curve_->point(psi) - pole_;
            const Vec2 g1 = curve_->tangent_and_accel(psi).first;
            const double G = cross(u, g), G1 = cross(u, g1);
            if (G1 == 0.0) break;
            psi -= G / G1;
        }
        const Vec2 F = curve_->point(psi) - pole_;
        const auto [F1, F2] = curve_->tangent_and_accel(psi);
        const double nF2 = norm2(F), nF = std::sqrt(nF2);
        const double th1 = cross(F, F1) / nF2;  // d theta / d psi
        const double r_psi = dot(F, F1) / nF;
        const double r_psipsi = (norm2(F1) + dot(F, F2)) / nF - dot(F, F1) * dot(F, F1) / (nF2 * nF);
        const double th2 = cross(F, F2) / nF2 - 2.0 * cross(F, F1) * dot(F, F1) / (nF2 * nF2);
        RhoDerivs d;
        d.r = nF;
        d.r1 = r_psi / th1;
        d.r2 = (r_psipsi * th1 - r_psi * th2) / (th1 * th1 * th1);
        d.r3 = 0.0;  // not provided off the native pole
        return d;
    }

    double rho(double theta) const {
        if (native_) return curve_->rho(theta);
        return derivs(theta).r;
    }

    /// y(x): the point where the ray from the pole through x meets the curve.
    Vec2 radial_point(Vec2 x) const {
        const Vec2 v = x - pole_;
        require(norm(v) > 0.0, ErrorKind::Domain, "degenerate ray: point equals the pole");
        const double th = angle_of(v);
        return pole_ + rho(th) * polar_unit(th);
    }

    double rho_of(Vec2 x) const {
        const Vec2 v = x - pole_;
        require(norm(v) > 0.0, ErrorKind::Domain, "degenerate ray: point equals the pole");
        return rho(angle_of(v));
    }

private:
    const InterfaceCurve* curve_;
    Vec2 pole_;
    bool native_ = true;
    double t_hi_ = 0.0;
};

inline Vec2 radial_point(const InterfaceCurve& curve, Vec2 x) { return PolarView(curve, curve.pole()).radial_point(x); }
inline double rho_of(const InterfaceCurve& curve, Vec2 x) { return PolarView(curve, curve.pole()).rho_of(x); }

/// Euclidean distance from x to the curve: dense sampling then golden-section
/// refinement around the best sample. Returns (distance, parameter).
inline std::pair<double, double> distance_to_curve(const InterfaceCurve& curve, Vec2 x,
                                                   std::size_t n = default_theta_samples) {
    const double dth = 2.0 * pi / static_cast<double>(n);
    double best = std::numeric_limits<double>::infinity(), arg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double th = dth * static_cast<double>(i);
        const double d = norm(curve.point(th) - x);
        if (d < best) { best = d; arg = th; }
    }
    double lo = arg - dth, hi = arg + dth;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    auto f = [&](double th) { return norm(curve.point(th) - x); };
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = f(c), fd = f(d);
    for (int it = 0; it < 80; ++it) {
        if (fc < fd) { hi = d; d = c; fd = fc; c = hi - gr * (hi - lo); fc = f(c); }
        else { lo = c; c = d; fc = fd; d = lo + gr * (hi - lo); fd = f(d); }
    }
    const double th = 0.5 * (lo + hi);
    const double dist = f(th);
    if (dist < best) return {dist, th};
    return {best, arg};
}

enum class Region : unsigned char { Exterior = 0, Inner = 1, Outer = 2 };

/// Omega_1 (inside inner) nested in Omega (inside outer); a is the squared speed.
class DomainPair {
public:
    DomainPair(InterfaceCurve inner, InterfaceCurve outer, double a1, double a2,
               std::size_t n_samples = default_theta_samples)
        : inner_(std::move(inner)), outer_(std::move(outer)), a1_(a1), a2_(a2) {
        require(a1 > 0.0 && a2 > 0.0, ErrorKind::Parameter, "speed coefficients must be positive");
        nesting_margin_ = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n_samples; ++i) {
            const double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n_samples);
            const Vec2 p = inner_.point(th);
            const double signed_dist = outer_.contains(p) ? distance_to_curve(outer_, p, 256).first
                                                          : -distance_to_curve(outer_, p, 256).first;
            nesting_margin_ = std::min(nesting_margin_, signed_dist);
        }
        require(nesting_margin_ > 0.0, ErrorKind::Domain, "inner domain closure must lie strictly inside the outer domain");
    }

    const InterfaceCurve& inner() const { return inner_; }
    const InterfaceCurve& outer() const { return outer_; }
    double a1() const { return a1_; }
    double a2() const { return a2_; }
    double nesting_margin() const { return nesting_margin_; }

    /// a1 > a2 > 0, the speed ordering under which the Carleman estimate holds.
    bool speed_ordering_holds() const { return a1_ > a2_ && a2_ > 0.0; }

    Region region_of(Vec2 x) const {
        if (inner_.contains(x)) return Region::Inner;
        if (outer_.contains(x)) return Region::Outer;
        return Region::Exterior;
    }

    double coefficient(Region r) const { return r == Region::Inner ? a1_ : a2_; }

    /// Bounding box of the outer curve: (min corner, max corner).
    std::pair<Vec2, Vec2> bounding_box(std::size_t n = 1024) const {
        Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 p = outer_.point(2.0 * pi * static_cast<double>(i) / static_cast<double>(n));
            lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
            hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
        }
        return {lo, hi};
    }

    double diameter(std::size_t n = 512) const {
        double d = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2 p = outer_.point(2.0 * pi * static_cast<double>(i) / static_cast<double>(n));
            for (std::size_t j = i + 1; j < n; ++j) {
                d = std::max(d, norm(p - outer_.point(2.0 * pi * static_cast<double>(j) / static_cast<double>(n))));
            }
        }
        return d;
    }

private:
    InterfaceCurve inner_;
    InterfaceCurve outer_;
    double a1_;
    double a2_;
    double nesting_margin_ = 0.0;
};

/// Distances attached to a weight pole x0 in Omega_1.
struct PoleData {
    Vec2 x0{};
    double alpha = 0.0;  ///< d(x0, Gamma_1)
    double R_sup = 0.0;  ///< sup over Omega_2 of |x - y(x)|
    double D_max = 0.0;  ///< max over Gamma_1 of |y - x0|
};

inline PoleData pole_data(const DomainPair& dp, Vec2 x0, std::size_t n_samples = default_theta_samples) {
    require(dp.inner().contains(x0), ErrorKind::Domain, "pole must lie inside the inner domain");
    PoleData pd;
    pd.x0 = x0;
    pd.alpha = distance_to_curve(dp.inner(), x0, n_samples).first;
    require(pd.alpha > 0.0, ErrorKind::Domain, "pole on the interface");
    const PolarView view(dp.inner(), x0);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n_samples);
        pd.D_max = std::max(pd.D_max, norm(dp.inner().point(th) - x0));
        const Vec2 xb = dp.outer().point(th);
        pd.R_sup = std::max(pd.R_sup, norm(xb - view.radial_point(xb)));
    }
    return pd;
}

/// Largest admissible cutoff radius for a two-pole weight pair:
/// min(d alpha_1 / D_2, d alpha_2 / D_1) with d = |x1 - x2| / 2, capped so
/// the closed ball stays inside Omega_1.
inline double epsilon_bound(const DomainPair& dp, Vec2 x1, Vec2 x2, std::size_t n_samples = default_theta_samples) {
    require(norm(x1 - x2) > 0.0, ErrorKind::Parameter, "the two poles must differ");
    const PoleData p1 = pole_data(dp, x1, n_samples);
    const PoleData p2 = pole_data(dp, x2, n_samples);
    const double d = 0.5 * norm(x1 - x2);
    const double bound = std::min(d * p1.alpha / p2.D_max, d * p2.alpha / p1.D_max);
    return std::min(bound, std::min(p1.alpha, p2.alpha) * (1.0 - 1e-6));
}

}  // namespace twv
