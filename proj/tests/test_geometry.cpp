#include <gtest/gtest.h>

#include <random>

#include "twv/geometry.hpp"

using namespace twv;

namespace {

// Polar curve derivatives straight from the coefficient list.
struct Polar {
    double r, r1, r2;
};
Polar eval_fourier(const std::vector<double>& c, double th) {
    Polar p{c[0], 0.0, 0.0};
    for (std::size_t k = 1; 2 * k <= c.size(); ++k) {
        const double a = c[2 * k - 1], b = 2 * k < c.size() ? c[2 * k] : 0.0, kk = static_cast<double>(k);
        p.r += a * std::cos(kk * th) + b * std::sin(kk * th);
        p.r1 += kk * (-a * std::sin(kk * th) + b * std::cos(kk * th));
        p.r2 += -kk * kk * (a * std::cos(kk * th) + b * std::sin(kk * th));
    }
    return p;
}

// kappa = (x'y'' - y'x'') / |gamma'|^3 with gamma = rho (cos, sin).
double cross_product_curvature(const Polar& p, double th) {
    const double c = std::cos(th), s = std::sin(th);
    const double x1 = p.r1 * c - p.r * s, y1 = p.r1 * s + p.r * c;
    const double x2 = p.r2 * c - 2.0 * p.r1 * s - p.r * c, y2 = p.r2 * s + 2.0 * p.r1 * c - p.r * s;
    return (x1 * y2 - y1 * x2) / std::pow(x1 * x1 + y1 * y1, 1.5);
}

}  // namespace

TEST(Geometry, CircleCurvatureIsInverseRadius) {
    for (double r : {0.5, 1.0, 2.75}) {
        const auto c = InterfaceCurve::circle({0.3, -0.1}, r);
        for (int i = 0; i < 64; ++i) EXPECT_NEAR(curvature(c, 0.1 * i), 1.0 / r, 1e-8);
    }
}

TEST(Geometry, EllipseVertexCurvatures) {
    const auto e = InterfaceCurve::ellipse({0, 0}, 1.0, 0.5);
    // a / b^2 at (a, 0) and b / a^2 at (0, b)
    EXPECT_NEAR(curvature(e, 0.0), 4.0, 1e-8);
    EXPECT_NEAR(curvature(e, pi), 4.0, 1e-8);
    EXPECT_NEAR(curvature(e, pi / 2), 0.5, 1e-8);
    EXPECT_NEAR(curvature(e, 3 * pi / 2), 0.5, 1e-8);
}

TEST(Geometry, EllipseRadiusMatchesClosedForm) {
    const double a = 1.0, b = 0.5;
    const auto e = InterfaceCurve::ellipse({0, 0}, a, b);
    for (int i = 0; i < 200; ++i) {
        const double th = 0.0314 * i;
        const double c = std::cos(th), s = std::sin(th);
        EXPECT_NEAR(e.rho(th), a * b / std::sqrt(b * b * c * c + a * a * s * s), 1e-12);
    }
}

TEST(Geometry, DumbbellIsNotStrictlyConvex) {
    const InterfaceCurve d({0, 0}, {1.0, 0.0, 0.0, 0.6, 0.0});
    const auto rep = check_strict_convexity(d);
    EXPECT_FALSE(rep.pass);
    EXPECT_LT(rep.min_kappa, 0.0);
    EXPECT_TRUE(check_strict_convexity(InterfaceCurve::circle({0, 0}, 1.0)).pass);
}

TEST(Geometry, CurvatureMatchesCrossProductFormula) {
    const std::vector<double> coeffs{1.0, 0.05, -0.03, 0.04, 0.02, 0.0, 0.01};
    const InterfaceCurve c({0.1, 0.2}, coeffs);
    for (int i = 0; i < 256; ++i) {
        const double th = 2 * pi * i / 256.0;
        EXPECT_NEAR(curvature(c, th), cross_product_curvature(eval_fourier(coeffs, th), th), 1e-8);
    }
}

TEST(Geometry, RadialInvarianceAboutForeignPole) {
    const auto e = InterfaceCurve::ellipse({0, 0}, 1.0, 0.6);
    const Vec2 pole{0.2, -0.1};
    const PolarView v(e, pole);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(-0.9, 0.9);
    for (int i = 0; i < 200; ++i) {
        const Vec2 x{U(rng), 0.6 * U(rng)};
        if (norm(x - pole) < 1e-3) continue;
        const double r0 = v.rho_of(x);
        for (double t : {0.1, 0.5, 2.0, 7.0}) EXPECT_NEAR(v.rho_of(pole + t * (x - pole)), r0, 1e-12);
    }
}

TEST(Geometry, RadialPointLiesOnInterface) {
    const auto e = InterfaceCurve::ellipse({0, 0}, 1.0, 0.6);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> U(-1.5, 1.5);
    for (int i = 0; i < 300; ++i) {
        const Vec2 x{U(rng), U(rng)};
        if (norm(x) < 1e-3) continue;
        const Vec2 y = radial_point(e, x);
        EXPECT_LE(std::abs(e.rho(angle_of(y - e.pole())) - norm(y - e.pole())), 1e-12);
    }
}

TEST(Geometry, RaysFromInteriorPoleCrossStrictlyConvexCurveOnce) {
    const auto e = InterfaceCurve::ellipse({0, 0}, 1.0, 0.6);
    const Vec2 pole{0.3, 0.2};
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(0.0, 2 * pi);
    for (int i = 0; i < 10000; ++i) {
        const Vec2 u = polar_unit(U(rng));
        auto f = [&](Vec2 p) { return norm(p - e.pole()) - e.rho(angle_of(p - e.pole())); };
        int changes = 0;
        double prev = f(pole);
        for (int k = 1; k <= 400; ++k) {
            const double cur = f(pole + (3.0 * k / 400.0) * u);
            if ((cur > 0) != (prev > 0)) ++changes;
            prev = cur;
        }
        ASSERT_EQ(changes, 1);
    }
}

TEST(Geometry, NestingViolationIsRejected) {
    EXPECT_THROW(DomainPair(InterfaceCurve::circle({0, 0}, 2.0), InterfaceCurve::circle({0, 0}, 1.5), 2, 1), Error);
    EXPECT_THROW(DomainPair(InterfaceCurve::circle({0, 0}, 1.0), InterfaceCurve::circle({0, 0}, 2.0), 0, 1), Error);
    const DomainPair dp(InterfaceCurve::circle({0, 0}, 1.0), InterfaceCurve::circle({0, 0}, 2.0), 2, 1);
    EXPECT_NEAR(dp.nesting_margin(), 1.0, 1e-9);
    EXPECT_TRUE(dp.speed_ordering_holds());
    EXPECT_EQ(dp.region_of({0.5, 0}), Region::Inner);
    EXPECT_EQ(dp.region_of({1.5, 0}), Region::Outer);
    EXPECT_EQ(dp.region_of({2.5, 0}), Region::Exterior);
}

TEST(Geometry, PoleDataOnConcentricCircles) {
    const DomainPair dp(InterfaceCurve::circle({0, 0}, 1.0), InterfaceCurve::circle({0, 0}, 2.0), 2, 1);
    const PoleData pd = pole_data(dp, {0, 0});
    EXPECT_NEAR(pd.alpha, 1.0, 1e-9);
    EXPECT_NEAR(pd.R_sup, 1.0, 1e-9);
    EXPECT_NEAR(pd.D_max, 1.0, 1e-9);
    EXPECT_THROW(pole_data(dp, {1.5, 0}), Error);
    // d alpha_j / D_k with d = 0.05, alpha = 0.95, D = 1.05
    EXPECT_NEAR(epsilon_bound(dp, {-0.05, 0}, {0.05, 0}), 0.05 * 0.95 / 1.05, 1e-6);
}
