#include <gtest/gtest.h>

#include "twv/experiment.hpp"

using namespace twv;

namespace {

DomainPair circles(double a1 = 2.0, double a2 = 1.0) {
    return DomainPair(InterfaceCurve::circle({0, 0}, 1.0), InterfaceCurve::circle({0, 0}, 2.0), a1, a2);
}

WeightParams centred(double a1 = 2.0, double a2 = 1.0) {
    WeightParams p;
    p.a1 = a1;
    p.a2 = a2;
    p.x0 = {0, 0};
    p.eps = 0.3;
    p.eps2 = 0.2;
    p.eps1 = 0.1;
    p.beta = 1e-3;
    p.gamma = 0.02;
    p.T = 1.0;
    p.auto_M();
    return p;
}

}  // namespace

TEST(Weights, AnalyticHessianInCutoffFreeAnnulus) {
    const DomainPair dp = circles();
    const Weight w(dp, centred());
    GridOptions go;
    go.nx = go.ny = 64;
    const SimGrid g(dp, go);
    std::size_t checked = 0;
    for (std::size_t k = 0; k < g.n_active(); ++k) {
        const Vec2 x = g.active_center(k);
        if (norm(x) <= 0.2) continue;
        const Region r = g.active_label(k);
        // abar = a2 inside, a1 outside; rho = 1 about the centre
        const double abar = r == Region::Inner ? 1.0 : 2.0;
        const SpatialWeight sw = w.spatial(x, r);
        EXPECT_NEAR(sw.hess.xx, 2.0 * abar, 1e-6);
        EXPECT_NEAR(sw.hess.yy, 2.0 * abar, 1e-6);
        EXPECT_NEAR(sw.hess.xy, 0.0, 1e-6);
        EXPECT_NEAR(sw.lap(), 4.0 * abar, 1e-6);
        EXPECT_NEAR(sw.S, abar * norm2(x), 1e-9);
        ++checked;
    }
    EXPECT_GT(checked, 1000u);
}

TEST(Weights, CertificatePassesOnCentredAndStandardWeights) {
    const DomainPair dp = circles();
    const Prop1Report a = check_prop1(Weight(dp, centred()), GridSpec{128, 64});
    EXPECT_TRUE(a.all_pass());
    EXPECT_GT(a.delta, 0.0);
    EXPECT_GT(a.delta1, 0.0);
    ASSERT_EQ(a.conditions.size(), 6u);

    const Config c = Config::load(std::string(TWV_CONFIG_DIR) + "/ac8_carleman.cfg");
    const WeightSetup ws = weights_from(c, dp);
    for (const auto& r : ws.prop1) {
        EXPECT_TRUE(r.all_pass());
        EXPECT_GT(r.delta1, 0.0);
    }
    EXPECT_TRUE(ws.window.feasible);
    EXPECT_GT(ws.params.gamma, ws.window.gamma_lo);
    EXPECT_LT(ws.params.gamma, ws.window.gamma_hi);
}

TEST(Weights, BrokenGluingFailsContinuity) {
    const DomainPair dp = circles();
    WeightParams p = centred();
    p.M1 += 0.1;
    const Prop1Report r = check_prop1(Weight(dp, p), GridSpec{64, 16});
    EXPECT_FALSE(r.get("c_continuity").pass);
    EXPECT_THROW(validate(p), Error);
}

TEST(Weights, GradientLowerBoundDominatesExplicitBound) {
    const DomainPair dp = circles();
    const WeightParams p = centred();
    const Prop1Report r = check_prop1(Weight(dp, p), GridSpec{96, 16});
    const double abar_min = std::min(p.a1, p.a2), diam = 4.0;
    EXPECT_GE(r.delta, 2.0 * abar_min / (diam * diam) * p.eps);
}

TEST(Weights, PhiIsConstantOnTheInterfacePerSide) {
    const DomainPair dp = circles();
    WeightParams p = centred();
    p.x0 = {0.1, -0.05};
    p.eps = 0.2;
    p.eps2 = 0.13;
    p.eps1 = 0.07;
    const Weight w(dp, p);
    for (Region side : {Region::Inner, Region::Outer}) {
        double mean = 0.0, sq = 0.0;
        const int n = 256;
        for (int i = 0; i < n; ++i) {
            const double v = w.phi(dp.inner().point(2 * pi * i / n), 0.4, side);
            mean += v;
            sq += v * v;
        }
        mean /= n;
        const double var = sq / n - mean * mean;
        EXPECT_LE(var, 1e-10 * std::abs(mean));
        // on the curve r = rho, so phi = abar + M - beta t^2
        EXPECT_NEAR(mean, w.abar(side) + w.M(side) - p.beta * 0.16, 1e-9);
    }
}

TEST(Weights, TimeDerivativesAreExact) {
    const DomainPair dp = circles();
    const WeightParams p = centred();
    const Weight w(dp, p);
    for (double t : {-0.7, 0.0, 0.25, 0.9}) {
        const WeightPoint wp = w.grad_hess_phi({0.5, 0.3}, t);
        EXPECT_EQ(wp.phi_tt, -2.0 * p.beta);
        EXPECT_EQ(wp.phi_t, -2.0 * p.beta * t);
        EXPECT_NEAR(wp.phi_t * wp.phi_t, 4.0 * p.beta * p.beta * t * t, 1e-18);
    }
}

TEST(Weights, CentreValueIsAtLeastM) {
    const DomainPair dp = circles();
    const Weight w(dp, centred());
    for (Vec2 x : {Vec2{0.05, 0.0}, Vec2{0.5, 0.5}, Vec2{1.5, 0.2}}) {
        const Region r = dp.region_of(x);
        EXPECT_GE(w.phi(x, 0.0), w.M(r));
    }
}

TEST(Weights, WindowArithmeticMatchesDirectFormula) {
    const WindowInputs in{2.0, 1.0, 2.0, 1e300, 1.0, 4.0, 8.0};
    const WindowReport ok = parameter_window(in, 0.001);
    // 2 beta / (beta + a1 a2 / diam^2) and 2 min(a) delta1 / (2 beta + max(a) |lap|^2)
    EXPECT_NEAR(ok.gamma_lo, 2 * 0.001 / (0.001 + 2.0 / 16.0), 1e-12);
    EXPECT_NEAR(ok.gamma_hi, 2 * 1.0 * 2.0 / (2 * 0.001 + 2.0 * 64.0), 1e-12);
    EXPECT_TRUE(ok.feasible);
    EXPECT_FALSE(parameter_window(in, 0.05).feasible);
}

TEST(Weights, WindowBoundsAreMonotoneInBeta) {
    const WindowInputs in{2.0, 1.0, 1.8, 1e300, 1.0, 4.0, 13.0};
    double lo = -1.0, hi = 2.0;
    for (double b = 1e-6; b < 0.5; b *= 1.7) {
        const WindowReport r = parameter_window(in, b);
        EXPECT_GE(r.gamma_lo, lo);
        EXPECT_LE(r.gamma_hi, hi);
        lo = r.gamma_lo;
        hi = r.gamma_hi;
    }
}

TEST(Weights, AutoWindowIsFeasibleOrInfeasibleError) {
    const WindowInputs in{2.0, 1.0, 1.8, 1e300, 1.0, 4.0, 13.0};
    const WindowReport r = auto_window(in);
    EXPECT_TRUE(r.feasible);
    const WindowInputs bad{2.0, 1.0, 1e-9, 1e300, 1.0, 4.0, 1e9};
    try {
        auto_window(bad);
        FAIL() << "expected an infeasibility error";
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Infeasible);
    }
}

TEST(Weights, MinimalTimeFormula) {
    const DomainPair dp = circles();
    const PoleData p1 = pole_data(dp, {-0.05, 0}), p2 = pole_data(dp, {0.05, 0});
    const double d0 = std::max((p1.R_sup + p1.alpha) / p1.alpha, (p2.R_sup + p2.alpha) / p2.alpha);
    EXPECT_NEAR(minimal_time(p1, p2, 2.0, 1e-3), d0 * std::sqrt(2.0 / 1e-3), 1e-9);
}

TEST(Weights, AutoMKeepsGluing) {
    WeightParams p = centred();
    p.beta = 0.5;
    p.T = 10.0;
    p.auto_M();
    EXPECT_NEAR(p.M1 - p.M2, p.a1 - p.a2, 1e-12);
    EXPECT_GT(p.M2, p.beta * p.T * p.T);
    EXPECT_NO_THROW(validate(p));
}

TEST(Weights, TimeMonotonicityAtLongHorizon) {
    const DomainPair dp = circles();
    WeightParams p = centred();
    p.beta = 1e-3;
    p.T = 200.0;
    p.auto_M();
    const MonotonicityReport r = check_time_monotonicity(Weight(dp, p), GridSpec{48, 33});
    EXPECT_TRUE(r.pass());
    EXPECT_LE(r.max_time_increase, 0.0);
}
