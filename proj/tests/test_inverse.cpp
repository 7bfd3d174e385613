#include <gtest/gtest.h>

#include "twv/experiment.hpp"

using namespace twv;

namespace {

DomainPair circles() {
    return DomainPair(InterfaceCurve::circle({0, 0}, 1.0), InterfaceCurve::circle({0, 0}, 2.0), 2.0, 1.0);
}

GridOptions grid(std::size_t nx, double T) {
    GridOptions go;
    go.nx = go.ny = nx;
    go.T = T;
    return go;
}

std::vector<double> u0_of(const SimGrid& g) {
    return g.sample([](Vec2 x) { return 0.5 + 0.5 * std::exp(-norm2(x - Vec2{0.3, 0.2})); });
}

FluxTrace random_trace(const SimGrid& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N01;
    FluxTrace t = empty_trace(g, g.nt() + 1, 0.0, g.dt());
    for (double& v : t.values) v = N01(rng);
    return t;
}

}  // namespace

TEST(Inverse, AdjointPassesDotProductTest) {
    const SimGrid g(circles(), grid(24, 1.0));
    const std::vector<double> p(g.n_active(), 0.2);
    const SolveResult base = solve_with_potential(g, p, u0_of(g), {}, true);
    const LinearizedOperator op(g, p, *base.field);
    for (std::uint64_t seed : {1u, 2u, 3u}) EXPECT_LE(dot_product_test(op, seed), 1e-8);
}

TEST(Inverse, OperatorMatchesSourceDrivenSolve) {
    const SimGrid g(circles(), grid(32, 0.8));
    const std::vector<double> p(g.n_active(), 0.1);
    const SolveResult base = solve_with_potential(g, p, u0_of(g), {}, true);
    const LinearizedOperator op(g, p, *base.field);
    const std::vector<double> f = g.sample([](Vec2 x) { return std::exp(-norm2(x - Vec2{0.5, -0.4}) / 0.3); });
    const FluxTrace a = op.apply(f);
    const FluxTrace b = solve_linearized(g, p, f, *base.field).trace;
    ASSERT_EQ(a.values.size(), b.values.size());
    double scale = 0.0;
    for (double v : b.values) scale = std::max(scale, std::abs(v));
    ASSERT_GT(scale, 0.0);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-10 * scale);
}

TEST(Inverse, H1NormOfKnownTrace) {
    const SimGrid g(circles(), grid(32, 2.0));
    FluxTrace t = empty_trace(g, g.nt() + 1, 0.0, g.dt());
    for (std::size_t n = 0; n < t.levels(); ++n)
        for (std::size_t b = 0; b < t.points(); ++b) t.at(n, b) = std::sin(t.times[n]);
    double len = 0.0;
    for (double w : t.weights) len += w;
    // int_0^T sin^2 + cos^2 dt times |Gamma|
    EXPECT_NEAR(h1_flux_norm(t), std::sqrt(2.0 * len), 1e-3);
    EXPECT_NEAR(len, 4.0 * pi, 1e-3);
}

TEST(Inverse, H1WeightIsSymmetricAndMatchesNorm) {
    const SimGrid g(circles(), grid(24, 1.0));
    const FluxTrace a = random_trace(g, 5), b = random_trace(g, 6);
    const double n = h1_flux_norm(a);
    EXPECT_NEAR(trace_dot(a, h1_apply(a)), n * n, 1e-10 * n * n);
    const double ab = trace_dot(a, h1_apply(b)), ba = trace_dot(b, h1_apply(a));
    EXPECT_NEAR(ab, ba, 1e-10 * std::abs(ab));
}

TEST(Inverse, ValidateRejectsBadHypotheses) {
    const SimGrid g(circles(), grid(24, 1.0));
    InverseConfig cfg;
    cfg.p.assign(g.n_active(), 0.0);
    cfg.u0 = u0_of(g);
    cfg.r = 0.5;
    EXPECT_NO_THROW(validate(g, cfg));
    cfg.r = 0.6;
    EXPECT_THROW(validate(g, cfg), Error);
    cfg.r = 0.5;
    cfg.p.assign(g.n_active(), 1.5);
    EXPECT_THROW(validate(g, cfg), Error);
}

TEST(Inverse, StabilityRatioRejectsInadmissiblePotentials) {
    const SimGrid g(circles(), grid(24, 1.0));
    InverseConfig cfg;
    cfg.p.assign(g.n_active(), 0.0);
    cfg.u0 = u0_of(g);
    const FluxTrace fp = solve_with_potential(g, cfg.p, cfg.u0, {}, false).trace;
    EXPECT_THROW(stability_ratio(g, cfg, cfg.p, fp), Error);
    EXPECT_THROW(stability_ratio(g, cfg, std::vector<double>(g.n_active(), 2.0), fp), Error);
    const StabilityTrial t = stability_ratio(g, cfg, std::vector<double>(g.n_active(), 0.5), fp);
    EXPECT_TRUE(std::isfinite(t.ratio));
    EXPECT_FALSE(t.near_invisible);
    EXPECT_NEAR(t.l2_diff, 0.5 * std::sqrt(g.interior_area()), 1e-12);
}

TEST(Inverse, RandomPotentialIsAdmissible) {
    const SimGrid g(circles(), grid(32, 1.0));
    for (std::uint64_t t = 0; t < 20; ++t) {
        auto rng = trial_rng(7, t);
        const auto q = random_potential(g, 1.0, 3, true, rng);
        double mx = 0.0, mn = 0.0;
        for (double v : q) {
            mx = std::max(mx, v);
            mn = std::min(mn, v);
        }
        EXPECT_LE(std::max(mx, -mn), 1.0 + 1e-12);
        EXPECT_GE(std::max(mx, -mn), 0.2 - 1e-12);
        EXPECT_TRUE(mx <= 0.0 || mn >= 0.0);
    }
}

TEST(Inverse, TrialGeneratorIsKeyedBySeedAndTrial) {
    auto a = trial_rng(1, 3), b = trial_rng(1, 3), c = trial_rng(1, 4), d = trial_rng(2, 3);
    const auto va = a();
    EXPECT_EQ(va, b());
    EXPECT_NE(va, c());
    EXPECT_NE(va, d());
}

TEST(Inverse, SmallLinearizedRecovery) {
    const SimGrid g(circles(), grid(24, 6.0));
    const std::vector<double> p(g.n_active(), 0.0);
    const SolveResult base = solve_with_potential(g, p, u0_of(g), {}, true);
    const LinearizedOperator op(g, p, *base.field);
    const std::vector<double> truth = g.sample([](Vec2 x) { return std::exp(-norm2(x - Vec2{0.6, -0.4}) / 0.3); });
    CGOptions opt;
    opt.max_iter = 200;
    opt.rel_tol = 1e-8;
    opt.mu = 1e-10;
    const CGReport r = reconstruct_linearized(op, op.apply(truth), opt);
    ASSERT_EQ(r.history.size(), r.step_norms.size());
    EXPECT_LT(r.history.back(), r.history.front());
    std::vector<double> d(truth.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = r.f[k] - truth[k];
    EXPECT_LE(l2_norm(g, d) / l2_norm(g, truth), 0.05);
}
