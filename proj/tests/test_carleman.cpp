#include <gtest/gtest.h>

#include "twv/experiment.hpp"

using namespace twv;

namespace {

Config load(const std::string& name) { return Config::load(std::string(TWV_CONFIG_DIR) + "/" + name); }

DomainPair circles() {
    return DomainPair(InterfaceCurve::circle({0, 0}, 1.0), InterfaceCurve::circle({0, 0}, 2.0), 2.0, 1.0);
}

WeightParams centred_params(Vec2 x0 = {0, 0}) {
    WeightParams p;
    p.x0 = x0;
    p.eps = 0.3;
    p.eps2 = 0.2;
    p.eps1 = 0.1;
    p.beta = 1e-3;
    p.gamma = 0.02;
    p.auto_M();
    return p;
}

std::vector<Bump> two_bumps(double scale) {
    Bump a;
    a.center = {0.4, 0.3};
    a.width = 0.4;
    a.amplitude = scale;
    a.omega = 1.5;
    a.phase = 0.2;
    Bump b;
    b.center = {-1.1, 0.6};
    b.width = 0.35;
    b.amplitude = -0.6 * scale;
    b.omega = 0.7;
    b.phase = 1.0;
    return {a, b};
}

GridOptions small_grid() {
    GridOptions go;
    go.nx = go.ny = 40;
    go.n_boundary = 256;
    return go;
}

}  // namespace

TEST(Carleman, ConjugationIdentityConvergesAtSecondOrder) {
    const Config c = load("ac4_identity.cfg");
    const DomainPair dp = domains_from(c);
    const WeightSetup ws = weights_from(c, dp);
    const auto rows = run_identity(c, dp, ws);
    ASSERT_EQ(rows.size(), 3u);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_LT(rows[i].residual, rows[i - 1].residual);
        EXPECT_GE(rows[i].order, 1.8);
    }
}

TEST(Carleman, ClosedFormFieldsLieInX) {
    const DomainPair dp = circles();
    const BumpField f(dp, two_bumps(1.0), 1.0, 1.0 / 3.0);
    EXPECT_TRUE(certify_in_X(f).pass());

    // independent checks by differences of the closed form
    const double e = 1e-6;
    for (int i = 0; i < 32; ++i) {
        const Vec2 u = polar_unit(2 * pi * i / 32.0);
        const Vec2 y = u;  // on the interface r = 1
        for (double t : {-0.4, 0.1, 0.5}) {
            const double in = f.value(y, Region::Inner, t), out = f.value(y, Region::Outer, t);
            EXPECT_NEAR(in, out, 1e-12);
            const double din = (f.value(y, Region::Inner, t) - f.value(y - e * u, Region::Inner, t)) / e;
            const double dout = (f.value(y + e * u, Region::Outer, t) - f.value(y, Region::Outer, t)) / e;
            // a1 du/dr on the inner side equals a2 du/dr on the outer side
            EXPECT_NEAR(2.0 * din, 1.0 * dout, 1e-4);
            EXPECT_NEAR(f.value(2.0 * u, Region::Outer, t), 0.0, 1e-12);
        }
        EXPECT_NEAR(f.value(0.5 * u, Region::Inner, 1.0), 0.0, 1e-14);
        EXPECT_NEAR(f.value(0.5 * u, Region::Inner, -1.0), 0.0, 1e-14);
    }
}

TEST(Carleman, SigmaPlusIsSubsetOfBoundary) {
    const DomainPair dp = circles();
    const SimGrid g(dp, small_grid());
    const WeightField centred = sample_weight(g, Weight(dp, centred_params()));
    const auto m = sigma_plus_mask(centred);
    ASSERT_EQ(m.size(), g.boundary().size());
    // centred pole on circles: grad phi is radial and outward everywhere
    for (char b : m) EXPECT_TRUE(b);

    const BumpField f(dp, two_bumps(1.0), 1.0, 1.0 / 3.0);
    const QuadratureNodes q = cell_nodes(g);
    const BumpFieldSource src(q, g.boundary(), f, 21);
    const WeightField off = sample_weight(q, g.boundary(), Weight(dp, centred_params({0.3, 0.0})));
    const double s_list[] = {1.0, 4.0};
    const auto r = carleman_ratios_from(q, g.boundary(), dp, src, std::span(&off, 1), s_list, RatioOptions{});
    for (const auto& t : r) {
        EXPECT_LE(t.rhs_sigma_plus, t.rhs_sigma_full * (1 + 1e-12));
        EXPECT_GE(t.ratio_full_sigma(), 0.0);
        EXPECT_LE(t.ratio_full_sigma(), t.ratio() * (1 + 1e-12));
    }
}

TEST(Carleman, WeightedNormIsQuadraticAndPolynomialInS) {
    const DomainPair dp = circles();
    const SimGrid g(dp, small_grid());
    SpaceTimeField f(g.n_active(), 9, -1.0, 0.25), vp(g.n_active(), 9, -1.0, 0.25);
    for (std::size_t n = 0; n < 9; ++n) {
        for (std::size_t k = 0; k < g.n_active(); ++k) {
            const Vec2 x = g.active_center(k);
            const double t = f.time(n);
            f.at(n, k) = std::sin(x.x + 0.3 * t) * std::cos(0.7 * x.y);
            vp.at(n, k) = 1.0 + 0.1 * norm2(x);
        }
    }
    SpaceTimeField f2 = f;
    for (double& v : f2.raw()) v *= 3.0;
    const std::vector<char> mask(g.n_active(), 1);
    const double n1 = weighted_norm(g, f, vp, mask, 1.0, 0.5);
    EXPECT_NEAR(weighted_norm(g, f2, vp, mask, 1.0, 0.5), 9.0 * n1, 1e-10 * n1);

    // N(s) = s l A + (s l)^3 B: recover A, B from s = 1, 2 and predict s = 3
    const double l = 0.5, n2 = weighted_norm(g, f, vp, mask, 2.0, l);
    const double B = (n2 - 2.0 * n1) / (6.0 * l * l * l);
    const double A = (n1 - l * l * l * B) / l;
    EXPECT_NEAR(weighted_norm(g, f, vp, mask, 3.0, l), 3.0 * l * A + 27.0 * l * l * l * B, 1e-9 * n2);

    const std::vector<char> none(g.n_active(), 0);
    EXPECT_EQ(weighted_norm(g, f, vp, none, 1.0, 0.5), 0.0);
}

TEST(Carleman, RatioIsScaleInvariant) {
    const DomainPair dp = circles();
    const SimGrid g(dp, small_grid());
    const QuadratureNodes q = cell_nodes(g);
    const WeightField wf = sample_weight(q, g.boundary(), Weight(dp, centred_params({0.05, 0.0})));
    const BumpField f1(dp, two_bumps(1.0), 1.0, 1.0 / 3.0), f2(dp, two_bumps(-2.5), 1.0, 1.0 / 3.0);
    const double s_list[] = {1.0, 8.0, 64.0};
    const auto r1 = carleman_ratios_from(q, g.boundary(), dp, BumpFieldSource(q, g.boundary(), f1, 21),
                                         std::span(&wf, 1), s_list, RatioOptions{});
    const auto r2 = carleman_ratios_from(q, g.boundary(), dp, BumpFieldSource(q, g.boundary(), f2, 21),
                                         std::span(&wf, 1), s_list, RatioOptions{});
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_TRUE(std::isfinite(r1[i].ratio()));
        EXPECT_NEAR(r2[i].ratio(), r1[i].ratio(), 1e-10 * r1[i].ratio());
        EXPECT_NEAR(r2[i].lhs(), 6.25 * r1[i].lhs(), 1e-10 * r2[i].lhs());
    }
}

TEST(Carleman, ZeroFieldGivesZeroRatio) {
    const DomainPair dp = circles();
    const SimGrid g(dp, small_grid());
    const WeightField wf = sample_weight(g, Weight(dp, centred_params()));
    const SpaceTimeField u(g.n_active(), 11, -1.0, 0.2);
    const RatioTerms r = carleman_ratio(g, u, std::span(&wf, 1), 4.0, RatioOptions{});
    EXPECT_EQ(r.lhs(), 0.0);
    EXPECT_EQ(r.ratio(), 0.0);
    EXPECT_FALSE(r.violation_candidate());
}

TEST(Carleman, LayeredQuadratureResolvesBoundaryConcentration) {
    const DomainPair dp = circles();
    const SimGrid g(dp, small_grid());
    const QuadratureNodes q = layered_nodes(g, 0.1, 12, 512, 4);
    double area = 0.0, layer = 0.0, inner = 0.0;
    const double k = 500.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        area += q.area[i];
        if (q.region[i] == Region::Inner) inner += q.area[i];
        layer += q.area[i] * std::exp(-k * (2.0 - norm(q.x[i])));
    }
    // staircase errors of the cell-centre core are O(h) with h = 0.11 here
    EXPECT_NEAR(area, 4.0 * pi, 0.2 * g.h());
    EXPECT_NEAR(inner, pi, 0.5 * g.h());
    // int_0^2 exp(-k (2 - r)) 2 pi r dr
    const double exact = 2.0 * pi * (2.0 / k - (1.0 - std::exp(-2.0 * k)) / (k * k));
    EXPECT_NEAR(layer, exact, 1e-5 * exact);
}

TEST(Carleman, OnsetDetection) {
    const double single[] = {1.0};
    EXPECT_FALSE(detect_onset(single).has_value());
    const double growing[] = {1, 2, 4, 8, 16};
    EXPECT_FALSE(detect_onset(growing).has_value());
    const double settles[] = {10, 5, 3, 2.9, 2.88, 2.87};
    ASSERT_TRUE(detect_onset(settles).has_value());
    EXPECT_EQ(*detect_onset(settles), 2u);
    const double blip[] = {3, 3.01, 3.02, 4.0, 4.01};
    EXPECT_EQ(*detect_onset(blip), 3u);
    const double bad[] = {1, 1, std::numeric_limits<double>::infinity()};
    EXPECT_FALSE(detect_onset(bad).has_value());
}
