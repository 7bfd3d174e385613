#include <gtest/gtest.h>

#include "twv/experiment.hpp"

using namespace twv;

namespace {

DomainPair circles(double a1 = 2.0, double a2 = 1.0) {
    return DomainPair(InterfaceCurve::circle({0, 0}, 1.0), InterfaceCurve::circle({0, 0}, 2.0), a1, a2);
}

GridOptions grid(std::size_t nx, double T) {
    GridOptions go;
    go.nx = go.ny = nx;
    go.T = T;
    return go;
}

std::vector<double> bump(const SimGrid& g, Vec2 c, double r) {
    return g.sample([&](Vec2 x) {
        const double v = std::max(0.0, 1.0 - norm2(x - c) / (r * r));
        return v * v * v * v;
    });
}

}  // namespace

TEST(Forward, ManufacturedProfileIsContinuousWithMatchedFlux) {
    RadialProfile p;
    p.r1 = 1.0;
    p.a1 = 2.0;
    p.a2 = 1.0;
    const double e = 1e-7;
    for (int i = 0; i < 16; ++i) {
        const Vec2 u = polar_unit(2 * pi * i / 16.0);
        EXPECT_NEAR(p.value((1 - 1e-12) * u), p.value((1 + 1e-12) * u), 1e-9);
        const double din = (p.value((1 - e) * u) - p.value((1 - 2 * e) * u)) / e;
        const double dout = (p.value((1 + 2 * e) * u) - p.value((1 + e) * u)) / e;
        EXPECT_NEAR(2.0 * din, 1.0 * dout, 1e-4);
        EXPECT_EQ(p.value(1.7 * u), 0.0);
    }
    // a Lap b against a centred difference on each side
    const double h = 1e-4;
    for (Vec2 x : {Vec2{0.3, 0.2}, Vec2{-0.5, 0.4}, Vec2{1.2, 0.3}, Vec2{0.1, -1.4}}) {
        const double a = norm(x) < 1.0 ? 2.0 : 1.0;
        const double lap = (p.value(x + Vec2{h, 0}) + p.value(x - Vec2{h, 0}) + p.value(x + Vec2{0, h}) +
                            p.value(x - Vec2{0, h}) - 4.0 * p.value(x)) / (h * h);
        EXPECT_NEAR(p.alap(x), a * lap, 1e-4 * std::max(1.0, std::abs(p.alap(x))));
    }
}

TEST(Forward, SmoothManufacturedSolutionIsSecondOrder) {
    const DomainPair dp = circles(1.0, 1.0);
    RadialProfile p;
    p.a1 = p.a2 = 1.0;
    const std::size_t nxs[] = {32, 64, 128};
    const auto rows = mms_convergence(dp, p, nxs, 0.5, 1);
    for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_GE(rows[i].order, 1.9) << "nx=" << rows[i].nx;
}

TEST(Forward, InterfaceManufacturedSolutionConverges) {
    const DomainPair dp = circles();
    RadialProfile p;
    p.a1 = 2.0;
    p.a2 = 1.0;
    const std::size_t nxs[] = {32, 64, 128};
    const auto rows = mms_convergence(dp, p, nxs, 0.5, 4);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_LT(rows[i].error, rows[i - 1].error);
        EXPECT_GE(rows[i].order, 1.0) << "nx=" << rows[i].nx;
    }
}

TEST(Forward, EnergyIsConserved) {
    const SimGrid g(circles(), grid(64, 2.0));
    const auto u0 = bump(g, {0.3, 0.2}, 0.5);
    const std::vector<double> p(g.n_active(), 0.5);
    const EnergyReport r = energy_drift(g, p, u0);
    EXPECT_GT(r.e0, 0.0);
    EXPECT_EQ(r.energy.size(), g.nt());
    EXPECT_LE(r.max_rel_drift, 1e-6);
}

TEST(Forward, FiniteSpeedOfPropagation) {
    const SimGrid g(circles(), grid(96, 0.6));
    const FiniteSpeedReport r = finite_speed_check(g, {-0.2, 0.1}, 0.3, 4.0 * g.h());
    EXPECT_TRUE(r.discrete_cone);
    EXPECT_EQ(r.steps, g.nt());
    EXPECT_LE(r.max_outside, 1e-2);
}

TEST(Forward, SolutionIsLinearInData) {
    const SimGrid g(circles(), grid(48, 0.8));
    const auto a = bump(g, {0.3, 0.2}, 0.5), b = bump(g, {-0.9, -0.6}, 0.4);
    std::vector<double> ab(a.size());
    for (std::size_t k = 0; k < a.size(); ++k) ab[k] = a[k] - 2.5 * b[k];
    const std::vector<double> p(g.n_active(), 0.3);
    WaveSolver s(g, p);
    SolveOptions opt;
    const auto ra = solve(s, a, {}, opt), rb = solve(s, b, {}, opt), rab = solve(s, ab, {}, opt);
    for (std::size_t k = 0; k < a.size(); ++k)
        EXPECT_NEAR(rab.final_state.u_curr[k], ra.final_state.u_curr[k] - 2.5 * rb.final_state.u_curr[k], 1e-12);
    for (std::size_t i = 0; i < rab.trace.values.size(); ++i)
        EXPECT_NEAR(rab.trace.values[i], ra.trace.values[i] - 2.5 * rb.trace.values[i], 1e-10);
}

TEST(Forward, LeapfrogIsTimeReversible) {
    const SimGrid g(circles(), grid(48, 1.0));
    const auto u0 = bump(g, {0.3, 0.2}, 0.5);
    WaveSolver s(g);
    WaveState st = s.init(u0);
    const std::vector<double> start_prev = st.u_prev, start_curr = st.u_curr;
    for (std::size_t n = 0; n < 40; ++n) s.step(st);
    std::swap(st.u_prev, st.u_curr);
    for (std::size_t n = 0; n < 40; ++n) s.step(st);
    for (std::size_t k = 0; k < u0.size(); ++k) {
        EXPECT_NEAR(st.u_curr[k], start_prev[k], 1e-11);
        EXPECT_NEAR(st.u_prev[k], start_curr[k], 1e-11);
    }
}

TEST(Forward, ZeroDataGivesZeroSolution) {
    const SimGrid g(circles(), grid(32, 0.5));
    const std::vector<double> z(g.n_active(), 0.0);
    WaveSolver s(g);
    const SolveResult r = solve(s, z, {});
    for (double v : r.final_state.u_curr) EXPECT_EQ(v, 0.0);
    for (double v : r.trace.values) EXPECT_EQ(v, 0.0);
}

TEST(Forward, SnapshotRoundTripAndLayout) {
    const Snapshot s{2, 1, 0.5, 1.25, {1.0, -2.0}};
    const std::string bytes = encode_snapshot(s);
    ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 8 + 8 + 16);
    EXPECT_EQ(bytes.substr(0, 4), "TWV1");
    EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2);
    EXPECT_EQ(static_cast<unsigned char>(bytes[5]), 0);
    EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);
    double h;
    std::memcpy(&h, bytes.data() + 12, 8);
    EXPECT_EQ(h, 0.5);
    const Snapshot d = decode_snapshot(bytes);
    EXPECT_EQ(d.nx, 2u);
    EXPECT_EQ(d.ny, 1u);
    EXPECT_EQ(d.t, 1.25);
    EXPECT_EQ(d.values, s.values);
    EXPECT_THROW(decode_snapshot(bytes.substr(0, bytes.size() - 1)), Error);
    EXPECT_THROW(decode_snapshot("TWV2" + bytes.substr(4)), Error);
}

TEST(Forward, TraceCsvHeader) {
    const SimGrid g(circles(), grid(32, 0.25));
    const auto u0 = bump(g, {0.3, 0.2}, 0.5);
    WaveSolver s(g);
    const SolveResult r = solve(s, u0, {});
    const std::string csv = trace_csv(r.trace).str();
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "time,point_index,arc_length,value");
    EXPECT_EQ(trace_csv(r.trace).size(), r.trace.levels() * r.trace.points());
}
