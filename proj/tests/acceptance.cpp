// Acceptance harness: one PASS/FAIL line per criterion. With no arguments all
// nine run; otherwise only the listed ones (e.g. `acceptance 3 6`).

#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "twv/experiment.hpp"

using namespace twv;

namespace {

Config load(const std::string& name) { return Config::load(std::string(TWV_CONFIG_DIR) + "/" + name); }

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
    template <class T>
    Outcome& note(const std::string& key, const T& v) {
        detail << " " << key << "=" << v;
        return *this;
    }
};

std::string num(double v) { return fmt_num(v); }

// ---------------------------------------------------------------------------

void geometry(Outcome& o) {
    double worst = 0.0;
    for (double r : {0.75, 1.0, 2.5}) {
        const auto c = InterfaceCurve::circle({0.2, -0.1}, r);
        for (int i = 0; i < 256; ++i) worst = std::max(worst, std::abs(curvature(c, 2 * pi * i / 256.0) - 1.0 / r));
    }
    const auto e = InterfaceCurve::ellipse({0, 0}, 1.0, 0.5);
    for (double th : {0.0, pi}) worst = std::max(worst, std::abs(curvature(e, th) - 4.0));
    for (double th : {pi / 2, 3 * pi / 2}) worst = std::max(worst, std::abs(curvature(e, th) - 0.5));
    o.check(worst <= 1e-8, "curvature error " + num(worst));
    o.check(check_strict_convexity(e).pass, "ellipse convex");
    const InterfaceCurve dumbbell({0, 0}, {1.0, 0.0, 0.0, 0.6, 0.0});
    const auto d = check_strict_convexity(dumbbell);
    o.check(!d.pass, "dumbbell rejected");
    o.note("max_curvature_error", num(worst)).note("dumbbell_min_kappa", num(d.min_kappa));

    const DomainPair dp = domains_from(load("ac1_geometry.cfg"));
    for (const auto& row : geometry_report(dp, default_theta_samples)) o.check(row.pass, row.quantity);
}

void weights(Outcome& o) {
    const Config c = load("ac2_weights.cfg");
    const DomainPair dp = domains_from(c);
    const WeightSetup ws = weights_from(c, dp);
    const Weight w = ws.weight(dp, 0);
    const SimGrid g(dp, grid_options_from(c));
    double err = 0.0;
    std::size_t n = 0;
    for (std::size_t k = 0; k < g.n_active(); ++k) {
        const Vec2 x = g.active_center(k);
        if (norm(x - ws.poles[0]) <= ws.params.eps) continue;
        const Region r = g.active_label(k);
        // centred in the unit circle: S = abar |x|^2, abar = a2 inside, a1 outside
        const double abar = r == Region::Inner ? dp.a2() : dp.a1();
        const SpatialWeight sw = w.spatial(x, r);
        err = std::max({err, std::abs(sw.hess.xx - 2 * abar), std::abs(sw.hess.yy - 2 * abar), std::abs(sw.hess.xy),
                        std::abs(sw.lap() - 4 * abar)});
        ++n;
    }
    o.check(n > 1000 && err <= 1e-6, "analytic hessian error " + num(err));
    o.note("hessian_error", num(err)).note("cells", n);

    const Prop1Report rep = check_prop1(w, GridSpec{128, 64});
    o.check(rep.all_pass(), "conditions (a)-(f)");
    o.check(rep.delta > 0.0 && rep.delta1 > 0.0, "delta, delta1 > 0");
    o.note("delta", num(rep.delta)).note("delta1", num(rep.delta1));

    WeightParams bad = w.params();
    bad.M1 += 0.1;
    const Prop1Report b = check_prop1(Weight(dp, bad), GridSpec{128, 64});
    const bool cd_fail = !b.get("c_continuity").pass || !b.get("d_transmission").pass;
    o.check(cd_fail, "perturbed M1 - M2 detected");
    o.note("perturbed_c", b.get("c_continuity").pass ? "pass" : "fail")
        .note("perturbed_d", b.get("d_transmission").pass ? "pass" : "fail");
}

void window(Outcome& o) {
    const Config c = load("ac3_window.cfg");
    const DomainPair dp = domains_from(c);
    const WindowInputs in = weight_basis(c, dp).window_inputs;
    o.check(in.a1 == 2 && in.a2 == 1 && in.delta1 == 2 && in.diam == 4 && in.norm_laplacian == 8, "inputs");
    const double beta = 0.001;
    const WindowReport r = parameter_window(in, beta);
    const double lo = 2 * beta / (beta + in.a1 * in.a2 / (in.diam * in.diam));
    const double hi = 2 * std::min(in.a1, in.a2) * in.delta1 /
                      (2 * beta + std::max(in.a1, in.a2) * in.norm_laplacian * in.norm_laplacian);
    o.check(r.feasible && r.gamma_lo < r.gamma_hi, "beta = 0.001 feasible");
    o.check(std::abs(r.gamma_lo - lo) <= 1e-12 && std::abs(r.gamma_hi - hi) <= 1e-12, "gamma interval arithmetic");
    o.check(!parameter_window(in, 0.05).feasible, "beta = 0.05 infeasible");
    o.note("gamma_lo", num(r.gamma_lo)).note("gamma_hi", num(r.gamma_hi)).note("beta_max", num(r.beta_max));
}

void identity(Outcome& o) {
    const Config c = load("ac4_identity.cfg");
    const DomainPair dp = domains_from(c);
    const auto rows = run_identity(c, dp, weights_from(c, dp));
    o.check(rows.size() >= 3, "three refinements");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        o.check(rows[i].order >= 1.8, "order at h=" + num(rows[i].h));
        o.note("order", num(rows[i].order));
    }
}

void forward(Outcome& o) {
    const std::size_t nxs[] = {64, 128, 256};
    {
        const DomainPair dp(InterfaceCurve::circle({0, 0}, 1.0), InterfaceCurve::circle({0, 0}, 2.0), 1.0, 1.0);
        RadialProfile p;
        p.a1 = p.a2 = 1.0;
        const auto rows = mms_convergence(dp, p, nxs, 0.5, 1);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            o.check(rows[i].order >= 1.9, "smooth order at nx=" + std::to_string(rows[i].nx));
            o.note("smooth_order", num(rows[i].order));
        }
    }
    const Config c = load("ac5_forward.cfg");
    const DomainPair dp = domains_from(c);
    {
        RadialProfile p;
        p.a1 = dp.a1();
        p.a2 = dp.a2();
        const auto rows = mms_convergence(dp, p, nxs, 0.5, 4);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            o.check(rows[i].order >= 1.0, "interface order at nx=" + std::to_string(rows[i].nx));
            o.note("interface_order", num(rows[i].order));
        }
    }
    const SimGrid g(dp, grid_options_from(c));
    const double pot = c.number("forward.potential");
    o.check(pot >= 0.0, "p >= 0");
    const EnergyReport e = energy_drift(g, std::vector<double>(g.n_active(), pot), forward_initial_data(c, g));
    o.check(e.max_rel_drift <= 1e-6, "energy drift");
    o.note("energy_drift", num(e.max_rel_drift));

    const FiniteSpeedReport f = finite_speed_check(g, c.point("forward.u0.center"), c.number("forward.u0.radius"), 4 * g.h());
    o.check(f.discrete_cone && f.steps == g.nt(), "discrete cone every step");
    o.check(f.max_outside <= 1e-2, "amplitude outside physical cone");
    o.note("outside_cone", num(f.max_outside));
}

void rays(Outcome& o) {
    Config c = load("ac6_rays.cfg");
    const DomainPair fast = domains_from(c);
    const RayRunReport a = run_rays(c, fast);
    o.check(a.origins == 512 && a.crossing.rays == 512 * 720, "sample count");
    o.check(a.crossing.fraction == 1.0, "fast inner medium: all rays cross");
    o.note("fraction_fast", num(a.crossing.fraction));

    c.set("geometry.a1=" + num(fast.a2()));
    c.set("geometry.a2=" + num(fast.a1()));
    c.set("rays.origins=0");
    c.set("rays.origin=[0.5, 0.2]");
    c.set("rays.events=false");
    const DomainPair slow = domains_from(c);
    const RayRunReport b = run_rays(c, slow);
    const double cone = std::asin(std::sqrt(slow.a1() / slow.a2()));
    const double deg = pi / 180;
    o.check(std::abs(cone - pi / 6) < 1e-15 && b.critical_angle && std::abs(*b.critical_angle - cone) < 1e-15,
            "critical angle");
    o.check(b.crossing.fraction < 1.0, "slow inner medium traps rays");
    o.check(std::abs(b.crossing.min_trapped_incidence - cone) <= deg, "trapped cone edge");
    o.check(b.crossing.max_exit_incidence <= cone && b.crossing.max_exit_incidence >= cone - deg, "exit cone edge");
    o.note("fraction_slow", num(b.crossing.fraction))
        .note("min_trapped_deg", num(b.crossing.min_trapped_incidence / deg))
        .note("max_exit_deg", num(b.crossing.max_exit_incidence / deg));
}

void envelope(Outcome& o) {
    const Config c = load("ac7_envelope.cfg");
    const DomainPair dp = domains_from(c);
    const EnvelopeResult r = run_envelope(c, dp);
    o.check(r.hausdorff && !r.low_coverage, "circle reconstruction produced");
    o.check(r.hausdorff && *r.hausdorff <= 2 * r.field.h, "circle Hausdorff <= 2h");
    o.note("circle_hausdorff", num(r.hausdorff.value_or(NAN))).note("h", num(r.field.h));

    const DomainPair ell(InterfaceCurve::ellipse({0, 0}, 1.0, 0.7), dp.outer(), dp.a1(), dp.a2());
    EnvelopeOptions opt;
    opt.nx = c.count("envelope.nx", opt.nx);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t n : {16, 64, 256}) {
        const EnvelopeResult e = envelope_reconstruct(distance_traveltimes(ell, n), ell.a2(), ell.outer(), opt, &ell.inner());
        const double hd = e.hausdorff.value_or(NAN);
        o.check(hd < prev, "ellipse error decreases at " + std::to_string(n));
        o.note("ellipse_" + std::to_string(n), num(hd));
        prev = hd;
    }
}

void carleman(Outcome& o) {
    const Config c = load("ac8_carleman.cfg");
    const DomainPair dp = domains_from(c);
    const SweepReport r = run_carleman_sweep(c, dp, weights_from(c, dp));
    o.check(r.fields == 100 && r.fields_outside_X == 0, "100 fields in X");
    for (const auto& row : r.rows) o.check(row.finite && std::isfinite(row.max_ratio), "finite at s=" + num(row.s));
    o.note("fields", r.fields).note("nodes", r.nodes);
    for (std::size_t li = 0; li < r.lambdas.size(); ++li) {
        const auto on = r.onset[li];
        o.check(on.has_value(), "onset detected");
        if (!on) continue;
        double change = 0.0;
        for (std::size_t i = *on; i + 1 < r.s.size(); ++i) {
            const double a = r.at(li, i).max_ratio, b = r.at(li, i + 1).max_ratio;
            change = std::max(change, std::abs(b - a) / a);
        }
        o.check(*on + 1 < r.s.size() && change < 0.05, "ensemble max settles past onset");
        bool grows = true;
        for (std::size_t i = *on; i + 1 < r.s.size(); ++i) grows = grows && r.at(li, i + 1).max_nobd > r.at(li, i).max_nobd;
        const double growth = r.at(li, r.s.size() - 1).max_nobd / r.at(li, 0).max_nobd;
        o.check(grows && growth >= 100.0, "ablated ratio grows");
        o.note("lambda", num(r.lambdas[li]))
            .note("onset_s", num(r.s[*on]))
            .note("max_change", num(change))
            .note("ratio", num(r.at(li, r.s.size() - 1).max_ratio))
            .note("ablation_growth", num(growth));
    }
}

void inverse(Outcome& o) {
    Config c = load("ac9_inverse.cfg");
    const DomainPair dp = domains_from(c);
    const InverseSetup s = inverse_from(c, dp);
    o.check(s.T0 > 0.0 && std::abs(s.T - 1.1 * s.T0) <= 1e-12 * s.T, "T = 1.1 T0");
    o.check(s.grid->nx() == 64 && s.cfg.cg.mu == 1e-8, "64^2, mu = 1e-8");
    o.note("T0", num(s.T0)).note("T", num(s.T));

    c.set("inverse.mode=linearized");
    const ReconstructionReport lin = run_reconstruct(c, s);
    o.check(lin.rel_error <= 0.05, "linearized error");
    o.check(lin.dot_test <= 1e-8, "adjoint dot test");
    o.note("linearized_error", num(lin.rel_error)).note("dot_test", num(lin.dot_test));

    c.set("inverse.mode=potential");
    c.set("inverse.target.centers=[0.5, -0.3]");
    c.set("inverse.target.scales=[0.4]");
    c.set("inverse.target.amplitudes=[0.1]");
    const ReconstructionReport pot = run_reconstruct(c, s);
    o.check(pot.rel_error <= 0.10 && pot.outer_iterations <= 10, "potential error within 10 iterations");
    o.note("potential_error", num(pot.rel_error)).note("outer_iterations", pot.outer_iterations);

    const StabilityReport st = run_stability(c, s);
    std::size_t invisible = 0;
    for (const auto& t : st.trials) invisible += t.near_invisible;
    o.check(st.trials.size() == 50, "50 trials");
    o.check(st.all_finite && std::isfinite(st.max_ratio), "stability ratios finite");
    o.check(invisible == 0, "no near-invisible trials");
    o.check(st.spread() <= 2.0, "max within x2 of median");
    o.note("stability_max", num(st.max_ratio)).note("stability_median", num(st.median_ratio)).note("spread", num(st.spread()));
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;  ///< <= 0: none stated
    std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "geometry", 1, geometry},        {2, "weights", 30, weights},     {3, "window", 0, window},
        {4, "identity", 60, identity},       {5, "forward", 300, forward},    {6, "rays", 30, rays},
        {7, "envelope", 0, envelope},        {8, "carleman", 1200, carleman}, {9, "inverse", 1800, inverse},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& cr : all) {
        if (!only.empty() && !only.count(cr.id)) continue;
        Outcome o;
        const Stopwatch sw;
        try {
            cr.run(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << " [exception: " << e.what() << "]";
        }
        const double t = sw.seconds();
        std::string budget = "no budget";
        if (cr.budget_s > 0) {
            budget = "budget " + num(cr.budget_s) + " s";
            o.check(t < cr.budget_s, "runtime");
        }
        std::printf("AC%d %-9s %s  %.2f s (%s)%s\n", cr.id, cr.name, o.pass ? "PASS" : "FAIL", t, budget.c_str(),
                    o.detail.str().c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    std::printf("%d criteria failed\n", failed);
    return failed == 0 ? 0 : 1;
}
