#pragma once
/**
 * @file experiment.hpp
 * @brief Config-driven setup (geometry, weights, grids) and the experiment
 * runners shared by the command-line tool and the acceptance harness.
 */

#include <chrono>
#include <memory>
#include <random>
#include <set>

#include "twv/carleman.hpp"
#include "twv/config.hpp"
#include "twv/inverse.hpp"
#include "twv/io.hpp"
#include "twv/raytrace.hpp"

namespace twv {

/// Generator for trial `trial` of a run seeded with `seed`. Each trial has its
/// own stream, so results do not depend on the order trials are executed in.
inline std::mt19937_64 trial_rng(std::uint64_t seed, std::uint64_t trial) {
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(trial >> 32)};
    return std::mt19937_64(ss);
}

class Stopwatch {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Config keys

/// Every key any subcommand reads. Configs are shared between subcommands,
/// so a key is accepted if some subcommand understands it.
inline const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> k{
            "geometry.a1", "geometry.a2", "geometry.theta_samples",
            "grid.nx", "grid.ny", "grid.nt", "grid.T", "grid.cfl", "grid.box_scale", "grid.n_boundary",
            "weights.pole", "weights.pole1", "weights.pole2", "weights.eps", "weights.eps1", "weights.eps2",
            "weights.eps_fraction", "weights.beta", "weights.gamma", "weights.M1", "weights.M2", "weights.T",
            "weights.nx", "weights.nt",
            "window.delta1", "window.norm_laplacian", "window.diam", "window.M", "window.T", "window.betas",
            "sweep.s", "sweep.lambda", "sweep.ensemble", "sweep.seed", "sweep.levels", "sweep.refine", "sweep.layer",
            "sweep.layer_panels", "sweep.layer_theta", "sweep.field", "sweep.bumps", "sweep.onset_tol",
            "identity.h", "identity.s", "identity.lambda", "identity.t", "identity.points",
            "forward.u0.amplitude", "forward.u0.center", "forward.u0.radius", "forward.potential",
            "forward.snapshot_every",
            "rays.origin", "rays.origins", "rays.seed", "rays.angles", "rays.max_events", "rays.events",
            "envelope.samples", "envelope.nx", "envelope.box_scale", "envelope.pgm",
            "inverse.T", "inverse.T_factor", "inverse.m", "inverse.r", "inverse.p", "inverse.u0.base",
            "inverse.u0.amplitude", "inverse.u0.center", "inverse.u0.scale", "inverse.mu", "inverse.cg_iters",
            "inverse.cg_tol", "inverse.outer_iters", "inverse.outer_tol", "inverse.trials", "inverse.bumps",
            "inverse.same_sign", "inverse.seed", "inverse.mode", "inverse.noise", "inverse.target.centers",
            "inverse.target.scales", "inverse.target.amplitudes"};
        for (const char* curve : {"geometry.inner", "geometry.outer"})
            for (const char* f : {"shape", "center", "radius", "axes", "pole", "fourier"})
                k.insert(std::string(curve) + "." + f);
        return k;
    }();
    return keys;
}

/// Throws a Config error listing every key no subcommand understands.
inline void check_known_keys(const Config& c) {
    std::string unknown;
    for (const auto& [k, v] : c.entries())
        if (!known_keys().count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    require(unknown.empty(), ErrorKind::Config, "unknown config keys: " + unknown);
}

// ---------------------------------------------------------------------------
// Geometry

/// `<prefix>.shape` = circle (center, radius) | ellipse (center, axes) | fourier (pole, fourier).
inline InterfaceCurve curve_from(const Config& c, const std::string& prefix) {
    const std::string shape = c.string(prefix + ".shape", "circle");
    if (shape == "circle") return InterfaceCurve::circle(c.point(prefix + ".center", {}), c.number(prefix + ".radius"));
    if (shape == "ellipse") {
        const auto ax = c.list(prefix + ".axes");
        require(ax.size() == 2, ErrorKind::Config, prefix + ".axes must be [a, b]");
        return InterfaceCurve::ellipse(c.point(prefix + ".center", {}), ax[0], ax[1]);
    }
    if (shape == "fourier") return InterfaceCurve(c.point(prefix + ".pole", {}), c.list(prefix + ".fourier"));
    throw Error(ErrorKind::Config, prefix + ".shape must be circle, ellipse or fourier");
}

inline DomainPair domains_from(const Config& c) {
    return DomainPair(curve_from(c, "geometry.inner"), curve_from(c, "geometry.outer"), c.number("geometry.a1"),
                      c.number("geometry.a2"), c.count("geometry.theta_samples", default_theta_samples));
}

inline bool concentric_circles(const DomainPair& dp) { return BumpField::supported(dp); }

struct ReportRow {
    std::string quantity;
    double value = 0.0;
    bool pass = true;
};

inline std::vector<ReportRow> geometry_report(const DomainPair& dp, std::size_t n_samples) {
    std::vector<ReportRow> rows;
    const ConvexityReport conv = check_strict_convexity(dp.inner(), n_samples);
    rows.push_back({"inner_min_curvature", conv.min_kappa, conv.pass});
    rows.push_back({"inner_min_curvature_angle", conv.argmin, true});
    rows.push_back({"outer_min_curvature", check_strict_convexity(dp.outer(), n_samples).min_kappa, true});
    rows.push_back({"nesting_margin", dp.nesting_margin(), dp.nesting_margin() > 0.0});
    rows.push_back({"speed_ordering_a1_gt_a2", dp.a1() - dp.a2(), dp.speed_ordering_holds()});
    rows.push_back({"inner_harmonics", static_cast<double>(dp.inner().harmonics()), true});
    rows.push_back({"diameter", dp.diameter(), true});
    return rows;
}

// ---------------------------------------------------------------------------
// Grid

inline GridOptions grid_options_from(const Config& c) {
    GridOptions o;
    o.nx = c.count("grid.nx", o.nx);
    o.ny = c.count("grid.ny", o.nx);
    o.T = c.number("grid.T", o.T);
    o.cfl = c.number("grid.cfl", o.cfl);
    o.box_scale = c.number("grid.box_scale", o.box_scale);
    o.n_boundary = c.count("grid.n_boundary", 0);
    return o;
}

// ---------------------------------------------------------------------------
// Weights

/// Poles, cutoffs and weight-certificate data, plus the resolved (beta, gamma, M).
struct WeightSetup {
    WeightParams params;             ///< x0 is set per pole by weight()
    std::vector<Vec2> poles;
    std::vector<PoleData> pole_info;
    std::vector<Prop1Report> prop1;  ///< one per pole (empty when overridden)
    WindowInputs window_inputs;
    WindowReport window;
    bool M_auto = true;
    double T0 = 0.0;
    GridSpec spec;

    Weight weight(const DomainPair& dp, std::size_t j) const {
        WeightParams p = params;
        p.x0 = poles.at(j);
        return Weight(dp, p);
    }
};

/// Everything except the parameter window. Keys under `weights.` and
/// `window.` (the latter overrides measured window inputs).
inline WeightSetup weight_basis(const Config& c, const DomainPair& dp) {
    WeightSetup w;
    WeightParams& p = w.params;
    p.a1 = dp.a1();
    p.a2 = dp.a2();
    const Vec2 ip = dp.inner().pole();
    if (c.has("weights.pole")) {
        w.poles = {c.point("weights.pole")};
    } else {
        w.poles = {c.point("weights.pole1", ip + Vec2{-0.05, 0.0}), c.point("weights.pole2", ip + Vec2{0.05, 0.0})};
    }
    for (const Vec2& x : w.poles) w.pole_info.push_back(pole_data(dp, x));

    const double frac = c.number("weights.eps_fraction", 0.9);
    require(frac > 0.0 && frac < 1.0, ErrorKind::Config, "weights.eps_fraction must lie in (0, 1)");
    if (c.is_auto("weights.eps") || !c.has("weights.eps")) {
        const double bound = w.poles.size() == 2 ? epsilon_bound(dp, w.poles[0], w.poles[1]) : w.pole_info[0].alpha;
        p.eps = frac * bound;
    } else {
        p.eps = c.number("weights.eps");
    }
    p.eps2 = c.number("weights.eps2", 2.0 * p.eps / 3.0);
    p.eps1 = c.number("weights.eps1", p.eps / 3.0);
    p.T = c.number("weights.T", c.number("grid.T", 1.0));
    p.beta = 0.0;
    if (c.is_auto("weights.M2") || !c.has("weights.M2")) {
        w.M_auto = true;
        p.auto_M();
    } else {
        w.M_auto = false;
        p.M2 = c.number("weights.M2");
        p.M1 = c.number("weights.M1", p.M2 + p.a1 - p.a2);
    }
    w.spec = GridSpec{c.count("weights.nx", c.count("grid.nx", 128)), c.count("weights.nt", c.count("grid.nt", 64))};

    WindowInputs& in = w.window_inputs;
    in.a1 = p.a1;
    in.a2 = p.a2;
    in.T = p.T;
    in.M = w.M_auto ? std::numeric_limits<double>::max() : p.M_min();
    in.diam = c.number("window.diam", 0.0);
    const bool need_prop1 = !c.has("window.delta1") || !c.has("window.norm_laplacian");
    if (need_prop1) {
        in.delta1 = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < w.poles.size(); ++j) {
            w.prop1.push_back(check_prop1(w.weight(dp, j), w.spec));
            in.delta1 = std::min(in.delta1, w.prop1.back().delta1);
            in.norm_laplacian = std::max(in.norm_laplacian, w.prop1.back().norm_laplacian);
        }
    }
    in.delta1 = c.number("window.delta1", in.delta1);
    in.norm_laplacian = c.number("window.norm_laplacian", in.norm_laplacian);
    if (in.diam == 0.0) in.diam = dp.diameter();
    if (c.has("window.M")) in.M = c.number("window.M");
    if (c.has("window.T")) in.T = c.number("window.T");
    return w;
}

inline std::string describe(const WindowReport& r) {
    return "beta=" + fmt_num(r.beta) + " beta_max=" + fmt_num(r.beta_max) + " gamma in (" + fmt_num(r.gamma_lo) +
           ", " + fmt_num(r.gamma_hi) + ")";
}

/// Fixes beta (`weights.beta` = auto | number), gamma (auto = window midpoint)
/// and, when M is auto, raises M above beta T^2. Throws Infeasible.
inline void resolve_window(const Config& c, WeightSetup& w) {
    if (c.is_auto("weights.beta") || !c.has("weights.beta")) {
        w.window = auto_window(w.window_inputs);
    } else {
        w.window = parameter_window(w.window_inputs, c.number("weights.beta"));
        require(w.window.feasible, ErrorKind::Infeasible, "parameter window is empty: " + describe(w.window));
    }
    WeightParams& p = w.params;
    p.beta = w.window.beta;
    if (c.is_auto("weights.gamma") || !c.has("weights.gamma")) {
        p.gamma = w.window.gamma_mid();
    } else {
        p.gamma = c.number("weights.gamma");
        require(w.window.gamma_lo < p.gamma && p.gamma < w.window.gamma_hi, ErrorKind::Infeasible,
                "gamma outside the window: " + describe(w.window));
    }
    if (w.M_auto) p.auto_M();
    w.T0 = minimal_time(w.pole_info.front(), w.pole_info.back(), p.a1, p.beta);
}

inline WeightSetup weights_from(const Config& c, const DomainPair& dp) {
    WeightSetup w = weight_basis(c, dp);
    resolve_window(c, w);
    return w;
}

/// (condition, value, threshold, pass) rows for every pole, then the time
/// monotonicity checks.
inline CsvTable weights_check_table(const DomainPair& dp, const WeightSetup& w) {
    CsvTable t({"pole", "condition", "value", "threshold", "pass"});
    for (std::size_t j = 0; j < w.poles.size(); ++j) {
        const std::string pj = std::to_string(j + 1);
        const Prop1Report rep = j < w.prop1.size() ? w.prop1[j] : check_prop1(w.weight(dp, j), w.spec);
        for (const auto& cnd : rep.conditions)
            t.row({pj, cnd.name, fmt_num(cnd.value), fmt_num(cnd.threshold), cnd.pass ? "true" : "false"});
        t.row({pj, "delta", fmt_num(rep.delta), "0", rep.delta > 0.0 ? "true" : "false"});
        t.row({pj, "delta1", fmt_num(rep.delta1), "0", rep.delta1 > 0.0 ? "true" : "false"});
        t.row({pj, "norm_laplacian", fmt_num(rep.norm_laplacian), "", "true"});
        t.row({pj, "grid_spacing", fmt_num(rep.grid_spacing), "", "true"});
        const MonotonicityReport mono = check_time_monotonicity(w.weight(dp, j), w.spec);
        t.row({pj, "time_decrease", fmt_num(mono.max_time_increase), "0", mono.time_decreasing ? "true" : "false"});
        t.row({pj, "endpoint_below_M", fmt_num(mono.max_endpoint_excess), "0", mono.endpoint_ok ? "true" : "false"});
        t.row({pj, "endpoint_window", fmt_num(mono.delta_window), "0", mono.delta_window > 0.0 ? "true" : "false"});
    }
    const auto& p = w.params;
    t.row({"all", "beta", fmt_num(p.beta), fmt_num(w.window.beta_max), w.window.beta_ok ? "true" : "false"});
    t.row({"all", "gamma", fmt_num(p.gamma), fmt_num(w.window.gamma_lo) + ";" + fmt_num(w.window.gamma_hi),
           w.window.feasible ? "true" : "false"});
    t.row({"all", "M1", fmt_num(p.M1), "", "true"});
    t.row({"all", "M2", fmt_num(p.M2), "", "true"});
    t.row({"all", "T0", fmt_num(w.T0), "", "true"});
    return t;
}

/// One row per beta: the window and whether it is open.
inline CsvTable window_table(const WindowInputs& in, std::span<const double> betas) {
    CsvTable t({"beta", "beta_max", "gamma_lo", "gamma_hi", "feasible"});
    for (double b : betas) {
        const WindowReport r = parameter_window(in, b);
        t.row({fmt_num(b), fmt_num(r.beta_max), fmt_num(r.gamma_lo), fmt_num(r.gamma_hi), r.feasible ? "true" : "false"});
    }
    return t;
}

// ---------------------------------------------------------------------------
// Carleman sweep

struct SweepRow {
    double s = 0.0, lambda = 0.0;
    double max_ratio = 0.0;   ///< ensemble max of lhs / rhs
    double lhs = 0.0, rhs = 0.0;  ///< terms of the maximising field
    double max_nobd = 0.0;    ///< ensemble max of lhs / interior rhs
    bool finite = true;
};

struct SweepReport {
    std::vector<double> s, lambdas;
    std::vector<SweepRow> rows;  ///< lambda-major
    std::vector<std::optional<std::size_t>> onset;  ///< per lambda, index into s
    std::string field_kind;
    std::size_t fields = 0;
    std::size_t nodes = 0;
    std::size_t fields_outside_X = 0;

    const SweepRow& at(std::size_t li, std::size_t si) const { return rows[li * s.size() + si]; }
};

namespace detail {

inline std::vector<double> sample_gaussians(const SimGrid& g, std::span<const Bump> bumps, double taper) {
    const DomainPair& dp = g.domains();
    std::vector<double> u(g.n_active());
    for (std::size_t k = 0; k < u.size(); ++k) {
        const Vec2 x = g.active_center(k);
        double v = 0.0;
        for (const auto& b : bumps) v += b.amplitude * std::exp(-norm2(x - b.center) / (2.0 * b.width * b.width));
        u[k] = v * smooth_step(distance_to_curve(dp.outer(), x, 64).first / taper).value;
    }
    return u;
}

/// Solver-generated member of X: the field from random initial data on
/// [0, T], extended evenly to [-T, T] and cut off near +-T.
inline SpaceTimeField solver_field(const SimGrid& g, std::span<const Bump> bumps) {
    const std::vector<double> u0 = sample_gaussians(g, bumps, 0.2);
    WaveSolver solver(g);
    SolveOptions opt;
    opt.store_field = true;
    opt.record_trace = false;
    const SolveResult r = solve(solver, u0, {}, opt);
    const double T = g.options().T;
    return time_cutoff(even_extension(*r.field), T / 3.0);
}

}  // namespace detail

/// Keys: sweep.s, sweep.lambda, sweep.ensemble, sweep.seed, sweep.levels,
/// sweep.refine, sweep.layer, sweep.layer_panels, sweep.layer_theta,
/// sweep.field (auto | closed_form | solver), sweep.bumps, sweep.onset_tol.
inline SweepReport run_carleman_sweep(const Config& c, const DomainPair& dp, const WeightSetup& ws) {
    SweepReport rep;
    rep.s = c.list("sweep.s");
    rep.lambdas = c.list("sweep.lambda", {0.05});
    const std::size_t ens = c.count("sweep.ensemble", 100);
    const std::uint64_t seed = c.count("sweep.seed", 1);
    const std::size_t levels = c.count("sweep.levels", 61);
    const std::size_t refine = c.count("sweep.refine", 4);
    const double layer = c.number("sweep.layer", 0.1);
    const std::size_t layer_panels = c.count("sweep.layer_panels", 12);
    const std::size_t layer_theta = c.count("sweep.layer_theta", 512);
    const double tol = c.number("sweep.onset_tol", 0.05);
    BumpEnsembleOptions bopt;
    bopt.bumps = c.count("sweep.bumps", bopt.bumps);
    std::string kind = c.string("sweep.field", "auto");
    if (kind == "auto") kind = concentric_circles(dp) ? "closed_form" : "solver";
    require(kind == "closed_form" || kind == "solver", ErrorKind::Config, "sweep.field must be auto, closed_form or solver");
    require(ens >= 1 && !rep.s.empty() && !rep.lambdas.empty(), ErrorKind::Config, "sweep needs s, lambda and ensemble");
    for (std::size_t i = 1; i < rep.s.size(); ++i)
        require(rep.s[i] > rep.s[i - 1], ErrorKind::Config, "sweep.s must be increasing");
    rep.field_kind = kind;
    rep.fields = ens;

    GridOptions go = grid_options_from(c);
    go.T = ws.params.T;
    const SimGrid g(dp, go);
    const QuadratureNodes nodes = kind == "closed_form" ? layered_nodes(g, layer, layer_panels, layer_theta, refine) : cell_nodes(g);
    rep.nodes = nodes.size();
    std::vector<WeightField> poles;
    for (std::size_t j = 0; j < ws.poles.size(); ++j) poles.push_back(sample_weight(nodes, g.boundary(), ws.weight(dp, j)));

    const std::size_t nl = rep.lambdas.size(), ns = rep.s.size();
    std::vector<std::vector<RatioTerms>> terms(ens);
    std::vector<char> in_X(ens, 1);
    const double T = ws.params.T;
    const Vec2 origin = dp.inner().pole();
    bopt.center_radius = 0.8 * dp.outer().max_radius();
    parallel_for(ens, [&](std::size_t e) {
        auto rng = trial_rng(seed, e);
        const std::vector<Bump> bumps = random_bumps(rng, bopt, origin);
        auto& out = terms[e];
        if (kind == "closed_form") {
            const BumpField f(dp, bumps, T, T / 3.0);
            in_X[e] = certify_in_X(f).pass();
            const BumpFieldSource src(nodes, g.boundary(), f, levels);
            for (double lam : rep.lambdas) {
                const auto r = carleman_ratios_from(nodes, g.boundary(), dp, src, poles, rep.s, RatioOptions{lam, ws.params.gamma});
                out.insert(out.end(), r.begin(), r.end());
            }
        } else {
            const SpaceTimeField u = detail::solver_field(g, bumps);
            in_X[e] = certify_in_X(g, u).pass();
            for (double lam : rep.lambdas) {
                const auto r = carleman_ratios(g, u, poles, rep.s, RatioOptions{lam, ws.params.gamma});
                out.insert(out.end(), r.begin(), r.end());
            }
        }
    });
    for (char ok : in_X) rep.fields_outside_X += ok ? 0 : 1;

    rep.rows.resize(nl * ns);
    for (std::size_t li = 0; li < nl; ++li) {
        std::vector<double> maxr(ns);
        for (std::size_t si = 0; si < ns; ++si) {
            SweepRow& row = rep.rows[li * ns + si];
            row.s = rep.s[si];
            row.lambda = rep.lambdas[li];
            row.max_ratio = -1.0;
            for (std::size_t e = 0; e < ens; ++e) {
                const RatioTerms& t = terms[e][li * ns + si];
                const double r = t.ratio();
                row.finite = row.finite && std::isfinite(r);
                if (r > row.max_ratio) {
                    row.max_ratio = r;
                    row.lhs = t.lhs();
                    row.rhs = t.rhs();
                }
                row.max_nobd = std::max(row.max_nobd, t.ratio_without_boundary());
            }
            maxr[si] = row.max_ratio;
        }
        rep.onset.push_back(detect_onset(maxr, tol));
    }
    return rep;
}

inline CsvTable sweep_table(const SweepReport& r) {
    CsvTable t({"s", "lambda", "ensemble_max_ratio", "lhs", "rhs", "nobd"});
    for (const auto& row : r.rows)
        t.row({fmt_num(row.s), fmt_num(row.lambda), fmt_num(row.max_ratio), fmt_num(row.lhs), fmt_num(row.rhs),
               fmt_num(row.max_nobd)});
    return t;
}

inline std::string onset_text(const SweepReport& r) {
    std::string out;
    for (std::size_t li = 0; li < r.lambdas.size(); ++li) {
        out += "lambda=" + fmt_num(r.lambdas[li]) + ": ";
        out += r.onset[li] ? "onset s=" + fmt_num(r.s[*r.onset[li]]) : std::string("onset undetermined");
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Conjugation identity

/// Keys: identity.h (list), identity.s, identity.lambda, identity.t,
/// identity.points (per region).
inline std::vector<ConvergenceRow> run_identity(const Config& c, const DomainPair& dp, const WeightSetup& ws) {
    const std::vector<double> hs = c.list("identity.h", {0.02, 0.01, 0.005});
    const double s = c.number("identity.s", 1.0);
    const double lam = c.number("identity.lambda", 0.05);
    const double t = c.number("identity.t", 0.3);
    const std::size_t np = c.count("identity.points", 8);
    require(hs.size() >= 2 && np >= 1, ErrorKind::Config, "identity needs two step sizes and a point");
    const Weight w = ws.weight(dp, 0);
    const Vec2 x0 = ws.poles.front();
    std::vector<Vec2> pts;
    std::vector<Region> sides;
    const PolarView view(dp.inner(), x0);
    for (std::size_t i = 0; i < np; ++i) {
        const Vec2 u = polar_unit(2.0 * pi * (static_cast<double>(i) + 0.37) / static_cast<double>(np));
        const double r1 = view.rho(angle_of(u));
        pts.push_back(x0 + 0.6 * r1 * u);
        sides.push_back(Region::Inner);
        double lo = r1, hi = 1e3 * r1;
        while (hi - lo > 1e-12 * hi) {
            const double mid = 0.5 * (lo + hi);
            (dp.outer().contains(x0 + mid * u) ? lo : hi) = mid;
        }
        pts.push_back(x0 + 0.5 * (r1 + lo) * u);
        sides.push_back(Region::Outer);
    }
    const FieldFn field = [](Vec2 x, double tt) {
        return std::sin(1.3 * x.x + 0.4) * std::cos(0.9 * x.y - 0.2) * std::cos(1.1 * tt) + 0.3 * x.x * x.y * tt;
    };
    std::vector<ConvergenceRow> rows;
    for (double h : hs) rows.push_back({h, conjugation_residual(w, field, pts, sides, t, h, s, lam, ws.params.gamma)});
    fill_orders(rows);
    return rows;
}

// ---------------------------------------------------------------------------
// Forward solver checks

/// Radial manufactured profile about the common centre of concentric
/// circles: b = (rc^2 - r^2)^P in Omega_2 and C - K r^2 in Omega_1, with C, K
/// chosen so b and a db/dr are continuous at r1. With a1 = a2 the Omega_2
/// formula is used everywhere.
struct RadialProfile {
    Vec2 center{};
    double r1 = 1.0, rc = 1.6, a1 = 1.0, a2 = 1.0;
    int power = 3;

    double outer_b(double r) const { return std::pow(std::max(0.0, rc * rc - r * r), power); }
    double outer_b1(double r) const {
        return -2.0 * power * r * std::pow(std::max(0.0, rc * rc - r * r), power - 1);
    }
    bool single() const { return a1 == a2; }
    double K() const { return -a2 * outer_b1(r1) / (2.0 * a1 * r1); }
    double C() const { return outer_b(r1) + K() * r1 * r1; }

    double value(Vec2 x) const {
        const double r = norm(x - center);
        return (!single() && r < r1) ? C() - K() * r * r : outer_b(r);
    }
    /// a Lap b on the side of x.
    double alap(Vec2 x) const {
        const double r = norm(x - center);
        if (!single() && r < r1) return a1 * (-4.0 * K());
        const double v = std::max(0.0, rc * rc - r * r);
        if (v == 0.0) return 0.0;
        const double P = power;
        return a2 * (P * (P - 1.0) * std::pow(v, P - 2.0) * 4.0 * r * r - 4.0 * P * std::pow(v, P - 1.0));
    }
};

struct MmsRow {
    std::size_t nx = 0;
    double h = 0.0, error = 0.0;
    double order = std::numeric_limits<double>::quiet_NaN();
};

/// L2 error at time T of u = cos(omega t) b(x) driven by f = u_tt - a Lap u,
/// RMS-averaged over `offsets` sub-cell shifts of the grid.
inline std::vector<MmsRow> mms_convergence(const DomainPair& dp, const RadialProfile& prof, std::span<const std::size_t> nxs,
                                           double T, std::size_t offsets, double omega = 2.0) {
    std::vector<MmsRow> rows;
    for (std::size_t nx : nxs) {
        double acc = 0.0, h = 0.0;
        for (std::size_t o = 0; o < std::max<std::size_t>(offsets, 1); ++o) {
            GridOptions go;
            go.nx = go.ny = nx;
            go.T = T;
            if (offsets > 1) {
                const double fo = static_cast<double>(o) / static_cast<double>(offsets);
                go.shift = {std::fmod(0.37 + 0.999 * fo, 1.0), std::fmod(0.61 + 0.517 * fo * 2.0, 1.0)};
            }
            const SimGrid g(dp, go);
            h = g.h();
            const std::size_t n = g.n_active();
            std::vector<double> B(n), L(n);
            for (std::size_t k = 0; k < n; ++k) {
                B[k] = prof.value(g.active_center(k));
                L[k] = prof.alap(g.active_center(k));
            }
            WaveSolver solver(g, {}, [&](std::size_t, double t, std::span<double> f) {
                const double ct = std::cos(omega * t);
                for (std::size_t k = 0; k < f.size(); ++k) f[k] = ct * (-omega * omega * B[k] - L[k]);
            });
            SolveOptions opt;
            opt.record_trace = false;
            const SolveResult r = solve(solver, B, {}, opt);
            double e = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double d = r.final_state.u_curr[k] - std::cos(omega * T) * B[k];
                e += d * d;
            }
            acc += e * g.cell_area();
        }
        MmsRow row{nx, h, std::sqrt(acc / static_cast<double>(std::max<std::size_t>(offsets, 1)))};
        if (!rows.empty()) row.order = std::log(rows.back().error / row.error) / std::log(rows.back().h / row.h);
        rows.push_back(row);
    }
    return rows;
}

/// forward.u0: amplitude (1 - |x - c|^2 / r^2)_+^4, compactly supported.
inline std::vector<double> forward_initial_data(const Config& c, const SimGrid& g) {
    const double amp = c.number("forward.u0.amplitude", 1.0);
    const Vec2 ctr = c.point("forward.u0.center", g.domains().inner().pole());
    const double r = c.number("forward.u0.radius", 0.5);
    require(r > 0.0, ErrorKind::Config, "forward.u0.radius must be positive");
    return g.sample([&](Vec2 x) {
        const double v = std::max(0.0, 1.0 - norm2(x - ctr) / (r * r));
        return amp * v * v * v * v;
    });
}

struct EnergyReport {
    double max_rel_drift = 0.0;
    double e0 = 0.0;
    std::vector<double> energy;  ///< per level from 1
};

/// f = 0, Dirichlet zero data: the discrete energy is a conserved quantity.
inline EnergyReport energy_drift(const SimGrid& g, std::span<const double> p, std::span<const double> u0,
                                 std::span<const double> u1 = {}) {
    WaveSolver solver(g, std::vector<double>(p.begin(), p.end()));
    EnergyReport rep;
    SolveOptions opt;
    opt.record_trace = false;
    opt.on_step = [&](const WaveState& s) {
        if (s.n == 0) return;
        const double e = solver.energy(s);
        if (rep.energy.empty()) rep.e0 = e;
        rep.energy.push_back(e);
        rep.max_rel_drift = std::max(rep.max_rel_drift, std::abs(e - rep.e0) / std::abs(rep.e0));
    };
    solve(solver, u0, u1, opt);
    return rep;
}

struct FiniteSpeedReport {
    bool discrete_cone = true;   ///< exact zeros beyond one cell per step
    double max_outside = 0.0;    ///< max |u| beyond r0 + sqrt(a_max) t + margin, relative to max |u0|
    std::size_t steps = 0;
};

/// Initial datum supported in the disc |x - c| <= r0. Checks after every step
/// that (i) cells further than n steps (in the 5-point graph) from the support
/// hold exact zeros and (ii) reports max |u| beyond the physical cone plus
/// `margin`, relative to max |u0|.
inline FiniteSpeedReport finite_speed_check(const SimGrid& g, Vec2 c, double r0, double margin) {
    const std::size_t n = g.n_active();
    std::vector<double> u0(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double v = std::max(0.0, 1.0 - norm2(g.active_center(k) - c) / (r0 * r0));
        u0[k] = v * v * v * v;
    }
    // graph distance from the support
    std::vector<std::size_t> hop(n, std::numeric_limits<std::size_t>::max());
    std::vector<std::size_t> frontier;
    for (std::size_t k = 0; k < n; ++k)
        if (u0[k] != 0.0) {
            hop[k] = 0;
            frontier.push_back(k);
        }
    while (!frontier.empty()) {
        std::vector<std::size_t> next;
        for (std::size_t k : frontier)
            for (auto nb : g.neighbors(k))
                if (nb >= 0 && hop[static_cast<std::size_t>(nb)] == std::numeric_limits<std::size_t>::max()) {
                    hop[static_cast<std::size_t>(nb)] = hop[k] + 1;
                    next.push_back(static_cast<std::size_t>(nb));
                }
        frontier = std::move(next);
    }
    double umax = 0.0;
    for (double v : u0) umax = std::max(umax, std::abs(v));
    const double cmax = std::sqrt(std::max(g.domains().a1(), g.domains().a2()));
    FiniteSpeedReport rep;
    WaveSolver solver(g);
    SolveOptions opt;
    opt.record_trace = false;
    opt.on_step = [&](const WaveState& s) {
        if (s.n == 0) return;
        ++rep.steps;
        const double reach = r0 + cmax * s.t + margin;
        for (std::size_t k = 0; k < n; ++k) {
            const double v = std::abs(s.u_curr[k]);
            if (hop[k] > s.n && v != 0.0) rep.discrete_cone = false;
            if (norm(g.active_center(k) - c) > reach) rep.max_outside = std::max(rep.max_outside, v / umax);
        }
    };
    solve(solver, u0, {}, opt);
    return rep;
}

// ---------------------------------------------------------------------------
// Rays

struct RayRunReport {
    CrossingReport crossing;
    std::optional<double> critical_angle;
    std::size_t origins = 0;
    CsvTable events{{"origin", "ray", "event", "kind", "x", "y", "incidence"}};
};

/// Keys: rays.origin (single origin) or rays.origins (count of random origins
/// in Omega_1, rays.seed), rays.angles, rays.max_events, rays.events.
inline RayRunReport run_rays(const Config& c, const DomainPair& dp) {
    const std::size_t n_angles = c.count("rays.angles", 720);
    const std::size_t max_events = c.count("rays.max_events", 200);
    const std::size_t n_origins = c.count("rays.origins", 0);
    const bool want_events = c.boolean("rays.events", n_origins == 0);
    std::vector<Vec2> origins;
    if (n_origins == 0) {
        origins.push_back(c.point("rays.origin", dp.inner().pole()));
    } else {
        auto rng = trial_rng(c.count("rays.seed", 1), 0);
        const double R = dp.inner().max_radius();
        std::uniform_real_distribution<double> U(-R, R);
        while (origins.size() < n_origins) {
            const Vec2 x = dp.inner().pole() + Vec2{U(rng), U(rng)};
            if (dp.inner().contains(x)) origins.push_back(x);
        }
    }
    const RayTracer tracer(dp);
    RayRunReport rep;
    rep.origins = origins.size();
    rep.critical_angle = critical_angle(dp.a1(), dp.a2());
    std::vector<CrossingReport> per(origins.size());
    parallel_for(origins.size(), [&](std::size_t o) { per[o] = crossing_fraction(tracer, origins[o], n_angles, max_events); });
    CrossingReport& all = rep.crossing;
    auto nan_max = [](double a, double b) { return std::isnan(a) ? b : (std::isnan(b) ? a : std::max(a, b)); };
    auto nan_min = [](double a, double b) { return std::isnan(a) ? b : (std::isnan(b) ? a : std::min(a, b)); };
    for (const auto& r : per) {
        all.rays += r.rays;
        all.exited += r.exited;
        all.max_exit_incidence = nan_max(all.max_exit_incidence, r.max_exit_incidence);
        all.min_trapped_incidence = nan_min(all.min_trapped_incidence, r.min_trapped_incidence);
    }
    all.fraction = static_cast<double>(all.exited) / static_cast<double>(std::max<std::size_t>(all.rays, 1));
    if (want_events) {
        for (std::size_t o = 0; o < origins.size(); ++o)
            for (std::size_t i = 0; i < n_angles; ++i) {
                const double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n_angles);
                const RayPath p = tracer.trace(origins[o], polar_unit(th), max_events);
                for (std::size_t e = 0; e < p.events.size(); ++e) {
                    const auto& ev = p.events[e];
                    rep.events.row({std::to_string(o), std::to_string(i), std::to_string(e), to_string(ev.kind),
                                    fmt_num(ev.point.x), fmt_num(ev.point.y), fmt_num(ev.incidence)});
                }
            }
    }
    return rep;
}

/// Keys: envelope.samples, envelope.nx, envelope.box_scale.
inline EnvelopeResult run_envelope(const Config& c, const DomainPair& dp) {
    const auto records = distance_traveltimes(dp, c.count("envelope.samples", 64));
    EnvelopeOptions opt;
    opt.nx = c.count("envelope.nx", opt.nx);
    opt.box_scale = c.number("envelope.box_scale", opt.box_scale);
    return envelope_reconstruct(records, dp.a2(), dp.outer(), opt, &dp.inner());
}

// ---------------------------------------------------------------------------
// Inverse problems

struct GaussianSum {
    std::vector<Vec2> centers;
    std::vector<double> scales, amplitudes;  ///< term a exp(-|x - c|^2 / scale)

    double operator()(Vec2 x) const {
        double v = 0.0;
        for (std::size_t i = 0; i < centers.size(); ++i) v += amplitudes[i] * std::exp(-norm2(x - centers[i]) / scales[i]);
        return v;
    }
};

/// `<prefix>.centers = [x1, y1, x2, y2, ...]`, `.scales`, `.amplitudes`.
inline GaussianSum gaussians_from(const Config& c, const std::string& prefix) {
    GaussianSum g;
    const auto xy = c.list(prefix + ".centers");
    g.scales = c.list(prefix + ".scales");
    g.amplitudes = c.list(prefix + ".amplitudes");
    require(xy.size() % 2 == 0 && xy.size() / 2 == g.scales.size() && g.scales.size() == g.amplitudes.size(),
            ErrorKind::Config, prefix + ": centers, scales and amplitudes must describe the same number of terms");
    for (std::size_t i = 0; i < xy.size(); i += 2) g.centers.push_back({xy[i], xy[i + 1]});
    for (double s : g.scales) require(s > 0.0, ErrorKind::Config, prefix + ".scales must be positive");
    return g;
}

struct InverseSetup {
    std::unique_ptr<SimGrid> grid;
    InverseConfig cfg;
    double T = 0.0, T0 = 0.0;
};

/// Keys: inverse.T (auto = T_factor T0, needs the weights block), inverse.T_factor,
/// inverse.m, inverse.r, inverse.u0.{base, amplitude, center, scale}, inverse.mu,
/// inverse.cg_iters, inverse.cg_tol, inverse.outer_iters, inverse.outer_tol.
inline InverseSetup inverse_from(const Config& c, const DomainPair& dp) {
    InverseSetup s;
    const double factor = c.number("inverse.T_factor", 1.1);
    if (c.is_auto("inverse.T") || !c.has("inverse.T")) {
        const WeightSetup ws = weights_from(c, dp);
        s.T0 = ws.T0;
        s.T = factor * s.T0;
    } else {
        s.T = c.number("inverse.T");
    }
    GridOptions go = grid_options_from(c);
    go.T = s.T;
    s.grid = std::make_unique<SimGrid>(dp, go);
    const SimGrid& g = *s.grid;
    InverseConfig& cfg = s.cfg;
    cfg.p.assign(g.n_active(), c.number("inverse.p", 0.0));
    cfg.m = c.number("inverse.m", 1.0);
    cfg.r = c.number("inverse.r", 0.5);
    const double base = c.number("inverse.u0.base", 0.5), amp = c.number("inverse.u0.amplitude", 0.5);
    const Vec2 uc = c.point("inverse.u0.center", {0.3, 0.2});
    const double sc = c.number("inverse.u0.scale", 1.0);
    cfg.u0 = g.sample([&](Vec2 x) { return base + amp * std::exp(-norm2(x - uc) / sc); });
    cfg.cg.mu = c.number("inverse.mu", 1e-8);
    cfg.cg.max_iter = c.count("inverse.cg_iters", 100);
    cfg.cg.rel_tol = c.number("inverse.cg_tol", 1e-6);
    cfg.cg.seed = c.count("inverse.seed", 1);
    cfg.outer_max = c.count("inverse.outer_iters", 10);
    cfg.outer_tol = c.number("inverse.outer_tol", 1e-6);
    validate(g, cfg);
    return s;
}

struct StabilityReport {
    std::vector<StabilityTrial> trials;
    double max_ratio = 0.0, median_ratio = 0.0;
    double spread() const { return max_ratio / median_ratio; }
    bool all_finite = true;
};

/// Random admissible q: `bumps` Gaussians (centres in the disc of radius
/// 0.8 R about the inner pole, widths in [0.3, 0.6]) with amplitudes in
/// [0.2, 1], one common sign per trial when `same_sign`, else independent
/// signs; rescaled to |q|_inf = m u, u uniform in [0.2, 1].
inline std::vector<double> random_potential(const SimGrid& g, double m, std::size_t bumps, bool same_sign,
                                            std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const DomainPair& dp = g.domains();
    const double R = 0.8 * dp.outer().max_radius();
    const double sign = U(rng) < 0.5 ? -1.0 : 1.0;
    std::vector<Bump> b(bumps);
    for (auto& x : b) {
        const double r = R * std::sqrt(U(rng)), th = 2.0 * pi * U(rng);
        x.center = dp.inner().pole() + Vec2{r * std::cos(th), r * std::sin(th)};
        x.width = 0.3 + 0.3 * U(rng);
        const double a = 0.2 + 0.8 * U(rng);
        x.amplitude = same_sign ? sign * a : (U(rng) < 0.5 ? -a : a);
    }
    std::vector<double> q = g.sample([&](Vec2 x) {
        double v = 0.0;
        for (const auto& y : b) v += y.amplitude * std::exp(-norm2(x - y.center) / (2.0 * y.width * y.width));
        return v;
    });
    double mx = 0.0;
    for (double v : q) mx = std::max(mx, std::abs(v));
    const double target = m * (0.2 + 0.8 * U(rng));
    for (double& v : q) v *= target / mx;
    return q;
}

/// Keys: inverse.trials, inverse.bumps, inverse.same_sign, inverse.seed.
inline StabilityReport run_stability(const Config& c, const InverseSetup& s) {
    const std::size_t trials = c.count("inverse.trials", 50);
    const std::size_t bumps = c.count("inverse.bumps", 3);
    const bool same_sign = c.boolean("inverse.same_sign", true);
    const std::uint64_t seed = c.count("inverse.seed", 1);
    require(trials >= 1, ErrorKind::Config, "inverse.trials must be positive");
    const SimGrid& g = *s.grid;
    const FluxTrace fp = solve_with_potential(g, s.cfg.p, s.cfg.u0, s.cfg.u1, false).trace;
    StabilityReport rep;
    rep.trials.resize(trials);
    parallel_for(trials, [&](std::size_t t) {
        auto rng = trial_rng(seed, t);
        std::vector<double> q = random_potential(g, s.cfg.m, bumps, same_sign, rng);
        for (std::size_t k = 0; k < q.size(); ++k) q[k] += s.cfg.p[k];
        rep.trials[t] = stability_ratio(g, s.cfg, q, fp);
    });
    std::vector<double> r;
    for (const auto& t : rep.trials) {
        r.push_back(t.ratio);
        rep.all_finite = rep.all_finite && std::isfinite(t.ratio);
    }
    std::sort(r.begin(), r.end());
    rep.max_ratio = r.back();
    rep.median_ratio = r.size() % 2 ? r[r.size() / 2] : 0.5 * (r[r.size() / 2 - 1] + r[r.size() / 2]);
    return rep;
}

inline CsvTable stability_table(const StabilityReport& r) {
    CsvTable t({"trial", "l2_diff", "flux_h1", "ratio"});
    for (std::size_t i = 0; i < r.trials.size(); ++i)
        t.row({std::to_string(i), fmt_num(r.trials[i].l2_diff), fmt_num(r.trials[i].flux_h1), fmt_num(r.trials[i].ratio)});
    return t;
}

struct LogRow {
    std::size_t iter = 0;
    double residual = 0.0, update_norm = 0.0;
};

struct ReconstructionReport {
    std::string mode;
    std::vector<double> estimate, truth;
    std::vector<LogRow> log;
    double rel_error = 0.0;
    double dot_test = std::numeric_limits<double>::quiet_NaN();
    std::size_t outer_iterations = 0;
    bool converged = false;
};

/// inverse.mode = linearized (recover f from Lambda f, R = u(p)) or potential
/// (recover q from one flux). Truth from `inverse.target.*`; data are
/// generated by the same discrete model (inverse crime) plus optional
/// Gaussian noise of relative RMS `inverse.noise`.
inline ReconstructionReport run_reconstruct(const Config& c, const InverseSetup& s) {
    ReconstructionReport rep;
    rep.mode = c.string("inverse.mode", "linearized");
    const double noise = c.number("inverse.noise", 0.0);
    const GaussianSum target = gaussians_from(c, "inverse.target");
    const std::uint64_t seed = c.count("inverse.seed", 1);
    const SimGrid& g = *s.grid;
    rep.truth = g.sample(target);
    auto add_noise = [&](FluxTrace& tr) {
        if (noise <= 0.0) return;
        double rms = 0.0;
        for (double v : tr.values) rms += v * v;
        rms = std::sqrt(rms / static_cast<double>(tr.values.size()));
        auto rng = trial_rng(seed, 0x6e6f697365ULL);
        std::normal_distribution<double> N01;
        for (double& v : tr.values) v += noise * rms * N01(rng);
    };
    if (rep.mode == "linearized") {
        const SolveResult base = solve_with_potential(g, s.cfg.p, s.cfg.u0, s.cfg.u1, true);
        const LinearizedOperator op(g, s.cfg.p, *base.field);
        rep.dot_test = dot_product_test(op, seed);
        FluxTrace obs = op.apply(rep.truth);
        add_noise(obs);
        const CGReport cg = reconstruct_linearized(op, obs, s.cfg.cg);
        rep.estimate = cg.f;
        for (std::size_t i = 0; i < cg.history.size(); ++i) rep.log.push_back({i + 1, cg.history[i], cg.step_norms[i]});
        rep.converged = cg.converged;
    } else if (rep.mode == "potential") {
        for (std::size_t k = 0; k < rep.truth.size(); ++k) rep.truth[k] += s.cfg.p[k];
        FluxTrace obs = solve_with_potential(g, rep.truth, s.cfg.u0, s.cfg.u1, false).trace;
        add_noise(obs);
        const PotentialReport pr = reconstruct_potential(g, s.cfg, obs);
        rep.estimate = pr.q;
        for (const auto& r : pr.log) rep.log.push_back({r.iter, r.residual, r.update_norm});
        rep.outer_iterations = pr.log.empty() ? 0 : pr.log.back().iter;
        rep.converged = pr.converged;
    } else {
        throw Error(ErrorKind::Config, "inverse.mode must be linearized or potential");
    }
    std::vector<double> d(rep.truth.size()), ref(rep.truth.size());
    for (std::size_t k = 0; k < d.size(); ++k) {
        d[k] = rep.estimate[k] - rep.truth[k];
        ref[k] = rep.truth[k] - (rep.mode == "potential" ? s.cfg.p[k] : 0.0);
    }
    rep.rel_error = l2_norm(g, d) / l2_norm(g, ref);
    return rep;
}

inline CsvTable reconstruction_log(const ReconstructionReport& r) {
    CsvTable t({"iter", "residual", "update_norm"});
    for (const auto& row : r.log) t.row({std::to_string(row.iter), fmt_num(row.residual), fmt_num(row.update_norm)});
    return t;
}

}  // namespace twv
