#pragma once
/**
 * @file inverse.hpp
 * @brief Source and potential recovery from one boundary flux measurement.
 *
 * The linear map f -> a2 dy/dnu with y_tt - div(a grad y) + p y = f R,
 * y(0) = y_t(0) = 0 is applied with the leapfrog recurrence of the forward
 * solver; its transpose is the reverse sweep of that recurrence, so the
 * dot-product test holds to round-off.
 */

#include <random>

#include "twv/forward.hpp"

namespace twv {

inline double l2_norm(const SimGrid& g, std::span<const double> f) {
    double s = 0.0;
    for (double v : f) s += v * v;
    return std::sqrt(g.cell_area() * s);
}

inline double trace_dot(const FluxTrace& a, const FluxTrace& b) {
    require(a.values.size() == b.values.size(), ErrorKind::Shape, "trace sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
    return s;
}

namespace detail {

/// Second-order time difference of a trace (centred inside, one-sided at the ends).
inline void time_derivative(const FluxTrace& g, std::vector<double>& out) {
    const std::size_t N = g.levels(), P = g.points();
    const double dt = g.dt;
    out.assign(N * P, 0.0);
    for (std::size_t b = 0; b < P; ++b) {
        out[b] = (-3.0 * g.at(0, b) + 4.0 * g.at(1, b) - g.at(2, b)) / (2.0 * dt);
        for (std::size_t n = 1; n + 1 < N; ++n) out[n * P + b] = (g.at(n + 1, b) - g.at(n - 1, b)) / (2.0 * dt);
        out[(N - 1) * P + b] = (3.0 * g.at(N - 1, b) - 4.0 * g.at(N - 2, b) + g.at(N - 3, b)) / (2.0 * dt);
    }
}

inline double time_weight(std::size_t n, std::size_t levels, double dt) {
    return (n == 0 || n + 1 == levels) ? 0.5 * dt : dt;
}

}  // namespace detail

/// sqrt(int_0^T |g|^2_{L2(Gamma)} + |g_t|^2_{L2(Gamma)} dt), trapezoid in time.
inline double h1_flux_norm(const FluxTrace& g) {
    require(g.levels() >= 3, ErrorKind::Shape, "H1 norm needs at least 3 time levels");
    std::vector<double> gt;
    detail::time_derivative(g, gt);
    const std::size_t N = g.levels(), P = g.points();
    double s = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
        const double tw = detail::time_weight(n, N, g.dt);
        for (std::size_t b = 0; b < P; ++b) {
            const double v = g.at(n, b), d = gt[n * P + b];
            s += tw * g.weights[b] * (v * v + d * d);
        }
    }
    return std::sqrt(s);
}

/// W g with <g, W g> = h1_flux_norm(g)^2 (Euclidean pairing of trace values).
inline FluxTrace h1_apply(const FluxTrace& g) {
    const std::size_t N = g.levels(), P = g.points();
    require(N >= 3, ErrorKind::Shape, "H1 norm needs at least 3 time levels");
    const double dt = g.dt;
    std::vector<double> gt;
    detail::time_derivative(g, gt);
    FluxTrace out = g;
    for (std::size_t n = 0; n < N; ++n) {
        const double tw = detail::time_weight(n, N, dt);
        for (std::size_t b = 0; b < P; ++b) {
            out.at(n, b) = tw * g.weights[b] * g.at(n, b);
            gt[n * P + b] *= tw * g.weights[b];
        }
    }
    // add D^T (weighted derivative)
    for (std::size_t b = 0; b < P; ++b) {
        auto G = [&](std::size_t n) { return gt[n * P + b]; };
        out.at(0, b) += -3.0 * G(0) / (2.0 * dt);
        out.at(1, b) += 4.0 * G(0) / (2.0 * dt);
        out.at(2, b) += -G(0) / (2.0 * dt);
        for (std::size_t n = 1; n + 1 < N; ++n) {
            out.at(n + 1, b) += G(n) / (2.0 * dt);
            out.at(n - 1, b) -= G(n) / (2.0 * dt);
        }
        out.at(N - 1, b) += 3.0 * G(N - 1) / (2.0 * dt);
        out.at(N - 2, b) += -4.0 * G(N - 1) / (2.0 * dt);
        out.at(N - 3, b) += G(N - 1) / (2.0 * dt);
    }
    return out;
}

/// Transpose of trace_row: scatters boundary values back onto the cells.
inline void trace_row_transpose(const SimGrid& g, std::span<const double> rho, std::span<double> out) {
    const double d = g.trace_depth(), a2 = g.domains().a2();
    for (std::size_t b = 0; b < g.boundary().size(); ++b) {
        const auto& [s1, s2] = g.trace_stencil(b);
        const double c1 = a2 * 4.0 / (2.0 * d) * rho[b], c2 = -a2 / (2.0 * d) * rho[b];
        for (int m = 0; m < 4; ++m) {
            if (s1.idx[m] >= 0) out[static_cast<std::size_t>(s1.idx[m])] += c1 * s1.w[m];
            if (s2.idx[m] >= 0) out[static_cast<std::size_t>(s2.idx[m])] += c2 * s2.w[m];
        }
    }
}

/// Lambda: f -> flux of y, y_tt - div(a grad y) + p y = f R, zero data.
class LinearizedOperator {
public:
    LinearizedOperator(const SimGrid& g, std::vector<double> p, const SpaceTimeField& R)
        : g_(&g), p_(std::move(p)), R_(&R) {
        if (p_.empty()) p_.assign(g.n_active(), 0.0);
        require(p_.size() == g.n_active(), ErrorKind::Shape, "potential size mismatch");
        require(R.cells() == g.n_active() && R.levels() == g.nt() + 1, ErrorKind::Shape, "R must cover levels 0..nt");
    }

    const SimGrid& grid() const { return *g_; }
    std::size_t size() const { return g_->n_active(); }

    FluxTrace apply(std::span<const double> f) const {
        require(f.size() == size(), ErrorKind::Shape, "f size mismatch");
        const SimGrid& g = *g_;
        const std::size_t nc = size(), N = g.nt();
        const double dt2 = g.dt() * g.dt();
        FluxTrace tr = empty_trace(g, N + 1, 0.0, g.dt());
        std::vector<double> prev(nc, 0.0), cur(nc), next(nc), div(nc);
        const auto R0 = R_->level(0);
        for (std::size_t k = 0; k < nc; ++k) cur[k] = 0.5 * dt2 * f[k] * R0[k];
        trace_row(g, cur, {tr.values.data() + tr.points(), tr.points()});
        for (std::size_t n = 1; n < N; ++n) {
            apply_divergence(g, cur, div);
            const auto Rn = R_->level(n);
            for (std::size_t k = 0; k < nc; ++k)
                next[k] = 2.0 * cur[k] - prev[k] + dt2 * (div[k] - p_[k] * cur[k] + f[k] * Rn[k]);
            std::swap(prev, cur);
            std::swap(cur, next);
            trace_row(g, cur, {tr.values.data() + (n + 1) * tr.points(), tr.points()});
        }
        return tr;
    }

    /// Lambda^T rho for the Euclidean pairing of trace values.
    std::vector<double> adjoint(const FluxTrace& rho) const {
        const SimGrid& g = *g_;
        const std::size_t nc = size(), N = g.nt(), P = g.boundary().size();
        require(rho.levels() == N + 1 && rho.points() == P, ErrorKind::Shape, "trace shape mismatch");
        const double dt2 = g.dt() * g.dt();
        std::vector<double> fbar(nc, 0.0), nx2(nc, 0.0), nx1(nc, 0.0), cur(nc), div(nc);
        auto row = [&](std::size_t n) { return std::span<const double>(rho.values.data() + n * P, P); };
        // nx1 = ybar^{n+1}, nx2 = ybar^{n+2}
        for (std::size_t n = N; n >= 1; --n) {
            std::fill(cur.begin(), cur.end(), 0.0);
            trace_row_transpose(g, row(n), cur);
            if (n < N) {
                apply_divergence(g, nx1, div);
                for (std::size_t k = 0; k < nc; ++k)
                    cur[k] += 2.0 * nx1[k] + dt2 * (div[k] - p_[k] * nx1[k]) - nx2[k];
            }
            // sbar^n = dt^2 ybar^{n+1} for n >= 1
            if (n < N) {
                const auto Rn = R_->level(n);
                for (std::size_t k = 0; k < nc; ++k) fbar[k] += Rn[k] * dt2 * nx1[k];
            }
            std::swap(nx2, nx1);
            std::swap(nx1, cur);
        }
        // sbar^0 = dt^2 / 2 ybar^1
        const auto R0 = R_->level(0);
        for (std::size_t k = 0; k < nc; ++k) fbar[k] += R0[k] * 0.5 * dt2 * nx1[k];
        return fbar;
    }

    /// (Lambda^T W Lambda) f
    std::vector<double> normal(std::span<const double> f) const { return adjoint(h1_apply(apply(f))); }

private:
    const SimGrid* g_;
    std::vector<double> p_;
    const SpaceTimeField* R_;
};

/// |<Lambda f, g> - <f, Lambda^T g>| / max(|<Lambda f, g>|, tiny) for random f, g.
inline double dot_product_test(const LinearizedOperator& op, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N01;
    std::vector<double> f(op.size());
    for (double& v : f) v = N01(rng);
    FluxTrace gtr = empty_trace(op.grid(), op.grid().nt() + 1, 0.0, op.grid().dt());
    for (double& v : gtr.values) v = N01(rng);
    const double lhs = trace_dot(op.apply(f), gtr);
    const auto adj = op.adjoint(gtr);
    double rhs = 0.0;
    for (std::size_t k = 0; k < f.size(); ++k) rhs += f[k] * adj[k];
    return std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300);
}

struct CGOptions {
    std::size_t max_iter = 400;
    double rel_tol = 1e-8;      ///< on the normal-equation residual
    double mu = 1e-8;           ///< Tikhonov weight
    bool mu_relative = true;    ///< scale mu by the top eigenvalue of Lambda^T W Lambda
    std::size_t power_iters = 10;
    std::uint64_t seed = 1;
};

struct CGReport {
    std::vector<double> f;
    std::size_t iterations = 0;
    double rel_residual = 0.0;
    bool converged = false;
    double mu_abs = 0.0;
    double lambda_max = 0.0;
    std::vector<double> history;
    std::vector<double> step_norms;  ///< L2 norm of each CG update
};

/// Top eigenvalue of Lambda^T W Lambda by power iteration.
inline double normal_operator_scale(const LinearizedOperator& op, std::size_t iters, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> N01;
    std::vector<double> v(op.size());
    for (double& x : v) x = N01(rng);
    double lam = 0.0;
    for (std::size_t it = 0; it < iters; ++it) {
        double nv = 0.0;
        for (double x : v) nv += x * x;
        nv = std::sqrt(nv);
        for (double& x : v) x /= nv;
        auto Av = op.normal(v);
        lam = 0.0;
        for (std::size_t k = 0; k < v.size(); ++k) lam += v[k] * Av[k];
        v = std::move(Av);
    }
    return lam;
}

/// argmin 1/2 |Lambda f - d|_W^2 + mu/2 |f|^2 by CG on the normal equations.
inline CGReport reconstruct_linearized(const LinearizedOperator& op, const FluxTrace& observed, const CGOptions& opt = {}) {
    CGReport rep;
    const std::size_t n = op.size();
    rep.f.assign(n, 0.0);
    if (opt.mu_relative) {
        rep.lambda_max = normal_operator_scale(op, opt.power_iters, opt.seed);
        rep.mu_abs = opt.mu * rep.lambda_max;
    } else {
        rep.mu_abs = opt.mu;
    }
    std::vector<double> b = op.adjoint(h1_apply(observed));
    auto H = [&](const std::vector<double>& x) {
        auto y = op.normal(x);
        for (std::size_t k = 0; k < n; ++k) y[k] += rep.mu_abs * x[k];
        return y;
    };
    auto dot = [](const std::vector<double>& a, const std::vector<double>& c) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * c[k];
        return s;
    };
    const double bnorm = std::sqrt(dot(b, b));
    if (bnorm == 0.0) {
        rep.converged = true;
        return rep;
    }
    std::vector<double> r = b, d = b;
    double rr = dot(r, r);
    for (std::size_t it = 0; it < opt.max_iter; ++it) {
        const auto Hd = H(d);
        const double dHd = dot(d, Hd);
        if (!(dHd > 0.0)) break;
        const double alpha = rr / dHd;
        for (std::size_t k = 0; k < n; ++k) {
            rep.f[k] += alpha * d[k];
            r[k] -= alpha * Hd[k];
        }
        rep.step_norms.push_back(std::abs(alpha) * l2_norm(op.grid(), d));
        const double rr_new = dot(r, r);
        rep.iterations = it + 1;
        rep.rel_residual = std::sqrt(rr_new) / bnorm;
        rep.history.push_back(rep.rel_residual);
        if (!std::isfinite(rep.rel_residual)) throw Error(ErrorKind::Numerical, "CG produced a non-finite residual");
        if (rep.rel_residual < opt.rel_tol) {
            rep.converged = true;
            break;
        }
        const double beta = rr_new / rr;
        rr = rr_new;
        for (std::size_t k = 0; k < n; ++k) d[k] = r[k] + beta * d[k];
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Potential problem

struct InverseConfig {
    std::vector<double> p;   ///< reference potential (active cells)
    double m = 1.0;          ///< admissible set: |q|_inf <= m
    double r = 0.5;          ///< floor on |u0|
    std::vector<double> u0, u1;
    CGOptions cg;
    std::size_t outer_max = 10;
    double outer_tol = 1e-6;     ///< relative flux residual
    double update_tol = 1e-8;    ///< relative update norm
    double invisibility_floor = 1e-14;
};

/// Checks the hypotheses that are checkable on the grid.
inline void validate(const SimGrid& g, const InverseConfig& cfg) {
    const std::size_t n = g.n_active();
    require(cfg.p.size() == n && cfg.u0.size() == n && (cfg.u1.empty() || cfg.u1.size() == n), ErrorKind::Shape,
            "inverse data must live on the active cells");
    require(cfg.r > 0.0 && cfg.m > 0.0, ErrorKind::Parameter, "need r > 0 and m > 0");
    for (std::size_t k = 0; k < n; ++k) {
        require(std::abs(cfg.u0[k]) >= cfg.r, ErrorKind::Parameter, "initial datum drops below the floor r");
        require(std::abs(cfg.p[k]) <= cfg.m, ErrorKind::Parameter, "reference potential exceeds m");
    }
}

inline SolveResult solve_with_potential(const SimGrid& g, std::span<const double> p, std::span<const double> u0,
                                        std::span<const double> u1, bool store_field) {
    WaveSolver solver(g, std::vector<double>(p.begin(), p.end()));
    SolveOptions opt;
    opt.store_field = store_field;
    return solve(solver, u0, u1, opt);
}

struct StabilityTrial {
    double l2_diff = 0.0;
    double flux_h1 = 0.0;
    double ratio = 0.0;
    bool near_invisible = false;
};

/// |p - q|_{L2} / |flux(u(q)) - flux(u(p))|_{H1(0,T;L2(Gamma))}.
inline StabilityTrial stability_ratio(const SimGrid& g, const InverseConfig& cfg, std::span<const double> q,
                                      const FluxTrace& flux_p) {
    require(q.size() == g.n_active(), ErrorKind::Shape, "q size mismatch");
    StabilityTrial t;
    std::vector<double> diff(q.size());
    double qmax = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k) {
        diff[k] = cfg.p[k] - q[k];
        qmax = std::max(qmax, std::abs(q[k]));
    }
    require(qmax <= cfg.m * (1.0 + 1e-12), ErrorKind::Parameter, "q leaves the admissible ball");
    t.l2_diff = l2_norm(g, diff);
    require(t.l2_diff > 0.0, ErrorKind::Parameter, "q must differ from p");
    const SolveResult rq = solve_with_potential(g, q, cfg.u0, cfg.u1, false);
    t.flux_h1 = h1_flux_norm(rq.trace - flux_p);
    t.near_invisible = t.flux_h1 < cfg.invisibility_floor;
    t.ratio = t.near_invisible ? std::numeric_limits<double>::infinity() : t.l2_diff / t.flux_h1;
    return t;
}

struct OuterRecord {
    std::size_t iter = 0;
    double residual = 0.0;      ///< relative H1 flux misfit before the update
    double update_norm = 0.0;   ///< L2 norm of the update
    std::size_t cg_iterations = 0;
};

struct PotentialReport {
    std::vector<double> q;
    std::vector<OuterRecord> log;
    bool converged = false;
    bool diverged = false;
    double final_residual = 0.0;
};

/// p_{k+1} = p_k - f_k with Lambda_{p_k} f_k = flux(u(q)) - flux(u(p_k)) and R = u(p_k).
inline PotentialReport reconstruct_potential(const SimGrid& g, const InverseConfig& cfg, const FluxTrace& observed,
                                             const std::function<void(const OuterRecord&)>& on_iter = {}) {
    validate(g, cfg);
    PotentialReport rep;
    rep.q = cfg.p;
    const double dnorm = std::max(h1_flux_norm(observed), 1e-300);
    std::size_t increases = 0;
    double last = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0;; ++it) {
        SolveResult u = solve_with_potential(g, rep.q, cfg.u0, cfg.u1, true);
        const FluxTrace misfit = observed - u.trace;
        const double res = h1_flux_norm(misfit) / dnorm;
        rep.final_residual = res;
        OuterRecord rec{it, res, 0.0, 0};
        if (res < cfg.outer_tol) {
            rep.converged = true;
            rep.log.push_back(rec);
            if (on_iter) on_iter(rec);
            break;
        }
        increases = res > last ? increases + 1 : 0;
        last = res;
        if (increases >= 3) {
            rep.diverged = true;
            rep.log.push_back(rec);
            break;
        }
        if (it >= cfg.outer_max) {
            rep.log.push_back(rec);
            break;
        }
        const LinearizedOperator op(g, rep.q, *u.field);
        const CGReport cg = reconstruct_linearized(op, misfit, cfg.cg);
        for (std::size_t k = 0; k < rep.q.size(); ++k) rep.q[k] -= cg.f[k];
        rec.update_norm = l2_norm(g, cg.f);
        rec.cg_iterations = cg.iterations;
        rep.log.push_back(rec);
        if (on_iter) on_iter(rec);
        if (rec.update_norm < cfg.update_tol * std::max(1.0, l2_norm(g, rep.q))) {
            rep.converged = true;
            break;
        }
    }
    return rep;
}

}  // namespace twv
