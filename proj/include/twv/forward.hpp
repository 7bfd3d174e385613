#pragma once
/**
 * @file forward.hpp
 * @brief Leapfrog solver for u_tt - div(a grad u) + p u = f with Dirichlet data,
 * Neumann flux extraction on the outer boundary, and discrete energy.
 */

#include <functional>
#include <optional>

#include "twv/grid.hpp"

namespace twv {

/// Source callback: fills out (active cells) with f(., t_n) for level n.
using SourceFn = std::function<void(std::size_t n, double t, std::span<double> out)>;
/// Dirichlet datum at exterior cell centres.
using BoundaryFn = std::function<double(Vec2 x, double t)>;

struct WaveState {
    std::vector<double> u_prev;
    std::vector<double> u_curr;
    double t = 0.0;
    std::size_t n = 0;  ///< level index of u_curr
};

/// a2 du/dnu on Gamma, one row per time level.
struct FluxTrace {
    std::vector<double> times;
    std::vector<double> values;  ///< levels x points, row-major
    std::vector<double> weights; ///< arc-length quadrature weights
    std::vector<double> arc;
    double dt = 0.0;

    std::size_t levels() const { return times.size(); }
    std::size_t points() const { return weights.size(); }
    double at(std::size_t n, std::size_t k) const { return values[n * points() + k]; }
    double& at(std::size_t n, std::size_t k) { return values[n * points() + k]; }
};

inline FluxTrace operator-(const FluxTrace& a, const FluxTrace& b) {
    require(a.values.size() == b.values.size(), ErrorKind::Shape, "trace sizes differ");
    FluxTrace d = a;
    for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] -= b.values[i];
    return d;
}

/// div_h(a grad_h u) over active cells; exterior neighbours read `ext`.
inline void apply_divergence(const SimGrid& g, std::span<const double> u, std::span<double> out,
                             std::span<const double> ext = {}) {
    const double ih2 = 1.0 / (g.h() * g.h());
    for (std::size_t k = 0; k < g.n_active(); ++k) {
        const auto& nb = g.neighbors(k);
        const auto& fc = g.face_coeffs(k);
        double acc = 0.0;
        for (int m = 0; m < 4; ++m) {
            const double un = nb[m] >= 0 ? u[static_cast<std::size_t>(nb[m])] : (ext.empty() ? 0.0 : ext[k * 4 + m]);
            acc += fc[m] * (un - u[k]);
        }
        out[k] = acc * ih2;
    }
}

/// Face-gradient bilinear form sum_f a_f (u_i - u_j)(v_i - v_j) (exterior = 0).
inline double face_form(const SimGrid& g, std::span<const double> u, std::span<const double> v) {
    double acc = 0.0;
    for (std::size_t k = 0; k < g.n_active(); ++k) {
        const auto& nb = g.neighbors(k);
        const auto& fc = g.face_coeffs(k);
        for (int m = 0; m < 4; ++m) {
            if (nb[m] >= 0) {
                // interior faces are visited twice
                const auto j = static_cast<std::size_t>(nb[m]);
                acc += 0.5 * fc[m] * (u[k] - u[j]) * (v[k] - v[j]);
            } else {
                acc += fc[m] * u[k] * v[k];
            }
        }
    }
    return acc;
}

class WaveSolver {
public:
    WaveSolver(const SimGrid& grid, std::vector<double> potential = {}, SourceFn source = {},
               BoundaryFn boundary = {})
        : g_(&grid), p_(std::move(potential)), source_(std::move(source)), boundary_(std::move(boundary)) {
        if (p_.empty()) p_.assign(grid.n_active(), 0.0);
        require(p_.size() == grid.n_active(), ErrorKind::Shape, "potential size does not match the grid");
        work_.resize(grid.n_active());
        src_.resize(grid.n_active());
        if (boundary_) ext_.resize(4 * grid.n_active());
    }

    const SimGrid& grid() const { return *g_; }
    const std::vector<double>& potential() const { return p_; }

    /// Second-order start: u^{-1} = u0 - dt u1 + dt^2/2 (div(a grad u0) - p u0 + f(0)).
    WaveState init(std::span<const double> u0, std::span<const double> u1 = {}) {
        const std::size_t n = g_->n_active();
        require(u0.size() == n && (u1.empty() || u1.size() == n), ErrorKind::Shape, "initial data size mismatch");
        const double dt = g_->dt();
        WaveState s;
        s.u_curr.assign(u0.begin(), u0.end());
        s.u_prev.resize(n);
        residual(s.u_curr, 0, 0.0, work_);
        for (std::size_t k = 0; k < n; ++k)
            s.u_prev[k] = u0[k] - dt * (u1.empty() ? 0.0 : u1[k]) + 0.5 * dt * dt * work_[k];
        s.t = 0.0;
        s.n = 0;
        return s;
    }

    /// u^{n+1} = 2u^n - u^{n-1} + dt^2 (div(a grad u^n) - p u^n + f^n)
    void step(WaveState& s) {
        const double dt2 = g_->dt() * g_->dt();
        residual(s.u_curr, s.n, s.t, work_);
        bool finite = true;
        for (std::size_t k = 0; k < work_.size(); ++k) {
            const double next = 2.0 * s.u_curr[k] - s.u_prev[k] + dt2 * work_[k];
            s.u_prev[k] = s.u_curr[k];
            s.u_curr[k] = next;
            finite = finite && std::isfinite(next);
        }
        ++s.n;
        s.t = g_->dt() * static_cast<double>(s.n);
        if (!finite) throw Error(ErrorKind::Numerical, "non-finite value after step " + std::to_string(s.n));
    }

    /// Leapfrog-compatible energy between levels n-1 and n:
    /// 1/2 |D_t u|^2 + 1/2 <K u^n, u^{n-1}>, K = -div(a grad) + p.
    double energy(const WaveState& s) const {
        const double dt = g_->dt(), area = g_->cell_area();
        double kin = 0.0, pot = 0.0;
        for (std::size_t k = 0; k < s.u_curr.size(); ++k) {
            const double ut = (s.u_curr[k] - s.u_prev[k]) / dt;
            kin += ut * ut;
            pot += p_[k] * s.u_curr[k] * s.u_prev[k];
        }
        return 0.5 * area * (kin + pot) + 0.5 * face_form(*g_, s.u_curr, s.u_prev);
    }

private:
    void residual(std::span<const double> u, std::size_t n, double t, std::span<double> out) {
        std::span<const double> ext;
        if (boundary_) {
            for (std::size_t k = 0; k < g_->n_active(); ++k) {
                const auto& nb = g_->neighbors(k);
                const Vec2 c = g_->active_center(k);
                const std::array<Vec2, 4> off{{{-g_->h(), 0}, {g_->h(), 0}, {0, -g_->h()}, {0, g_->h()}}};
                for (int m = 0; m < 4; ++m) ext_[k * 4 + m] = nb[m] < 0 ? boundary_(c + off[m], t) : 0.0;
            }
            ext = ext_;
        }
        apply_divergence(*g_, u, out, ext);
        if (source_) {
            std::fill(src_.begin(), src_.end(), 0.0);
            source_(n, t, src_);
        }
        for (std::size_t k = 0; k < out.size(); ++k) out[k] += -p_[k] * u[k] + (source_ ? src_[k] : 0.0);
    }

    const SimGrid* g_;
    std::vector<double> p_;
    SourceFn source_;
    BoundaryFn boundary_;
    std::vector<double> work_, src_, ext_;
};

/// a2 du/dnu at each boundary quadrature point from the one-sided
/// three-point normal stencil (u = 0 on Gamma, samples at depth d and 2d).
inline void trace_row(const SimGrid& g, std::span<const double> u, std::span<double> out) {
    const double d = g.trace_depth(), a2 = g.domains().a2();
    for (std::size_t k = 0; k < g.boundary().size(); ++k) {
        const auto& [s1, s2] = g.trace_stencil(k);
        const double f1 = s1.apply(u), f2 = s2.apply(u);
        out[k] = a2 * (4.0 * f1 - f2) / (2.0 * d);
    }
}

inline FluxTrace empty_trace(const SimGrid& g, std::size_t levels, double t0, double dt) {
    FluxTrace tr;
    tr.dt = dt;
    tr.weights = g.boundary().weights;
    tr.arc = g.boundary().arc;
    tr.times.resize(levels);
    for (std::size_t n = 0; n < levels; ++n) tr.times[n] = t0 + dt * static_cast<double>(n);
    tr.values.assign(levels * g.boundary().size(), 0.0);
    return tr;
}

/// Flux trace of a stored space-time field.
inline FluxTrace neumann_trace(const SimGrid& g, const SpaceTimeField& u) {
    require(u.cells() == g.n_active(), ErrorKind::Shape, "field does not match the grid");
    FluxTrace tr = empty_trace(g, u.levels(), u.t0(), u.dt());
    for (std::size_t n = 0; n < u.levels(); ++n)
        trace_row(g, u.level(n), {tr.values.data() + n * tr.points(), tr.points()});
    return tr;
}

struct SolveOptions {
    bool store_field = false;
    bool record_trace = true;
    std::size_t snapshot_every = 0;
    std::function<void(const WaveState&)> on_snapshot;
    std::function<void(const WaveState&)> on_step;  ///< after init and after every step
};

struct SolveResult {
    FluxTrace trace;
    std::optional<SpaceTimeField> field;  ///< levels 0..nt on [0, T]
    WaveState final_state;
};

/// Runs the solver over [0, T] (grid's nt steps).
inline SolveResult solve(WaveSolver& solver, std::span<const double> u0, std::span<const double> u1,
                         const SolveOptions& opt = {}) {
    const SimGrid& g = solver.grid();
    const std::size_t nt = g.nt();
    SolveResult res;
    if (opt.record_trace) res.trace = empty_trace(g, nt + 1, 0.0, g.dt());
    if (opt.store_field) res.field.emplace(g.n_active(), nt + 1, 0.0, g.dt());
    WaveState s = solver.init(u0, u1);
    auto record = [&](const WaveState& st) {
        if (opt.record_trace)
            trace_row(g, st.u_curr, {res.trace.values.data() + st.n * res.trace.points(), res.trace.points()});
        if (opt.store_field) std::copy(st.u_curr.begin(), st.u_curr.end(), res.field->level(st.n).begin());
        if (opt.snapshot_every && opt.on_snapshot && st.n % opt.snapshot_every == 0) opt.on_snapshot(st);
        if (opt.on_step) opt.on_step(st);
    };
    record(s);
    for (std::size_t n = 0; n < nt; ++n) {
        solver.step(s);
        record(s);
    }
    res.final_state = std::move(s);
    return res;
}

/// y_tt - div(a grad y) + p y = f(x) R(x, t), zero data. R is sampled at the
/// grid's levels 0..nt.
inline SolveResult solve_linearized(const SimGrid& g, std::span<const double> p, std::span<const double> f,
                                    const SpaceTimeField& R, bool store_field = false) {
    require(R.cells() == g.n_active() && R.levels() == g.nt() + 1, ErrorKind::Shape, "R must cover levels 0..nt");
    require(f.size() == g.n_active(), ErrorKind::Shape, "f size mismatch");
    std::vector<double> fv(f.begin(), f.end());
    WaveSolver solver(g, std::vector<double>(p.begin(), p.end()),
                      [&R, fv](std::size_t n, double, std::span<double> out) {
                          const auto r = R.level(n);
                          for (std::size_t k = 0; k < out.size(); ++k) out[k] = fv[k] * r[k];
                      });
    std::vector<double> zero(g.n_active(), 0.0);
    SolveOptions opt;
    opt.store_field = store_field;
    return solve(solver, zero, {}, opt);
}

/// Mirror data on [0, T] (levels 0..N) to [-T, T] (levels 0..2N), even in t.
inline FluxTrace even_extension(const FluxTrace& tr) {
    const std::size_t N = tr.levels() - 1, P = tr.points();
    FluxTrace out = tr;
    out.times.resize(2 * N + 1);
    out.values.assign((2 * N + 1) * P, 0.0);
    for (std::size_t n = 0; n <= 2 * N; ++n) {
        const std::size_t src = n >= N ? n - N : N - n;
        out.times[n] = (static_cast<double>(n) - static_cast<double>(N)) * tr.dt + tr.times[0];
        for (std::size_t k = 0; k < P; ++k) out.values[n * P + k] = tr.values[src * P + k];
    }
    return out;
}

inline SpaceTimeField even_extension(const SpaceTimeField& f) {
    const std::size_t N = f.levels() - 1;
    SpaceTimeField out(f.cells(), 2 * N + 1, f.t0() - static_cast<double>(N) * f.dt(), f.dt());
    for (std::size_t n = 0; n <= 2 * N; ++n) {
        const std::size_t src = n >= N ? n - N : N - n;
        std::copy(f.level(src).begin(), f.level(src).end(), out.level(n).begin());
    }
    return out;
}

/// Keep levels with t >= t0 of an evenly extended object (inverse of even_extension).
inline SpaceTimeField restrict_nonnegative(const SpaceTimeField& f) {
    const std::size_t N = (f.levels() - 1) / 2;
    SpaceTimeField out(f.cells(), N + 1, f.time(N), f.dt());
    for (std::size_t n = 0; n <= N; ++n) std::copy(f.level(N + n).begin(), f.level(N + n).end(), out.level(n).begin());
    return out;
}

/// theta(t) = sigma((T - |t|) / delta): zero at +-T, one on |t| <= T - delta.
inline SmoothStep time_cutoff_profile(double t, double T, double delta) {
    SmoothStep s = smooth_step((T - std::abs(t)) / delta);
    const double sg = t >= 0 ? -1.0 : 1.0;  // d/dt of (T - |t|)
    s.d1 *= sg / delta;
    s.d2 /= delta * delta;
    return s;
}

inline SpaceTimeField time_cutoff(const SpaceTimeField& f, double delta) {
    const double T = f.time(f.levels() - 1);
    require(std::abs(f.t0() + T) <= 1e-9 * (1.0 + T), ErrorKind::Shape, "time cutoff expects a field on [-T, T]");
    require(delta > 0.0 && delta < T, ErrorKind::Parameter, "cutoff width must satisfy 0 < delta < T");
    SpaceTimeField out = f;
    for (std::size_t n = 0; n < f.levels(); ++n) {
        const double th = time_cutoff_profile(f.time(n), T, delta).value;
        for (double& v : out.level(n)) v *= th;
    }
    return out;
}

}  // namespace twv
