#pragma once
/**
 * @file carleman.hpp
 * @brief Conjugated wave operator, weighted norms and the empirical Carleman ratio.
 *
 * With varphi = exp(lambda phi), psi = s varphi and w = exp(psi) u, the
 * conjugated operator P w = exp(psi) L(exp(-psi) w), L = d_tt - a Laplace,
 * splits as P = P1 + P2 + R:
 *
 *   P1 w = w_tt - a Lap w + s^2 lambda^2 varphi^2 E(phi) w
 *   P2 w = (gamma - 1) s lambda varphi L(phi) w - s lambda^2 varphi E(phi) w
 *          - 2 s lambda varphi (phi_t w_t - a grad phi . grad w)
 *   R  w = -gamma s lambda varphi L(phi) w
 *
 * where E(phi) = phi_t^2 - a |grad phi|^2 and L(phi) = phi_tt - a Lap phi.
 *
 * Weighted integrals are never formed with exp(psi) directly. Every
 * integrand is evaluated as exp(2 psi - G) (...) with G the global maximum of
 * 2 psi over both poles, so all reported lhs/rhs values live in that gauge.
 */

#include <optional>
#include <random>

#include "twv/forward.hpp"
#include "twv/weights.hpp"

namespace twv {

/// Derivatives of a field (or of w) at one space-time point. `alap` is
/// a times the Laplacian (conservative form on the grid).
struct LocalDerivs {
    double u = 0.0, ut = 0.0, utt = 0.0;
    Vec2 grad{};
    double alap = 0.0;
};

struct SplitTerms {
    double P1 = 0.0, P2 = 0.0, R = 0.0;
    double sum() const { return P1 + P2 + R; }
};

/// Pointwise P1, P2, R for a field w with derivatives d, coefficient a.
inline SplitTerms split_P_point(const WeightPoint& wp, double a, double s, double lambda, double gamma,
                                const LocalDerivs& d) {
    const double vp = std::exp(lambda * wp.phi);
    const double E = wp.phi_t * wp.phi_t - a * norm2(wp.grad);
    const double Lphi = wp.phi_tt - a * wp.lap;
    const double sl = s * lambda * vp;
    SplitTerms t;
    t.P1 = d.utt - d.alap + sl * sl * E * d.u;
    t.P2 = (gamma - 1.0) * sl * Lphi * d.u - sl * lambda * E * d.u - 2.0 * sl * (wp.phi_t * d.ut - a * dot(wp.grad, d.grad));
    t.R = -gamma * sl * Lphi * d.u;
    return t;
}

/// Derivatives of psi = s exp(lambda phi).
struct PsiDerivs {
    double psi = 0.0, psi_t = 0.0, psi_tt = 0.0, lap = 0.0;
    Vec2 grad{};
};

inline PsiDerivs psi_derivs(const WeightPoint& wp, double s, double lambda) {
    const double vp = std::exp(lambda * wp.phi);
    const double sl = s * lambda * vp;
    PsiDerivs p;
    p.psi = s * vp;
    p.psi_t = sl * wp.phi_t;
    p.psi_tt = sl * (wp.phi_tt + lambda * wp.phi_t * wp.phi_t);
    p.grad = sl * wp.grad;
    p.lap = sl * (wp.lap + lambda * norm2(wp.grad));
    return p;
}

/// Derivatives of w / exp(psi) where w = exp(psi) u (product rule).
inline LocalDerivs conjugate_derivs(const LocalDerivs& u, const PsiDerivs& p, double a) {
    LocalDerivs w;
    w.u = u.u;
    w.ut = u.ut + p.psi_t * u.u;
    w.utt = u.utt + 2.0 * p.psi_t * u.ut + (p.psi_tt + p.psi_t * p.psi_t) * u.u;
    w.grad = u.grad + u.u * p.grad;
    w.alap = u.alap + a * (2.0 * dot(p.grad, u.grad) + (p.lap + norm2(p.grad)) * u.u);
    return w;
}

// ---------------------------------------------------------------------------
// Region-aware differencing on the grid

/// One- or two-sided stencil over active cells; index -1 reads zero.
struct AxisStencil {
    std::array<std::int64_t, 4> idx{-1, -1, -1, -1};
    std::array<double, 4> d1{};
    std::array<double, 4> d2{};
};

/// Differencing in space and time that never crosses Gamma_1. Where a
/// centred stencil would straddle the interface the second-order one-sided
/// formula is used instead. Exterior neighbours carry the zero datum.
class FieldDifferentiator {
public:
    explicit FieldDifferentiator(const SimGrid& g) : g_(&g) {
        const std::size_t n = g.n_active();
        stencils_.resize(2 * n);
        for (std::size_t k = 0; k < n; ++k) {
            stencils_[2 * k] = build(k, 0);
            stencils_[2 * k + 1] = build(k, 2);
        }
    }

    const SimGrid& grid() const { return *g_; }

    /// Spatial gradient of level data u at cell k.
    Vec2 gradient(std::span<const double> u, std::size_t k) const {
        return {apply(stencils_[2 * k].d1, stencils_[2 * k].idx, u), apply(stencils_[2 * k + 1].d1, stencils_[2 * k + 1].idx, u)};
    }

    /// Region-aware a * Laplacian at cell k.
    double a_laplacian(std::span<const double> u, std::size_t k) const {
        const double a = g_->coefficient(k);
        return a * (apply(stencils_[2 * k].d2, stencils_[2 * k].idx, u) + apply(stencils_[2 * k + 1].d2, stencils_[2 * k + 1].idx, u));
    }

    /// Derivatives of a space-time field at (level n, cell k). `alap_conservative`
    /// selects the face-based operator div(a grad u) used by the solver.
    LocalDerivs at(const SpaceTimeField& f, std::size_t n, std::size_t k, bool alap_conservative,
                   std::span<const double> div_level = {}) const {
        LocalDerivs d;
        const std::size_t L = f.levels();
        const double dt = f.dt();
        d.u = f.at(n, k);
        if (L >= 4) {
            if (n == 0) {
                d.ut = (-3.0 * f.at(0, k) + 4.0 * f.at(1, k) - f.at(2, k)) / (2.0 * dt);
                d.utt = (2.0 * f.at(0, k) - 5.0 * f.at(1, k) + 4.0 * f.at(2, k) - f.at(3, k)) / (dt * dt);
            } else if (n == L - 1) {
                d.ut = (3.0 * f.at(n, k) - 4.0 * f.at(n - 1, k) + f.at(n - 2, k)) / (2.0 * dt);
                d.utt = (2.0 * f.at(n, k) - 5.0 * f.at(n - 1, k) + 4.0 * f.at(n - 2, k) - f.at(n - 3, k)) / (dt * dt);
            } else {
                d.ut = (f.at(n + 1, k) - f.at(n - 1, k)) / (2.0 * dt);
                d.utt = (f.at(n + 1, k) - 2.0 * f.at(n, k) + f.at(n - 1, k)) / (dt * dt);
            }
        }
        const auto lvl = f.level(n);
        d.grad = gradient(lvl, k);
        if (alap_conservative) d.alap = div_level.empty() ? 0.0 : div_level[k];
        else d.alap = a_laplacian(lvl, k);
        return d;
    }

private:
    static double apply(const std::array<double, 4>& w, const std::array<std::int64_t, 4>& idx, std::span<const double> u) {
        double v = 0.0;
        for (int i = 0; i < 4; ++i)
            if (idx[i] >= 0) v += w[i] * u[static_cast<std::size_t>(idx[i])];
        return v;
    }

    // walk from cell k along neighbour slot m; returns -1 when leaving the active set
    std::int64_t walk(std::size_t k, int m) const { return g_->neighbors(k)[m]; }

    bool same_or_exterior(std::int64_t j, Region r) const {
        return j < 0 || g_->active_label(static_cast<std::size_t>(j)) == r;
    }

    AxisStencil build(std::size_t k, int axis_slot) const {
        const double h = g_->h();
        const Region me = g_->active_label(k);
        const std::int64_t lo = walk(k, axis_slot), hi = walk(k, axis_slot + 1);
        const bool lo_ok = same_or_exterior(lo, me), hi_ok = same_or_exterior(hi, me);
        AxisStencil s;
        const auto self = static_cast<std::int64_t>(k);
        auto centred = [&] {
            s.idx = {lo, self, hi, -1};
            s.d1 = {-0.5 / h, 0.0, 0.5 / h, 0.0};
            s.d2 = {1.0 / (h * h), -2.0 / (h * h), 1.0 / (h * h), 0.0};
        };
        if (lo_ok == hi_ok) {
            centred();
            return s;
        }
        // one-sided toward the side that stays in the region
        const int slot = lo_ok ? axis_slot : axis_slot + 1;
        const double sg = lo_ok ? -1.0 : 1.0;
        const std::int64_t f1 = lo_ok ? lo : hi;
        const std::int64_t f2 = f1 >= 0 ? walk(static_cast<std::size_t>(f1), slot) : -1;
        const std::int64_t f3 = f2 >= 0 ? walk(static_cast<std::size_t>(f2), slot) : -1;
        if (f1 < 0 || !same_or_exterior(f2, me) || !same_or_exterior(f3, me)) {
            centred();
            return s;
        }
        s.idx = {self, f1, f2, f3};
        s.d1 = {sg * -1.5 / h, sg * 2.0 / h, sg * -0.5 / h, 0.0};
        s.d2 = {2.0 / (h * h), -5.0 / (h * h), 4.0 / (h * h), -1.0 / (h * h)};
        return s;
    }

    const SimGrid* g_;
    std::vector<AxisStencil> stencils_;  ///< (x, y) per active cell
};

enum class OperatorForm {
    Conservative,  ///< face-based div(a grad u), identical to the solver
    OneSided,      ///< region-wise centred differences, one-sided at Gamma_1
};

/// L_p u = u_tt - div(a grad u) + p u on every level of a space-time field.
inline SpaceTimeField wave_operator(const SimGrid& g, const SpaceTimeField& u, std::span<const double> p = {},
                                    OperatorForm form = OperatorForm::Conservative) {
    require(u.cells() == g.n_active(), ErrorKind::Shape, "field does not match the grid");
    require(u.levels() >= 4, ErrorKind::Shape, "wave operator needs at least 4 time levels");
    require(p.empty() || p.size() == g.n_active(), ErrorKind::Shape, "potential size mismatch");
    const FieldDifferentiator D(g);
    SpaceTimeField out(u.cells(), u.levels(), u.t0(), u.dt());
    std::vector<double> div(g.n_active());
    for (std::size_t n = 0; n < u.levels(); ++n) {
        const bool cons = form == OperatorForm::Conservative;
        if (cons) apply_divergence(g, u.level(n), div);
        for (std::size_t k = 0; k < g.n_active(); ++k) {
            const LocalDerivs d = D.at(u, n, k, cons, div);
            out.at(n, k) = d.utt - d.alap + (p.empty() ? 0.0 : p[k] * d.u);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Weight sampled on the grid

/// Spatial quadrature nodes over Omega: a point, its region and its area.
/// `cell` is the active cell a node lies in, or -1 when its cell centre is
/// outside Omega.
struct QuadratureNodes {
    std::vector<Vec2> x;
    std::vector<Region> region;
    std::vector<double> area;
    std::vector<std::int64_t> cell;

    std::size_t size() const { return x.size(); }
    void add(Vec2 p, Region r, double w, std::int64_t k) {
        x.push_back(p);
        region.push_back(r);
        area.push_back(w);
        cell.push_back(k);
    }
};

/// One node per active cell centre (midpoint rule).
inline QuadratureNodes cell_nodes(const SimGrid& g) {
    QuadratureNodes q;
    const double A = g.cell_area();
    for (std::size_t k = 0; k < g.n_active(); ++k)
        q.add(g.active_center(k), g.active_label(k), A, static_cast<std::int64_t>(k));
    return q;
}

/// Midpoint rule away from Gamma; cells whose centre lies within `band`
/// cell widths of Gamma (inside or outside) are split into q x q sub-cells
/// and only sub-cell centres inside Omega are kept.
inline QuadratureNodes refined_nodes(const SimGrid& g, double band, std::size_t q) {
    require(q >= 1, ErrorKind::Parameter, "refinement factor must be at least 1");
    const DomainPair& dp = g.domains();
    const double h = g.h(), A = g.cell_area();
    QuadratureNodes out;
    const double sub = h / static_cast<double>(q);
    for (std::size_t j = 0; j < g.ny(); ++j)
        for (std::size_t i = 0; i < g.nx(); ++i) {
            const Vec2 c = g.center(i, j);
            const std::int64_t k = g.active_index(i, j);
            const bool near = distance_to_curve(dp.outer(), c, 64).first < band * h;
            if (!near) {
                if (k >= 0) out.add(c, g.active_label(static_cast<std::size_t>(k)), A, k);
                continue;
            }
            for (std::size_t b = 0; b < q; ++b)
                for (std::size_t a = 0; a < q; ++a) {
                    const Vec2 p = c + Vec2{(static_cast<double>(a) + 0.5) * sub - 0.5 * h,
                                            (static_cast<double>(b) + 0.5) * sub - 0.5 * h};
                    const Region r = dp.region_of(p);
                    if (r != Region::Exterior) out.add(p, r, sub * sub, k);
                }
        }
    return out;
}

/// Boundary layer in polar coordinates about Gamma's pole: x = pole + r u(theta)
/// with (1 - depth) rho(theta) <= r <= rho(theta). Radial panels are graded
/// geometrically toward Gamma (first panel depth * min_fraction wide) with
/// 4-point Gauss-Legendre on each, theta uses the periodic midpoint rule, and
/// node areas are r dr dtheta. The rest of Omega uses cell centres, with cells
/// near the layer's inner edge split into q x q sub-cells.
inline QuadratureNodes layered_nodes(const SimGrid& g, double depth, std::size_t panels, std::size_t n_theta,
                                     std::size_t q, double min_fraction = 1e-4) {
    require(depth > 0.0 && depth < 1.0, ErrorKind::Parameter, "layer depth must lie in (0, 1)");
    require(panels >= 1 && n_theta >= 8 && q >= 1, ErrorKind::Parameter, "bad layer resolution");
    require(min_fraction > 0.0 && min_fraction < 1.0, ErrorKind::Parameter, "min_fraction must lie in (0, 1)");
    const DomainPair& dp = g.domains();
    const InterfaceCurve& gam = dp.outer();
    const Vec2 P = gam.pole();
    const double h = g.h(), A = g.cell_area(), cut = 1.0 - depth;
    auto rel = [&](Vec2 x) {
        const Vec2 v = x - P;
        const double r = norm(v);
        return r == 0.0 ? 0.0 : r / gam.rho(std::atan2(v.y, v.x));
    };
    QuadratureNodes out;

    // core: rel < 1 - depth
    double rho_min = 1e300;
    for (std::size_t k = 0; k < 256; ++k) rho_min = std::min(rho_min, gam.rho(2.0 * pi * static_cast<double>(k) / 256.0));
    const double slack = 2.0 * h / rho_min;
    const double sub = h / static_cast<double>(q);
    for (std::size_t j = 0; j < g.ny(); ++j)
        for (std::size_t i = 0; i < g.nx(); ++i) {
            const Vec2 c = g.center(i, j);
            const std::int64_t k = g.active_index(i, j);
            const double rc = rel(c);
            if (rc < cut - slack) {
                if (k >= 0) out.add(c, g.active_label(static_cast<std::size_t>(k)), A, k);
                continue;
            }
            if (rc > cut + slack) continue;
            for (std::size_t b = 0; b < q; ++b)
                for (std::size_t a = 0; a < q; ++a) {
                    const Vec2 p = c + Vec2{(static_cast<double>(a) + 0.5) * sub - 0.5 * h,
                                            (static_cast<double>(b) + 0.5) * sub - 0.5 * h};
                    if (rel(p) < cut) out.add(p, dp.region_of(p), sub * sub, k);
                }
        }

    // layer: sigma in [0, 1] measured inward from Gamma
    static constexpr double gx[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
    static constexpr double gw[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
    std::vector<double> edges{0.0};
    const double ratio = panels > 1 ? std::pow(1.0 / min_fraction, 1.0 / static_cast<double>(panels - 1)) : 1.0;
    for (std::size_t m = 0; m < panels; ++m) edges.push_back(std::min(1.0, min_fraction * std::pow(ratio, static_cast<double>(m))));
    edges.back() = 1.0;
    std::vector<double> sig, wsig;
    for (std::size_t m = 0; m + 1 < edges.size(); ++m) {
        const double a = edges[m], b = edges[m + 1];
        for (int n = 0; n < 4; ++n) {
            sig.push_back(0.5 * (a + b) + 0.5 * (b - a) * gx[n]);
            wsig.push_back(0.5 * (b - a) * gw[n]);
        }
    }
    const double dth = 2.0 * pi / static_cast<double>(n_theta);
    for (std::size_t t = 0; t < n_theta; ++t) {
        const double th = (static_cast<double>(t) + 0.5) * dth;
        const double rho = gam.rho(th);
        const Vec2 u = polar_unit(th);
        for (std::size_t n = 0; n < sig.size(); ++n) {
            const double r = rho * (1.0 - depth * sig[n]);
            const Vec2 p = P + r * u;
            out.add(p, dp.region_of(p) == Region::Inner ? Region::Inner : Region::Outer, r * rho * depth * wsig[n] * dth, -1);
        }
    }
    return out;
}

/// Spatial part of one pole's weight at quadrature nodes and boundary
/// points. Time enters only through -beta t^2.
struct WeightField {
    WeightParams params;
    std::vector<double> S, lapS, M;
    std::vector<Vec2> gradS;
    std::vector<double> Sb;      ///< Omega_2 formula at boundary quadrature points
    std::vector<double> dnb;     ///< grad phi . nu at boundary points

    WeightPoint cell(std::size_t k, double t) const {
        return {S[k] + M[k] - params.beta * t * t, gradS[k], Sym2{}, lapS[k], -2.0 * params.beta * t, -2.0 * params.beta};
    }
    double boundary_phi(std::size_t b, double t) const { return Sb[b] + params.M2 - params.beta * t * t; }
};

inline WeightField sample_weight(const QuadratureNodes& q, const CurveQuadrature& B, const Weight& w) {
    WeightField f;
    f.params = w.params();
    const std::size_t n = q.size();
    f.S.resize(n);
    f.lapS.resize(n);
    f.M.resize(n);
    f.gradS.resize(n);
    parallel_for(n, [&](std::size_t k) {
        const SpatialWeight sw = w.spatial(q.x[k], q.region[k]);
        f.S[k] = sw.S;
        f.gradS[k] = sw.grad;
        f.lapS[k] = sw.lap();
        f.M[k] = w.M(q.region[k]);
    });
    f.Sb.resize(B.size());
    f.dnb.resize(B.size());
    for (std::size_t b = 0; b < B.size(); ++b) {
        const SpatialWeight sw = w.spatial(B.points[b], Region::Outer);
        f.Sb[b] = sw.S;
        f.dnb[b] = dot(sw.grad, B.normals[b]);
    }
    return f;
}

/// Weight at the active cell centres of a grid.
inline WeightField sample_weight(const SimGrid& g, const Weight& w) { return sample_weight(cell_nodes(g), g.boundary(), w); }

/// Boundary points where grad phi . nu > 0. The set does not depend on t,
/// so the mask over Gamma x (-T, T) is this mask at every time level.
inline std::vector<char> sigma_plus_mask(const WeightField& f) {
    std::vector<char> m(f.dnb.size());
    for (std::size_t b = 0; b < m.size(); ++b) m[b] = f.dnb[b] > 0.0;
    return m;
}

/// Trapezoidal weights over the levels of a space-time field.
inline double time_weight(std::size_t n, std::size_t levels, double dt) {
    return (n == 0 || n + 1 == levels) ? 0.5 * dt : dt;
}

/// s lambda int (|g_t|^2 + |grad g|^2) varphi + s^3 lambda^3 int |g|^2 varphi^3
/// over cells with mask[k] != 0. `varphi` holds exp(lambda phi) per (level, cell).
inline double weighted_norm(const SimGrid& g, const SpaceTimeField& f, const SpaceTimeField& varphi,
                            std::span<const char> mask, double s, double lambda) {
    require(f.cells() == g.n_active() && varphi.cells() == f.cells() && varphi.levels() == f.levels(),
            ErrorKind::Shape, "weighted norm inputs disagree in shape");
    require(mask.size() == g.n_active(), ErrorKind::Shape, "mask size mismatch");
    const FieldDifferentiator D(g);
    const double sl = s * lambda, area = g.cell_area();
    double total = 0.0;
    for (std::size_t n = 0; n < f.levels(); ++n) {
        const double wt = time_weight(n, f.levels(), f.dt()) * area;
        for (std::size_t k = 0; k < g.n_active(); ++k) {
            if (!mask[k]) continue;
            const LocalDerivs d = D.at(f, n, k, false);
            const double vp = varphi.at(n, k);
            total += wt * (sl * (d.ut * d.ut + norm2(d.grad)) * vp + sl * sl * sl * d.u * d.u * vp * vp * vp);
        }
    }
    return total;
}

/// P1 w, P2 w, R w on the grid for a plain (unscaled) field w. Only usable
/// when exp(psi) stays in floating range; the ratio below works in log space.
struct SplitFields {
    SpaceTimeField P1, P2, R;
};

inline SplitFields split_P(const SimGrid& g, const SpaceTimeField& w, const WeightField& wf, double s, double lambda,
                           double gamma) {
    require(w.cells() == g.n_active() && wf.S.size() == g.n_active(), ErrorKind::Shape, "split inputs disagree in shape");
    const FieldDifferentiator D(g);
    SplitFields out{SpaceTimeField(w.cells(), w.levels(), w.t0(), w.dt()), SpaceTimeField(w.cells(), w.levels(), w.t0(), w.dt()),
                    SpaceTimeField(w.cells(), w.levels(), w.t0(), w.dt())};
    for (std::size_t n = 0; n < w.levels(); ++n) {
        for (std::size_t k = 0; k < g.n_active(); ++k) {
            const SplitTerms t = split_P_point(wf.cell(k, w.time(n)), g.coefficient(k), s, lambda, gamma, D.at(w, n, k, false));
            out.P1.at(n, k) = t.P1;
            out.P2.at(n, k) = t.P2;
            out.R.at(n, k) = t.R;
        }
    }
    return out;
}

/// w = exp(psi) u kept as log|w| and sign.
class ConjugatedField {
public:
    ConjugatedField(const SpaceTimeField& u, const WeightField& wf, double s, double lambda) : u_(&u) {
        logw_.resize(u.cells() * u.levels());
        for (std::size_t n = 0; n < u.levels(); ++n)
            for (std::size_t k = 0; k < u.cells(); ++k) {
                const double psi = s * std::exp(lambda * wf.cell(k, u.time(n)).phi);
                const double v = u.at(n, k);
                logw_[n * u.cells() + k] = v == 0.0 ? -std::numeric_limits<double>::infinity() : std::log(std::abs(v)) + psi;
            }
    }
    double log_abs(std::size_t n, std::size_t k) const { return logw_[n * u_->cells() + k]; }
    int sign(std::size_t n, std::size_t k) const { return (u_->at(n, k) > 0.0) - (u_->at(n, k) < 0.0); }
    double value(std::size_t n, std::size_t k) const { return sign(n, k) * std::exp(log_abs(n, k)); }
    const SpaceTimeField& base() const { return *u_; }

private:
    const SpaceTimeField* u_;
    std::vector<double> logw_;
};

// ---------------------------------------------------------------------------
// Membership in X

struct XTolerances {
    double boundary = 0.05;    ///< relative to max |u|
    double endpoint = 1e-8;    ///< relative to max |u|
    double continuity = 0.02;  ///< relative to max |u|
    double flux = 0.25;        ///< relative to max |a du/dnu|
};

struct XSpaceCertificate {
    double boundary_residual = 0.0;
    double endpoint_u = 0.0;
    double endpoint_ut = 0.0;
    double continuity_residual = 0.0;
    double flux_residual = 0.0;
    double u_scale = 0.0;
    double flux_scale = 0.0;
    bool boundary_ok = false, endpoint_ok = false, continuity_ok = false, flux_ok = false;
    bool pass() const { return boundary_ok && endpoint_ok && continuity_ok && flux_ok; }
};

/// Residuals of the constraints defining X: u = 0 on Sigma, u = u_t = 0 at
/// t = +-T, and continuity of u and a du/dnu across Gamma_1. Traces on curves
/// are extrapolated from samples at depths d and 2d on each side.
inline XSpaceCertificate certify_in_X(const SimGrid& g, const SpaceTimeField& u, const XTolerances& tol = {}) {
    require(u.cells() == g.n_active() && u.levels() >= 3, ErrorKind::Shape, "field does not match the grid");
    XSpaceCertificate c;
    const double d = g.trace_depth();
    for (double v : u.raw()) c.u_scale = std::max(c.u_scale, std::abs(v));

    const auto& B = g.boundary();
    std::vector<std::pair<InterpStencil, InterpStencil>> bs;
    for (std::size_t b = 0; b < B.size(); ++b) bs.push_back(g.trace_stencil(b));

    struct Side {
        InterpStencil s1, s2;
    };
    std::vector<std::pair<Side, Side>> is;
    const auto& I = g.interface();
    std::vector<double> a_in_out{g.domains().a1(), g.domains().a2()};
    for (std::size_t b = 0; b < I.size(); ++b) {
        const Vec2 y = I.points[b], nu = I.normals[b];
        Side in{g.interp(y - d * nu), g.interp(y - 2.0 * d * nu)};
        Side out{g.interp(y + d * nu), g.interp(y + 2.0 * d * nu)};
        if (g.supported_in(in.s1, Region::Inner) && g.supported_in(in.s2, Region::Inner) &&
            g.supported_in(out.s1, Region::Outer) && g.supported_in(out.s2, Region::Outer))
            is.push_back({in, out});
    }

    for (std::size_t n = 0; n < u.levels(); ++n) {
        const auto lvl = u.level(n);
        for (const auto& [s1, s2] : bs) c.boundary_residual = std::max(c.boundary_residual, std::abs(2.0 * s1.apply(lvl) - s2.apply(lvl)));
        for (const auto& [in, out] : is) {
            const double i1 = in.s1.apply(lvl), i2 = in.s2.apply(lvl), o1 = out.s1.apply(lvl), o2 = out.s2.apply(lvl);
            const double ui = 2.0 * i1 - i2, uo = 2.0 * o1 - o2;
            c.continuity_residual = std::max(c.continuity_residual, std::abs(ui - uo));
            // one-sided derivatives toward each side, both along nu
            const double fi = a_in_out[0] * (3.0 * ui - 4.0 * i1 + i2) / (2.0 * d);
            const double fo = a_in_out[1] * (-3.0 * uo + 4.0 * o1 - o2) / (2.0 * d);
            c.flux_residual = std::max(c.flux_residual, std::abs(fi - fo));
            c.flux_scale = std::max({c.flux_scale, std::abs(fi), std::abs(fo)});
        }
    }
    const std::size_t L = u.levels();
    for (std::size_t k = 0; k < u.cells(); ++k) {
        c.endpoint_u = std::max({c.endpoint_u, std::abs(u.at(0, k)), std::abs(u.at(L - 1, k))});
        const double ut0 = (-3.0 * u.at(0, k) + 4.0 * u.at(1, k) - u.at(2, k)) / (2.0 * u.dt());
        const double ut1 = (3.0 * u.at(L - 1, k) - 4.0 * u.at(L - 2, k) + u.at(L - 3, k)) / (2.0 * u.dt());
        c.endpoint_ut = std::max({c.endpoint_ut, std::abs(ut0), std::abs(ut1)});
    }
    const double us = c.u_scale > 0.0 ? c.u_scale : 1.0;
    const double fs = c.flux_scale > 0.0 ? c.flux_scale : 1.0;
    c.boundary_ok = c.boundary_residual <= tol.boundary * us;
    // u_t is compared against max|u| / T, the natural time-derivative scale
    const double T = 0.5 * u.dt() * static_cast<double>(L - 1);
    c.endpoint_ok = c.endpoint_u <= tol.endpoint * us && c.endpoint_ut <= tol.endpoint * us / T;
    c.continuity_ok = c.continuity_residual <= tol.continuity * us;
    c.flux_ok = c.flux_residual <= tol.flux * fs;
    return c;
}

// ---------------------------------------------------------------------------
// Closed-form members of X on concentric circles

struct Bump {
    Vec2 center{};
    double width = 0.3;
    double amplitude = 1.0;
    double omega = 1.0;
    double phase = 0.0;
};

/// u(x, t) = theta(t) sum_j cos(omega_j t + phase_j) U_j(x) with
/// G_j a Gaussian bump and, for r = |x - c| about the common centre,
///   U_j = G_j                                      in Omega_1,
///   U_j = m(r) (G_j + k (r - r1) dG_j/dr)          in Omega_2,
/// k = a1/a2 - 1, m(r) = 1 - ((r - r1)/(R - r1))^2. Then U_j is continuous
/// across Gamma_1, a1 dU_j/dr matches a2 dU_j/dr there, U_j = 0 on Gamma,
/// and theta makes u and u_t vanish at t = +-T.
class BumpField {
public:
    struct Spatial {
        double v = 0.0;
        Vec2 grad{};
        double lap = 0.0;
    };

    BumpField(const DomainPair& dp, std::vector<Bump> bumps, double T, double delta)
        : dp_(&dp), bumps_(std::move(bumps)), T_(T), delta_(delta) {
        require(supported(dp), ErrorKind::Domain, "closed-form X fields need concentric circles");
        require(delta > 0.0 && delta < T, ErrorKind::Parameter, "cutoff width must satisfy 0 < delta < T");
        for (const auto& b : bumps_) require(b.width > 0.0, ErrorKind::Parameter, "bump width must be positive");
        c_ = dp.inner().pole();
        r1_ = dp.inner().coeffs()[0];
        R_ = dp.outer().coeffs()[0];
        k_ = dp.a1() / dp.a2() - 1.0;
    }

    static bool supported(const DomainPair& dp) {
        auto round = [](const InterfaceCurve& c) {
            for (std::size_t i = 1; i < c.coeffs().size(); ++i)
                if (c.coeffs()[i] != 0.0) return false;
            return true;
        };
        return round(dp.inner()) && round(dp.outer()) && norm(dp.inner().pole() - dp.outer().pole()) == 0.0;
    }

    std::size_t size() const { return bumps_.size(); }
    const Bump& bump(std::size_t j) const { return bumps_[j]; }
    double T() const { return T_; }
    const DomainPair& domains() const { return *dp_; }

    /// U_j(x) using the formula of region `side` (smoothly extended past it).
    double shape(std::size_t j, Vec2 x, Region side) const {
        const Bump& b = bumps_[j];
        const Vec2 d = x - b.center;
        const double G = std::exp(-norm2(d) / (2.0 * b.width * b.width));
        if (side == Region::Inner) return G;
        const Vec2 y = x - c_;
        const double r = norm(y);
        const double Gr = r > 0.0 ? -G * dot(d, y) / (b.width * b.width * r) : 0.0;
        const double q = (r - r1_) / (R_ - r1_);
        return (1.0 - q * q) * (G + k_ * (r - r1_) * Gr);
    }

    /// Value, gradient and Laplacian of U_j by fourth-order differences of
    /// the closed form with a step far below any grid spacing.
    Spatial shape_derivs(std::size_t j, Vec2 x, Region side) const {
        const double e = 1e-3 * std::min(bumps_[j].width, r1_);
        Spatial out;
        out.v = shape(j, x, side);
        for (int ax = 0; ax < 2; ++ax) {
            const Vec2 u = ax == 0 ? Vec2{e, 0.0} : Vec2{0.0, e};
            const double p1 = shape(j, x + u, side), m1 = shape(j, x - u, side);
            const double p2 = shape(j, x + 2.0 * u, side), m2 = shape(j, x - 2.0 * u, side);
            const double d1 = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * e);
            (ax == 0 ? out.grad.x : out.grad.y) = d1;
            out.lap += (-p2 + 16.0 * p1 - 30.0 * out.v + 16.0 * m1 - m2) / (12.0 * e * e);
        }
        return out;
    }

    /// theta(t) cos(omega_j t + phase_j) with two time derivatives.
    SmoothStep temporal(std::size_t j, double t) const {
        const SmoothStep th = time_cutoff_profile(t, T_, delta_);
        const double w = bumps_[j].omega, arg = w * t + bumps_[j].phase;
        const double c = std::cos(arg), sn = std::sin(arg);
        return {th.value * c, th.d1 * c - th.value * w * sn, th.d2 * c - 2.0 * th.d1 * w * sn - th.value * w * w * c};
    }

    LocalDerivs derivs(Vec2 x, Region side, double t) const {
        LocalDerivs d;
        const double a = dp_->coefficient(side);
        for (std::size_t j = 0; j < size(); ++j) {
            const Spatial sp = shape_derivs(j, x, side);
            const SmoothStep tm = temporal(j, t);
            const double A = bumps_[j].amplitude;
            d.u += A * tm.value * sp.v;
            d.ut += A * tm.d1 * sp.v;
            d.utt += A * tm.d2 * sp.v;
            d.grad = d.grad + (A * tm.value) * sp.grad;
            d.alap += A * tm.value * a * sp.lap;
        }
        return d;
    }

    double value(Vec2 x, Region side, double t) const { return derivs(x, side, t).u; }

private:
    const DomainPair* dp_;
    std::vector<Bump> bumps_;
    double T_, delta_;
    Vec2 c_{};
    double r1_ = 1.0, R_ = 2.0, k_ = 0.0;
};

/// Random bump superposition: centres uniform in the disc of radius
/// `center_radius`, widths in [w_lo, w_hi], amplitudes in [-1, 1],
/// frequencies in [0, omega_max], phases in [0, 2 pi).
struct BumpEnsembleOptions {
    std::size_t bumps = 3;
    double center_radius = 1.6;
    double width_lo = 0.3, width_hi = 0.6;
    double omega_max = 3.0;
};

template <class Rng>
std::vector<Bump> random_bumps(Rng& rng, const BumpEnsembleOptions& opt, Vec2 origin = {}) {
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::vector<Bump> out(opt.bumps);
    for (auto& b : out) {
        const double r = opt.center_radius * std::sqrt(U(rng)), th = 2.0 * pi * U(rng);
        b.center = origin + Vec2{r * std::cos(th), r * std::sin(th)};
        b.width = opt.width_lo + (opt.width_hi - opt.width_lo) * U(rng);
        b.amplitude = 2.0 * U(rng) - 1.0;
        b.omega = opt.omega_max * U(rng);
        b.phase = 2.0 * pi * U(rng);
    }
    return out;
}

/// Constraint residuals of a closed-form field, evaluated on the curves
/// themselves (n_time levels on [-T, T], n_curve points per curve).
inline XSpaceCertificate certify_in_X(const BumpField& f, std::size_t n_time = 41, std::size_t n_curve = 256,
                                      const XTolerances& tol = {}) {
    XSpaceCertificate c;
    const DomainPair& dp = f.domains();
    const double T = f.T();
    for (std::size_t n = 0; n < n_time; ++n) {
        const double t = -T + 2.0 * T * static_cast<double>(n) / static_cast<double>(n_time - 1);
        for (std::size_t i = 0; i < n_curve; ++i) {
            const double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n_curve);
            const Vec2 xb = dp.outer().point(th);
            const Vec2 xi = dp.inner().point(th);
            const Vec2 nu = (1.0 / norm(xi - dp.inner().pole())) * (xi - dp.inner().pole());
            const LocalDerivs ub = f.derivs(xb, Region::Outer, t);
            const LocalDerivs ui = f.derivs(xi, Region::Inner, t);
            const LocalDerivs uo = f.derivs(xi, Region::Outer, t);
            c.u_scale = std::max({c.u_scale, std::abs(ui.u), std::abs(uo.u)});
            c.boundary_residual = std::max(c.boundary_residual, std::abs(ub.u));
            c.continuity_residual = std::max(c.continuity_residual, std::abs(ui.u - uo.u));
            const double fi = dp.a1() * dot(ui.grad, nu), fo = dp.a2() * dot(uo.grad, nu);
            c.flux_residual = std::max(c.flux_residual, std::abs(fi - fo));
            c.flux_scale = std::max({c.flux_scale, std::abs(fi), std::abs(fo)});
            if (n == 0 || n + 1 == n_time) {
                c.endpoint_u = std::max({c.endpoint_u, std::abs(ui.u), std::abs(uo.u), std::abs(ub.u)});
                c.endpoint_ut = std::max({c.endpoint_ut, std::abs(ui.ut), std::abs(uo.ut), std::abs(ub.ut)});
            }
        }
    }
    const double us = c.u_scale > 0.0 ? c.u_scale : 1.0;
    const double fs = c.flux_scale > 0.0 ? c.flux_scale : 1.0;
    c.boundary_ok = c.boundary_residual <= tol.boundary * us;
    c.endpoint_ok = c.endpoint_u <= tol.endpoint * us && c.endpoint_ut <= tol.endpoint * us / T;
    c.continuity_ok = c.continuity_residual <= tol.continuity * us;
    c.flux_ok = c.flux_residual <= tol.flux * fs;
    return c;
}

// ---------------------------------------------------------------------------
// The ratio

/// Both sides of the inequality, in the exp(-G) gauge.
struct RatioTerms {
    double s = 0.0;
    double lhs_P1 = 0.0, lhs_P2 = 0.0, lhs_norm = 0.0;
    double rhs_interior = 0.0;     ///< int exp(2 psi) |L_p u|^2
    double rhs_sigma_plus = 0.0;   ///< s lambda int_{Sigma+} varphi |a2 dw/dnu|^2
    double rhs_sigma_full = 0.0;   ///< same over all of Sigma
    double log_gauge = 0.0;        ///< G

    double lhs() const { return lhs_P1 + lhs_P2 + lhs_norm; }
    double rhs() const { return rhs_interior + rhs_sigma_plus; }
    static double safe_ratio(double num, double den) {
        if (num == 0.0 && den == 0.0) return 0.0;
        if (den == 0.0) return std::numeric_limits<double>::infinity();
        return num / den;
    }
    double ratio() const { return safe_ratio(lhs(), rhs()); }
    double ratio_without_boundary() const { return safe_ratio(lhs(), rhs_interior); }
    double ratio_full_sigma() const { return safe_ratio(lhs(), rhs_interior + rhs_sigma_full); }
    /// rhs == 0 with lhs > 0 would contradict the inequality.
    bool violation_candidate() const { return rhs() == 0.0 && lhs() > 0.0; }
};

struct RatioOptions {
    double lambda = 0.05;
    double gamma = 0.02;
};

/// Derivatives of a field at every active cell and its flux a2 du/dnu at
/// every boundary point, for one time level.
struct LevelSample {
    double t = 0.0;
    std::vector<LocalDerivs> cells;
    std::vector<double> flux;
};

/// Level source backed by a stored grid field: centred differences in time,
/// region-aware stencils in space, the solver's div(a grad u) for a Lap u
/// and the one-sided normal stencil for the flux.
class GridFieldSource {
public:
    GridFieldSource(const SimGrid& g, const SpaceTimeField& u) : g_(&g), u_(&u), D_(g) {
        require(u.cells() == g.n_active() && u.levels() >= 4, ErrorKind::Shape, "field does not match the grid");
    }
    std::size_t levels() const { return u_->levels(); }
    double dt() const { return u_->dt(); }
    void fill(std::size_t n, LevelSample& out) const {
        const std::size_t nc = g_->n_active();
        out.t = u_->time(n);
        out.cells.resize(nc);
        out.flux.resize(g_->boundary().size());
        std::vector<double> div(nc);
        apply_divergence(*g_, u_->level(n), div);
        trace_row(*g_, u_->level(n), out.flux);
        for (std::size_t k = 0; k < nc; ++k) out.cells[k] = D_.at(*u_, n, k, true, div);
    }

private:
    const SimGrid* g_;
    const SpaceTimeField* u_;
    FieldDifferentiator D_;
};

/// Level source for a closed-form field on `n_levels` equispaced times in
/// [-T, T]. Spatial shapes are tabulated once per node and boundary point.
class BumpFieldSource {
public:
    BumpFieldSource(const QuadratureNodes& q, const CurveQuadrature& B, const BumpField& f, std::size_t n_levels)
        : q_(&q), f_(&f), levels_(n_levels) {
        require(n_levels >= 4, ErrorKind::Parameter, "need at least 4 time levels");
        const std::size_t nc = q.size(), nb = B.size(), J = f.size();
        const DomainPair& dp = f.domains();
        cells_.resize(nc * J);
        flux_.resize(nb * J);
        parallel_for(nc, [&](std::size_t k) {
            for (std::size_t j = 0; j < J; ++j) cells_[k * J + j] = f.shape_derivs(j, q.x[k], q.region[k]);
        });
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t j = 0; j < J; ++j)
                flux_[b * J + j] = dp.a2() * dot(f.shape_derivs(j, B.points[b], Region::Outer).grad, B.normals[b]);
    }
    std::size_t levels() const { return levels_; }
    double dt() const { return 2.0 * f_->T() / static_cast<double>(levels_ - 1); }
    double time(std::size_t n) const { return -f_->T() + dt() * static_cast<double>(n); }

    void fill(std::size_t n, LevelSample& out) const {
        const std::size_t nc = q_->size(), J = f_->size(), nb = flux_.size() / std::max<std::size_t>(J, 1);
        const DomainPair& dp = f_->domains();
        out.t = time(n);
        out.cells.assign(nc, LocalDerivs{});
        out.flux.assign(nb, 0.0);
        std::vector<SmoothStep> tm(J);
        for (std::size_t j = 0; j < J; ++j) {
            tm[j] = f_->temporal(j, out.t);
            const double A = f_->bump(j).amplitude;
            tm[j].value *= A;
            tm[j].d1 *= A;
            tm[j].d2 *= A;
        }
        for (std::size_t k = 0; k < nc; ++k) {
            LocalDerivs& d = out.cells[k];
            const double a = dp.coefficient(q_->region[k]);
            for (std::size_t j = 0; j < J; ++j) {
                const BumpField::Spatial& sp = cells_[k * J + j];
                d.u += tm[j].value * sp.v;
                d.ut += tm[j].d1 * sp.v;
                d.utt += tm[j].d2 * sp.v;
                d.grad = d.grad + tm[j].value * sp.grad;
                d.alap += tm[j].value * a * sp.lap;
            }
        }
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t j = 0; j < J; ++j) out.flux[b] += tm[j].value * flux_[b * J + j];
    }

private:
    const QuadratureNodes* q_;
    const BumpField* f_;
    std::size_t levels_;
    std::vector<BumpField::Spatial> cells_;
    std::vector<double> flux_;
};

/// Carleman ratio summed over the poles for every s in s_list, in a single
/// pass over the levels of `src`. p enters L_p on the right.
/// Weights must be sampled on `q` and `B`; p holds one value per node.
template <class Source>
std::vector<RatioTerms> carleman_ratios_from(const QuadratureNodes& q, const CurveQuadrature& B, const DomainPair& dp,
                                             const Source& src, std::span<const WeightField> poles,
                                             std::span<const double> s_list, const RatioOptions& opt,
                                             std::span<const double> p = {}) {
    require(!poles.empty(), ErrorKind::Parameter, "need at least one pole");
    require(p.empty() || p.size() == q.size(), ErrorKind::Shape, "potential size mismatch");
    for (const auto& wf : poles)
        require(wf.S.size() == q.size() && wf.Sb.size() == B.size(), ErrorKind::Shape, "weight not sampled on these nodes");
    const double lam = opt.lambda, gam = opt.gamma;
    const std::size_t ns = s_list.size(), nc = q.size(), L = src.levels();

    // gauge: max of 2 psi, attained at t = 0 since phi decreases in |t|
    double phi_max = -std::numeric_limits<double>::infinity();
    for (const auto& wf : poles) {
        for (std::size_t k = 0; k < nc; ++k) phi_max = std::max(phi_max, wf.S[k] + wf.M[k]);
        for (std::size_t b = 0; b < B.size(); ++b) phi_max = std::max(phi_max, wf.boundary_phi(b, 0.0));
    }
    std::vector<RatioTerms> out(ns);
    for (std::size_t i = 0; i < ns; ++i) {
        out[i].s = s_list[i];
        out[i].log_gauge = 2.0 * s_list[i] * std::exp(lam * phi_max);
    }
    std::vector<std::vector<char>> masks;
    for (const auto& wf : poles) masks.push_back(sigma_plus_mask(wf));

    LevelSample ls;
    for (std::size_t n = 0; n < L; ++n) {
        src.fill(n, ls);
        const double t = ls.t, wt = time_weight(n, L, src.dt());
        for (std::size_t k = 0; k < nc; ++k) {
            const LocalDerivs& du = ls.cells[k];
            if (du.u == 0.0 && du.ut == 0.0 && du.utt == 0.0 && du.grad.x == 0.0 && du.grad.y == 0.0 && du.alap == 0.0)
                continue;
            const double a = dp.coefficient(q.region[k]), area = q.area[k];
            const double Lu = du.utt - du.alap + (p.empty() ? 0.0 : p[k] * du.u);
            for (const auto& wf : poles) {
                const WeightPoint wp = wf.cell(k, t);
                const double vp = std::exp(lam * wp.phi);
                for (std::size_t i = 0; i < ns; ++i) {
                    const double s = s_list[i];
                    const double expo = 2.0 * s * vp - out[i].log_gauge;
                    if (expo < -745.0) continue;
                    const PsiDerivs pd = psi_derivs(wp, s, lam);
                    const double e = std::exp(expo) * wt * area;
                    const LocalDerivs wd = conjugate_derivs(du, pd, a);
                    const SplitTerms st = split_P_point(wp, a, s, lam, gam, wd);
                    const double sl = s * lam;
                    out[i].lhs_P1 += e * st.P1 * st.P1;
                    out[i].lhs_P2 += e * st.P2 * st.P2;
                    out[i].lhs_norm += e * (sl * (wd.ut * wd.ut + norm2(wd.grad)) * vp + sl * sl * sl * wd.u * wd.u * vp * vp * vp);
                    out[i].rhs_interior += e * Lu * Lu;
                }
            }
        }
        for (std::size_t pi = 0; pi < poles.size(); ++pi) {
            const auto& wf = poles[pi];
            for (std::size_t b = 0; b < B.size(); ++b) {
                const double f = ls.flux[b];
                if (f == 0.0) continue;
                const double vp = std::exp(lam * wf.boundary_phi(b, t));
                for (std::size_t i = 0; i < ns; ++i) {
                    const double s = s_list[i];
                    // dw/dnu = exp(psi) du/dnu on Gamma since u vanishes there
                    const double e = std::exp(2.0 * s * vp - out[i].log_gauge) * wt * B.weights[b];
                    const double term = e * s * lam * vp * f * f;
                    out[i].rhs_sigma_full += term;
                    if (masks[pi][b]) out[i].rhs_sigma_plus += term;
                }
            }
        }
    }
    return out;
}

/// Carleman ratios of a stored field u on [-T, T].
inline std::vector<RatioTerms> carleman_ratios(const SimGrid& g, const SpaceTimeField& u,
                                               std::span<const WeightField> poles, std::span<const double> s_list,
                                               const RatioOptions& opt, std::span<const double> p = {}) {
    return carleman_ratios_from(cell_nodes(g), g.boundary(), g.domains(), GridFieldSource(g, u), poles, s_list, opt, p);
}

inline RatioTerms carleman_ratio(const SimGrid& g, const SpaceTimeField& u, std::span<const WeightField> poles, double s,
                                 const RatioOptions& opt, std::span<const double> p = {}) {
    const double sl[1] = {s};
    return carleman_ratios(g, u, poles, sl, opt, p).front();
}

/// First index i such that every later doubling step changes the ensemble
/// maximum by less than `tol` (relative). Needs at least one step after i.
inline std::optional<std::size_t> detect_onset(std::span<const double> max_ratio, double tol = 0.05) {
    const std::size_t n = max_ratio.size();
    if (n < 2) return std::nullopt;
    std::optional<std::size_t> onset;
    for (std::size_t i = n - 1; i-- > 0;) {
        const double a = max_ratio[i], b = max_ratio[i + 1];
        if (!std::isfinite(a) || !std::isfinite(b) || a <= 0.0) break;
        if (std::abs(b - a) / a >= tol) break;
        onset = i;
    }
    return onset;
}

// ---------------------------------------------------------------------------
// Conjugation identity at fixed points

/// Analytic test field w(x, t).
using FieldFn = std::function<double(Vec2, double)>;

/// max over points of |P_h(w) - (P1 + P2 + R)_h(w)| where P_h(w) =
/// exp(psi) L_h(exp(-psi) w) is formed directly and the split uses
/// difference quotients of w. Both use centred differences of step h in
/// x, y and t; the sides of the interface are given per point.
inline double conjugation_residual(const Weight& weight, const FieldFn& w, std::span<const Vec2> points,
                                   std::span<const Region> sides, double t, double h, double s, double lambda,
                                   double gamma) {
    require(points.size() == sides.size(), ErrorKind::Shape, "one side per point");
    double worst = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Vec2 x = points[i];
        const Region side = sides[i];
        const double a = weight.domains().coefficient(side);
        auto psi = [&](Vec2 y, double tt) { return s * std::exp(lambda * weight.phi(y, tt, side)); };
        auto v = [&](Vec2 y, double tt) { return std::exp(-psi(y, tt)) * w(y, tt); };
        const Vec2 ex{h, 0.0}, ey{0.0, h};
        const double v0 = v(x, t);
        const double vtt = (v(x, t + h) - 2.0 * v0 + v(x, t - h)) / (h * h);
        const double vlap = (v(x + ex, t) + v(x - ex, t) + v(x + ey, t) + v(x - ey, t) - 4.0 * v0) / (h * h);
        const double direct = std::exp(psi(x, t)) * (vtt - a * vlap);

        LocalDerivs d;
        const double w0 = w(x, t);
        d.u = w0;
        d.ut = (w(x, t + h) - w(x, t - h)) / (2.0 * h);
        d.utt = (w(x, t + h) - 2.0 * w0 + w(x, t - h)) / (h * h);
        d.grad = {(w(x + ex, t) - w(x - ex, t)) / (2.0 * h), (w(x + ey, t) - w(x - ey, t)) / (2.0 * h)};
        d.alap = a * (w(x + ex, t) + w(x - ex, t) + w(x + ey, t) + w(x - ey, t) - 4.0 * w0) / (h * h);
        const SplitTerms st = split_P_point(weight.grad_hess_phi(x, t, side), a, s, lambda, gamma, d);
        worst = std::max(worst, std::abs(direct - st.sum()));
    }
    return worst;
}

struct ConvergenceRow {
    double h = 0.0;
    double residual = 0.0;
    double order = std::numeric_limits<double>::quiet_NaN();  ///< vs previous row
};

/// Observed orders log(r_{i-1}/r_i)/log(h_{i-1}/h_i) filled into rows.
inline void fill_orders(std::vector<ConvergenceRow>& rows) {
    for (std::size_t i = 1; i < rows.size(); ++i)
        rows[i].order = std::log(rows[i - 1].residual / rows[i].residual) / std::log(rows[i - 1].h / rows[i].h);
}

/// Least-squares slope of log(residual) against log(h).
inline double fitted_order(const std::vector<ConvergenceRow>& rows) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(rows.size());
    for (const auto& r : rows) {
        const double x = std::log(r.h), y = std::log(r.residual);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace twv
