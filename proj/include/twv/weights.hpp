#pragma once
/**
 * @file weights.hpp
 * @brief Carleman weight phi for the two-speed transmission problem.
 *
 *   phi_j(x, t) = eta(|x - x0|) * abar |x - x0|^2 / rho(x)^2 - beta t^2 + M_j
 *
 * with abar = a2 in Omega_1 and a1 in Omega_2 (the coefficients cross),
 * rho(x) the distance from x0 to the interface along the ray through x, and
 * M_1 - M_2 = a1 - a2 so the two pieces glue continuously on Gamma_1.
 */

#include <optional>

#include "twv/geometry.hpp"

namespace twv {

struct WeightParams {
    double a1 = 2.0;
    double a2 = 1.0;
    double beta = 1e-3;
    double gamma = 0.02;
    double M1 = 3.0;
    double M2 = 2.0;
    Vec2 x0{};
    double eps = 0.1;
    double eps1 = 0.03;
    double eps2 = 0.06;
    double s = 1.0;
    double lambda = 1.0;
    double T = 1.0;

    /// Default gauge M2 = a1 raised to exceed beta T^2 (needed by the beta < M / T^2
    /// bound); M1 follows from the gluing relation M1 - M2 = a1 - a2.
    void auto_M() {
        M2 = std::max(a1, 1.05 * beta * T * T);
        M1 = M2 + a1 - a2;
    }

    double M_min() const { return std::min(M1, M2); }
};

/// Throws on violated structural invariants (gluing, cutoff ordering).
inline void validate(const WeightParams& p) {
    require(p.a1 > 0.0 && p.a2 > 0.0, ErrorKind::Parameter, "speeds must be positive");
    require(p.M1 > 0.0 && p.M2 > 0.0, ErrorKind::Parameter, "M1, M2 must be positive");
    require(std::abs((p.M1 - p.M2) - (p.a1 - p.a2)) <= 1e-12 * (1.0 + std::abs(p.a1) + std::abs(p.M1)),
            ErrorKind::Parameter, "M1 - M2 must equal a1 - a2");
    require(0.0 < p.eps1 && p.eps1 < p.eps2 && p.eps2 < p.eps, ErrorKind::Parameter,
            "cutoff radii must satisfy 0 < eps1 < eps2 < eps");
    require(p.beta > 0.0, ErrorKind::Parameter, "beta must be positive");
    require(p.gamma > 0.0 && p.gamma < 1.0, ErrorKind::Parameter, "gamma must lie in (0, 1)");
    require(p.lambda > 0.0 && p.s >= 0.0, ErrorKind::Parameter, "need lambda > 0 and s >= 0");
}

/// eta(r) = sigma((r - eps1) / (eps2 - eps1)).
inline SmoothStep cutoff_eta_derivs(double r, double eps1, double eps2) {
    require(0.0 < eps1 && eps1 < eps2, ErrorKind::Parameter, "cutoff needs 0 < eps1 < eps2");
    const double w = eps2 - eps1;
    SmoothStep s = smooth_step((r - eps1) / w);
    s.d1 /= w;
    s.d2 /= w * w;
    return s;
}

inline double cutoff_eta(double r, double eps1, double eps2) { return cutoff_eta_derivs(r, eps1, eps2).value; }

/// Spatial part S(x) = eta abar r^2 / rho^2 with its derivatives.
struct SpatialWeight {
    double S = 0.0;
    Vec2 grad{};
    Sym2 hess{};
    double lap() const { return hess.trace(); }
};

/// Full local description of phi at (x, t).
struct WeightPoint {
    double phi = 0.0;
    Vec2 grad{};
    Sym2 hess{};
    double lap = 0.0;
    double phi_t = 0.0;
    double phi_tt = 0.0;
};

class Weight {
public:
    Weight(const DomainPair& dp, const WeightParams& params)
        : dp_(&dp), params_(params), view_(dp.inner(), params.x0) {
        require(dp.inner().contains(params.x0), ErrorKind::Domain, "weight pole must lie in Omega_1");
        require(0.0 < params.eps1 && params.eps1 < params.eps2, ErrorKind::Parameter, "need 0 < eps1 < eps2");
    }

    const WeightParams& params() const { return params_; }
    const DomainPair& domains() const { return *dp_; }
    const PolarView& view() const { return view_; }

    double abar(Region r) const { return r == Region::Inner ? params_.a2 : params_.a1; }
    double M(Region r) const { return r == Region::Inner ? params_.M1 : params_.M2; }

    /// Region of x with a domain check (x must lie in the closure of Omega).
    Region side_of(Vec2 x) const {
        const Region r = dp_->region_of(x);
        if (r != Region::Exterior) return r;
        require(dp_->outer().polar_residual(x) <= 1e-10, ErrorKind::Domain, "point outside the closure of Omega");
        return Region::Outer;
    }

    /// Spatial part evaluated with the formula of region `side`, wherever x is.
    /// Uses the polar product rule: S = g(r) k(theta), g = eta r^2, k = abar / rho^2.
    SpatialWeight spatial(Vec2 x, Region side) const {
        const Vec2 v = x - params_.x0;
        const double r = norm(v);
        SpatialWeight out;
        if (r <= params_.eps1) return out;
        const SmoothStep eta = cutoff_eta_derivs(r, params_.eps1, params_.eps2);
        const double g = eta.value * r * r;
        const double g1 = eta.d1 * r * r + 2.0 * eta.value * r;
        const double g2 = eta.d2 * r * r + 4.0 * eta.d1 * r + 2.0 * eta.value;
        const double th = std::atan2(v.y, v.x);
        const RhoDerivs d = view_.derivs(th);
        const double ab = abar(side);
        const double k = ab / (d.r * d.r);
        const double k1 = -2.0 * ab * d.r1 / (d.r * d.r * d.r);
        const double k2 = 2.0 * ab * (3.0 * d.r1 * d.r1 - d.r * d.r2) / (d.r * d.r * d.r * d.r);
        const double Sr = g1 * k, Sth = g * k1, Srr = g2 * k, Srth = g1 * k1, Sthth = g * k2;
        const Vec2 er = v / r, et = perp(er);
        out.S = g * k;
        out.grad = Sr * er + (Sth / r) * et;
        const double Hrr = Srr;
        const double Hrt = (Srth - Sth / r) / r;
        const double Htt = Sthth / (r * r) + Sr / r;
        out.hess.xx = Hrr * er.x * er.x + 2.0 * Hrt * er.x * et.x + Htt * et.x * et.x;
        out.hess.xy = Hrr * er.x * er.y + Hrt * (er.x * et.y + et.x * er.y) + Htt * et.x * et.y;
        out.hess.yy = Hrr * er.y * er.y + 2.0 * Hrt * er.y * et.y + Htt * et.y * et.y;
        return out;
    }

    double phi(Vec2 x, double t, std::optional<Region> side = std::nullopt) const {
        const Region r = side ? *side : checked_side(x);
        return spatial(x, r).S - params_.beta * t * t + M(r);
    }

    WeightPoint grad_hess_phi(Vec2 x, double t, std::optional<Region> side = std::nullopt) const {
        const Region r = side ? *side : checked_side(x);
        const SpatialWeight sw = spatial(x, r);
        return {sw.S - params_.beta * t * t + M(r), sw.grad, sw.hess, sw.lap(), -2.0 * params_.beta * t,
                -2.0 * params_.beta};
    }

    /// c(x) = abar / rho(x)^2
    double c_of(Vec2 x, Region side) const { return abar(side) / std::pow(view_.rho_of(x), 2); }

private:
    Region checked_side(Vec2 x) const {
        if (norm(x - params_.x0) > 0.0 && std::abs(dp_->inner().polar_residual(x)) < 1e-14)
            throw Error(ErrorKind::Domain, "phi on the interface is two-valued; pass the side explicitly");
        return side_of(x);
    }

    const DomainPair* dp_;
    WeightParams params_;
    PolarView view_;
};

struct ConditionResult {
    std::string name;
    double value = 0.0;      ///< measured min or max
    double threshold = 0.0;
    bool pass = false;
    Vec2 witness{};
    std::string note;
};

struct Prop1Report {
    double delta = 0.0;             ///< min |grad phi| over Q_x0
    double delta1 = 0.0;            ///< min eigenvalue of D^2 phi over Q_x0
    double norm_laplacian = 0.0;    ///< sup |lap phi| over Omega_0
    double grid_spacing = 0.0;
    std::vector<ConditionResult> conditions;  ///< (a)..(f), in order

    bool all_pass() const {
        return std::all_of(conditions.begin(), conditions.end(), [](const ConditionResult& c) { return c.pass; });
    }
    const ConditionResult& get(const std::string& name) const {
        for (const auto& c : conditions)
            if (c.name == name) return c;
        throw Error(ErrorKind::Parameter, "no condition " + name);
    }
};

struct GridSpec {
    std::size_t nx = 128;  ///< nodes per axis over the bounding box
    std::size_t nt = 64;   ///< time samples over [-T, T]
};

namespace detail {

/// Centered difference weights for orders 0..3 at step e: offsets -2..2.
inline const std::array<std::array<double, 5>, 4>& fd_weights() {
    static const std::array<std::array<double, 5>, 4> w{{
        {0.0, 0.0, 1.0, 0.0, 0.0},
        {0.0, -0.5, 0.0, 0.5, 0.0},
        {0.0, 1.0, -2.0, 1.0, 0.0},
        {-0.5, 1.0, 0.0, -1.0, 0.5},
    }};
    return w;
}

/// D^(ax, ay) f at p by a tensor-product centered stencil of step e.
template <class F>
double mixed_derivative(F&& f, Vec2 p, int ax, int ay, double e) {
    const auto& w = fd_weights();
    double acc = 0.0;
    for (int i = -2; i <= 2; ++i) {
        const double wx = w[ax][i + 2];
        if (wx == 0.0) continue;
        for (int j = -2; j <= 2; ++j) {
            const double wy = w[ay][j + 2];
            if (wy == 0.0) continue;
            acc += wx * wy * f(p + Vec2{i * e, j * e});
        }
    }
    return acc / std::pow(e, ax + ay);
}

}  // namespace detail

/// Grid certification of the weight properties (a)-(f).
inline Prop1Report check_prop1(const Weight& w, const GridSpec& spec) {
    const DomainPair& dp = w.domains();
    const WeightParams& p = w.params();
    const auto [lo, hi] = dp.bounding_box();
    const double side = std::max(hi.x - lo.x, hi.y - lo.y);
    const double h = side / static_cast<double>(spec.nx);
    const double diam = dp.diameter(256);

    Prop1Report rep;
    rep.grid_spacing = h;
    ConditionResult ca{"a_grad_lower", 1e300, 0.0, false, {}, ""};
    ConditionResult cb{"b_normal_flux", 1e300, 0.0, false, {}, ""};
    ConditionResult cc{"c_continuity", 0.0, 0.0, false, {}, ""};
    ConditionResult cd{"d_transmission", 0.0, 0.0, false, {}, ""};
    ConditionResult ce{"e_laplacian", 1e300, 0.0, false, {}, ""};
    ConditionResult cf{"f_convexity", 1e300, 0.0, false, {}, ""};
    double min_abar_bound = 1e300;
    double abar_min = std::min(p.a1, p.a2);

    for (std::size_t j = 0; j < spec.nx; ++j) {
        for (std::size_t i = 0; i < spec.nx; ++i) {
            const Vec2 x{lo.x + (i + 0.5) * h, lo.y + (j + 0.5) * h};
            const Region r = dp.region_of(x);
            if (r == Region::Exterior) continue;
            const SpatialWeight sw = w.spatial(x, r);
            rep.norm_laplacian = std::max(rep.norm_laplacian, std::abs(sw.lap()));
            if (norm(x - p.x0) <= p.eps) continue;
            const double g = norm(sw.grad);
            if (g < ca.value) { ca.value = g; ca.witness = x; }
            const double e = sw.lap() - 2.0 * w.c_of(x, r);
            if (e < ce.value) { ce.value = e; ce.witness = x; }
            const double m = sw.hess.min_eig();
            if (m < cf.value) { cf.value = m; cf.witness = x; }
        }
    }
    min_abar_bound = 2.0 * abar_min / (diam * diam) * p.eps;
    rep.delta = ca.value;
    rep.delta1 = cf.value;
    ca.threshold = min_abar_bound;
    ca.pass = ca.value > 0.0 && ca.value >= min_abar_bound;
    ca.note = "threshold is 2 min(abar) eps / diam^2";
    ce.pass = ce.value > 0.0;
    cf.pass = cf.value > 0.0;

    // interface quadrature
    const std::size_t n_if = 4 * spec.nx;
    const std::size_t nt = std::max<std::size_t>(spec.nt, 2);
    double dscale = 0.0;
    for (std::size_t k = 0; k < n_if; ++k) {
        const double th = 2.0 * pi * static_cast<double>(k) / static_cast<double>(n_if);
        const Vec2 y = dp.inner().point(th);
        const Vec2 nu = dp.inner().normal(th);
        // (b)
        const SpatialWeight s1 = w.spatial(y, Region::Inner);
        const double flux = dot(s1.grad, nu);
        if (flux < cb.value) { cb.value = flux; cb.witness = y; }
        // (c)
        const SpatialWeight s2 = w.spatial(y, Region::Outer);
        for (std::size_t n = 0; n < nt; ++n) {
            const double t = -p.T + 2.0 * p.T * static_cast<double>(n) / static_cast<double>(nt - 1);
            const double phi1 = s1.S - p.beta * t * t + p.M1;
            const double phi2 = s2.S - p.beta * t * t + p.M2;
            const double trace = p.a2 - p.beta * t * t + p.M1;
            const double res = std::max(std::abs(phi1 - phi2), std::abs(phi1 - trace));
            if (res > cc.value) { cc.value = res; cc.witness = y; }
        }
        // (d): one-sided derivatives, stencils centered at y -+ k h nu, k = 1..4,
        // extrapolated back to the interface with the cubic formula.
        const double e = 0.25 * h;
        for (int order = 1; order <= 3; ++order) {
            for (int ax = 0; ax <= order; ++ax) {
                const int ay = order - ax;
                double side_val[2];
                for (int sidx = 0; sidx < 2; ++sidx) {
                    const Region reg = sidx == 0 ? Region::Inner : Region::Outer;
                    const double sgn = sidx == 0 ? -1.0 : 1.0;
                    auto f = [&](Vec2 q) { return w.spatial(q, reg).S; };
                    double v[4];
                    for (int m = 0; m < 4; ++m)
                        v[m] = detail::mixed_derivative(f, y + (sgn * (m + 1) * h) * nu, ax, ay, e);
                    side_val[sidx] = 4.0 * v[0] - 6.0 * v[1] + 4.0 * v[2] - v[3];
                }
                const double lhs = p.a1 * side_val[0], rhs = p.a2 * side_val[1];
                dscale = std::max({dscale, std::abs(lhs), std::abs(rhs)});
                const double res = std::abs(lhs - rhs);
                if (res > cd.value) { cd.value = res; cd.witness = y; }
            }
        }
    }
    cb.pass = cb.value > 0.0;
    const double cscale = std::max({1.0, std::abs(p.a2 + p.M1), std::abs(p.a1 + p.M2)});
    cc.threshold = 1e-12 * cscale;
    cc.pass = cc.value <= cc.threshold;
    cd.threshold = h * std::max(1.0, dscale);
    cd.pass = cd.value <= cd.threshold;
    cd.note = "derivative orders 1..3; threshold is h times the derivative scale";

    rep.conditions = {ca, cb, cc, cd, ce, cf};
    return rep;
}

struct WindowReport {
    double beta = 0.0;
    double beta_max = 0.0;
    double gamma_lo = 0.0;
    double gamma_hi = 0.0;
    bool beta_ok = false;
    bool feasible = false;

    double gamma_mid() const { return 0.5 * (gamma_lo + gamma_hi); }
};

struct WindowInputs {
    double a1 = 0.0;
    double a2 = 0.0;
    double delta1 = 0.0;
    double M = 0.0;      ///< min(M1, M2)
    double T = 0.0;
    double diam = 0.0;
    double norm_laplacian = 0.0;
};

/// beta < min(min(a) delta1 / 2, M / T^2) and
/// 2 beta / (beta + a1 a2 / diam^2) < gamma < 2 min(a) delta1 / (2 beta + max(a) |lap phi|^2).
inline WindowReport parameter_window(const WindowInputs& in, double beta) {
    require(in.a1 > 0 && in.a2 > 0 && in.delta1 > 0 && in.M > 0 && in.T > 0 && in.diam > 0 && in.norm_laplacian > 0,
            ErrorKind::Parameter, "window inputs must be positive");
    require(beta > 0.0, ErrorKind::Parameter, "beta must be positive");
    const double amin = std::min(in.a1, in.a2), amax = std::max(in.a1, in.a2);
    WindowReport w;
    w.beta = beta;
    w.beta_max = std::min(amin * in.delta1 / 2.0, in.M / (in.T * in.T));
    w.beta_ok = beta < w.beta_max;
    w.gamma_lo = std::max(0.0, 2.0 * beta / (beta + in.a1 * in.a2 / (in.diam * in.diam)));
    w.gamma_hi = std::min(1.0, 2.0 * amin * in.delta1 / (2.0 * beta + amax * in.norm_laplacian * in.norm_laplacian));
    w.feasible = w.beta_ok && w.gamma_lo < w.gamma_hi;
    return w;
}

/// Halves beta from beta_max / 2 until the gamma window opens.
inline WindowReport auto_window(const WindowInputs& in, double beta_floor = 1e-12) {
    WindowReport probe = parameter_window(in, 1.0);
    double beta = 0.5 * probe.beta_max;
    while (beta >= beta_floor) {
        WindowReport w = parameter_window(in, beta);
        if (w.feasible) return w;
        beta *= 0.5;
    }
    throw Error(ErrorKind::Infeasible, "no beta above the floor opens the gamma window");
}

/// T0 = D0 sqrt(a1 / beta), D0 = max_j (R_j + alpha_j) / alpha_j.
inline double minimal_time(const PoleData& p1, const PoleData& p2, double a1, double beta) {
    require(beta > 0.0, ErrorKind::Parameter, "beta must be positive");
    const double d0 = std::max((p1.R_sup + p1.alpha) / p1.alpha, (p2.R_sup + p2.alpha) / p2.alpha);
    return d0 * std::sqrt(a1 / beta);
}

struct MonotonicityReport {
    double max_time_increase = 0.0;  ///< max of phi(x,t) - phi(x,0); must be <= 0
    double max_endpoint_excess = 0.0; ///< max of phi(x, +-T) - M; must be < 0
    double min_center_margin = 0.0;  ///< min of phi(x, 0) - M; must be >= 0
    double spatial_max = 0.0;        ///< grid max of the spatial part
    double delta_window = 0.0;       ///< largest delta for phi < M on |t| >= T - delta
    bool time_decreasing = false;
    bool endpoint_ok = false;
    bool pass() const { return time_decreasing && endpoint_ok && delta_window > 0.0; }
};

inline MonotonicityReport check_time_monotonicity(const Weight& w, const GridSpec& spec) {
    const DomainPair& dp = w.domains();
    const WeightParams& p = w.params();
    const auto [lo, hi] = dp.bounding_box();
    const double h = std::max(hi.x - lo.x, hi.y - lo.y) / static_cast<double>(spec.nx);
    MonotonicityReport rep;
    rep.max_time_increase = -1e300;
    rep.max_endpoint_excess = -1e300;
    rep.min_center_margin = 1e300;
    const std::size_t nt = std::max<std::size_t>(spec.nt, 2);
    for (std::size_t j = 0; j < spec.nx; ++j) {
        for (std::size_t i = 0; i < spec.nx; ++i) {
            const Vec2 x{lo.x + (i + 0.5) * h, lo.y + (j + 0.5) * h};
            const Region r = dp.region_of(x);
            if (r == Region::Exterior) continue;
            const double S = w.spatial(x, r).S;
            rep.spatial_max = std::max(rep.spatial_max, S);
            const double phi0 = S + w.M(r);
            for (std::size_t n = 0; n < nt; ++n) {
                const double t = -p.T + 2.0 * p.T * static_cast<double>(n) / static_cast<double>(nt - 1);
                const double ph = S - p.beta * t * t + w.M(r);
                if (2 * n + 1 == nt) continue;  // t = 0 itself
                rep.max_time_increase = std::max(rep.max_time_increase, ph - phi0);
            }
            rep.max_endpoint_excess = std::max(rep.max_endpoint_excess, S - p.beta * p.T * p.T);
            rep.min_center_margin = std::min(rep.min_center_margin, phi0 - w.M(r));
        }
    }
    rep.time_decreasing = rep.max_time_increase <= 0.0;
    rep.endpoint_ok = rep.max_endpoint_excess < 0.0 && rep.min_center_margin >= 0.0;
    const double tcrit = std::sqrt(rep.spatial_max / p.beta);
    rep.delta_window = std::max(0.0, p.T - tcrit);
    return rep;
}

}  // namespace twv
