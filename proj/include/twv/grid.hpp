#pragma once
/**
 * @file grid.hpp
 * @brief Cell-centred Cartesian grid over the outer domain.
 *
 * Cells are labelled by the region containing their centre; exterior cells
 * carry the Dirichlet datum. Fields are stored over the active (non-exterior)
 * cells only. Faces between the two media carry the harmonic mean of the
 * coefficients, which makes the divergence-form operator honour the flux
 * transmission condition weakly.
 */

#include <cstdint>

#include "twv/geometry.hpp"

namespace twv {

/// Linear interpolation stencil over active cells (exterior cells read as 0).
struct InterpStencil {
    std::array<std::int64_t, 4> idx{-1, -1, -1, -1};
    std::array<double, 4> w{0.0, 0.0, 0.0, 0.0};

    double apply(std::span<const double> u) const {
        double v = 0.0;
        for (int k = 0; k < 4; ++k)
            if (idx[k] >= 0) v += w[k] * u[static_cast<std::size_t>(idx[k])];
        return v;
    }
};

/// Samples on a closed curve with outward normals and arc-length weights.
struct CurveQuadrature {
    std::vector<Vec2> points;
    std::vector<Vec2> normals;
    std::vector<double> weights;
    std::vector<double> arc;  ///< cumulative arc length at each point

    std::size_t size() const { return points.size(); }
    double length() const {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }
};

inline CurveQuadrature make_curve_quadrature(const InterfaceCurve& c, std::size_t n) {
    CurveQuadrature q;
    const double dth = 2.0 * pi / static_cast<double>(n);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double th = dth * static_cast<double>(k);
        q.points.push_back(c.point(th));
        q.normals.push_back(c.normal(th));
        const double w = norm(c.tangent_and_accel(th).first) * dth;
        q.weights.push_back(w);
        q.arc.push_back(s);
        s += w;
    }
    return q;
}

struct GridOptions {
    std::size_t nx = 64;
    std::size_t ny = 64;
    double T = 1.0;
    double cfl = 0.5;
    double box_scale = 1.1;         ///< half-width of the box relative to the outer curve's extent
    std::size_t n_boundary = 0;     ///< 0: 2 * nx
    Vec2 shift{};                   ///< box offset in units of h
};

class SimGrid {
public:
    SimGrid(DomainPair dp, const GridOptions& opt) : dp_(std::move(dp)), opt_(opt) {
        require(opt.nx >= 16 && opt.ny >= 16, ErrorKind::Resolution, "grid needs at least 16 cells per axis");
        require(opt.cfl > 0.0 && opt.cfl <= 1.0, ErrorKind::Parameter, "cfl must lie in (0, 1]");
        require(opt.T > 0.0, ErrorKind::Parameter, "T must be positive");
        nx_ = opt.nx;
        ny_ = opt.ny;
        const auto [blo, bhi] = dp_.bounding_box();
        const Vec2 c = 0.5 * (blo + bhi);
        const double half = opt.box_scale * 0.5 * std::max(bhi.x - blo.x, bhi.y - blo.y);
        h_ = 2.0 * half / static_cast<double>(nx_);
        lo_ = {c.x - half + opt.shift.x * h_, c.y - 0.5 * h_ * static_cast<double>(ny_) + opt.shift.y * h_};

        labels_.resize(nx_ * ny_);
        active_index_.assign(nx_ * ny_, -1);
        for (std::size_t j = 0; j < ny_; ++j)
            for (std::size_t i = 0; i < nx_; ++i) {
                const std::size_t id = j * nx_ + i;
                labels_[id] = dp_.region_of(center(i, j));
                if (labels_[id] != Region::Exterior) {
                    active_index_[id] = static_cast<std::int64_t>(active_.size());
                    active_.push_back(id);
                }
            }
        double inner_width = 1e300;
        for (std::size_t k = 0; k < 256; ++k) {
            const double th = pi * static_cast<double>(k) / 256.0;
            inner_width = std::min(inner_width, dp_.inner().rho(th) + dp_.inner().rho(th + pi));
        }
        require(inner_width / h_ >= 8.0, ErrorKind::Resolution, "inner domain spans fewer than 8 cells");

        build_neighbors();

        const double amax = std::max(dp_.a1(), dp_.a2());
        const double dt_max = opt.cfl * h_ / std::sqrt(2.0 * amax);
        nt_ = static_cast<std::size_t>(std::ceil(opt.T / dt_max - 1e-12));
        dt_ = opt.T / static_cast<double>(nt_);

        const std::size_t nb = opt.n_boundary ? opt.n_boundary : 2 * nx_;
        boundary_ = make_curve_quadrature(dp_.outer(), nb);
        for (std::size_t k = 0; k < boundary_.size(); ++k) {
            const Vec2 y = boundary_.points[k], nu = boundary_.normals[k];
            const auto s1 = interp(y - (trace_depth() * nu));
            const auto s2 = interp(y - (2.0 * trace_depth() * nu));
            require(supported_in(s1, Region::Outer) && supported_in(s2, Region::Outer), ErrorKind::Resolution,
                    "boundary trace stencil lacks interior support; refine the grid");
            trace_stencils_.push_back({s1, s2});
        }
        interface_ = make_curve_quadrature(dp_.inner(), nb);
    }

    const DomainPair& domains() const { return dp_; }
    const GridOptions& options() const { return opt_; }
    std::size_t nx() const { return nx_; }
    std::size_t ny() const { return ny_; }
    double h() const { return h_; }
    Vec2 origin() const { return lo_; }
    double dt() const { return dt_; }
    std::size_t nt() const { return nt_; }
    double T() const { return opt_.T; }
    std::size_t n_active() const { return active_.size(); }

    Vec2 center(std::size_t i, std::size_t j) const {
        return {lo_.x + (static_cast<double>(i) + 0.5) * h_, lo_.y + (static_cast<double>(j) + 0.5) * h_};
    }
    /// Centre of active cell k.
    Vec2 active_center(std::size_t k) const { return center(active_[k] % nx_, active_[k] / nx_); }
    Region label(std::size_t i, std::size_t j) const { return labels_[j * nx_ + i]; }
    Region active_label(std::size_t k) const { return labels_[active_[k]]; }
    std::size_t active_cell(std::size_t k) const { return active_[k]; }
    std::int64_t active_index(std::size_t i, std::size_t j) const { return active_index_[j * nx_ + i]; }
    double coefficient(std::size_t k) const { return dp_.coefficient(active_label(k)); }

    /// Neighbours of active cell k in order (-x, +x, -y, +y); -1 = exterior.
    const std::array<std::int64_t, 4>& neighbors(std::size_t k) const { return nbr_[k]; }
    /// Face coefficients matching neighbors(k).
    const std::array<double, 4>& face_coeffs(std::size_t k) const { return face_[k]; }

    double cell_area() const { return h_ * h_; }
    double interior_area() const { return cell_area() * static_cast<double>(active_.size()); }
    std::size_t count(Region r) const {
        std::size_t c = 0;
        for (auto id : active_) c += labels_[id] == r;
        return c;
    }

    const CurveQuadrature& boundary() const { return boundary_; }
    const CurveQuadrature& interface() const { return interface_; }
    /// Sampling depth of the one-sided trace stencil (two samples at depth d and 2d).
    double trace_depth() const { return 2.0 * h_; }
    const std::pair<InterpStencil, InterpStencil>& trace_stencil(std::size_t k) const { return trace_stencils_[k]; }

    /// Bilinear interpolation stencil of cell-centred data at point q.
    InterpStencil interp(Vec2 q) const {
        InterpStencil s;
        const double fx = (q.x - lo_.x) / h_ - 0.5, fy = (q.y - lo_.y) / h_ - 0.5;
        const auto i0 = static_cast<std::int64_t>(std::floor(fx)), j0 = static_cast<std::int64_t>(std::floor(fy));
        const double tx = fx - static_cast<double>(i0), ty = fy - static_cast<double>(j0);
        const std::array<std::int64_t, 4> ii{i0, i0 + 1, i0, i0 + 1}, jj{j0, j0, j0 + 1, j0 + 1};
        const std::array<double, 4> ww{(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
        for (int k = 0; k < 4; ++k) {
            s.w[k] = ww[k];
            if (ii[k] < 0 || jj[k] < 0 || ii[k] >= static_cast<std::int64_t>(nx_) || jj[k] >= static_cast<std::int64_t>(ny_))
                s.idx[k] = -1;
            else
                s.idx[k] = active_index_[static_cast<std::size_t>(jj[k]) * nx_ + static_cast<std::size_t>(ii[k])];
        }
        return s;
    }

    /// True when every cell with nonzero weight is active and labelled `r`.
    bool supported_in(const InterpStencil& s, Region r) const {
        for (int k = 0; k < 4; ++k) {
            if (s.w[k] == 0.0) continue;
            if (s.idx[k] < 0 || active_label(static_cast<std::size_t>(s.idx[k])) != r) return false;
        }
        return true;
    }

    /// Scatter an active-cell field to the full nx * ny raster (exterior = 0).
    std::vector<double> to_raster(std::span<const double> u) const {
        std::vector<double> out(nx_ * ny_, 0.0);
        for (std::size_t k = 0; k < active_.size(); ++k) out[active_[k]] = u[k];
        return out;
    }

    /// Sample a function at active cell centres.
    template <class F>
    std::vector<double> sample(F&& f) const {
        std::vector<double> out(active_.size());
        for (std::size_t k = 0; k < active_.size(); ++k) out[k] = f(active_center(k));
        return out;
    }

private:
    void build_neighbors() {
        const double a1 = dp_.a1(), a2 = dp_.a2();
        const double harm = 2.0 * a1 * a2 / (a1 + a2);
        nbr_.resize(active_.size());
        face_.resize(active_.size());
        for (std::size_t k = 0; k < active_.size(); ++k) {
            const std::size_t id = active_[k];
            const std::size_t i = id % nx_, j = id / nx_;
            const Region me = labels_[id];
            const std::array<std::pair<long, long>, 4> off{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
            for (int m = 0; m < 4; ++m) {
                const long ni = static_cast<long>(i) + off[m].first, nj = static_cast<long>(j) + off[m].second;
                std::int64_t nb = -1;
                Region other = Region::Exterior;
                if (ni >= 0 && nj >= 0 && ni < static_cast<long>(nx_) && nj < static_cast<long>(ny_)) {
                    const std::size_t nid = static_cast<std::size_t>(nj) * nx_ + static_cast<std::size_t>(ni);
                    nb = active_index_[nid];
                    other = labels_[nid];
                }
                nbr_[k][m] = nb;
                if (other == Region::Exterior || other == me) face_[k][m] = dp_.coefficient(me);
                else face_[k][m] = harm;
            }
        }
    }

    DomainPair dp_;
    GridOptions opt_;
    std::size_t nx_ = 0, ny_ = 0, nt_ = 0;
    double h_ = 0.0, dt_ = 0.0;
    Vec2 lo_{};
    std::vector<Region> labels_;
    std::vector<std::int64_t> active_index_;
    std::vector<std::size_t> active_;
    std::vector<std::array<std::int64_t, 4>> nbr_;
    std::vector<std::array<double, 4>> face_;
    CurveQuadrature boundary_;
    CurveQuadrature interface_;
    std::vector<std::pair<InterpStencil, InterpStencil>> trace_stencils_;
};

/// Space-time field over active cells at uniformly spaced time levels
/// t_n = t0 + n dt, n = 0..levels-1.
class SpaceTimeField {
public:
    SpaceTimeField() = default;
    SpaceTimeField(std::size_t n_cells, std::size_t levels, double t0, double dt)
        : n_cells_(n_cells), levels_(levels), t0_(t0), dt_(dt), data_(n_cells * levels, 0.0) {}

    std::size_t cells() const { return n_cells_; }
    std::size_t levels() const { return levels_; }
    double t0() const { return t0_; }
    double dt() const { return dt_; }
    double time(std::size_t n) const { return t0_ + dt_ * static_cast<double>(n); }

    std::span<double> level(std::size_t n) { return {data_.data() + n * n_cells_, n_cells_}; }
    std::span<const double> level(std::size_t n) const { return {data_.data() + n * n_cells_, n_cells_}; }
    double& at(std::size_t n, std::size_t k) { return data_[n * n_cells_ + k]; }
    double at(std::size_t n, std::size_t k) const { return data_[n * n_cells_ + k]; }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

private:
    std::size_t n_cells_ = 0, levels_ = 0;
    double t0_ = 0.0, dt_ = 0.0;
    std::vector<double> data_;
};

}  // namespace twv
