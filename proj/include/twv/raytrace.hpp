#pragma once
/**
 * @file raytrace.hpp
 * @brief Geometric rays through the two media, and interface recovery from
 * reflection traveltimes as an envelope of circles.
 */

#include <optional>

#include "twv/geometry.hpp"

namespace twv {

struct Refraction {
    Vec2 dir{};
    bool total_internal = false;
};

/// Snell's law with speeds c = sqrt(a): sin(out) = (c_out / c_in) sin(in).
/// The normal may point either way.
inline Refraction refract(Vec2 incident, Vec2 normal, double c_in, double c_out) {
    const double nn = norm(normal);
    require(nn > 0.0, ErrorKind::Parameter, "zero normal");
    require(c_in > 0.0 && c_out > 0.0, ErrorKind::Parameter, "speeds must be positive");
    Vec2 n = normal / nn;
    if (dot(incident, n) < 0.0) n = -n;  // along the propagation
    const double cn = dot(incident, n);
    const Vec2 tang = incident - cn * n;
    const double ratio = c_out / c_in;
    const double sin_out = ratio * norm(tang);
    if (sin_out > 1.0) return {incident - 2.0 * cn * n, true};
    return {unit(ratio * tang + std::sqrt(1.0 - sin_out * sin_out) * n), false};
}

/// arcsin(sqrt(a_in / a_out)) for a slow-to-fast crossing, none otherwise.
inline std::optional<double> critical_angle(double a_in, double a_out) {
    require(a_in > 0.0 && a_out > 0.0, ErrorKind::Parameter, "coefficients must be positive");
    if (a_in >= a_out) return std::nullopt;
    return std::asin(std::sqrt(a_in / a_out));
}

enum class RayEvent { Refract, TotalInternalReflection, ExitGamma, StepLimit };

inline const char* to_string(RayEvent e) {
    switch (e) {
        case RayEvent::Refract: return "refract";
        case RayEvent::TotalInternalReflection: return "total_internal_reflection";
        case RayEvent::ExitGamma: return "exit";
        case RayEvent::StepLimit: return "step_limit";
    }
    return "unknown";
}

struct RaySegment {
    Vec2 start{};
    Vec2 dir{};
    double speed = 0.0;
    double length = 0.0;
    double time = 0.0;
    Vec2 end() const { return start + length * dir; }
};

struct EventRecord {
    RayEvent kind{};
    Vec2 point{};
    double incidence = 0.0;  ///< angle to the normal, radians
};

struct RayPath {
    std::vector<RaySegment> segments;
    std::vector<EventRecord> events;

    bool exited() const { return !events.empty() && events.back().kind == RayEvent::ExitGamma; }
    bool trapped() const { return !events.empty() && events.back().kind == RayEvent::StepLimit; }
    double total_time() const {
        double t = 0.0;
        for (const auto& s : segments) t += s.time;
        return t;
    }
};

/// Cached samples of a closed polar curve for ray intersection.
class CurveHitter {
public:
    explicit CurveHitter(const InterfaceCurve& c, std::size_t n = 512) : c_(&c), n_(n) {
        th_.resize(n + 1);
        pts_.resize(n + 1);
        for (std::size_t i = 0; i <= n; ++i) {
            th_[i] = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n);
            pts_[i] = c.point(th_[i]);
        }
        scale_ = c.max_radius();
    }

    const InterfaceCurve& curve() const { return *c_; }

    /// First crossing with ray parameter t > t_min: returns (t, theta).
    /// Crossings are bracketed on the curve samples and polished by bisection
    /// on the polar residual along the ray.
    std::optional<std::pair<double, double>> first_hit(Vec2 p, Vec2 d, double t_min) const {
        std::optional<std::pair<double, double>> best;
        auto g = [&](Vec2 q) { return cross(q - p, d); };
        double g0 = g(pts_[0]);
        for (std::size_t i = 0; i < n_; ++i) {
            const double g1 = g(pts_[i + 1]);
            if ((g0 <= 0.0) != (g1 <= 0.0)) {
                // bisection in theta on the line-side function
                double lo = th_[i], hi = th_[i + 1], glo = g0;
                for (int it = 0; it < 60; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    const double gm = g(c_->point(mid));
                    if ((gm <= 0.0) == (glo <= 0.0)) { lo = mid; glo = gm; } else hi = mid;
                }
                const double th = 0.5 * (lo + hi);
                const double t = dot(c_->point(th) - p, d);
                if (t > t_min && (!best || t < best->first)) best = {{polish(p, d, t), th}};
            }
            g0 = g1;
        }
        return best;
    }

private:
    double polish(Vec2 p, Vec2 d, double t) const {
        const double tol = 1e-12 * scale_;
        double lo = t - 1e-7 * scale_, hi = t + 1e-7 * scale_;
        double flo = c_->polar_residual(p + lo * d), fhi = c_->polar_residual(p + hi * d);
        if ((flo <= 0.0) == (fhi <= 0.0)) return t;
        while (hi - lo > tol) {
            const double mid = 0.5 * (lo + hi);
            const double fm = c_->polar_residual(p + mid * d);
            if ((fm <= 0.0) == (flo <= 0.0)) { lo = mid; flo = fm; } else hi = mid;
        }
        return 0.5 * (lo + hi);
    }

    const InterfaceCurve* c_;
    std::size_t n_;
    std::vector<double> th_;
    std::vector<Vec2> pts_;
    double scale_ = 1.0;
};

/// Ray tracer over a domain pair; hitters are built once and reused.
class RayTracer {
public:
    explicit RayTracer(const DomainPair& dp) : dp_(&dp), inner_(dp.inner()), outer_(dp.outer()) {
        diam_ = 2.0 * dp.outer().max_radius();
    }

    const DomainPair& domains() const { return *dp_; }

    RayPath trace(Vec2 origin, Vec2 direction, std::size_t max_events = 200) const {
        require(dp_->region_of(origin) != Region::Exterior, ErrorKind::Domain, "ray origin outside the domain");
        require(std::abs(norm(direction) - 1.0) < 1e-9, ErrorKind::Parameter, "ray direction must be a unit vector");
        try {
            return trace_once(origin, direction, max_events);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::Numerical) throw;
            // tangency: perturb the launch direction once
            const double c = std::cos(1e-9), s = std::sin(1e-9);
            return trace_once(origin, {c * direction.x - s * direction.y, s * direction.x + c * direction.y}, max_events);
        }
    }

private:
    RayPath trace_once(Vec2 p, Vec2 d, std::size_t max_events) const {
        RayPath path;
        Region region = dp_->region_of(p);
        const double t_min = 1e-10 * diam_;
        while (true) {
            if (path.events.size() >= max_events) {
                path.events.push_back({RayEvent::StepLimit, p, 0.0});
                return path;
            }
            const double c = std::sqrt(dp_->coefficient(region));
            auto hit_in = inner_.first_hit(p, d, t_min);
            std::optional<std::pair<double, double>> hit_out;
            if (region == Region::Outer) hit_out = outer_.first_hit(p, d, t_min);
            const bool to_outer = region == Region::Outer && hit_out && (!hit_in || hit_out->first < hit_in->first);
            const auto hit = to_outer ? hit_out : hit_in;
            require(hit.has_value(), ErrorKind::Numerical, "ray left the domain without crossing a curve");
            const double len = hit->first;
            path.segments.push_back({p, d, c, len, len / c});
            const Vec2 q = p + len * d;
            const Vec2 n = to_outer ? dp_->outer().normal(hit->second) : dp_->inner().normal(hit->second);
            const double cosi = std::abs(dot(d, n));
            const double inc = std::acos(std::min(1.0, cosi));
            if (cosi < 1e-10) throw Error(ErrorKind::Numerical, "tangential intersection");
            if (to_outer) {
                path.events.push_back({RayEvent::ExitGamma, q, inc});
                return path;
            }
            const Region other = region == Region::Inner ? Region::Outer : Region::Inner;
            const Refraction r = refract(d, n, c, std::sqrt(dp_->coefficient(other)));
            path.events.push_back({r.total_internal ? RayEvent::TotalInternalReflection : RayEvent::Refract, q, inc});
            if (!r.total_internal) region = other;
            p = q;
            d = r.dir;
        }
    }

    const DomainPair* dp_;
    CurveHitter inner_;
    CurveHitter outer_;
    double diam_ = 1.0;
};

inline RayPath trace(const DomainPair& dp, Vec2 origin, Vec2 direction, std::size_t max_events = 200) {
    return RayTracer(dp).trace(origin, direction, max_events);
}

struct CrossingReport {
    double fraction = 0.0;
    std::size_t rays = 0;
    std::size_t exited = 0;
    /// Incidence at the first interface hit: largest among exiting rays and
    /// smallest among trapped ones (NaN when the class is empty).
    double max_exit_incidence = std::numeric_limits<double>::quiet_NaN();
    double min_trapped_incidence = std::numeric_limits<double>::quiet_NaN();
};

/// Fraction of uniformly spaced launch directions whose ray leaves through Gamma.
inline CrossingReport crossing_fraction(const RayTracer& tracer, Vec2 origin, std::size_t n_angles,
                                        std::size_t max_events = 200) {
    require(n_angles >= 360, ErrorKind::Parameter, "crossing fraction needs at least 360 angles");
    std::vector<char> ok(n_angles);
    std::vector<double> inc(n_angles);
    parallel_for(n_angles, [&](std::size_t i) {
        const double th = 2.0 * pi * static_cast<double>(i) / static_cast<double>(n_angles);
        const RayPath p = tracer.trace(origin, polar_unit(th), max_events);
        ok[i] = p.exited();
        inc[i] = p.events.front().incidence;
    });
    CrossingReport r;
    r.rays = n_angles;
    for (std::size_t i = 0; i < n_angles; ++i) {
        if (ok[i]) {
            ++r.exited;
            r.max_exit_incidence = std::isnan(r.max_exit_incidence) ? inc[i] : std::max(r.max_exit_incidence, inc[i]);
        } else {
            r.min_trapped_incidence = std::isnan(r.min_trapped_incidence) ? inc[i] : std::min(r.min_trapped_incidence, inc[i]);
        }
    }
    r.fraction = static_cast<double>(r.exited) / static_cast<double>(n_angles);
    return r;
}

inline double crossing_fraction(const DomainPair& dp, Vec2 origin, std::size_t n_angles, std::size_t max_events = 200) {
    return crossing_fraction(RayTracer(dp), origin, n_angles, max_events).fraction;
}

// ---------------------------------------------------------------------------
// Envelope reconstruction

struct TraveltimeRecord {
    Vec2 x{};
    double tau = 0.0;
};

/// First-return traveltimes 2 dist(x, Gamma_1) / sqrt(a2) at n points of Gamma.
inline std::vector<TraveltimeRecord> distance_traveltimes(const DomainPair& dp, std::size_t n) {
    std::vector<TraveltimeRecord> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 x = dp.outer().point(2.0 * pi * static_cast<double>(i) / static_cast<double>(n));
        out[i] = {x, 2.0 * distance_to_curve(dp.inner(), x, 2048).first / std::sqrt(dp.a2())};
    }
    return out;
}

/// Scalar field on a uniform node raster.
struct Raster {
    std::size_t nx = 0, ny = 0;
    Vec2 origin{};
    double h = 0.0;
    std::vector<double> v;  ///< row-major, j * nx + i
    Vec2 node(std::size_t i, std::size_t j) const {
        return {origin.x + h * static_cast<double>(i), origin.y + h * static_cast<double>(j)};
    }
    double at(std::size_t i, std::size_t j) const { return v[j * nx + i]; }
};

struct Segment2 {
    Vec2 a{}, b{};
};

/// Zero level set of a raster by marching squares, one or two segments per cell.
/// Saddle cells are resolved with the cell-centre average.
inline std::vector<Segment2> marching_squares(const Raster& f, double level = 0.0) {
    std::vector<Segment2> out;
    auto lerp = [&](Vec2 p, Vec2 q, double fp, double fq) {
        const double t = (level - fp) / (fq - fp);
        return p + t * (q - p);
    };
    for (std::size_t j = 0; j + 1 < f.ny; ++j) {
        for (std::size_t i = 0; i + 1 < f.nx; ++i) {
            const Vec2 p[4] = {f.node(i, j), f.node(i + 1, j), f.node(i + 1, j + 1), f.node(i, j + 1)};
            const double v[4] = {f.at(i, j), f.at(i + 1, j), f.at(i + 1, j + 1), f.at(i, j + 1)};
            int code = 0;
            for (int k = 0; k < 4; ++k) code |= (v[k] > level ? 1 : 0) << k;
            if (code == 0 || code == 15) continue;
            // edge k joins corner k and k+1
            auto edge = [&](int k) { return lerp(p[k], p[(k + 1) % 4], v[k], v[(k + 1) % 4]); };
            std::vector<int> cut;
            for (int k = 0; k < 4; ++k)
                if (((code >> k) & 1) != ((code >> ((k + 1) % 4)) & 1)) cut.push_back(k);
            if (cut.size() == 2) {
                out.push_back({edge(cut[0]), edge(cut[1])});
            } else {
                const bool centre_high = 0.25 * (v[0] + v[1] + v[2] + v[3]) > level;
                const bool c0_high = (code & 1) != 0;
                if (centre_high == c0_high) {
                    out.push_back({edge(0), edge(1)});
                    out.push_back({edge(2), edge(3)});
                } else {
                    out.push_back({edge(3), edge(0)});
                    out.push_back({edge(1), edge(2)});
                }
            }
        }
    }
    return out;
}

inline double point_segment_distance(Vec2 p, const Segment2& s) {
    const Vec2 d = s.b - s.a;
    const double l2 = norm2(d);
    const double t = l2 > 0.0 ? std::clamp(dot(p - s.a, d) / l2, 0.0, 1.0) : 0.0;
    return norm(p - (s.a + t * d));
}

/// Symmetric Hausdorff distance between a segment set and a curve, using
/// segment endpoints and midpoints on one side and n curve samples on the other.
inline double hausdorff_to_curve(std::span<const Segment2> segs, const InterfaceCurve& curve, std::size_t n = 512) {
    require(!segs.empty(), ErrorKind::Domain, "empty contour");
    std::vector<double> d1(segs.size());
    parallel_for(segs.size(), [&](std::size_t i) {
        const Segment2& s = segs[i];
        d1[i] = std::max({distance_to_curve(curve, s.a, 256).first, distance_to_curve(curve, s.b, 256).first,
                          distance_to_curve(curve, 0.5 * (s.a + s.b), 256).first});
    });
    std::vector<double> d2(n);
    parallel_for(n, [&](std::size_t i) {
        const Vec2 q = curve.point(2.0 * pi * static_cast<double>(i) / static_cast<double>(n));
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : segs) best = std::min(best, point_segment_distance(q, s));
        d2[i] = best;
    });
    return std::max(*std::max_element(d1.begin(), d1.end()), *std::max_element(d2.begin(), d2.end()));
}

struct EnvelopeOptions {
    std::size_t nx = 256;         ///< raster nodes per axis
    double box_scale = 1.05;      ///< raster half-width relative to the outer extent
};

struct EnvelopeResult {
    Raster field;                 ///< F(p) = min_i (|p - x_i| - r_i)
    std::vector<Segment2> curve;  ///< zero level set inside Gamma
    bool low_coverage = false;    ///< fewer than 16 records
    std::optional<double> hausdorff;
};

/// Zero set of F(p) = min_i (|p - x_i| - sqrt(a2) tau_i / 2), restricted to the
/// interior of Gamma. Hausdorff error is filled when `truth` is given.
inline EnvelopeResult envelope_reconstruct(std::span<const TraveltimeRecord> records, double a2,
                                           const InterfaceCurve& outer, const EnvelopeOptions& opt = {},
                                           const InterfaceCurve* truth = nullptr) {
    require(!records.empty(), ErrorKind::Parameter, "no traveltime records");
    require(a2 > 0.0 && opt.nx >= 8, ErrorKind::Parameter, "bad envelope options");
    EnvelopeResult res;
    res.low_coverage = records.size() < 16;

    Vec2 lo{1e300, 1e300}, hi{-1e300, -1e300};
    for (std::size_t i = 0; i < 1024; ++i) {
        const Vec2 p = outer.point(2.0 * pi * static_cast<double>(i) / 1024.0);
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
    const double half = opt.box_scale * 0.5 * std::max(hi.x - lo.x, hi.y - lo.y);
    const Vec2 c = 0.5 * (lo + hi);
    std::vector<double> radii(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        require(records[i].tau > 0.0, ErrorKind::Parameter, "traveltimes must be positive");
        radii[i] = std::sqrt(a2) * records[i].tau / 2.0;
    }
    require(*std::min_element(radii.begin(), radii.end()) < 2.0 * half, ErrorKind::Domain,
            "all radii exceed the domain size; no envelope");

    Raster& F = res.field;
    F.nx = F.ny = opt.nx;
    F.h = 2.0 * half / static_cast<double>(opt.nx - 1);
    F.origin = {c.x - half, c.y - half};
    F.v.resize(F.nx * F.ny);
    parallel_for(F.ny, [&](std::size_t j) {
        for (std::size_t i = 0; i < F.nx; ++i) {
            const Vec2 p = F.node(i, j);
            double m = std::numeric_limits<double>::infinity();
            for (std::size_t r = 0; r < records.size(); ++r) m = std::min(m, norm(p - records[r].x) - radii[r]);
            F.v[j * F.nx + i] = m;
        }
    });
    for (const auto& s : marching_squares(F))
        if (outer.contains(s.a) && outer.contains(s.b)) res.curve.push_back(s);
    require(!res.curve.empty(), ErrorKind::Domain, "no envelope inside the outer boundary");
    if (truth) res.hausdorff = hausdorff_to_curve(res.curve, *truth);
    return res;
}

}  // namespace twv
