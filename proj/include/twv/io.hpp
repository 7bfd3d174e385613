#pragma once
/**
 * @file io.hpp
 * @brief CSV tables, 8-bit PGM rasters and TWV1 field snapshots.
 *
 * TWV1 layout (little-endian): "TWV1", u32 nx, u32 ny, f64 h, f64 t,
 * then nx * ny f64 values row-major.
 */

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "twv/forward.hpp"

namespace twv {

/// Shortest round-trip decimal form (locale independent).
inline std::string fmt_num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

/// Row-oriented CSV builder; cells are written verbatim.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    CsvTable& row(std::vector<std::string> cells) {
        require(cells.size() == header_.size(), ErrorKind::Shape, "CSV row width does not match the header");
        rows_.push_back(std::move(cells));
        return *this;
    }

    std::string str() const {
        std::ostringstream os;
        auto line = [&](const std::vector<std::string>& cells) {
            for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
            os << '\n';
        };
        line(header_);
        for (const auto& r : rows_) line(r);
        return os.str();
    }

    std::size_t size() const { return rows_.size(); }

private:
    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Config, "cannot write " + path);
    f << text;
}

/// (time, point_index, arc_length, value) rows.
inline CsvTable trace_csv(const FluxTrace& tr) {
    CsvTable t({"time", "point_index", "arc_length", "value"});
    for (std::size_t n = 0; n < tr.levels(); ++n)
        for (std::size_t b = 0; b < tr.points(); ++b)
            t.row({fmt_num(tr.times[n]), std::to_string(b), fmt_num(tr.arc[b]), fmt_num(tr.at(n, b))});
    return t;
}

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    out.append(reinterpret_cast<const char*>(b.data()), b.size());
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
    require(pos + sizeof(T) <= in.size(), ErrorKind::Shape, "truncated snapshot");
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), in.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b.begin(), b.end());
    pos += sizeof(T);
    T v;
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
}

}  // namespace detail

struct Snapshot {
    std::uint32_t nx = 0, ny = 0;
    double h = 0.0, t = 0.0;
    std::vector<double> values;  ///< nx * ny, row-major
};

inline std::string encode_snapshot(const Snapshot& s) {
    require(s.values.size() == static_cast<std::size_t>(s.nx) * s.ny, ErrorKind::Shape, "snapshot size mismatch");
    std::string out = "TWV1";
    detail::put_le(out, s.nx);
    detail::put_le(out, s.ny);
    detail::put_le(out, s.h);
    detail::put_le(out, s.t);
    for (double v : s.values) detail::put_le(out, v);
    return out;
}

inline Snapshot decode_snapshot(const std::string& bytes) {
    require(bytes.size() >= 4 && bytes.compare(0, 4, "TWV1") == 0, ErrorKind::Shape, "bad snapshot magic");
    std::size_t pos = 4;
    Snapshot s;
    s.nx = detail::get_le<std::uint32_t>(bytes, pos);
    s.ny = detail::get_le<std::uint32_t>(bytes, pos);
    s.h = detail::get_le<double>(bytes, pos);
    s.t = detail::get_le<double>(bytes, pos);
    const std::size_t n = static_cast<std::size_t>(s.nx) * s.ny;
    require(bytes.size() == pos + 8 * n, ErrorKind::Shape, "snapshot payload size mismatch");
    s.values.resize(n);
    for (auto& v : s.values) v = detail::get_le<double>(bytes, pos);
    return s;
}

inline Snapshot grid_snapshot(const SimGrid& g, std::span<const double> u, double t) {
    return {static_cast<std::uint32_t>(g.nx()), static_cast<std::uint32_t>(g.ny()), g.h(), t, g.to_raster(u)};
}

/// 8-bit PGM (P5) of a row-major raster, linearly mapped from [lo, hi].
inline std::string encode_pgm(std::size_t nx, std::size_t ny, std::span<const double> v, double lo, double hi) {
    require(v.size() == nx * ny, ErrorKind::Shape, "raster size mismatch");
    std::string out = "P5 " + std::to_string(nx) + " " + std::to_string(ny) + " 255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (double x : v) {
        const double q = std::clamp((x - lo) / span, 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * q))));
    }
    return out;
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(static_cast<bool>(f), ErrorKind::Config, "cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace twv
