#ifndef SMFUSE_RASTER_HPP
#define SMFUSE_RASTER_HPP

#include <smfuse/error.hpp>
#include <smfuse/text.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace smfuse {

inline constexpr double kNodata = std::numeric_limits<double>::quiet_NaN();

inline bool is_nodata(double v) { return std::isnan(v); }

/// Placement of a north-up raster with square pixels. Row 0 is the top row;
/// pixel (r, c) covers [ox + c*ps, ox + (c+1)*ps) x (oy - (r+1)*ps, oy - r*ps].
struct GridGeometry {
    std::size_t width = 1;
    std::size_t height = 1;
    double origin_x = 0.0;
    double origin_y = 0.0;
    double pixel_size = 10.0;

    std::size_t size() const { return width * height; }
    double min_x() const { return origin_x; }
    double max_x() const { return origin_x + static_cast<double>(width) * pixel_size; }
    double max_y() const { return origin_y; }
    double min_y() const { return origin_y - static_cast<double>(height) * pixel_size; }

    double center_x(std::size_t col) const { return origin_x + (static_cast<double>(col) + 0.5) * pixel_size; }
    double center_y(std::size_t row) const { return origin_y - (static_cast<double>(row) + 0.5) * pixel_size; }

    // Cell containing a ground point under the half-open convention; false when outside.
    bool locate(double x, double y, std::size_t& row, std::size_t& col) const {
        const double fc = std::floor((x - origin_x) / pixel_size);
        const double fr = std::floor((origin_y - y) / pixel_size);
        if (!(fc >= 0.0 && fr >= 0.0)) return false;
        if (fc >= static_cast<double>(width) || fr >= static_cast<double>(height)) return false;
        col = static_cast<std::size_t>(fc);
        row = static_cast<std::size_t>(fr);
        return true;
    }

    void validate() const {
        if (width < 1 || height < 1) throw Error(Errc::InvalidGeometry, "width and height must be >= 1");
        if (!std::isfinite(pixel_size) || !(pixel_size > 0.0))
            throw Error(Errc::InvalidGeometry, "pixel_size must be positive and finite");
        if (!std::isfinite(origin_x) || !std::isfinite(origin_y))
            throw Error(Errc::InvalidGeometry, "origin must be finite");
    }

    friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Single-band raster of doubles; NaN marks nodata.
class Grid {
public:
    Grid() = default;

    explicit Grid(GridGeometry geometry, double fill = 0.0, std::string name = {})
        : geometry_(geometry), values_(geometry.size(), fill), name_(std::move(name)) {
        geometry_.validate();
    }

    Grid(GridGeometry geometry, std::vector<double> values, std::string name = {})
        : geometry_(geometry), values_(std::move(values)), name_(std::move(name)) {
        geometry_.validate();
        if (values_.size() != geometry_.size())
            throw Error(Errc::InvalidGeometry, "value count does not match width*height");
        for (double& v : values_) {
            if (std::isnan(v)) v = kNodata;
            else if (!std::isfinite(v)) throw Error(Errc::NonFiniteInput, "grid values must be finite or NaN");
        }
    }

    const GridGeometry& geometry() const { return geometry_; }
    std::size_t width() const { return geometry_.width; }
    std::size_t height() const { return geometry_.height; }
    std::size_t size() const { return values_.size(); }

    double operator()(std::size_t row, std::size_t col) const { return values_[row * geometry_.width + col]; }
    double& operator()(std::size_t row, std::size_t col) { return values_[row * geometry_.width + col]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }

    std::span<const double> values() const { return values_; }
    std::span<double> values() { return values_; }

    const std::string& name() const { return name_; }
    void set_name(std::string name) { name_ = std::move(name); }

    /// On-disk sentinel; NaN means nodata is stored as NaN.
    float nodata_sentinel() const { return nodata_sentinel_; }
    void set_nodata_sentinel(float s) { nodata_sentinel_ = s; }

    // Values compare with NaN == NaN.
    friend bool operator==(const Grid& a, const Grid& b) {
        if (!(a.geometry_ == b.geometry_) || a.name_ != b.name_) return false;
        const bool sa = std::isnan(a.nodata_sentinel_), sb = std::isnan(b.nodata_sentinel_);
        if (sa != sb || (!sa && a.nodata_sentinel_ != b.nodata_sentinel_)) return false;
        for (std::size_t i = 0; i < a.values_.size(); ++i) {
            const double x = a.values_[i], y = b.values_[i];
            if (std::isnan(x) != std::isnan(y)) return false;
            if (!std::isnan(x) && std::bit_cast<std::uint64_t>(x) != std::bit_cast<std::uint64_t>(y)) return false;
        }
        return true;
    }

private:
    GridGeometry geometry_{};
    std::vector<double> values_{0.0};
    std::string name_;
    float nodata_sentinel_ = std::numeric_limits<float>::quiet_NaN();
};

/// In-situ observation: ground coordinates (m) and soil moisture (vol%).
struct PointSample {
    double x = 0.0;
    double y = 0.0;
    double sm = 0.0;

    friend bool operator==(const PointSample&, const PointSample&) = default;
};

namespace detail {

inline void put_bytes(std::string& out, const void* src, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(src);
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(p), n);
    } else {
        for (std::size_t i = 0; i < n; ++i) out.push_back(static_cast<char>(p[n - 1 - i]));
    }
}

template <typename T>
void put(std::string& out, T v) {
    put_bytes(out, &v, sizeof v);
}

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > data_.size()) throw Error(Errc::TruncatedPayload, "file ends inside the header");
        std::array<unsigned char, sizeof(T)> buf{};
        std::memcpy(buf.data(), data_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native != std::endian::little) std::reverse(buf.begin(), buf.end());
        pos_ += sizeof(T);
        return std::bit_cast<T>(buf);
    }

    std::string_view take(std::size_t n) {
        if (pos_ + n > data_.size()) throw Error(Errc::TruncatedPayload, "file ends inside the header");
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::MissingFile, path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void spill(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::IoFailure, "write failed: " + path.string());
}

} // namespace detail

inline constexpr std::array<char, 4> kSmrgMagic{'S', 'M', 'R', 'G'};
inline constexpr std::uint16_t kSmrgVersion = 1;

/// Serialize to the SMRG layout (little-endian, f32 payload).
inline std::string encode_grid(const Grid& grid) {
    const auto& g = grid.geometry();
    if (g.width > 0xFFFFFFFFu || g.height > 0xFFFFFFFFu) throw Error(Errc::IoFailure, "grid too large for SMRG");
    if (grid.name().size() > 0xFFFFu) throw Error(Errc::IoFailure, "grid name longer than 65535 bytes");
    std::string out;
    out.reserve(44 + grid.name().size() + 4 * grid.size());
    out.append(kSmrgMagic.data(), kSmrgMagic.size());
    detail::put<std::uint16_t>(out, kSmrgVersion);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.width));
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.height));
    detail::put<double>(out, g.pixel_size);
    detail::put<double>(out, g.origin_x);
    detail::put<double>(out, g.origin_y);
    const float sentinel = grid.nodata_sentinel();
    detail::put<float>(out, sentinel);
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(grid.name().size()));
    out += grid.name();
    for (double v : grid.values()) {
        float f = is_nodata(v) ? sentinel : static_cast<float>(v);
        if (std::isnan(f)) f = std::numeric_limits<float>::quiet_NaN();
        detail::put<float>(out, f);
    }
    return out;
}

inline Grid decode_grid(std::string_view bytes) {
    detail::ByteReader in(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kSmrgMagic.data(), 4) != 0)
        throw Error(Errc::BadMagic, "not an SMRG file");
    in.take(4);
    const auto version = in.get<std::uint16_t>();
    if (version != kSmrgVersion) throw Error(Errc::BadMagic, "unsupported SMRG version " + std::to_string(version));
    GridGeometry g;
    g.width = in.get<std::uint32_t>();
    g.height = in.get<std::uint32_t>();
    g.pixel_size = in.get<double>();
    g.origin_x = in.get<double>();
    g.origin_y = in.get<double>();
    const float sentinel = in.get<float>();
    if (!std::isfinite(g.pixel_size) || !std::isfinite(g.origin_x) || !std::isfinite(g.origin_y) ||
        std::isinf(sentinel))
        throw Error(Errc::NonFiniteHeaderField, "header contains a non-finite field");
    const auto name_len = in.get<std::uint16_t>();
    std::string name(in.take(name_len));
    g.validate();
    const std::size_t n = g.size();
    if (in.remaining() != n * 4)
        throw Error(Errc::TruncatedPayload, "payload holds " + std::to_string(in.remaining()) + " bytes, header promises " +
                                                std::to_string(n * 4));
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float f = in.get<float>();
        if (std::isnan(f) || (!std::isnan(sentinel) && f == sentinel)) values[i] = kNodata;
        else if (!std::isfinite(f)) throw Error(Errc::NonFiniteInput, "payload contains infinity");
        else values[i] = f;
    }
    Grid grid(g, std::move(values), std::move(name));
    grid.set_nodata_sentinel(sentinel);
    return grid;
}

inline Grid read_grid(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(Errc::MissingFile, path.string());
    return decode_grid(detail::slurp(path));
}

inline void write_grid(const Grid& grid, const std::filesystem::path& path) {
    detail::spill(path, encode_grid(grid));
}

/// Nearest-neighbour resampling by cell containment of target pixel centres.
inline Grid resample_nearest(const Grid& src, const GridGeometry& target) {
    target.validate();
    const auto& s = src.geometry();
    const bool overlap = s.min_x() < target.max_x() && target.min_x() < s.max_x() && s.min_y() < target.max_y() &&
                         target.min_y() < s.max_y();
    if (!overlap) throw Error(Errc::DisjointExtents, "source and target extents do not overlap");
    Grid out(target, kNodata, src.name());
    for (std::size_t r = 0; r < target.height; ++r) {
        const double y = target.center_y(r);
        for (std::size_t c = 0; c < target.width; ++c) {
            std::size_t sr = 0, sc = 0;
            if (s.locate(target.center_x(c), y, sr, sc)) out(r, c) = src(sr, sc);
        }
    }
    return out;
}

/// Mean over factor x factor blocks, skipping nodata.
inline Grid block_average(const Grid& src, std::size_t factor) {
    if (factor < 1) throw Error(Errc::NonDivisibleFactor, "factor must be >= 1");
    const auto& s = src.geometry();
    if (s.width % factor != 0 || s.height % factor != 0)
        throw Error(Errc::NonDivisibleFactor,
                    "factor " + std::to_string(factor) + " does not divide " + std::to_string(s.width) + "x" +
                        std::to_string(s.height));
    GridGeometry g = s;
    g.width = s.width / factor;
    g.height = s.height / factor;
    g.pixel_size = s.pixel_size * static_cast<double>(factor);
    Grid out(g, kNodata, src.name());
    for (std::size_t r = 0; r < g.height; ++r) {
        for (std::size_t c = 0; c < g.width; ++c) {
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < factor; ++i) {
                for (std::size_t j = 0; j < factor; ++j) {
                    const double v = src(r * factor + i, c * factor + j);
                    if (!is_nodata(v)) {
                        sum += v;
                        ++n;
                    }
                }
            }
            if (n > 0) out(r, c) = sum / static_cast<double>(n);
        }
    }
    return out;
}

inline std::vector<double> sample_at_points(const Grid& grid, std::span<const PointSample> points) {
    std::vector<double> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        std::size_t r = 0, c = 0;
        if (!grid.geometry().locate(points[i].x, points[i].y, r, c))
            throw Error(Errc::PointOutsideExtent, "point " + std::to_string(i) + " lies outside the grid extent");
        out.push_back(grid(r, c));
    }
    return out;
}

// Point files: CSV with header "x,y,sm".
inline std::vector<PointSample> parse_points(const std::string& body) {
    std::istringstream in(body);
    std::string line;
    std::size_t lineno = 0;
    std::vector<PointSample> pts;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = text::trim(line);
        if (t.empty()) continue;
        auto cols = text::split(t, ',');
        if (!header) {
            if (cols.size() != 3 || cols[0] != "x" || cols[1] != "y" || cols[2] != "sm")
                throw LineError(Errc::SchemaMismatch, lineno, "expected header x,y,sm");
            header = true;
            continue;
        }
        if (cols.size() != 3) throw LineError(Errc::SchemaMismatch, lineno, "expected 3 columns");
        auto x = text::parse_double(cols[0]), y = text::parse_double(cols[1]), sm = text::parse_double(cols[2]);
        if (!x || !y || !sm) throw LineError(Errc::SchemaMismatch, lineno, "non-numeric field");
        if (!(*sm >= 0.0 && *sm <= 100.0)) throw LineError(Errc::SchemaMismatch, lineno, "sm outside [0,100]");
        pts.push_back({*x, *y, *sm});
    }
    if (!header) throw Error(Errc::SchemaMismatch, "point file has no header");
    return pts;
}

inline std::vector<PointSample> read_points(const std::filesystem::path& path) {
    return parse_points(detail::slurp(path));
}

inline void write_points(std::span<const PointSample> points, const std::filesystem::path& path) {
    std::string out = "x,y,sm\n";
    for (const auto& p : points) out += text::exact(p.x) + "," + text::exact(p.y) + "," + text::exact(p.sm) + "\n";
    detail::spill(path, out);
}

} // namespace smfuse

#endif
