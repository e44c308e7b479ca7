#ifndef SMFUSE_FEATURES_HPP
#define SMFUSE_FEATURES_HPP

#include <smfuse/error.hpp>
#include <smfuse/parallel.hpp>
#include <smfuse/raster.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace smfuse {

/// Ordered, uniquely named layers sharing one geometry.
class FeatureStack {
public:
    FeatureStack() = default;
    explicit FeatureStack(GridGeometry geometry) : geometry_(geometry), has_geometry_(true) {}

    void add(std::string name, Grid grid) {
        if (!has_geometry_) {
            geometry_ = grid.geometry();
            has_geometry_ = true;
        } else if (!(grid.geometry() == geometry_)) {
            throw Error(Errc::GeometryMismatch, "layer '" + name + "' does not share the stack geometry");
        }
        if (find(name)) throw Error(Errc::DuplicateName, "layer '" + name + "' already present");
        grid.set_name(name);
        names_.push_back(std::move(name));
        layers_.push_back(std::move(grid));
    }

    std::size_t size() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }
    const GridGeometry& geometry() const { return geometry_; }
    const std::vector<std::string>& names() const { return names_; }
    const Grid& layer(std::size_t i) const { return layers_.at(i); }
    const std::string& name(std::size_t i) const { return names_.at(i); }

    std::optional<std::size_t> find(const std::string& name) const {
        auto it = std::find(names_.begin(), names_.end(), name);
        if (it == names_.end()) return std::nullopt;
        return static_cast<std::size_t>(it - names_.begin());
    }

    const Grid& layer(const std::string& name) const {
        auto i = find(name);
        if (!i) throw Error(Errc::MissingFeatureLayer, "no layer named '" + name + "'");
        return layers_[*i];
    }

    // Layer positions for the requested names, in request order.
    std::vector<std::size_t> indices_of(const std::vector<std::string>& wanted) const {
        std::vector<std::size_t> idx;
        idx.reserve(wanted.size());
        for (const auto& n : wanted) {
            auto i = find(n);
            if (!i) throw Error(Errc::MissingFeatureLayer, "no layer named '" + n + "'");
            idx.push_back(*i);
        }
        return idx;
    }

    FeatureStack subset(const std::vector<std::string>& wanted) const {
        FeatureStack out(geometry_);
        for (auto i : indices_of(wanted)) out.add(names_[i], layers_[i]);
        return out;
    }

private:
    GridGeometry geometry_{};
    bool has_geometry_ = false;
    std::vector<std::string> names_;
    std::vector<Grid> layers_;
};

struct GlcmConfig {
    int window = 7;
    int levels = 32;
    int distance = 1;
    std::vector<std::pair<int, int>> directions{{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    bool symmetric = true;

    void validate() const {
        if (window < 3 || window % 2 == 0) throw Error(Errc::InvalidConfig, "GLCM window must be odd and >= 3");
        if (levels < 2) throw Error(Errc::InvalidConfig, "GLCM levels must be >= 2");
        if (distance < 1) throw Error(Errc::InvalidConfig, "GLCM distance must be >= 1");
        if (directions.empty()) throw Error(Errc::InvalidConfig, "GLCM needs at least one direction");
    }
};

inline const std::array<std::string, 8>& glcm_feature_names() {
    static const std::array<std::string, 8> names{"GLCM_contrast",    "GLCM_correlation", "GLCM_dissimilarity",
                                                  "GLCM_entropy",     "GLCM_homogeneity", "GLCM_mean",
                                                  "GLCM_std",         "GLCM_ASM"};
    return names;
}

/// Maps v to floor((clamp(v,lo,hi)-lo)/(hi-lo)*levels), capped at levels-1.
inline Grid quantize(const Grid& grid, int levels, double lo, double hi) {
    if (!(lo < hi)) throw Error(Errc::DegenerateRange, "quantize needs lo < hi");
    if (levels < 2) throw Error(Errc::InvalidConfig, "levels must be >= 2");
    Grid out(grid.geometry(), kNodata, grid.name());
    const double top = static_cast<double>(levels - 1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double v = grid[i];
        if (is_nodata(v)) continue;
        const double t = (std::clamp(v, lo, hi) - lo) / (hi - lo);
        out[i] = std::min(std::floor(t * levels), top);
    }
    return out;
}

/// Haralick statistics of one normalized co-occurrence matrix.
struct GlcmStats {
    double contrast = 0.0;
    double correlation = 0.0;
    double dissimilarity = 0.0;
    double entropy = 0.0;
    double homogeneity = 0.0;
    double mean = 0.0;
    double std = 0.0;
    double asm_ = 0.0;

    std::array<double, 8> as_array() const {
        return {contrast, correlation, dissimilarity, entropy, homogeneity, mean, std, asm_};
    }
};

namespace detail {

// Co-occurrence counts for one window with a record of touched cells so the
// matrix can be cleared in O(touched).
class CooccurrenceAccumulator {
public:
    explicit CooccurrenceAccumulator(int levels)
        : levels_(levels), counts_(static_cast<std::size_t>(levels) * levels, 0) {}

    void add(int a, int b) {
        auto& c = counts_[static_cast<std::size_t>(a) * levels_ + b];
        if (c == 0) touched_.push_back(static_cast<std::size_t>(a) * levels_ + b);
        ++c;
        ++total_;
    }

    std::size_t total() const { return total_; }

    GlcmStats stats() const {
        GlcmStats s;
        const double inv = 1.0 / static_cast<double>(total_);
        double mu_i = 0.0, mu_j = 0.0;
        for (auto cell : touched_) {
            const double p = counts_[cell] * inv;
            mu_i += static_cast<double>(cell / levels_) * p;
            mu_j += static_cast<double>(cell % levels_) * p;
        }
        double var_i = 0.0, var_j = 0.0, cov = 0.0;
        for (auto cell : touched_) {
            const double p = counts_[cell] * inv;
            const double i = static_cast<double>(cell / levels_);
            const double j = static_cast<double>(cell % levels_);
            const double d = i - j;
            s.contrast += p * d * d;
            s.dissimilarity += p * std::abs(d);
            s.homogeneity += p / (1.0 + d * d);
            s.asm_ += p * p;
            s.entropy -= p * std::log(p);
            var_i += p * (i - mu_i) * (i - mu_i);
            var_j += p * (j - mu_j) * (j - mu_j);
            cov += p * (i - mu_i) * (j - mu_j);
        }
        s.mean = mu_i;
        s.std = std::sqrt(var_i);
        const double denom = std::sqrt(var_i) * std::sqrt(var_j);
        s.correlation = denom > 0.0 ? cov / denom : 0.0;
        return s;
    }

    void clear() {
        for (auto cell : touched_) counts_[cell] = 0;
        touched_.clear();
        total_ = 0;
    }

private:
    std::size_t levels_;
    std::vector<std::uint32_t> counts_;
    std::vector<std::size_t> touched_;
    std::size_t total_ = 0;
};

} // namespace detail

/// Eight GLCM texture layers of `vv`, quantized over its global non-nodata range.
/// Border pixels use the truncated window; a pixel whose own value is nodata,
/// or whose window holds no valid pair, is nodata in every output layer.
inline FeatureStack glcm_features(const Grid& vv, const GlcmConfig& cfg, unsigned threads = 1) {
    cfg.validate();
    const auto& geo = vv.geometry();
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double v : vv.values()) {
        if (is_nodata(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Grid q(geo, kNodata);
    if (lo < hi) q = quantize(vv, cfg.levels, lo, hi);
    else if (lo == hi)
        for (std::size_t i = 0; i < vv.size(); ++i) q[i] = is_nodata(vv[i]) ? kNodata : 0.0;

    const long H = static_cast<long>(geo.height), W = static_cast<long>(geo.width);
    const long half = cfg.window / 2;
    std::vector<Grid> out(8, Grid(geo, kNodata));

    parallel_for(geo.height, threads, [&](std::size_t row) {
        detail::CooccurrenceAccumulator acc(cfg.levels);
        const long r = static_cast<long>(row);
        const long r0 = std::max(0L, r - half), r1 = std::min(H - 1, r + half);
        for (long c = 0; c < W; ++c) {
            if (is_nodata(q(row, c))) continue;
            const long c0 = std::max(0L, c - half), c1 = std::min(W - 1, c + half);
            for (long ar = r0; ar <= r1; ++ar) {
                for (long ac = c0; ac <= c1; ++ac) {
                    const double qa = q(ar, ac);
                    if (is_nodata(qa)) continue;
                    for (auto [dr, dc] : cfg.directions) {
                        const long br = ar + dr * cfg.distance, bc = ac + dc * cfg.distance;
                        if (br < r0 || br > r1 || bc < c0 || bc > c1) continue;
                        const double qb = q(br, bc);
                        if (is_nodata(qb)) continue;
                        acc.add(static_cast<int>(qa), static_cast<int>(qb));
                        if (cfg.symmetric) acc.add(static_cast<int>(qb), static_cast<int>(qa));
                    }
                }
            }
            if (acc.total() > 0) {
                const auto f = acc.stats().as_array();
                for (std::size_t k = 0; k < 8; ++k) out[k](row, c) = f[k];
            }
            acc.clear();
        }
    });

    FeatureStack stack(geo);
    for (std::size_t k = 0; k < 8; ++k) stack.add(glcm_feature_names()[k], std::move(out[k]));
    return stack;
}

// ---------------------------------------------------------------------------
// Spectral indices

struct BandValues {
    double g = 0.0;
    double r = 0.0;
    double nir = 0.0;
};

struct SpectralIndex {
    std::string name;
    std::vector<std::string> bands;  // subset of {"G","R","NIR"}
    // Returns nullopt where the index is undefined (zero denominator).
    std::function<std::optional<double>(const BandValues&, double wdvi_slope)> eval;
};

namespace detail {

inline std::optional<double> ratio(double num, double den) {
    if (den == 0.0) return std::nullopt;
    return num / den;
}

} // namespace detail

/// Index registry in canonical order. Names are case-sensitive.
inline const std::vector<SpectralIndex>& spectral_index_registry() {
    using detail::ratio;
    static const std::vector<SpectralIndex> registry{
        {"NDVI", {"R", "NIR"}, [](const BandValues& b, double) { return ratio(b.nir - b.r, b.nir + b.r); }},
        {"GNDVI", {"G", "NIR"}, [](const BandValues& b, double) { return ratio(b.nir - b.g, b.nir + b.g); }},
        {"NGRDI", {"G", "R"}, [](const BandValues& b, double) { return ratio(b.g - b.r, b.g + b.r); }},
        {"SR", {"R", "NIR"}, [](const BandValues& b, double) { return ratio(b.nir, b.r); }},
        {"DVI", {"R", "NIR"}, [](const BandValues& b, double) { return std::optional(b.nir - b.r); }},
        {"WDVI", {"R", "NIR"}, [](const BandValues& b, double s) { return std::optional(b.nir - s * b.r); }},
        {"SAVI", {"R", "NIR"},
         [](const BandValues& b, double) { return ratio(1.5 * (b.nir - b.r), b.nir + b.r + 0.5); }},
        {"EVI2", {"R", "NIR"},
         [](const BandValues& b, double) { return ratio(2.5 * (b.nir - b.r), b.nir + 2.4 * b.r + 1.0); }},
        {"MSAVI2", {"R", "NIR"},
         [](const BandValues& b, double) {
             const double t = 2.0 * b.nir + 1.0;
             return std::optional((t - std::sqrt(std::max(0.0, t * t - 8.0 * (b.nir - b.r)))) / 2.0);
         }},
        {"NDWI", {"G", "NIR"}, [](const BandValues& b, double) { return ratio(b.g - b.nir, b.g + b.nir); }},
        {"BI", {"G", "R"},
         [](const BandValues& b, double) { return std::optional(std::sqrt((b.r * b.r + b.g * b.g) / 2.0)); }},
        {"BI2", {"G", "R", "NIR"},
         [](const BandValues& b, double) {
             return std::optional(std::sqrt((b.r * b.r + b.g * b.g + b.nir * b.nir) / 3.0));
         }},
        {"CI", {"G", "R"}, [](const BandValues& b, double) { return ratio(b.r - b.g, b.r + b.g); }},
        {"RI", {"G", "R"}, [](const BandValues& b, double) { return ratio(b.r * b.r, b.g * b.g * b.g); }},
    };
    return registry;
}

inline std::vector<std::string> default_index_names() {
    std::vector<std::string> names;
    for (const auto& idx : spectral_index_registry()) names.push_back(idx.name);
    return names;
}

inline FeatureStack spectral_indices(const FeatureStack& bands, const std::vector<std::string>& requested,
                                     double wdvi_slope = 1.5) {
    const auto& reg = spectral_index_registry();
    std::vector<const SpectralIndex*> chosen;
    for (const auto& name : requested) {
        auto it = std::find_if(reg.begin(), reg.end(), [&](const SpectralIndex& s) { return s.name == name; });
        if (it == reg.end()) throw Error(Errc::UnknownIndexName, "unknown spectral index '" + name + "'");
        for (const auto& b : it->bands)
            if (!bands.find(b)) throw Error(Errc::MissingBand, "index " + name + " needs band " + b);
        chosen.push_back(&*it);
    }
    FeatureStack out(bands.geometry());
    const auto band_or_zero = [&](const char* n, std::size_t i) {
        auto k = bands.find(n);
        return k ? bands.layer(*k)[i] : 0.0;
    };
    for (const auto* idx : chosen) {
        Grid g(bands.geometry(), kNodata);
        for (std::size_t i = 0; i < g.size(); ++i) {
            BandValues v{band_or_zero("G", i), band_or_zero("R", i), band_or_zero("NIR", i)};
            if (is_nodata(v.g) || is_nodata(v.r) || is_nodata(v.nir)) continue;
            if (auto x = idx->eval(v, wdvi_slope); x && std::isfinite(*x)) g[i] = *x;
        }
        out.add(idx->name, std::move(g));
    }
    return out;
}

/// Concatenates [VV, GLCM layers..., index layers...].
inline FeatureStack assemble_feature_space(const Grid& vv, const FeatureStack& glcm, const FeatureStack& indices) {
    FeatureStack out(vv.geometry());
    out.add("VV", vv);
    for (const auto* part : {&glcm, &indices})
        for (std::size_t i = 0; i < part->size(); ++i) out.add(part->name(i), part->layer(i));
    return out;
}

} // namespace smfuse

#endif
