#ifndef SMFUSE_SYNTH_HPP
#define SMFUSE_SYNTH_HPP

#include <smfuse/error.hpp>
#include <smfuse/features.hpp>
#include <smfuse/random.hpp>
#include <smfuse/raster.hpp>
#include <smfuse/text.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace smfuse {

/// Linear-in-SM backscatter with vegetation mixing, in dB.
struct BackscatterParams {
    double c0 = -25.0;  // dB, bare dry soil
    double c1 = 0.25;   // dB per vol%
    double c2 = 6.0;    // dB, full canopy
};

struct SceneParams {
    std::size_t width = 256;
    std::size_t height = 256;
    double pixel_size = 10.0;
    double sm_lo = 3.2;
    double sm_hi = 33.5;
    double smoothness = 24.0;      // truth correlation length, pixels
    double veg_smoothness = 12.0;  // vegetation correlation length, pixels
    std::size_t coarse_factor = 32;
    double coarse_noise_sd = 0.5;
    double coarse_bias = 0.0;
    int speckle_looks = 4;
    bool speckle = true;
    double optics_noise_sd = 0.01;
    std::size_t n_insitu = 35;
    double insitu_noise_sd = 0.5;
    BackscatterParams backscatter;
    std::uint64_t seed = 42;

    GridGeometry geometry() const {
        GridGeometry g;
        g.width = width;
        g.height = height;
        g.pixel_size = pixel_size;
        g.origin_x = 0.0;
        g.origin_y = static_cast<double>(height) * pixel_size;
        return g;
    }

    void validate() const {
        geometry().validate();
        if (!(sm_lo < sm_hi) || sm_lo < 0.0 || sm_hi > 100.0)
            throw Error(Errc::DegenerateRange, "sm range must satisfy 0 <= lo < hi <= 100");
        if (coarse_factor < 1 || width % coarse_factor != 0 || height % coarse_factor != 0)
            throw Error(Errc::NonDivisibleFactor, "coarse_factor must divide width and height");
        if (speckle_looks < 1) throw Error(Errc::InvalidConfig, "speckle_looks must be >= 1");
        if (smoothness < 0.0 || veg_smoothness < 0.0) throw Error(Errc::InvalidConfig, "smoothness must be >= 0");
        if (n_insitu > width * height) throw Error(Errc::InvalidConfig, "more in-situ points than pixels");
        if (coarse_noise_sd < 0.0 || insitu_noise_sd < 0.0 || optics_noise_sd < 0.0)
            throw Error(Errc::InvalidConfig, "noise standard deviations must be >= 0");
    }
};

// Per-component seeds are fixed offsets from the master seed.
namespace seed_offset {
inline constexpr std::uint64_t truth = 1, vegetation = 2, speckle = 3, optics = 4, coarse = 5, insitu = 6;
}

struct SceneBundle {
    Grid truth_sm;
    Grid veg_fraction;
    Grid vv_db;
    FeatureStack bands;  // G, R, NIR
    Grid coarse_sm;
    std::vector<PointSample> insitu;
    SceneParams params;
};

namespace detail {

// Separable triangular smoothing with weights (radius + 1 - |k|), truncated
// and renormalized at the borders.
inline std::vector<double> triangular_smooth(const std::vector<double>& in, std::size_t W, std::size_t H, double radius) {
    const long R = static_cast<long>(std::floor(radius));
    if (R <= 0) return in;
    std::vector<double> w(static_cast<std::size_t>(2 * R + 1));
    for (long k = -R; k <= R; ++k) w[static_cast<std::size_t>(k + R)] = static_cast<double>(R + 1 - std::abs(k));
    std::vector<double> tmp(in.size()), out(in.size());
    const long Wl = static_cast<long>(W), Hl = static_cast<long>(H);
    for (long r = 0; r < Hl; ++r)
        for (long c = 0; c < Wl; ++c) {
            double s = 0.0, ws = 0.0;
            for (long k = std::max(-R, -c); k <= std::min(R, Wl - 1 - c); ++k) {
                const double wk = w[static_cast<std::size_t>(k + R)];
                s += wk * in[static_cast<std::size_t>(r * Wl + c + k)];
                ws += wk;
            }
            tmp[static_cast<std::size_t>(r * Wl + c)] = s / ws;
        }
    for (long r = 0; r < Hl; ++r)
        for (long c = 0; c < Wl; ++c) {
            double s = 0.0, ws = 0.0;
            for (long k = std::max(-R, -r); k <= std::min(R, Hl - 1 - r); ++k) {
                const double wk = w[static_cast<std::size_t>(k + R)];
                s += wk * tmp[static_cast<std::size_t>((r + k) * Wl + c)];
                ws += wk;
            }
            out[static_cast<std::size_t>(r * Wl + c)] = s / ws;
        }
    return out;
}

} // namespace detail

/// Seeded smooth random field rescaled so that its minimum is lo and maximum hi.
inline Grid gaussian_field(const GridGeometry& geometry, double smoothness, double lo, double hi, std::uint64_t seed) {
    if (!(lo < hi)) throw Error(Errc::DegenerateRange, "gaussian_field needs lo < hi");
    if (!(smoothness >= 0.0)) throw Error(Errc::InvalidConfig, "smoothness must be >= 0");
    geometry.validate();
    Rng rng(seed);
    std::vector<double> v(geometry.size());
    for (auto& x : v) x = standard_normal(rng);
    v = detail::triangular_smooth(v, geometry.width, geometry.height, smoothness);
    const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
    const double a = *mn, b = *mx;
    for (auto& x : v) {
        const double t = b > a ? (x - a) / (b - a) : 0.0;
        x = lo * (1.0 - t) + hi * t;
    }
    return Grid(geometry, std::move(v));
}

/// VV backscatter in dB: c0 + c1*sm*(1-v) + c2*v, plus 10*log10 of unit-mean
/// gamma speckle with shape = looks when `looks` is set.
inline Grid forward_backscatter(const Grid& sm, const Grid& veg, const BackscatterParams& p, std::optional<int> looks,
                                std::uint64_t seed) {
    if (!(sm.geometry() == veg.geometry())) throw Error(Errc::GeometryMismatch, "sm and vegetation grids differ");
    if (looks && *looks < 1) throw Error(Errc::InvalidConfig, "looks must be >= 1");
    Rng rng(seed);
    Grid out(sm.geometry(), kNodata, "VV");
    for (std::size_t i = 0; i < sm.size(); ++i) {
        double speckle = 1.0;
        if (looks) speckle = gamma_variate(rng, *looks, 1.0 / *looks);
        if (is_nodata(sm[i]) || is_nodata(veg[i])) continue;
        const double v = veg[i];
        const double db = p.c0 + p.c1 * sm[i] * (1.0 - v) + p.c2 * v;
        out[i] = looks ? db + 10.0 * std::log10(speckle) : db;
    }
    return out;
}

/// Green, red and NIR reflectance from vegetation fraction, with seeded
/// Gaussian noise, clamped to [0, 1].
inline FeatureStack forward_optics(const Grid& veg, double noise_sd, std::uint64_t seed) {
    Rng rng(seed);
    Grid g(veg.geometry(), kNodata), r(veg.geometry(), kNodata), nir(veg.geometry(), kNodata);
    for (std::size_t i = 0; i < veg.size(); ++i) {
        double eg = 0.0, er = 0.0, en = 0.0;
        if (noise_sd > 0.0) {
            eg = noise_sd * standard_normal(rng);
            er = noise_sd * standard_normal(rng);
            en = noise_sd * standard_normal(rng);
        }
        const double v = veg[i];
        if (is_nodata(v)) continue;
        g[i] = std::clamp(0.12 - 0.02 * v + eg, 0.0, 1.0);
        r[i] = std::clamp(0.25 - 0.15 * v + er, 0.0, 1.0);
        nir[i] = std::clamp(0.15 + 0.35 * v + en, 0.0, 1.0);
    }
    FeatureStack bands(veg.geometry());
    bands.add("G", std::move(g));
    bands.add("R", std::move(r));
    bands.add("NIR", std::move(nir));
    return bands;
}

inline SceneBundle generate_scene(const SceneParams& params) {
    params.validate();
    const auto geo = params.geometry();
    const auto s = params.seed;
    SceneBundle scene;
    scene.params = params;
    scene.truth_sm = gaussian_field(geo, params.smoothness, params.sm_lo, params.sm_hi, s + seed_offset::truth);
    scene.truth_sm.set_name("truth_sm");
    scene.veg_fraction = gaussian_field(geo, params.veg_smoothness, 0.0, 1.0, s + seed_offset::vegetation);
    scene.veg_fraction.set_name("veg_fraction");
    scene.vv_db = forward_backscatter(scene.truth_sm, scene.veg_fraction, params.backscatter,
                                      params.speckle ? std::optional<int>(params.speckle_looks) : std::nullopt,
                                      s + seed_offset::speckle);
    scene.bands = forward_optics(scene.veg_fraction, params.optics_noise_sd, s + seed_offset::optics);

    scene.coarse_sm = block_average(scene.truth_sm, params.coarse_factor);
    scene.coarse_sm.set_name("coarse_sm");
    {
        Rng rng(s + seed_offset::coarse);
        for (std::size_t i = 0; i < scene.coarse_sm.size(); ++i) {
            const double e = params.coarse_noise_sd > 0.0 ? params.coarse_noise_sd * standard_normal(rng) : 0.0;
            if (params.coarse_noise_sd == 0.0 && params.coarse_bias == 0.0) continue;
            scene.coarse_sm[i] = std::clamp(scene.coarse_sm[i] + params.coarse_bias + e, 0.0, 100.0);
        }
    }
    {
        Rng rng(s + seed_offset::insitu);
        std::vector<std::size_t> pool(geo.size());
        std::iota(pool.begin(), pool.end(), 0);
        for (std::size_t k = 0; k < params.n_insitu; ++k) {
            std::swap(pool[k], pool[k + uniform_index(rng, pool.size() - k)]);
            const std::size_t i = pool[k];
            const double e = params.insitu_noise_sd > 0.0 ? params.insitu_noise_sd * standard_normal(rng) : 0.0;
            const double sm = std::clamp(scene.truth_sm[i] + e, 0.0, 100.0);
            scene.insitu.push_back({geo.center_x(i % geo.width), geo.center_y(i / geo.width), sm});
        }
    }
    return scene;
}

// ---------------------------------------------------------------------------
// Manifest (key=value) and scene directories

inline std::string format_scene_manifest(const SceneParams& p) {
    std::ostringstream o;
    o << "width=" << p.width << "\n"
      << "height=" << p.height << "\n"
      << "pixel_size=" << text::exact(p.pixel_size) << "\n"
      << "sm_lo=" << text::exact(p.sm_lo) << "\n"
      << "sm_hi=" << text::exact(p.sm_hi) << "\n"
      << "smoothness=" << text::exact(p.smoothness) << "\n"
      << "veg_smoothness=" << text::exact(p.veg_smoothness) << "\n"
      << "coarse_factor=" << p.coarse_factor << "\n"
      << "coarse_noise_sd=" << text::exact(p.coarse_noise_sd) << "\n"
      << "coarse_bias=" << text::exact(p.coarse_bias) << "\n"
      << "speckle_looks=" << p.speckle_looks << "\n"
      << "speckle=" << (p.speckle ? 1 : 0) << "\n"
      << "optics_noise_sd=" << text::exact(p.optics_noise_sd) << "\n"
      << "n_insitu=" << p.n_insitu << "\n"
      << "insitu_noise_sd=" << text::exact(p.insitu_noise_sd) << "\n"
      << "c0=" << text::exact(p.backscatter.c0) << "\n"
      << "c1=" << text::exact(p.backscatter.c1) << "\n"
      << "c2=" << text::exact(p.backscatter.c2) << "\n"
      << "seed=" << p.seed << "\n";
    return o.str();
}

/// Applies one `key=value` scene setting; returns false for an unknown key.
inline bool set_scene_param(SceneParams& p, const std::string& key, const std::string& value) {
    const auto num = [&] {
        auto v = text::parse_double(value);
        if (!v) throw Error(Errc::ConfigParse, "'" + key + "' expects a number, got '" + value + "'");
        return *v;
    };
    const auto count = [&] {
        auto v = text::parse_int(value);
        if (!v || *v < 0) throw Error(Errc::ConfigParse, "'" + key + "' expects a nonnegative integer, got '" + value + "'");
        return *v;
    };
    if (key == "width") p.width = static_cast<std::size_t>(count());
    else if (key == "height") p.height = static_cast<std::size_t>(count());
    else if (key == "pixel_size") p.pixel_size = num();
    else if (key == "sm_lo") p.sm_lo = num();
    else if (key == "sm_hi") p.sm_hi = num();
    else if (key == "smoothness") p.smoothness = num();
    else if (key == "veg_smoothness") p.veg_smoothness = num();
    else if (key == "coarse_factor") p.coarse_factor = static_cast<std::size_t>(count());
    else if (key == "coarse_noise_sd") p.coarse_noise_sd = num();
    else if (key == "coarse_bias") p.coarse_bias = num();
    else if (key == "speckle_looks") p.speckle_looks = static_cast<int>(count());
    else if (key == "speckle") p.speckle = count() != 0;
    else if (key == "optics_noise_sd") p.optics_noise_sd = num();
    else if (key == "n_insitu") p.n_insitu = static_cast<std::size_t>(count());
    else if (key == "insitu_noise_sd") p.insitu_noise_sd = num();
    else if (key == "c0") p.backscatter.c0 = num();
    else if (key == "c1") p.backscatter.c1 = num();
    else if (key == "c2") p.backscatter.c2 = num();
    else if (key == "seed") p.seed = static_cast<std::uint64_t>(count());
    else return false;
    return true;
}

inline SceneParams parse_scene_manifest(const std::string& body) {
    SceneParams p;
    std::istringstream in(body);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = text::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string_view::npos) throw LineError(Errc::ConfigParse, lineno, "expected key=value");
        const std::string key(text::trim(t.substr(0, eq))), value(text::trim(t.substr(eq + 1)));
        try {
            if (!set_scene_param(p, key, value)) throw LineError(Errc::UnknownKey, lineno, "unknown key '" + key + "'");
        } catch (const LineError&) {
            throw;
        } catch (const Error& e) {
            throw LineError(e.code(), lineno, e.what());
        }
    }
    return p;
}

inline void write_scene(const SceneBundle& scene, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string());
    write_grid(scene.truth_sm, dir / "truth_sm.smrg");
    write_grid(scene.veg_fraction, dir / "veg_fraction.smrg");
    write_grid(scene.vv_db, dir / "vv_db.smrg");
    for (const char* b : {"G", "R", "NIR"}) write_grid(scene.bands.layer(std::string(b)), dir / (std::string(b) + ".smrg"));
    write_grid(scene.coarse_sm, dir / "coarse_sm.smrg");
    write_points(scene.insitu, dir / "insitu.csv");
    detail::spill(dir / "params.txt", format_scene_manifest(scene.params));
}

/// Loads a scene directory. vv_db, G, R, NIR, coarse_sm and insitu.csv are
/// required; truth_sm, veg_fraction and params.txt are optional.
inline SceneBundle read_scene(const std::filesystem::path& dir) {
    SceneBundle scene;
    if (std::filesystem::exists(dir / "params.txt")) scene.params = parse_scene_manifest(detail::slurp(dir / "params.txt"));
    scene.vv_db = read_grid(dir / "vv_db.smrg");
    scene.bands = FeatureStack(scene.vv_db.geometry());
    for (const char* b : {"G", "R", "NIR"}) scene.bands.add(b, read_grid(dir / (std::string(b) + ".smrg")));
    scene.coarse_sm = read_grid(dir / "coarse_sm.smrg");
    scene.insitu = read_points(dir / "insitu.csv");
    if (std::filesystem::exists(dir / "truth_sm.smrg")) scene.truth_sm = read_grid(dir / "truth_sm.smrg");
    if (std::filesystem::exists(dir / "veg_fraction.smrg")) scene.veg_fraction = read_grid(dir / "veg_fraction.smrg");
    return scene;
}

} // namespace smfuse

#endif
