#ifndef SMFUSE_FUSE_HPP
#define SMFUSE_FUSE_HPP

#include <smfuse/error.hpp>
#include <smfuse/features.hpp>
#include <smfuse/parallel.hpp>
#include <smfuse/raster.hpp>
#include <smfuse/segment.hpp>
#include <smfuse/svr.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace smfuse {

enum class MapKind { PixelS1S2, Coarse, Scenario1, Scenario2 };

struct SoilMoistureMap {
    Grid grid;
    MapKind kind = MapKind::PixelS1S2;
    double scale_parameter = 0.0;  // Scenario1/2 only
    std::string model_ref;
    std::string seg_ref;
    std::size_t clamped = 0;  // predictions pulled back into [0, 100]

    // Row label used in accuracy reports: S1S2, Coarse, Sc1-<SP>, Sc2-<SP>.
    std::string label() const {
        const auto sp = [&] {
            return scale_parameter == std::floor(scale_parameter) ? std::to_string(static_cast<long long>(scale_parameter))
                                                                  : text::exact(scale_parameter);
        };
        switch (kind) {
        case MapKind::PixelS1S2: return "S1S2";
        case MapKind::Coarse: return "Coarse";
        case MapKind::Scenario1: return "Sc1-" + sp();
        case MapKind::Scenario2: return "Sc2-" + sp();
        }
        return "?";
    }
};

namespace detail {

inline double clamp_sm(double v, std::size_t& clamped) {
    if (v < 0.0 || v > 100.0) {
        ++clamped;
        return std::clamp(v, 0.0, 100.0);
    }
    return v;
}

inline void require_same_geometry(const Segmentation& seg, const FeatureStack& stack) {
    if (!(seg.labels.geometry() == stack.geometry()))
        throw Error(Errc::GeometryMismatch, "segmentation and feature stack geometries differ");
}

} // namespace detail

/// Per-pixel SVR prediction over the model's feature layers.
inline SoilMoistureMap predict_pixel_map(const SvrModel& model, const FeatureStack& stack, unsigned threads = 1) {
    const auto idx = stack.indices_of(model.feature_names);
    SoilMoistureMap map;
    map.kind = MapKind::PixelS1S2;
    map.grid = Grid(stack.geometry(), kNodata, "S1S2");
    const auto& geo = stack.geometry();
    std::vector<std::size_t> clamped(geo.height, 0);
    parallel_for(geo.height, threads, [&](std::size_t r) {
        std::vector<double> x(idx.size());
        for (std::size_t c = 0; c < geo.width; ++c) {
            const std::size_t i = r * geo.width + c;
            bool ok = true;
            for (std::size_t k = 0; k < idx.size() && ok; ++k) {
                x[k] = stack.layer(idx[k])[i];
                ok = !is_nodata(x[k]);
            }
            if (ok) map.grid[i] = detail::clamp_sm(svr_predict(model, x), clamped[r]);
        }
    });
    for (auto c : clamped) map.clamped += c;
    return map;
}

/// Mean of every stack layer over each object's non-nodata member pixels.
/// Result is indexed [id-1][layer]; NaN where an object has no valid pixel.
inline std::vector<std::vector<double>> object_mean_features(const Segmentation& seg, const FeatureStack& stack) {
    detail::require_same_geometry(seg, stack);
    const std::size_t K = seg.objects.size(), L = stack.size();
    std::vector<std::vector<double>> sum(K, std::vector<double>(L, 0.0));
    std::vector<std::vector<std::size_t>> cnt(K, std::vector<std::size_t>(L, 0));
    for (std::size_t i = 0; i < seg.labels.size(); ++i) {
        const int id = seg.label_at(i);
        if (id <= 0) continue;
        for (std::size_t l = 0; l < L; ++l) {
            const double v = stack.layer(l)[i];
            if (is_nodata(v)) continue;
            sum[id - 1][l] += v;
            ++cnt[id - 1][l];
        }
    }
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t l = 0; l < L; ++l)
            sum[k][l] = cnt[k][l] ? sum[k][l] / static_cast<double>(cnt[k][l]) : kNodata;
    return sum;
}

/// Scenario 1: SVR applied to each object's mean feature vector.
inline SoilMoistureMap predict_object_map(const SvrModel& model, const Segmentation& seg, const FeatureStack& stack,
                                          double scale_parameter = 0.0) {
    const auto means = object_mean_features(seg, stack.subset(model.feature_names));
    SoilMoistureMap map;
    map.kind = MapKind::Scenario1;
    map.scale_parameter = scale_parameter;
    std::vector<double> value(means.size(), kNodata);
    for (std::size_t k = 0; k < means.size(); ++k) {
        if (std::any_of(means[k].begin(), means[k].end(), is_nodata)) continue;
        value[k] = detail::clamp_sm(svr_predict(model, means[k]), map.clamped);
    }
    map.grid = Grid(stack.geometry(), kNodata);
    for (std::size_t i = 0; i < map.grid.size(); ++i) {
        const int id = seg.label_at(i);
        if (id > 0) map.grid[i] = value[static_cast<std::size_t>(id - 1)];
    }
    map.grid.set_name(map.label());
    return map;
}

/// Scenario 2: each object takes the pixel-count-weighted mean of the coarse
/// product painted onto the fine grid.
inline SoilMoistureMap fuse_coarse(const Segmentation& seg, const Grid& coarse, double scale_parameter = 0.0) {
    const Grid painted = resample_nearest(coarse, seg.labels.geometry());
    const std::size_t K = seg.objects.size();
    std::vector<double> sum(K, 0.0);
    std::vector<std::size_t> cnt(K, 0);
    for (std::size_t i = 0; i < painted.size(); ++i) {
        const int id = seg.label_at(i);
        if (id <= 0 || is_nodata(painted[i])) continue;
        sum[id - 1] += painted[i];
        ++cnt[id - 1];
    }
    SoilMoistureMap map;
    map.kind = MapKind::Scenario2;
    map.scale_parameter = scale_parameter;
    map.grid = Grid(seg.labels.geometry(), kNodata);
    for (std::size_t i = 0; i < map.grid.size(); ++i) {
        const int id = seg.label_at(i);
        if (id > 0 && cnt[id - 1] > 0)
            map.grid[i] = std::clamp(sum[id - 1] / static_cast<double>(cnt[id - 1]), 0.0, 100.0);
    }
    map.grid.set_name(map.label());
    return map;
}

inline SoilMoistureMap coarse_map(const Grid& coarse) {
    SoilMoistureMap map;
    map.kind = MapKind::Coarse;
    map.grid = coarse;
    map.grid.set_name("Coarse");
    return map;
}

/// Number of objects whose pixel set is exactly a union of whole coarse cells,
/// i.e. whose entire boundary runs along coarse-cell edges.
inline std::size_t count_cell_aligned_objects(const Segmentation& seg, const GridGeometry& coarse) {
    const auto& fine = seg.labels.geometry();
    const std::size_t K = seg.objects.size();
    // per fine pixel: coarse cell index, or npos when outside the coarse grid
    constexpr std::size_t npos = static_cast<std::size_t>(-1);
    std::vector<std::size_t> cell(fine.size(), npos);
    for (std::size_t r = 0; r < fine.height; ++r)
        for (std::size_t c = 0; c < fine.width; ++c) {
            std::size_t cr = 0, cc = 0;
            if (coarse.locate(fine.center_x(c), fine.center_y(r), cr, cc)) cell[r * fine.width + c] = cr * coarse.width + cc;
        }
    // label shared by every fine pixel of a cell, 0 if mixed
    std::vector<int> cell_label(coarse.size(), -1);
    for (std::size_t i = 0; i < fine.size(); ++i) {
        if (cell[i] == npos) continue;
        int& cl = cell_label[cell[i]];
        const int id = seg.label_at(i);
        if (cl == -1) cl = id;
        else if (cl != id) cl = 0;
    }
    std::vector<std::uint8_t> aligned(K, 1);
    for (std::size_t i = 0; i < fine.size(); ++i) {
        const int id = seg.label_at(i);
        if (id <= 0) continue;
        if (cell[i] == npos || cell_label[cell[i]] != id) aligned[id - 1] = 0;
    }
    return static_cast<std::size_t>(std::count(aligned.begin(), aligned.end(), 1));
}

/// Binary 8-bit PGM quicklook: linear stretch [lo, hi] -> [0, 255], nodata -> 0.
inline void write_pgm(const Grid& grid, const std::filesystem::path& path, double lo = 0.0, double hi = 40.0) {
    std::string out = "P5\n" + std::to_string(grid.width()) + " " + std::to_string(grid.height()) + "\n255\n";
    out.reserve(out.size() + grid.size());
    for (double v : grid.values()) {
        int level = 0;
        if (!is_nodata(v)) level = static_cast<int>(std::lround(std::clamp((v - lo) / (hi - lo), 0.0, 1.0) * 255.0));
        out.push_back(static_cast<char>(static_cast<unsigned char>(level)));
    }
    detail::spill(path, out);
}

} // namespace smfuse

#endif
