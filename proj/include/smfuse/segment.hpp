#ifndef SMFUSE_SEGMENT_HPP
#define SMFUSE_SEGMENT_HPP

#include <smfuse/error.hpp>
#include <smfuse/features.hpp>
#include <smfuse/random.hpp>
#include <smfuse/raster.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace smfuse {

/// Details of one accepted merge, reported to SegmentationConfig::on_merge.
struct MergeEvent {
    int kept = 0;      // surviving working id
    int absorbed = 0;  // working id merged into `kept`
    double delta_h = 0.0;
    double delta_color = 0.0;
    double delta_shape = 0.0;
    std::size_t merged_size = 0;
};

struct SegmentationConfig {
    double scale_parameter = 64.0;
    double w_color = 0.9;
    double w_compact = 0.5;
    std::vector<double> band_weights;  // empty: equal weights
    // Each layer is linearly stretched to [0, stretch] over its valid range
    // before heterogeneity is measured; nullopt uses raw values.
    std::optional<double> stretch = 30000.0;
    // Treatment order within a sweep: ascending ids unless shuffled with `seed`.
    bool shuffle_order = false;
    std::uint64_t seed = 0;
    std::function<void(const MergeEvent&)> on_merge;

    void validate(std::size_t bands) const {
        if (!(scale_parameter > 0.0) || !std::isfinite(scale_parameter))
            throw Error(Errc::InvalidConfig, "scale parameter must be > 0");
        if (!(w_color >= 0.0 && w_color <= 1.0) || !(w_compact >= 0.0 && w_compact <= 1.0))
            throw Error(Errc::InvalidConfig, "weights must lie in [0,1]");
        if (!band_weights.empty()) {
            if (band_weights.size() != bands) throw Error(Errc::InvalidConfig, "one band weight per layer required");
            double s = 0.0;
            for (double w : band_weights) {
                if (!(w >= 0.0)) throw Error(Errc::InvalidConfig, "band weights must be nonnegative");
                s += w;
            }
            if (!(s > 0.0)) throw Error(Errc::InvalidConfig, "at least one band weight must be positive");
        }
        if (stretch && !(*stretch > 0.0)) throw Error(Errc::InvalidConfig, "stretch must be > 0");
    }
};

struct BoundingBox {
    std::size_t row_min = 0, row_max = 0, col_min = 0, col_max = 0;

    std::size_t perimeter() const { return 2 * ((row_max - row_min + 1) + (col_max - col_min + 1)); }
    BoundingBox united(const BoundingBox& o) const {
        return {std::min(row_min, o.row_min), std::max(row_max, o.row_max), std::min(col_min, o.col_min),
                std::max(col_max, o.col_max)};
    }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ObjectRecord {
    int id = 0;
    std::size_t n = 0;
    std::vector<double> sum;    // per band, in the segmentation's (stretched) units
    std::vector<double> sumsq;
    double perimeter = 0.0;     // meters
    std::size_t edge_count = 0; // perimeter in pixel edges
    BoundingBox bbox;
    std::vector<int> neighbors; // ascending ids; 0 never appears

    double mean(std::size_t b) const { return sum[b] / static_cast<double>(n); }
    double variance(std::size_t b) const {
        const double m = mean(b);
        return std::max(0.0, sumsq[b] / static_cast<double>(n) - m * m);
    }
};

/// Label map (ids 1..K, 0 for nodata) and per-object statistics (objects[id-1]).
struct Segmentation {
    Grid labels;
    std::vector<ObjectRecord> objects;
    std::vector<std::string> band_names;
    std::vector<double> band_offset;  // value = raw * band_scale + band_offset
    std::vector<double> band_scale;
    std::size_t nodata_count = 0;
    std::size_t sweeps = 0;

    std::size_t object_count() const { return objects.size(); }
    const ObjectRecord& object(int id) const { return objects.at(static_cast<std::size_t>(id - 1)); }
    int label_at(std::size_t i) const { return static_cast<int>(labels[i]); }
};

namespace detail {

struct WorkObject {
    std::size_t n = 0;
    std::vector<double> sum, sumsq;
    std::size_t edges = 0;
    BoundingBox bbox;
    std::vector<std::pair<int, std::size_t>> nbrs;  // (id, shared edge count), ascending id
    double h_color = 0.0;
    bool alive = true;
};

class RegionMerger {
public:
    RegionMerger(std::vector<WorkObject> objs, std::vector<double> weights, const SegmentationConfig& cfg)
        : objs_(std::move(objs)), w_(std::move(weights)), cfg_(cfg), threshold_(cfg.scale_parameter * cfg.scale_parameter) {
        for (auto& o : objs_)
            if (o.alive) o.h_color = color_h(o.n, o.sum, o.sumsq);
    }

    std::size_t run(std::vector<int>& parent) {
        std::size_t sweeps = 0;
        std::vector<int> order;
        std::vector<std::uint8_t> handled(objs_.size());
        Rng rng(cfg_.seed);
        while (true) {
            ++sweeps;
            order.clear();
            for (std::size_t i = 0; i < objs_.size(); ++i)
                if (objs_[i].alive) order.push_back(static_cast<int>(i));
            if (cfg_.shuffle_order)
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
            std::fill(handled.begin(), handled.end(), 0);
            std::size_t merges = 0;
            for (int id : order) {
                if (!objs_[id].alive || handled[id]) continue;
                const auto best = best_neighbor(id);
                if (best.id < 0 || !(best.dh < threshold_) || handled[best.id]) continue;
                if (best_neighbor(best.id).id != id) continue;
                const int keep = std::min(id, best.id), gone = std::max(id, best.id);
                merge(keep, gone, best);
                parent[gone] = keep;
                handled[keep] = 1;
                ++merges;
            }
            if (merges == 0) break;
        }
        return sweeps;
    }

    const std::vector<WorkObject>& objects() const { return objs_; }

private:
    struct Candidate {
        int id = -1;
        double dh = std::numeric_limits<double>::infinity();
        double dcolor = 0.0;
        double dshape = 0.0;
    };

    double color_h(std::size_t n, const std::vector<double>& sum, const std::vector<double>& sumsq) const {
        const double nn = static_cast<double>(n);
        double h = 0.0;
        for (std::size_t b = 0; b < w_.size(); ++b) {
            if (w_[b] == 0.0) continue;
            const double m = sum[b] / nn;
            h += w_[b] * nn * std::sqrt(std::max(0.0, sumsq[b] / nn - m * m));
        }
        return h;
    }

    static double compactness(std::size_t n, std::size_t edges) {
        return static_cast<double>(edges) * std::sqrt(static_cast<double>(n));
    }
    static double smoothness(std::size_t n, std::size_t edges, const BoundingBox& bb) {
        return static_cast<double>(n) * static_cast<double>(edges) / static_cast<double>(bb.perimeter());
    }

    Candidate evaluate(int a, int b, std::size_t shared) const {
        const auto& A = objs_[a];
        const auto& B = objs_[b];
        const std::size_t n = A.n + B.n;
        thread_local std::vector<double> s, q;
        s.resize(w_.size());
        q.resize(w_.size());
        for (std::size_t k = 0; k < w_.size(); ++k) {
            s[k] = A.sum[k] + B.sum[k];
            q[k] = A.sumsq[k] + B.sumsq[k];
        }
        const double dcolor = color_h(n, s, q) - A.h_color - B.h_color;
        const std::size_t edges = A.edges + B.edges - 2 * shared;
        const BoundingBox bb = A.bbox.united(B.bbox);
        const double dcmp = compactness(n, edges) - compactness(A.n, A.edges) - compactness(B.n, B.edges);
        const double dsmooth =
            smoothness(n, edges, bb) - smoothness(A.n, A.edges, A.bbox) - smoothness(B.n, B.edges, B.bbox);
        const double dshape = cfg_.w_compact * dcmp + (1.0 - cfg_.w_compact) * dsmooth;
        Candidate c;
        c.id = b;
        c.dcolor = dcolor;
        c.dshape = dshape;
        c.dh = cfg_.w_color * dcolor + (1.0 - cfg_.w_color) * dshape;
        return c;
    }

    Candidate best_neighbor(int a) const {
        Candidate best;
        for (auto [b, shared] : objs_[a].nbrs) {
            const Candidate c = evaluate(a, b, shared);
            if (c.dh < best.dh || (c.dh == best.dh && b < best.id)) best = c;
        }
        return best;
    }

    static void add_edge(std::vector<std::pair<int, std::size_t>>& list, int id, std::size_t count) {
        auto it = std::lower_bound(list.begin(), list.end(), std::make_pair(id, std::size_t{0}));
        if (it != list.end() && it->first == id) it->second += count;
        else list.insert(it, {id, count});
    }
    static void remove_edge(std::vector<std::pair<int, std::size_t>>& list, int id) {
        auto it = std::lower_bound(list.begin(), list.end(), std::make_pair(id, std::size_t{0}));
        if (it != list.end() && it->first == id) list.erase(it);
    }

    void merge(int keep, int gone, const Candidate& c) {
        auto& K = objs_[keep];
        auto& G = objs_[gone];
        std::size_t shared = 0;
        for (auto [id, cnt] : K.nbrs)
            if (id == gone) shared = cnt;
        K.n += G.n;
        for (std::size_t b = 0; b < w_.size(); ++b) {
            K.sum[b] += G.sum[b];
            K.sumsq[b] += G.sumsq[b];
        }
        K.edges = K.edges + G.edges - 2 * shared;
        K.bbox = K.bbox.united(G.bbox);
        K.h_color = color_h(K.n, K.sum, K.sumsq);

        remove_edge(K.nbrs, gone);
        for (auto [id, cnt] : G.nbrs) {
            if (id == keep) continue;
            auto& other = objs_[id].nbrs;
            remove_edge(other, gone);
            add_edge(other, keep, cnt);
            add_edge(K.nbrs, id, cnt);
        }
        G.alive = false;
        G.nbrs.clear();
        G.nbrs.shrink_to_fit();

        if (cfg_.on_merge) cfg_.on_merge({keep, gone, c.dh, c.dcolor, c.dshape, K.n});
    }

    std::vector<WorkObject> objs_;
    std::vector<double> w_;
    const SegmentationConfig& cfg_;
    double threshold_;
};

inline int find_root(std::vector<int>& parent, int i) {
    while (parent[i] != i) {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    return i;
}

} // namespace detail

/// Multiresolution region merging. Starting from single pixels, an object
/// merges with its minimum-cost neighbour when the two are mutual best
/// fits and the fusion cost is below scale_parameter^2. Sweeps repeat
/// until one completes without a merge. Pixels that are nodata in any
/// layer get label 0 and never merge.
inline Segmentation segment(const FeatureStack& stack, const SegmentationConfig& cfg) {
    if (stack.empty()) throw Error(Errc::EmptyStack, "segmentation needs at least one layer");
    const std::size_t B = stack.size();
    cfg.validate(B);
    const auto& geo = stack.geometry();
    const std::size_t W = geo.width, H = geo.height, N = geo.size();

    std::vector<double> weights = cfg.band_weights.empty() ? std::vector<double>(B, 1.0) : cfg.band_weights;
    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (auto& w : weights) w /= wsum;

    Segmentation seg;
    seg.band_names = stack.names();
    seg.band_offset.assign(B, 0.0);
    seg.band_scale.assign(B, 1.0);

    std::vector<std::uint8_t> valid(N, 1);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N; ++i)
            if (is_nodata(stack.layer(b)[i])) valid[i] = 0;
    if (std::none_of(valid.begin(), valid.end(), [](auto v) { return v != 0; }))
        throw Error(Errc::AllNodata, "every pixel is nodata in at least one layer");

    if (cfg.stretch) {
        for (std::size_t b = 0; b < B; ++b) {
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (std::size_t i = 0; i < N; ++i) {
                if (!valid[i]) continue;
                lo = std::min(lo, stack.layer(b)[i]);
                hi = std::max(hi, stack.layer(b)[i]);
            }
            const double scale = hi > lo ? *cfg.stretch / (hi - lo) : 0.0;
            seg.band_scale[b] = scale;
            seg.band_offset[b] = -lo * scale;
        }
    }

    // Working ids are pixel indices; nodata pixels get dead placeholders.
    std::vector<detail::WorkObject> objs(N);
    for (std::size_t i = 0; i < N; ++i) {
        auto& o = objs[i];
        if (!valid[i]) {
            o.alive = false;
            continue;
        }
        const std::size_t r = i / W, c = i % W;
        o.n = 1;
        o.sum.resize(B);
        o.sumsq.resize(B);
        for (std::size_t b = 0; b < B; ++b) {
            const double v = stack.layer(b)[i] * seg.band_scale[b] + seg.band_offset[b];
            o.sum[b] = v;
            o.sumsq[b] = v * v;
        }
        o.edges = 4;
        o.bbox = {r, r, c, c};
        // neighbours in ascending index order: up, left, right, down
        if (r > 0 && valid[i - W]) o.nbrs.emplace_back(static_cast<int>(i - W), 1);
        if (c > 0 && valid[i - 1]) o.nbrs.emplace_back(static_cast<int>(i - 1), 1);
        if (c + 1 < W && valid[i + 1]) o.nbrs.emplace_back(static_cast<int>(i + 1), 1);
        if (r + 1 < H && valid[i + W]) o.nbrs.emplace_back(static_cast<int>(i + W), 1);
    }

    std::vector<int> parent(N);
    std::iota(parent.begin(), parent.end(), 0);
    detail::RegionMerger merger(std::move(objs), weights, cfg);
    seg.sweeps = merger.run(parent);
    const auto& work = merger.objects();

    // Compact ids 1..K in raster order of first appearance.
    std::vector<int> final_id(N, 0);
    seg.labels = Grid(geo, 0.0, "labels");
    int next = 0;
    for (std::size_t i = 0; i < N; ++i) {
        if (!valid[i]) {
            ++seg.nodata_count;
            continue;
        }
        const int root = detail::find_root(parent, static_cast<int>(i));
        if (final_id[root] == 0) {
            final_id[root] = ++next;
            const auto& w = work[root];
            ObjectRecord rec;
            rec.id = next;
            rec.n = w.n;
            rec.sum = w.sum;
            rec.sumsq = w.sumsq;
            rec.edge_count = w.edges;
            rec.perimeter = static_cast<double>(w.edges) * geo.pixel_size;
            rec.bbox = w.bbox;
            seg.objects.push_back(std::move(rec));
        }
        seg.labels[i] = final_id[root];
    }
    for (std::size_t i = 0; i < N; ++i) {
        if (!valid[i] || work[i].n == 0 || !work[i].alive) continue;
        auto& rec = seg.objects[static_cast<std::size_t>(final_id[i] - 1)];
        for (auto [nb, cnt] : work[i].nbrs) rec.neighbors.push_back(final_id[nb]);
        std::sort(rec.neighbors.begin(), rec.neighbors.end());
    }
    return seg;
}

/// Partition in which every valid pixel is its own object (ids in raster order).
inline Segmentation singleton_segmentation(const FeatureStack& stack) {
    if (stack.empty()) throw Error(Errc::EmptyStack, "segmentation needs at least one layer");
    const auto& geo = stack.geometry();
    const std::size_t B = stack.size(), W = geo.width, H = geo.height, N = geo.size();
    Segmentation seg;
    seg.band_names = stack.names();
    seg.band_offset.assign(B, 0.0);
    seg.band_scale.assign(B, 1.0);
    seg.labels = Grid(geo, 0.0, "labels");
    std::vector<int> id(N, 0);
    for (std::size_t i = 0; i < N; ++i) {
        bool ok = true;
        for (std::size_t b = 0; b < B; ++b) ok = ok && !is_nodata(stack.layer(b)[i]);
        if (!ok) {
            ++seg.nodata_count;
            continue;
        }
        ObjectRecord rec;
        rec.id = static_cast<int>(seg.objects.size()) + 1;
        rec.n = 1;
        for (std::size_t b = 0; b < B; ++b) {
            rec.sum.push_back(stack.layer(b)[i]);
            rec.sumsq.push_back(stack.layer(b)[i] * stack.layer(b)[i]);
        }
        rec.edge_count = 4;
        rec.perimeter = 4.0 * geo.pixel_size;
        rec.bbox = {i / W, i / W, i % W, i % W};
        id[i] = rec.id;
        seg.labels[i] = rec.id;
        seg.objects.push_back(std::move(rec));
    }
    if (seg.objects.empty()) throw Error(Errc::AllNodata, "every pixel is nodata in at least one layer");
    for (std::size_t i = 0; i < N; ++i) {
        if (!id[i]) continue;
        auto& nb = seg.objects[static_cast<std::size_t>(id[i] - 1)].neighbors;
        const std::size_t r = i / W, c = i % W;
        if (r > 0 && id[i - W]) nb.push_back(id[i - W]);
        if (c > 0 && id[i - 1]) nb.push_back(id[i - 1]);
        if (c + 1 < W && id[i + 1]) nb.push_back(id[i + 1]);
        if (r + 1 < H && id[i + W]) nb.push_back(id[i + W]);
    }
    return seg;
}

/// Object records computed from scratch for a compact label map (ids 1..K,
/// 0 = nodata). Band values are taken as raw * scale + offset.
inline std::vector<ObjectRecord> recompute_objects(const Grid& labels, const FeatureStack& stack,
                                                   std::span<const double> offset = {},
                                                   std::span<const double> scale = {}) {
    const auto& geo = labels.geometry();
    if (!stack.empty() && !(stack.geometry() == geo))
        throw Error(Errc::GeometryMismatch, "label grid and feature stack geometries differ");
    const std::size_t B = stack.size(), W = geo.width, H = geo.height;
    int K = 0;
    for (double v : labels.values()) {
        if (is_nodata(v) || v < 0.0 || v != std::floor(v))
            throw Error(Errc::SchemaMismatch, "labels must be nonnegative integers");
        K = std::max(K, static_cast<int>(v));
    }
    std::vector<ObjectRecord> objs(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        objs[k].id = k + 1;
        objs[k].sum.assign(B, 0.0);
        objs[k].sumsq.assign(B, 0.0);
        objs[k].bbox = {H, 0, W, 0};
    }
    const auto id_at = [&](std::size_t r, std::size_t c) { return static_cast<int>(labels[r * W + c]); };
    for (std::size_t r = 0; r < H; ++r)
        for (std::size_t c = 0; c < W; ++c) {
            const int id = id_at(r, c);
            if (id == 0) continue;
            auto& o = objs[static_cast<std::size_t>(id - 1)];
            ++o.n;
            for (std::size_t b = 0; b < B; ++b) {
                const double v = stack.layer(b)[r * W + c] * (scale.empty() ? 1.0 : scale[b]) + (offset.empty() ? 0.0 : offset[b]);
                o.sum[b] += v;
                o.sumsq[b] += v * v;
            }
            o.bbox = {std::min(o.bbox.row_min, r), std::max(o.bbox.row_max, r), std::min(o.bbox.col_min, c),
                      std::max(o.bbox.col_max, c)};
            const int nb[4] = {r > 0 ? id_at(r - 1, c) : -1, c > 0 ? id_at(r, c - 1) : -1,
                               c + 1 < W ? id_at(r, c + 1) : -1, r + 1 < H ? id_at(r + 1, c) : -1};
            for (int other : nb) {
                if (other == id) continue;
                ++o.edge_count;
                if (other > 0) o.neighbors.push_back(other);
            }
        }
    for (auto& o : objs) {
        if (o.n == 0) throw Error(Errc::SchemaMismatch, "label " + std::to_string(o.id) + " has no pixels");
        o.perimeter = static_cast<double>(o.edge_count) * geo.pixel_size;
        std::sort(o.neighbors.begin(), o.neighbors.end());
        o.neighbors.erase(std::unique(o.neighbors.begin(), o.neighbors.end()), o.neighbors.end());
    }
    return objs;
}

/// Rebuilds a segmentation from a saved label grid, with statistics in raw units.
inline Segmentation segmentation_from_labels(Grid labels, const FeatureStack& stack) {
    Segmentation seg;
    seg.objects = recompute_objects(labels, stack);
    seg.band_names = stack.names();
    seg.band_offset.assign(stack.size(), 0.0);
    seg.band_scale.assign(stack.size(), 1.0);
    for (double v : labels.values()) seg.nodata_count += v == 0.0;
    seg.labels = std::move(labels);
    return seg;
}

// ---------------------------------------------------------------------------
// Object statistics

/// Denominator of the map scale at which the mean object prints as 1 mm^2:
/// 1000 * sqrt(area) rounded to the nearest 1000.
inline long long map_scale_denominator(double mean_area_m2) {
    if (!(mean_area_m2 > 0.0) || !std::isfinite(mean_area_m2))
        throw Error(Errc::NonPositiveArea, "mean object area must be positive");
    return std::llround(std::sqrt(mean_area_m2)) * 1000;
}

struct ObjectStats {
    double scale_parameter = 0.0;
    std::size_t count = 0;       // NO
    std::size_t min_pixels = 0;  // NPmi
    std::size_t max_pixels = 0;  // NPma
    std::size_t mean_pixels = 0; // NPa, rounded
    double area_ha = 0.0;
    long long map_scale = 0;
};

inline ObjectStats object_stats(const Segmentation& seg, double pixel_size, double scale_parameter = 0.0) {
    ObjectStats s;
    s.scale_parameter = scale_parameter;
    s.count = seg.objects.size();
    if (s.count == 0) return s;
    s.min_pixels = std::numeric_limits<std::size_t>::max();
    std::size_t total = 0;
    for (const auto& o : seg.objects) {
        s.min_pixels = std::min(s.min_pixels, o.n);
        s.max_pixels = std::max(s.max_pixels, o.n);
        total += o.n;
    }
    s.mean_pixels = static_cast<std::size_t>(std::llround(static_cast<double>(total) / static_cast<double>(s.count)));
    const double area_m2 = static_cast<double>(s.mean_pixels) * pixel_size * pixel_size;
    s.area_ha = area_m2 / 1e4;
    s.map_scale = map_scale_denominator(area_m2);
    return s;
}

} // namespace smfuse

#endif
