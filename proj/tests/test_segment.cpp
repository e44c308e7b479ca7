#include <gtest/gtest.h>

#include <smfuse/segment.hpp>

#include <cmath>
#include <queue>
#include <random>
#include <set>

using namespace smfuse;

namespace {

GridGeometry geom(std::size_t w, std::size_t h) {
    GridGeometry g;
    g.width = w;
    g.height = h;
    g.origin_y = static_cast<double>(h) * g.pixel_size;
    return g;
}

template <class F>
Errc code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return Errc::IoFailure;
}

FeatureStack single(const Grid& g) {
    FeatureStack s(g.geometry());
    s.add("b0", g);
    return s;
}

// smooth random field plus noise, optionally with nodata holes
FeatureStack random_stack(std::size_t w, std::size_t h, std::size_t bands, std::uint64_t seed, bool holes) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    FeatureStack s(geom(w, h));
    const double fx = 0.2 + u(rng), fy = 0.2 + u(rng);
    for (std::size_t b = 0; b < bands; ++b) {
        std::vector<double> v(w * h);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double r = static_cast<double>(i / w), c = static_cast<double>(i % w);
            v[i] = 50 * std::sin(fx * c + b) * std::cos(fy * r) + 5 * u(rng);
            if (holes && i % 37 == 5) v[i] = kNodata;
        }
        s.add("b" + std::to_string(b), Grid(geom(w, h), v));
    }
    return s;
}

void expect_valid_partition(const Segmentation& seg) {
    const auto& g = seg.labels.geometry();
    const std::size_t W = g.width, H = g.height, K = seg.object_count();
    std::vector<std::size_t> count(K + 1, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = seg.labels[i];
        ASSERT_EQ(v, std::floor(v));
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, static_cast<double>(K));
        ++count[static_cast<std::size_t>(v)];
    }
    EXPECT_EQ(count[0], seg.nodata_count);
    std::size_t total = 0;
    for (std::size_t k = 1; k <= K; ++k) {
        EXPECT_EQ(count[k], seg.object(static_cast<int>(k)).n) << "object " << k;
        total += seg.object(static_cast<int>(k)).n;
    }
    EXPECT_EQ(total + seg.nodata_count, W * H);

    // each object is 4-connected: BFS from its first pixel reaches all of it
    std::vector<std::uint8_t> seen(W * H, 0);
    for (std::size_t i = 0; i < W * H; ++i) {
        const int id = seg.label_at(i);
        if (id == 0 || seen[i]) continue;
        std::size_t reached = 0;
        std::queue<std::size_t> q;
        q.push(i);
        seen[i] = 1;
        while (!q.empty()) {
            const std::size_t p = q.front();
            q.pop();
            ++reached;
            const std::size_t r = p / W, c = p % W;
            const std::size_t nb[4] = {r > 0 ? p - W : p, c > 0 ? p - 1 : p, c + 1 < W ? p + 1 : p,
                                       r + 1 < H ? p + W : p};
            for (std::size_t o : nb)
                if (!seen[o] && seg.label_at(o) == id) {
                    seen[o] = 1;
                    q.push(o);
                }
        }
        EXPECT_EQ(reached, seg.object(id).n) << "object " << id << " is not 4-connected";
    }
}

void expect_stats_match_recompute(const Segmentation& seg, const FeatureStack& stack) {
    const auto fresh = recompute_objects(seg.labels, stack, seg.band_offset, seg.band_scale);
    ASSERT_EQ(fresh.size(), seg.object_count());
    for (std::size_t k = 0; k < fresh.size(); ++k) {
        const auto& a = seg.objects[k];
        const auto& b = fresh[k];
        EXPECT_EQ(a.id, b.id);
        EXPECT_EQ(a.n, b.n);
        EXPECT_EQ(a.edge_count, b.edge_count);
        EXPECT_EQ(a.perimeter, b.perimeter);
        EXPECT_EQ(a.bbox, b.bbox);
        EXPECT_EQ(a.neighbors, b.neighbors);
        for (std::size_t j = 0; j < a.sum.size(); ++j) {
            EXPECT_NEAR(a.sum[j], b.sum[j], 1e-9 * std::max(1.0, std::abs(b.sum[j])));
            EXPECT_NEAR(a.sumsq[j], b.sumsq[j], 1e-9 * std::max(1.0, std::abs(b.sumsq[j])));
        }
    }
}

} // namespace

TEST(Segment, ConstantImageIsOneObject) {
    for (double sp : {0.5, 64.0, 2048.0}) {
        SegmentationConfig cfg;
        cfg.scale_parameter = sp;
        const auto seg = segment(single(Grid(geom(9, 7), 3.0)), cfg);
        EXPECT_EQ(seg.object_count(), 1u) << "SP " << sp;
        EXPECT_EQ(seg.object(1).n, 63u);
    }
}

TEST(Segment, TwoHalvesSplitAtDerivedScale) {
    std::vector<double> v(64);
    for (std::size_t i = 0; i < 64; ++i) v[i] = (i % 8) < 4 ? 0.0 : 100.0;
    const auto stack = single(Grid(geom(8, 8), v));
    // final cross merge of two 4x8 halves in raw units:
    // colour: 64 * std{0,100} - 0 - 0; compactness l*sqrt(n): 32*8 - 2*24*sqrt(32); smoothness n*l/b: 64 - 2*32
    const double dcolor = 64 * 50.0, dcmp = 32 * 8.0 - 2 * 24 * std::sqrt(32.0), dsmooth = 0.0;
    const double dh = 0.9 * dcolor + 0.1 * (0.5 * dcmp + 0.5 * dsmooth);
    SegmentationConfig cfg;
    cfg.stretch = std::nullopt;
    cfg.scale_parameter = 0.9 * std::sqrt(dh);
    const auto seg = segment(stack, cfg);
    ASSERT_EQ(seg.object_count(), 2u);
    EXPECT_EQ(seg.object(1).n, 32u);
    EXPECT_EQ(seg.object(1).variance(0), 0.0);
    EXPECT_EQ(seg.object(2).mean(0), 100.0);
    cfg.scale_parameter = 1.1 * std::sqrt(dh);
    double last = 0;
    cfg.on_merge = [&](const MergeEvent& e) { last = e.delta_h; };
    EXPECT_EQ(segment(stack, cfg).object_count(), 1u);
    EXPECT_NEAR(last, dh, 1e-9 * dh);
}

TEST(Segment, InvariantsOnRandomStacks) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        const auto stack = random_stack(20 + seed * 5, 17 + seed * 3, 1 + seed % 3, seed, seed % 2 == 0);
        for (double sp : {8.0, 64.0, 512.0}) {
            SegmentationConfig cfg;
            cfg.scale_parameter = sp;
            double worst = 0.0;
            cfg.on_merge = [&](const MergeEvent& e) { worst = std::min(worst, e.delta_color); };
            const auto seg = segment(stack, cfg);
            SCOPED_TRACE("seed " + std::to_string(seed) + " sp " + std::to_string(sp));
            expect_valid_partition(seg);
            expect_stats_match_recompute(seg, stack);
            EXPECT_GE(worst, -1e-6);
            for (const auto& o : seg.objects) {
                EXPECT_GE(o.variance(0), 0.0);
                EXPECT_GE(static_cast<double>(o.edge_count), 2.0 * std::ceil(2.0 * std::sqrt(static_cast<double>(o.n))));
            }
        }
    }
}

TEST(Segment, LargerScaleGivesFewerObjectsHere) {
    const auto stack = random_stack(48, 48, 2, 99, false);
    std::size_t prev = SIZE_MAX;
    for (double sp : {4.0, 16.0, 64.0, 256.0, 1024.0}) {
        SegmentationConfig cfg;
        cfg.scale_parameter = sp;
        const auto n = segment(stack, cfg).object_count();
        EXPECT_LT(n, prev) << "SP " << sp;
        prev = n;
    }
}

TEST(Segment, DeterministicAndShuffledOrderStillValid) {
    const auto stack = random_stack(30, 30, 2, 4, true);
    SegmentationConfig cfg;
    cfg.scale_parameter = 100;
    const auto a = segment(stack, cfg), b = segment(stack, cfg);
    EXPECT_EQ(a.labels, b.labels);
    cfg.shuffle_order = true;
    cfg.seed = 17;
    const auto c = segment(stack, cfg), d = segment(stack, cfg);
    EXPECT_EQ(c.labels, d.labels);
    expect_valid_partition(c);
}

TEST(Segment, Errors) {
    EXPECT_EQ(code_of([] { segment(FeatureStack{}, SegmentationConfig{}); }), Errc::EmptyStack);
    EXPECT_EQ(code_of([] { segment(single(Grid(geom(2, 2), kNodata)), SegmentationConfig{}); }), Errc::AllNodata);
    SegmentationConfig cfg;
    cfg.w_color = 1.5;
    EXPECT_EQ(code_of([&] { segment(single(Grid(geom(2, 2), 1.0)), cfg); }), Errc::InvalidConfig);
    cfg = {};
    cfg.scale_parameter = 0;
    EXPECT_EQ(code_of([&] { segment(single(Grid(geom(2, 2), 1.0)), cfg); }), Errc::InvalidConfig);
    cfg = {};
    cfg.band_weights = {0.0};
    EXPECT_EQ(code_of([&] { segment(single(Grid(geom(2, 2), 1.0)), cfg); }), Errc::InvalidConfig);
}

TEST(Segment, SingletonPartition) {
    const auto stack = random_stack(6, 5, 2, 3, true);
    const auto seg = singleton_segmentation(stack);
    expect_valid_partition(seg);
    expect_stats_match_recompute(seg, stack);
    for (const auto& o : seg.objects) EXPECT_EQ(o.n, 1u);
}

TEST(Segment, FromLabelsAndLabelErrors) {
    const auto stack = random_stack(10, 10, 1, 8, false);
    SegmentationConfig cfg;
    cfg.scale_parameter = 30;
    const auto seg = segment(stack, cfg);
    const auto back = segmentation_from_labels(seg.labels, stack);
    EXPECT_EQ(back.object_count(), seg.object_count());
    for (std::size_t k = 0; k < back.objects.size(); ++k) EXPECT_EQ(back.objects[k].neighbors, seg.objects[k].neighbors);
    EXPECT_EQ(code_of([&] { recompute_objects(Grid(geom(10, 10), 1.5), stack); }), Errc::SchemaMismatch);
    EXPECT_EQ(code_of([&] { recompute_objects(Grid(geom(10, 10), 2.0), stack); }), Errc::SchemaMismatch);
}

TEST(MapScale, Formula) {
    EXPECT_EQ(map_scale_denominator(1.0), 1000);
    EXPECT_EQ(map_scale_denominator(4.458e6), 2111000);
    EXPECT_EQ(map_scale_denominator(72400.0), 269000);  // nearest-1000 of 269072
    EXPECT_EQ(map_scale_denominator(1.1056e6), 1051000);
    EXPECT_EQ(code_of([] { map_scale_denominator(0.0); }), Errc::NonPositiveArea);
    EXPECT_EQ(code_of([] { map_scale_denominator(-3.0); }), Errc::NonPositiveArea);
}

TEST(ObjectStats, Examples) {
    const auto seg = segment(single(Grid(geom(10, 10), 1.0)), SegmentationConfig{});
    const auto s = object_stats(seg, 10.0, 64);
    EXPECT_EQ(s.count, 1u);
    EXPECT_EQ(s.mean_pixels, 100u);
    EXPECT_DOUBLE_EQ(s.area_ha, 1.0);
    EXPECT_EQ(s.map_scale, 100000);

    Segmentation fake;
    fake.objects.resize(3);
    fake.objects[0].n = 700;
    fake.objects[1].n = 724;
    fake.objects[2].n = 748;
    const auto t = object_stats(fake, 10.0);
    EXPECT_EQ(t.mean_pixels, 724u);
    EXPECT_EQ(t.min_pixels, 700u);
    EXPECT_EQ(t.max_pixels, 748u);
    EXPECT_DOUBLE_EQ(t.area_ha, 7.24);
    fake.objects = {fake.objects[0]};
    fake.objects[0].n = 2720;
    EXPECT_DOUBLE_EQ(object_stats(fake, 10.0).area_ha, 27.20);
}
