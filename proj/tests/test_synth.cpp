#include <gtest/gtest.h>

#include <smfuse/features.hpp>
#include <smfuse/synth.hpp>

#include <filesystem>
#include <set>

using namespace smfuse;

namespace {

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

SceneParams small_params() {
    SceneParams p;
    p.width = 64;
    p.height = 48;
    p.coarse_factor = 16;
    p.smoothness = 6;
    p.veg_smoothness = 4;
    return p;
}

GridGeometry geom(std::size_t w, std::size_t h) {
    GridGeometry g;
    g.width = w;
    g.height = h;
    g.origin_y = static_cast<double>(h) * g.pixel_size;
    return g;
}

} // namespace

TEST(GaussianField, ExactRangeAndDeterminism) {
    for (double s : {0.0, 3.0, 10.0}) {
        const auto f = gaussian_field(geom(40, 30), s, 3.2, 33.5, 9);
        const auto [lo, hi] = std::minmax_element(f.values().begin(), f.values().end());
        EXPECT_EQ(*lo, 3.2);
        EXPECT_EQ(*hi, 33.5);
        EXPECT_EQ(f, gaussian_field(geom(40, 30), s, 3.2, 33.5, 9));
    }
    EXPECT_NE(gaussian_field(geom(8, 8), 1, 0, 1, 1), gaussian_field(geom(8, 8), 1, 0, 1, 2));
    EXPECT_EQ(code_of([] { gaussian_field(geom(4, 4), 1, 5, 5, 1); }), Errc::DegenerateRange);
}

TEST(GaussianField, SmoothingReducesRoughness) {
    const auto rough = gaussian_field(geom(64, 64), 0, 0, 1, 3), smooth = gaussian_field(geom(64, 64), 8, 0, 1, 3);
    const auto step = [](const Grid& g) {
        double s = 0;
        for (std::size_t i = 1; i < g.size(); ++i)
            if (i % g.width()) s += std::abs(g[i] - g[i - 1]);
        return s;
    };
    EXPECT_LT(step(smooth), 0.25 * step(rough));
}

TEST(Backscatter, NoiseFreeExamples) {
    const auto g = geom(3, 1);
    const Grid sm(g, {0.0, 10.0, 30.0}), bare(g, 0.0), full(g, 1.0);
    const BackscatterParams p;
    const auto vv = forward_backscatter(sm, bare, p, std::nullopt, 1);
    EXPECT_EQ(vv[0], p.c0);
    EXPECT_DOUBLE_EQ(vv[1], p.c0 + p.c1 * 10.0);
    EXPECT_DOUBLE_EQ(vv[2], p.c0 + p.c1 * 30.0);
    const auto veg = forward_backscatter(sm, full, p, std::nullopt, 1);
    for (double v : veg.values()) EXPECT_DOUBLE_EQ(v, p.c0 + p.c2);
    EXPECT_EQ(code_of([&] { forward_backscatter(sm, Grid(geom(2, 1), 0.0), p, std::nullopt, 1); }),
              Errc::GeometryMismatch);
}

TEST(Backscatter, SpeckleHasUnitMeanInLinearPower) {
    const auto g = geom(200, 200);
    const Grid sm(g, 20.0), veg(g, 0.0);
    const BackscatterParams p;
    const auto vv = forward_backscatter(sm, veg, p, 4, 5);
    const double base = std::pow(10.0, (p.c0 + p.c1 * 20.0) / 10.0);
    double mean = 0;
    for (double v : vv.values()) mean += std::pow(10.0, v / 10.0) / base;
    mean /= static_cast<double>(vv.size());
    EXPECT_NEAR(mean, 1.0, 0.02);
    EXPECT_EQ(vv, forward_backscatter(sm, veg, p, 4, 5));
}

TEST(Optics, ExamplesAndMonotoneNdvi) {
    const auto g = geom(11, 1);
    std::vector<double> v(11);
    for (std::size_t i = 0; i < 11; ++i) v[i] = i / 10.0;
    const auto bands = forward_optics(Grid(g, v), 0.0, 1);
    EXPECT_DOUBLE_EQ(bands.layer("G")[0], 0.12);
    EXPECT_DOUBLE_EQ(bands.layer("R")[0], 0.25);
    EXPECT_DOUBLE_EQ(bands.layer("NIR")[0], 0.15);
    const auto ndvi = spectral_indices(bands, {"NDVI"}).layer(0);
    EXPECT_LT(ndvi[0], 0.0);
    EXPECT_NEAR(ndvi[10], 2.0 / 3.0, 1e-12);
    for (std::size_t i = 1; i < 11; ++i) EXPECT_GT(ndvi[i], ndvi[i - 1]);
}

TEST(Scene, DeterministicAndConsistent) {
    const auto p = small_params();
    const auto a = generate_scene(p), b = generate_scene(p);
    EXPECT_EQ(a.truth_sm, b.truth_sm);
    EXPECT_EQ(a.vv_db, b.vv_db);
    EXPECT_EQ(a.coarse_sm, b.coarse_sm);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(a.bands.layer(k), b.bands.layer(k));
    ASSERT_EQ(a.insitu.size(), 35u);
    for (std::size_t i = 0; i < 35; ++i) EXPECT_EQ(a.insitu[i].sm, b.insitu[i].sm);
    EXPECT_EQ(a.coarse_sm.width(), 4u);
    EXPECT_EQ(a.coarse_sm.height(), 3u);
    EXPECT_EQ(a.coarse_sm.geometry().pixel_size, 160.0);
    EXPECT_EQ(a.vv_db.geometry(), a.truth_sm.geometry());
}

TEST(Scene, InsituPointsAreDistinctPixelCentres) {
    auto p = small_params();
    p.n_insitu = 200;
    p.insitu_noise_sd = 0.0;
    const auto s = generate_scene(p);
    std::set<std::pair<double, double>> seen;
    for (const auto& pt : s.insitu) {
        EXPECT_TRUE(seen.insert({pt.x, pt.y}).second);
        EXPECT_EQ(std::fmod(pt.x, 10.0), 5.0);
        EXPECT_EQ(std::fmod(pt.y, 10.0), 5.0);
    }
    const std::vector<PointSample> pts(s.insitu.begin(), s.insitu.end());
    const auto truth = sample_at_points(s.truth_sm, pts);
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_EQ(pts[i].sm, truth[i]);
}

TEST(Scene, CoarseWithoutNoiseIsBlockAverage) {
    auto p = small_params();
    p.coarse_noise_sd = 0.0;
    p.coarse_bias = 0.0;
    const auto s = generate_scene(p);
    EXPECT_EQ(s.coarse_sm.values().size(), 12u);
    const auto avg = block_average(s.truth_sm, 16);
    for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(s.coarse_sm[i], avg[i]);
}

TEST(Scene, CoarseNoiseStatistics) {
    auto p = small_params();
    p.width = p.height = 256;
    p.coarse_factor = 4;
    p.sm_lo = 20;
    p.sm_hi = 30;
    p.coarse_noise_sd = 1.0;
    p.coarse_bias = 2.0;
    const auto s = generate_scene(p);
    const auto avg = block_average(s.truth_sm, 4);
    double m = 0, v = 0;
    const double n = static_cast<double>(avg.size());
    for (std::size_t i = 0; i < avg.size(); ++i) m += (s.coarse_sm[i] - avg[i]) / n;
    for (std::size_t i = 0; i < avg.size(); ++i) v += (s.coarse_sm[i] - avg[i] - m) * (s.coarse_sm[i] - avg[i] - m) / n;
    EXPECT_NEAR(m, 2.0, 0.05);
    EXPECT_NEAR(std::sqrt(v), 1.0, 0.05);
}

TEST(Scene, ComponentSeedsAreIndependentOfPointCount) {
    auto p = small_params();
    const auto a = generate_scene(p);
    p.n_insitu = 10;
    const auto b = generate_scene(p);
    EXPECT_EQ(a.truth_sm, b.truth_sm);
    EXPECT_EQ(a.vv_db, b.vv_db);
}

TEST(Scene, Validation) {
    auto p = small_params();
    p.coarse_factor = 7;
    EXPECT_EQ(code_of([&] { generate_scene(p); }), Errc::NonDivisibleFactor);
    p = small_params();
    p.sm_lo = p.sm_hi;
    EXPECT_EQ(code_of([&] { generate_scene(p); }), Errc::DegenerateRange);
    p = small_params();
    p.speckle_looks = 0;
    EXPECT_EQ(code_of([&] { generate_scene(p); }), Errc::InvalidConfig);
}

TEST(Scene, ManifestAndDirectoryRoundTrip) {
    auto p = small_params();
    p.seed = 123;
    p.speckle = false;
    p.backscatter.c1 = 0.3;
    const auto back = parse_scene_manifest(format_scene_manifest(p));
    EXPECT_EQ(format_scene_manifest(back), format_scene_manifest(p));
    EXPECT_EQ(back.seed, 123u);
    EXPECT_FALSE(back.speckle);
    EXPECT_FALSE(set_scene_param(p, "nope", "1"));
    EXPECT_THROW(parse_scene_manifest("width=64\nnope=2\n"), LineError);

    const auto dir = std::filesystem::temp_directory_path() / "smfuse_test_scene";
    std::filesystem::remove_all(dir);
    const auto s = generate_scene(small_params());
    write_scene(s, dir);
    for (const char* f : {"truth_sm.smrg", "veg_fraction.smrg", "vv_db.smrg", "G.smrg", "R.smrg", "NIR.smrg",
                          "coarse_sm.smrg", "insitu.csv", "params.txt"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    const auto r = read_scene(dir);
    EXPECT_EQ(r.insitu.size(), s.insitu.size());
    EXPECT_EQ(r.vv_db.geometry(), s.vv_db.geometry());
    EXPECT_EQ(r.bands.names(), (std::vector<std::string>{"G", "R", "NIR"}));
    EXPECT_NEAR(r.vv_db[5], s.vv_db[5], 1e-5);
}
