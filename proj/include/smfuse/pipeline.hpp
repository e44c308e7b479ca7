#ifndef SMFUSE_PIPELINE_HPP
#define SMFUSE_PIPELINE_HPP

#include <smfuse/error.hpp>
#include <smfuse/eval.hpp>
#include <smfuse/features.hpp>
#include <smfuse/forest.hpp>
#include <smfuse/fuse.hpp>
#include <smfuse/raster.hpp>
#include <smfuse/segment.hpp>
#include <smfuse/svr.hpp>
#include <smfuse/synth.hpp>
#include <smfuse/text.hpp>
#include <smfuse/training.hpp>

#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace smfuse {

struct PipelineConfig {
    std::filesystem::path scene_dir = "scene";
    std::filesystem::path out_dir = "out";
    SceneParams synth;

    GlcmConfig glcm;
    std::vector<std::string> indices = default_index_names();
    double wdvi_slope = 1.5;

    int target_count = 6;
    ForestParams forest;
    std::uint64_t select_seed = 42;
    std::vector<std::string> fixed_features;  // nonempty: skip RFE and use these

    std::vector<double> C_values{1.0, 10.0, 100.0};
    std::vector<double> epsilon_values{0.1, 0.5, 1.0};
    std::vector<double> gamma_values;  // empty: {0.01, 0.1, 1} / p
    int k_folds = 5;
    std::uint64_t cv_seed = 42;

    std::vector<double> scale_parameters{64, 128, 256, 512, 1024, 2048};
    double w_color = 0.9;
    double w_compact = 0.5;
    std::optional<double> stretch = 30000.0;

    bool quicklook = false;
    R2Convention r2 = R2Convention::Correlation;
    unsigned threads = 1;

    HyperGrid hyper_grid(std::size_t p) const {
        HyperGrid g = HyperGrid::defaults(p, cv_seed);
        g.C_values = C_values;
        g.epsilon_values = epsilon_values;
        if (!gamma_values.empty()) g.gamma_values = gamma_values;
        g.k_folds = k_folds;
        return g;
    }

    void validate() const {
        glcm.validate();
        if (scale_parameters.empty()) throw Error(Errc::InvalidConfig, "segment.sp must not be empty");
        for (std::size_t i = 0; i < scale_parameters.size(); ++i) {
            if (!(scale_parameters[i] > 0.0)) throw Error(Errc::InvalidConfig, "segment.sp values must be > 0");
            if (i && !(scale_parameters[i - 1] < scale_parameters[i]))
                throw Error(Errc::InvalidConfig, "segment.sp must be strictly ascending");
        }
        if (target_count < 1) throw Error(Errc::InvalidConfig, "select.target_count must be >= 1");
        if (forest.n_trees < 1 || forest.min_leaf < 1 || forest.mtry < 0)
            throw Error(Errc::InvalidConfig, "select forest parameters out of range");
        if (threads < 1) throw Error(Errc::InvalidConfig, "run.threads must be >= 1");
        SegmentationConfig seg;
        seg.w_color = w_color;
        seg.w_compact = w_compact;
        seg.validate(1);
        if (stretch && !(*stretch > 0.0)) throw Error(Errc::InvalidConfig, "segment.stretch must be > 0");
    }
};

namespace detail {

inline std::vector<double> parse_number_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    for (auto tok : text::split(value, ',')) {
        auto v = text::parse_double(text::trim(tok));
        if (!v) throw Error(Errc::ConfigParse, "'" + key + "' expects a comma-separated number list");
        out.push_back(*v);
    }
    return out;
}

inline std::vector<std::string> parse_name_list(const std::string& value) {
    std::vector<std::string> out;
    for (auto tok : text::split(value, ',')) {
        auto t = text::trim(tok);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

} // namespace detail

/// Applies `section.key = value`. Unknown keys throw UnknownKey, bad values ConfigParse.
inline void set_config_value(PipelineConfig& c, const std::string& key, const std::string& value) {
    const auto num = [&] {
        auto v = text::parse_double(value);
        if (!v) throw Error(Errc::ConfigParse, "'" + key + "' expects a number, got '" + value + "'");
        return *v;
    };
    const auto integer = [&] {
        auto v = text::parse_int(value);
        if (!v) throw Error(Errc::ConfigParse, "'" + key + "' expects an integer, got '" + value + "'");
        return *v;
    };
    const auto seed = [&] {
        auto v = integer();
        if (v < 0) throw Error(Errc::ConfigParse, "'" + key + "' must be nonnegative");
        return static_cast<std::uint64_t>(v);
    };

    if (key.rfind("synth.", 0) == 0) {
        if (!set_scene_param(c.synth, key.substr(6), value)) throw Error(Errc::UnknownKey, "unknown key '" + key + "'");
        return;
    }
    if (key == "paths.scene") c.scene_dir = value;
    else if (key == "paths.out") c.out_dir = value;
    else if (key == "features.glcm_window") c.glcm.window = static_cast<int>(integer());
    else if (key == "features.glcm_levels") c.glcm.levels = static_cast<int>(integer());
    else if (key == "features.glcm_distance") c.glcm.distance = static_cast<int>(integer());
    else if (key == "features.indices") c.indices = detail::parse_name_list(value);
    else if (key == "features.wdvi_slope") c.wdvi_slope = num();
    else if (key == "select.target_count") c.target_count = static_cast<int>(integer());
    else if (key == "select.n_trees") c.forest.n_trees = static_cast<int>(integer());
    else if (key == "select.mtry") c.forest.mtry = static_cast<int>(integer());
    else if (key == "select.min_leaf") c.forest.min_leaf = static_cast<int>(integer());
    else if (key == "select.seed") c.select_seed = seed();
    else if (key == "select.features") c.fixed_features = detail::parse_name_list(value);
    else if (key == "regress.C") c.C_values = detail::parse_number_list(key, value);
    else if (key == "regress.epsilon") c.epsilon_values = detail::parse_number_list(key, value);
    else if (key == "regress.gamma") c.gamma_values = value == "auto" ? std::vector<double>{} : detail::parse_number_list(key, value);
    else if (key == "regress.k_folds") c.k_folds = static_cast<int>(integer());
    else if (key == "regress.seed") c.cv_seed = seed();
    else if (key == "segment.sp") c.scale_parameters = detail::parse_number_list(key, value);
    else if (key == "segment.w_color") c.w_color = num();
    else if (key == "segment.w_compact") c.w_compact = num();
    else if (key == "segment.stretch") c.stretch = value == "none" ? std::nullopt : std::optional<double>(num());
    else if (key == "fuse.quicklook") c.quicklook = integer() != 0;
    else if (key == "eval.r2") {
        if (value == "corr") c.r2 = R2Convention::Correlation;
        else if (value == "cod") c.r2 = R2Convention::Determination;
        else throw Error(Errc::ConfigParse, "eval.r2 must be 'corr' or 'cod'");
    } else if (key == "run.threads") {
        auto t = integer();
        if (t < 1) throw Error(Errc::ConfigParse, "run.threads must be >= 1");
        c.threads = static_cast<unsigned>(t);
    } else throw Error(Errc::UnknownKey, "unknown key '" + key + "'");
}

/// Splits "section.key=value" for --set style overrides.
inline void apply_override(PipelineConfig& c, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos) throw Error(Errc::ConfigParse, "expected section.key=value, got '" + assignment + "'");
    set_config_value(c, std::string(text::trim(std::string_view(assignment).substr(0, eq))),
                     std::string(text::trim(std::string_view(assignment).substr(eq + 1))));
}

inline PipelineConfig parse_config(const std::string& body, PipelineConfig base = {}) {
    std::istringstream in(body);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto t = text::trim(line);
        if (t.empty() || t[0] == '#') continue;
        try {
            if (t.find('=') == std::string_view::npos) throw Error(Errc::ConfigParse, "expected section.key = value");
            apply_override(base, std::string(t));
        } catch (const Error& e) {
            throw LineError(e.code(), lineno, e.what());
        }
    }
    return base;
}

inline PipelineConfig read_config(const std::filesystem::path& path, PipelineConfig base = {}) {
    return parse_config(detail::slurp(path), std::move(base));
}

// ---------------------------------------------------------------------------
// Stages

/// Error carrying the name of the pipeline stage that raised it.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& inner)
        : Error(inner.code(), stage + ": " + inner.what()), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

template <class Fn>
auto run_stage(const std::string& name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    }
}

inline std::string sp_tag(double sp) {
    return sp == std::floor(sp) ? std::to_string(static_cast<long long>(sp)) : text::exact(sp);
}

inline FeatureStack build_feature_space(const SceneBundle& scene, const PipelineConfig& cfg) {
    const auto glcm = glcm_features(scene.vv_db, cfg.glcm, cfg.threads);
    const auto idx = spectral_indices(scene.bands, cfg.indices, cfg.wdvi_slope);
    return assemble_feature_space(scene.vv_db, glcm, idx);
}

struct PipelineResult {
    std::vector<std::string> selected;
    CvResult cv;
    std::vector<ObjectStats> table1;
    std::vector<MetricsRow> table2;
    std::vector<NamedBoxStats> boxes;
};

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::IoFailure, "cannot create " + dir.string());
}

inline std::string format_cv_csv(const CvResult& cv) {
    std::string out = "C,epsilon,gamma,rmse\n";
    for (const auto& c : cv.table)
        out += text::exact(c.C) + "," + text::exact(c.epsilon) + "," + text::exact(c.gamma) + "," +
               (std::isfinite(c.rmse) ? text::exact(c.rmse) : std::string("inf")) + "\n";
    return out;
}

inline std::vector<double> values_at(const Grid& g, std::span<const PointSample> pts) {
    std::vector<double> v;
    for (double x : sample_at_points(g, pts))
        if (!is_nodata(x)) v.push_back(x);
    return v;
}

inline void write_map(const SoilMoistureMap& m, const std::filesystem::path& base, bool quicklook) {
    write_grid(m.grid, base.string() + ".smrg");
    if (quicklook) write_pgm(m.grid, base.string() + ".pgm");
}

} // namespace detail

/// Features, selection, regression, segmentation at every SP, both scenarios,
/// and the report tables, all written below cfg.out_dir.
inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
    run_stage("config", [&] { cfg.validate(); });
    const auto& out = cfg.out_dir;
    run_stage("output", [&] {
        detail::ensure_dir(out / "features");
        detail::ensure_dir(out / "maps");
    });

    const SceneBundle scene = run_stage("scene", [&] { return read_scene(cfg.scene_dir); });

    const FeatureStack stack = run_stage("features", [&] {
        auto s = build_feature_space(scene, cfg);
        for (std::size_t i = 0; i < s.size(); ++i) write_grid(s.layer(i), out / "features" / (s.name(i) + ".smrg"));
        return s;
    });

    PipelineResult result;
    const TrainingMatrix training = run_stage("select", [&] {
        auto all = extract_training(stack, scene.insitu);
        write_training_csv(all, out / "training.csv");
        if (!cfg.fixed_features.empty()) {
            result.selected = cfg.fixed_features;
        } else {
            const auto r = rfe(all, cfg.target_count, cfg.forest, cfg.select_seed, cfg.threads);
            detail::spill(out / "rfe.csv", format_rfe_csv(r, all.names));
            result.selected = r.selected;
        }
        return all.select(result.selected);
    });

    const SvrModel model = run_stage("regress", [&] {
        result.cv = grid_search_cv(training, cfg.hyper_grid(training.p()));
        detail::spill(out / "cv.csv", detail::format_cv_csv(result.cv));
        auto m = train_svr(training, result.cv.C, result.cv.epsilon, result.cv.gamma);
        write_svr_model(m, out / "model.svr");
        return m;
    });

    std::vector<SoilMoistureMap> maps;
    run_stage("fuse", [&] {
        auto pixel = predict_pixel_map(model, stack, cfg.threads);
        pixel.model_ref = "model.svr";
        detail::write_map(pixel, out / "maps" / "pixel", cfg.quicklook);
        maps.push_back(std::move(pixel));
        auto coarse = coarse_map(scene.coarse_sm);
        detail::write_map(coarse, out / "maps" / "coarse", cfg.quicklook);
        maps.push_back(std::move(coarse));
    });

    const FeatureStack seg_input = stack.subset(result.selected);
    for (double sp : cfg.scale_parameters) {
        const std::string tag = sp_tag(sp);
        const Segmentation seg = run_stage("segment", [&] {
            SegmentationConfig sc;
            sc.scale_parameter = sp;
            sc.w_color = cfg.w_color;
            sc.w_compact = cfg.w_compact;
            sc.stretch = cfg.stretch;
            auto s = segment(seg_input, sc);
            write_grid(s.labels, out / ("seg-SP" + tag + ".smrg"));
            result.table1.push_back(object_stats(s, stack.geometry().pixel_size, sp));
            return s;
        });
        run_stage("fuse", [&] {
            auto sc1 = predict_object_map(model, seg, stack, sp);
            sc1.model_ref = "model.svr";
            sc1.seg_ref = "seg-SP" + tag + ".smrg";
            detail::write_map(sc1, out / "maps" / ("sc1-SP" + tag), cfg.quicklook);
            auto sc2 = fuse_coarse(seg, scene.coarse_sm, sp);
            sc2.seg_ref = sc1.seg_ref;
            detail::write_map(sc2, out / "maps" / ("sc2-SP" + tag), cfg.quicklook);
            maps.push_back(std::move(sc1));
            maps.push_back(std::move(sc2));
        });
    }

    run_stage("eval", [&] {
        std::vector<double> obs;
        for (const auto& p : scene.insitu) obs.push_back(p.sm);
        result.boxes.push_back({"In-situ", box_stats(obs)});
        for (const auto& m : maps) {
            result.table2.push_back(evaluate_map(m, scene.insitu));
            result.boxes.push_back({m.label(), box_stats(detail::values_at(m.grid, scene.insitu))});
        }
        report(result.table2, result.table1, out, cfg.r2);
        detail::spill(out / "boxstats.csv", format_boxstats(result.boxes));
    });
    return result;
}

} // namespace smfuse

#endif
