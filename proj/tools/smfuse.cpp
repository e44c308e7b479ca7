// smfuse: command-line front end for the soil-moisture fusion pipeline.

#include <CLI11.hpp>

#include <smfuse/pipeline.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace smfuse;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int exit_code(Errc c) {
    switch (c) {
    case Errc::ConfigParse:
    case Errc::UnknownKey:
    case Errc::InvalidConfig: return kUsage;
    case Errc::ConstantFeature:
    case Errc::NonFiniteInput:
    case Errc::DegenerateRange:
    case Errc::AllNodata:
    case Errc::NonPositiveArea: return kNumeric;
    default: return kData;
    }
}

// Every *.smrg in `dir`, ordered by file name; layer names come from the files.
FeatureStack load_stack(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw Error(Errc::MissingFile, "no feature directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".smrg") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    FeatureStack s;
    for (const auto& f : files) {
        auto g = read_grid(f);
        std::string name = g.name().empty() ? f.stem().string() : g.name();
        s.add(std::move(name), std::move(g));
    }
    if (s.empty()) throw Error(Errc::EmptyStack, "no .smrg layers in " + dir.string());
    return s;
}

std::vector<std::string> read_names(const fs::path& path) {
    std::vector<std::string> out;
    for (const auto& line : text::split(detail::slurp(path), '\n')) {
        auto t = text::trim(line);
        if (!t.empty()) out.emplace_back(t);
    }
    return out;
}

std::vector<std::string> resolve_selection(const std::string& use, const std::string& file) {
    if (!use.empty()) return detail::parse_name_list(use);
    if (!file.empty()) return read_names(file);
    throw Error(Errc::InvalidConfig, "give --use or --selected");
}

void save_stack(const FeatureStack& s, const fs::path& dir) {
    detail::ensure_dir(dir);
    for (std::size_t i = 0; i < s.size(); ++i) write_grid(s.layer(i), dir / (s.name(i) + ".smrg"));
}

struct Common {
    std::string config;
    std::vector<std::string> sets;
    unsigned threads = 0;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "Config file of section.key = value lines")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "Override one setting, section.key=value (repeatable)");
        app->add_option("--threads", threads, "Worker threads (results do not depend on this)");
    }

    PipelineConfig load() const {
        PipelineConfig c;
        if (!config.empty()) c = read_config(config);
        for (const auto& s : sets) apply_override(c, s);
        if (threads) c.threads = threads;
        return c;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Segment-based soil-moisture fusion of SAR, optical and coarse radiometer data"};
    app.require_subcommand(1);
    std::vector<std::pair<CLI::App*, std::function<void()>>> commands;

    // synth
    Common synth_common;
    std::string synth_out;
    std::optional<std::uint64_t> synth_seed;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic scene bundle");
    synth_common.attach(synth);
    synth->add_option("--seed", synth_seed, "Master seed");
    synth->add_option("--out", synth_out, "Scene directory to write")->required();
    commands.emplace_back(synth, [&] {
        auto c = synth_common.load();
        if (synth_seed) c.synth.seed = *synth_seed;
        write_scene(generate_scene(c.synth), synth_out);
    });

    // features
    Common feat_common;
    std::string feat_scene, feat_out, feat_indices;
    std::optional<int> glcm_window, glcm_levels, glcm_distance;
    std::optional<double> wdvi_slope;
    auto* features = app.add_subcommand("features", "Compute VV, GLCM texture and spectral-index layers");
    feat_common.attach(features);
    features->add_option("--scene", feat_scene, "Scene directory")->required();
    features->add_option("--out", feat_out, "Directory for feature layers")->required();
    features->add_option("--glcm-window", glcm_window, "GLCM window size (odd)");
    features->add_option("--glcm-levels", glcm_levels, "GLCM grey levels");
    features->add_option("--glcm-distance", glcm_distance, "GLCM pixel offset");
    features->add_option("--wdvi-slope", wdvi_slope, "Soil-line slope for WDVI");
    features->add_option("--indices", feat_indices, "Comma-separated spectral indices");
    commands.emplace_back(features, [&] {
        auto c = feat_common.load();
        if (glcm_window) c.glcm.window = *glcm_window;
        if (glcm_levels) c.glcm.levels = *glcm_levels;
        if (glcm_distance) c.glcm.distance = *glcm_distance;
        if (wdvi_slope) c.wdvi_slope = *wdvi_slope;
        if (!feat_indices.empty()) c.indices = detail::parse_name_list(feat_indices);
        c.glcm.validate();
        save_stack(build_feature_space(read_scene(feat_scene), c), feat_out);
    });

    // select
    Common sel_common;
    std::string sel_features, sel_points, sel_out;
    std::optional<int> sel_target;
    std::optional<std::uint64_t> sel_seed;
    auto* select = app.add_subcommand("select", "Random-forest recursive feature elimination");
    sel_common.attach(select);
    select->add_option("--features", sel_features, "Feature layer directory")->required();
    select->add_option("--points", sel_points, "In-situ CSV (x,y,sm)")->required();
    select->add_option("--target", sel_target, "Number of features to keep");
    select->add_option("--seed", sel_seed, "Forest seed");
    select->add_option("--out", sel_out, "Output directory (rfe.csv, selected.txt)")->required();
    commands.emplace_back(select, [&] {
        auto c = sel_common.load();
        if (sel_target) c.target_count = *sel_target;
        if (sel_seed) c.select_seed = *sel_seed;
        const auto data = extract_training(load_stack(sel_features), read_points(sel_points));
        const auto r = rfe(data, c.target_count, c.forest, c.select_seed, c.threads);
        detail::ensure_dir(sel_out);
        detail::spill(fs::path(sel_out) / "rfe.csv", format_rfe_csv(r, data.names));
        detail::spill(fs::path(sel_out) / "selected.txt", text::join(r.selected, "\n") + "\n");
    });

    // train
    Common train_common;
    std::string train_features, train_points, train_use, train_selected, train_out;
    auto* train = app.add_subcommand("train", "Grid-search and fit the RBF support vector regressor");
    train_common.attach(train);
    train->add_option("--features", train_features, "Feature layer directory")->required();
    train->add_option("--points", train_points, "In-situ CSV (x,y,sm)")->required();
    train->add_option("--use", train_use, "Comma-separated feature names");
    train->add_option("--selected", train_selected, "File with one feature name per line");
    train->add_option("--out", train_out, "Model file to write")->required();
    commands.emplace_back(train, [&] {
        auto c = train_common.load();
        const auto names = resolve_selection(train_use, train_selected);
        const auto data = extract_training(load_stack(train_features).subset(names), read_points(train_points));
        const auto cv = grid_search_cv(data, c.hyper_grid(data.p()));
        const auto model = train_svr(data, cv.C, cv.epsilon, cv.gamma);
        write_svr_model(model, train_out);
        detail::spill(fs::path(train_out).replace_extension(".cv.csv"), detail::format_cv_csv(cv));
        if (!model.converged) std::cerr << "warning: solver stopped at the iteration limit\n";
    });

    // predict
    Common pred_common;
    std::string pred_model, pred_features, pred_out;
    bool pred_pgm = false;
    auto* predict = app.add_subcommand("predict", "Pixel-based soil-moisture map from a trained model");
    pred_common.attach(predict);
    predict->add_option("--model", pred_model, "Model file")->required();
    predict->add_option("--features", pred_features, "Feature layer directory")->required();
    predict->add_option("--out", pred_out, "Map file (.smrg)")->required();
    predict->add_flag("--quicklook", pred_pgm, "Also write an 8-bit PGM");
    commands.emplace_back(predict, [&] {
        auto c = pred_common.load();
        const auto map = predict_pixel_map(read_svr_model(pred_model), load_stack(pred_features), c.threads);
        write_grid(map.grid, pred_out);
        if (pred_pgm) write_pgm(map.grid, fs::path(pred_out).replace_extension(".pgm"));
    });

    // segment
    Common seg_common;
    std::string seg_features, seg_use, seg_selected, seg_out, seg_sp;
    auto* segcmd = app.add_subcommand("segment", "Multiresolution segmentation at one or more scale parameters");
    seg_common.attach(segcmd);
    segcmd->add_option("--features", seg_features, "Feature layer directory")->required();
    segcmd->add_option("--use", seg_use, "Comma-separated layers to segment");
    segcmd->add_option("--selected", seg_selected, "File with one layer name per line");
    segcmd->add_option("--sp", seg_sp, "Comma-separated scale parameters");
    segcmd->add_option("--out", seg_out, "Output directory (seg-SP*.smrg, table1.csv)")->required();
    commands.emplace_back(segcmd, [&] {
        auto c = seg_common.load();
        if (!seg_sp.empty()) set_config_value(c, "segment.sp", seg_sp);
        c.validate();
        const auto all = load_stack(seg_features);
        const auto input = (seg_use.empty() && seg_selected.empty()) ? all : all.subset(resolve_selection(seg_use, seg_selected));
        detail::ensure_dir(seg_out);
        std::vector<ObjectStats> rows;
        for (double sp : c.scale_parameters) {
            SegmentationConfig sc;
            sc.scale_parameter = sp;
            sc.w_color = c.w_color;
            sc.w_compact = c.w_compact;
            sc.stretch = c.stretch;
            const auto seg = segment(input, sc);
            write_grid(seg.labels, fs::path(seg_out) / ("seg-SP" + sp_tag(sp) + ".smrg"));
            rows.push_back(object_stats(seg, input.geometry().pixel_size, sp));
        }
        detail::spill(fs::path(seg_out) / "table1.csv", format_table1(rows));
    });

    // fuse
    Common fuse_common;
    int fuse_scenario = 2;
    std::string fuse_sp, fuse_segdir, fuse_features, fuse_model, fuse_coarse_path, fuse_out;
    bool fuse_pgm = false;
    auto* fuse = app.add_subcommand("fuse", "Object maps: scenario 1 (SVR on object means) or 2 (coarse product)");
    fuse_common.attach(fuse);
    fuse->add_option("--scenario", fuse_scenario, "1 or 2")->check(CLI::IsMember({1, 2}));
    fuse->add_option("--sp", fuse_sp, "Comma-separated scale parameters");
    fuse->add_option("--seg-dir", fuse_segdir, "Directory holding seg-SP*.smrg")->required();
    fuse->add_option("--features", fuse_features, "Feature layer directory (scenario 1)");
    fuse->add_option("--model", fuse_model, "Model file (scenario 1)");
    fuse->add_option("--coarse", fuse_coarse_path, "Coarse soil-moisture grid (scenario 2)");
    fuse->add_option("--out", fuse_out, "Output directory for maps")->required();
    fuse->add_flag("--quicklook", fuse_pgm, "Also write 8-bit PGMs");
    commands.emplace_back(fuse, [&] {
        auto c = fuse_common.load();
        if (!fuse_sp.empty()) set_config_value(c, "segment.sp", fuse_sp);
        c.validate();
        if (fuse_scenario == 1 && (fuse_features.empty() || fuse_model.empty()))
            throw Error(Errc::InvalidConfig, "scenario 1 needs --features and --model");
        if (fuse_scenario == 2 && fuse_coarse_path.empty()) throw Error(Errc::InvalidConfig, "scenario 2 needs --coarse");
        detail::ensure_dir(fuse_out);
        std::optional<FeatureStack> stack;
        std::optional<SvrModel> model;
        std::optional<Grid> coarse;
        if (fuse_scenario == 1) {
            model = read_svr_model(fuse_model);
            stack = load_stack(fuse_features).subset(model->feature_names);
        } else {
            coarse = read_grid(fuse_coarse_path);
        }
        for (double sp : c.scale_parameters) {
            const std::string tag = sp_tag(sp);
            const auto labels = read_grid(fs::path(fuse_segdir) / ("seg-SP" + tag + ".smrg"));
            const auto seg = segmentation_from_labels(labels, stack ? *stack : FeatureStack{});
            const auto map = fuse_scenario == 1 ? predict_object_map(*model, seg, *stack, sp) : fuse_coarse(seg, *coarse, sp);
            detail::write_map(map, fs::path(fuse_out) / ("sc" + std::to_string(fuse_scenario) + "-SP" + tag), fuse_pgm);
        }
    });

    // eval
    Common eval_common;
    std::vector<std::string> eval_maps;
    std::string eval_points, eval_out, eval_r2;
    auto* eval = app.add_subcommand("eval", "Accuracy table and box statistics at in-situ points");
    eval_common.attach(eval);
    eval->add_option("--maps", eval_maps, "Map files (.smrg); row labels come from the stored names")->required();
    eval->add_option("--points", eval_points, "In-situ CSV (x,y,sm)")->required();
    eval->add_option("--r2", eval_r2, "R2 convention: corr or cod");
    eval->add_option("--out", eval_out, "Output directory (table2.csv, metrics.csv, boxstats.csv)")->required();
    commands.emplace_back(eval, [&] {
        auto c = eval_common.load();
        if (!eval_r2.empty()) set_config_value(c, "eval.r2", eval_r2);
        const auto pts = read_points(eval_points);
        std::vector<MetricsRow> rows;
        std::vector<NamedBoxStats> boxes;
        std::vector<double> obs;
        for (const auto& p : pts) obs.push_back(p.sm);
        boxes.push_back({"In-situ", box_stats(obs)});
        for (const auto& path : eval_maps) {
            const auto g = read_grid(path);
            const std::string label = g.name().empty() ? fs::path(path).stem().string() : g.name();
            rows.push_back(evaluate_map(g, pts, label));
            boxes.push_back({label, box_stats(detail::values_at(g, pts))});
        }
        detail::ensure_dir(eval_out);
        detail::spill(fs::path(eval_out) / "table2.csv", format_table2(rows, c.r2));
        detail::spill(fs::path(eval_out) / "metrics.csv", format_metrics_detail(rows));
        detail::spill(fs::path(eval_out) / "boxstats.csv", format_boxstats(boxes));
    });

    // run
    Common run_common;
    std::string run_scene, run_out, run_sp;
    auto* run = app.add_subcommand("run", "End-to-end pipeline on a scene directory");
    run_common.attach(run);
    run->add_option("--scene", run_scene, "Scene directory");
    run->add_option("--out", run_out, "Output directory");
    run->add_option("--sp", run_sp, "Comma-separated scale parameters");
    commands.emplace_back(run, [&] {
        auto c = run_common.load();
        if (!run_scene.empty()) c.scene_dir = run_scene;
        if (!run_out.empty()) c.out_dir = run_out;
        if (!run_sp.empty()) set_config_value(c, "segment.sp", run_sp);
        const auto r = run_pipeline(c);
        std::cout << "selected: " << text::join(r.selected, ",") << "\n" << format_table2(r.table2, c.r2);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }
    try {
        for (auto& [cmd, fn] : commands)
            if (cmd->parsed()) fn();
    } catch (const Error& e) {
        std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}
