#include <gtest/gtest.h>

#include <smfuse/pipeline.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

using namespace smfuse;
namespace fs = std::filesystem;

namespace {

struct Run {
    int status = -1;
    std::string out;
};

Run cli(const std::string& args) {
    Run r;
    const std::string cmd = std::string(SMFUSE_CLI) + " " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.out.append(buf, n);
    const int w = pclose(p);
    r.status = WIFEXITED(w) ? WEXITSTATUS(w) : -1;
    return r;
}

fs::path workdir() {
    static const fs::path d = [] {
        auto p = fs::temp_directory_path() / "smfuse_test_cli";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return d;
}

// 64x64 scene keeps the end-to-end runs short
const char* kSmallScene = "--set synth.width=64 --set synth.height=64 --set synth.coarse_factor=16 "
                          "--set synth.smoothness=8 --set synth.veg_smoothness=4";

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST(Config, EmptyGivesDefaults) {
    const auto c = parse_config("");
    const PipelineConfig d;
    EXPECT_EQ(c.scale_parameters, (std::vector<double>{64, 128, 256, 512, 1024, 2048}));
    EXPECT_EQ(c.target_count, 6);
    EXPECT_EQ(c.w_color, d.w_color);
    EXPECT_EQ(c.indices, d.indices);
    EXPECT_NO_THROW(c.validate());
}

TEST(Config, ListsCommentsAndOverrides) {
    const auto c = parse_config("# comment\n\nsegment.sp = 64,128\nselect.target_count = 4\nregress.gamma = auto\n");
    EXPECT_EQ(c.scale_parameters, (std::vector<double>{64, 128}));
    EXPECT_EQ(c.target_count, 4);
    EXPECT_TRUE(c.gamma_values.empty());
    auto d = c;
    apply_override(d, "eval.r2=cod");
    EXPECT_EQ(d.r2, R2Convention::Determination);
    apply_override(d, "synth.seed = 7");
    EXPECT_EQ(d.synth.seed, 7u);
}

TEST(Config, ErrorsCarryLineNumbers) {
    try {
        parse_config("segment.sp = 64\n\nsegment.sp = banana\n");
        FAIL();
    } catch (const LineError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_EQ(e.code(), Errc::ConfigParse);
    }
    try {
        parse_config("segment.bogus = 1\n");
        FAIL();
    } catch (const LineError& e) {
        EXPECT_EQ(e.line(), 1u);
        EXPECT_EQ(e.code(), Errc::UnknownKey);
    }
    EXPECT_THROW(parse_config("just words\n"), LineError);
    PipelineConfig c;
    c.scale_parameters = {128, 64};
    EXPECT_THROW(c.validate(), Error);
    c.scale_parameters.clear();
    EXPECT_THROW(c.validate(), Error);
}

TEST(Stage, ErrorsNameTheStage) {
    try {
        run_stage("segment", [] { throw Error(Errc::AllNodata, "x"); });
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "segment");
        EXPECT_EQ(e.code(), Errc::AllNodata);
        EXPECT_NE(std::string(e.what()).find("segment: "), std::string::npos);
    }
}

TEST(Cli, HelpAndUsageErrors) {
    const auto top = cli("--help");
    EXPECT_EQ(top.status, 0);
    for (const char* sub : {"synth", "features", "select", "train", "predict", "segment", "fuse", "eval", "run"})
        EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
    EXPECT_EQ(cli("segment --help").status, 0);
    EXPECT_EQ(cli("").status, 1);
    EXPECT_EQ(cli("run --no-such-flag").status, 1);
    EXPECT_EQ(cli("run --set segment.bogus=1").status, 1);
    EXPECT_EQ(cli("fuse --scenario 3 --seg-dir x --out y").status, 1);
}

TEST(Cli, DataAndNumericErrors) {
    EXPECT_EQ(cli("run --scene " + (workdir() / "missing").string() + " --out " + (workdir() / "o").string()).status, 2);
    const auto bad = cli("synth --set synth.sm_lo=5 --set synth.sm_hi=5 --out " + (workdir() / "bad").string());
    EXPECT_EQ(bad.status, 3);
    EXPECT_NE(bad.out.find("DegenerateRange"), std::string::npos);
}

TEST(Cli, RunWithOneScaleGivesFourRowsAndIsDeterministic) {
    const auto scene = workdir() / "scene";
    ASSERT_EQ(cli(std::string("synth ") + kSmallScene + " --seed 42 --out " + scene.string()).status, 0);
    const auto a = workdir() / "a", b = workdir() / "b";
    const auto ra = cli("run --scene " + scene.string() + " --out " + a.string() + " --sp 64");
    ASSERT_EQ(ra.status, 0) << ra.out;
    const auto t2 = detail::slurp(a / "table2.csv");
    EXPECT_EQ(lines(t2), 5u);
    for (const char* row : {"\nS1S2,", "\nCoarse,", "\nSc1-64,", "\nSc2-64,"}) EXPECT_NE(t2.find(row), std::string::npos);
    for (const char* f : {"model.svr", "rfe.csv", "cv.csv", "training.csv", "seg-SP64.smrg", "table1.csv",
                          "boxstats.csv", "maps/pixel.smrg", "maps/coarse.smrg", "maps/sc1-SP64.smrg",
                          "maps/sc2-SP64.smrg"})
        EXPECT_TRUE(fs::exists(a / f)) << f;

    ASSERT_EQ(cli("run --threads 3 --scene " + scene.string() + " --out " + b.string() + " --sp 64").status, 0);
    EXPECT_EQ(detail::slurp(b / "table2.csv"), t2);
    EXPECT_EQ(detail::slurp(b / "table1.csv"), detail::slurp(a / "table1.csv"));
}

TEST(Cli, StagewiseCommandsProduceReports) {
    const auto scene = workdir() / "scene2";
    ASSERT_EQ(cli(std::string("synth ") + kSmallScene + " --seed 7 --out " + scene.string()).status, 0);
    const auto w = workdir() / "stages";
    const auto f = w / "features";
    ASSERT_EQ(cli("features --scene " + scene.string() + " --out " + f.string()).status, 0);
    const auto pts = (scene / "insitu.csv").string();
    ASSERT_EQ(cli("select --features " + f.string() + " --points " + pts + " --out " + w.string()).status, 0);
    ASSERT_TRUE(fs::exists(w / "selected.txt"));
    const auto sel = (w / "selected.txt").string();
    ASSERT_EQ(cli("train --features " + f.string() + " --points " + pts + " --selected " + sel + " --out " +
                  (w / "model.svr").string()).status, 0);
    ASSERT_EQ(cli("predict --model " + (w / "model.svr").string() + " --features " + f.string() + " --out " +
                  (w / "pixel.smrg").string() + " --quicklook").status, 0);
    EXPECT_TRUE(fs::exists(w / "pixel.pgm"));
    ASSERT_EQ(cli("segment --features " + f.string() + " --selected " + sel + " --sp 64,256 --out " + w.string()).status,
              0);
    EXPECT_EQ(lines(detail::slurp(w / "table1.csv")), 3u);
    ASSERT_EQ(cli("fuse --scenario 1 --sp 64 --seg-dir " + w.string() + " --features " + f.string() + " --model " +
                  (w / "model.svr").string() + " --out " + (w / "maps").string()).status, 0);
    ASSERT_EQ(cli("fuse --scenario 2 --sp 64 --seg-dir " + w.string() + " --coarse " + (scene / "coarse_sm.smrg").string() +
                  " --out " + (w / "maps").string()).status, 0);
    const auto ev = cli("eval --points " + pts + " --out " + w.string() + " --maps " + (w / "pixel.smrg").string() + " " +
                        (w / "maps" / "sc1-SP64.smrg").string() + " " + (w / "maps" / "sc2-SP64.smrg").string());
    ASSERT_EQ(ev.status, 0) << ev.out;
    const auto t2 = detail::slurp(w / "table2.csv");
    EXPECT_EQ(lines(t2), 4u);

    for (const char* row : {"\nS1S2,", "\nSc1-64,", "\nSc2-64,"}) EXPECT_NE(t2.find(row), std::string::npos) << row;
}
