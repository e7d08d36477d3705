#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "mosaic_sr/cli.hpp"
#include "mosaic_sr/model.hpp"
#include "mosaic_sr/mosaic.hpp"
#include "test_util.hpp"

using namespace msr;
using msr::testing::slurp;
using msr::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

nlohmann::json first_line(const std::string& out) {
    return nlohmann::json::parse(out.substr(0, out.find('\n')));
}

nlohmann::json last_line(const std::string& out) {
    auto s = out;
    while (!s.empty() && s.back() == '\n') s.pop_back();
    return nlohmann::json::parse(s.substr(s.rfind('\n') + 1));
}

int count_pgm(const fs::path& dir) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir)) n += e.path().extension() == ".pgm";
    return n;
}

void write_tiny_config(const std::string& path) {
    nlohmann::json j = {{"model", {{"preset", "pyrrcan_lstma"}, {"width", 8}, {"n_rg", 2}, {"n_rb", 1}, {"ca_reduction", 4}}},
                        {"train", {{"batch_size", 2}, {"crop_lr", 8}, {"lr0", 1e-3}, {"epochs", 2}, {"seed", 5}}}};
    std::ofstream(path) << j.dump();
}

}  // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run({}).code, cli::kUsage);
    EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
    EXPECT_EQ(run({"--help"}).code, cli::kOk);
    EXPECT_EQ(run({"gen-data"}).code, cli::kUsage);  // --out is required
    EXPECT_EQ(run({"gradcheck", "--scope", "everything"}).code, cli::kUsage);

    const auto missing = run({"train", "--manifest", "/nonexistent/m.json", "--out", "x.msrk"});
    EXPECT_EQ(missing.code, cli::kUsage);
    EXPECT_NE(missing.err.find("/nonexistent/m.json"), std::string::npos);
}

TEST(Cli, GenDataCountsAndDeterminism) {
    TempDir dir;
    const auto a = run({"gen-data", "--pattern", "ms4x4", "--n", "2", "--dims", "240x480", "--seed", "4", "--out",
                        dir.file("a")});
    ASSERT_EQ(a.code, cli::kOk) << a.err;
    EXPECT_EQ(count_pgm(dir.file("a")), 4);
    EXPECT_TRUE(fs::exists(dir.file("a/manifest.json")));
    const auto cfg = first_line(a.out);
    EXPECT_EQ(cfg.at("command"), "gen-data");
    EXPECT_EQ(cfg.at("config").at("input_format"), "zero_padded_cube");

    const auto m = load_manifest(dir.file("a/manifest.json"));
    const auto pairs = load_pairs(m, "train");
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[0].hr.data.shape(), (Shape{1, 1, 240, 480}));
    EXPECT_EQ(pairs[0].lr.data.shape(), (Shape{1, 1, 80, 160}));

    ASSERT_EQ(run({"gen-data", "--n", "2", "--dims", "240x480", "--seed", "4", "--out", dir.file("b")}).code, cli::kOk);
    for (const char* f : {"hr_0000.pgm", "lr_0001.pgm", "manifest.json"}) {
        EXPECT_EQ(slurp(dir.file(std::string("a/") + f)), slurp(dir.file(std::string("b/") + f))) << f;
    }

    EXPECT_EQ(run({"gen-data", "--dims", "100x120", "--out", dir.file("c")}).code, cli::kUsage);
    EXPECT_EQ(run({"gen-data", "--dims", "24", "--out", dir.file("c")}).code, cli::kUsage);
    EXPECT_EQ(run({"gen-data", "--pattern", "bayer", "--n", "1", "--dims", "18x24", "--out", dir.file("c")}).code,
              cli::kOk);
}

TEST(Cli, GenDataFromHrCropsToBlockMultiple) {
    TempDir dir;
    fs::create_directories(dir.file("hr"));
    const auto bayer = MosaicPattern::bayer();
    save_mosaic_pgm(render_scene(26, 32, bayer, 1), dir.file("hr/x.pgm"));
    save_mosaic_pgm(render_scene(24, 30, bayer, 2), dir.file("hr/y.pgm"));
    const auto r = run({"gen-data", "--pattern", "bayer", "--from-hr", dir.file("hr"), "--test", "1", "--out",
                        dir.file("out")});
    ASSERT_EQ(r.code, cli::kOk) << r.err;
    const auto m = load_manifest(dir.file("out/manifest.json"));
    const auto train = load_pairs(m, "train"), test = load_pairs(m, "test");
    ASSERT_EQ(train.size(), 1u);
    ASSERT_EQ(test.size(), 1u);
    EXPECT_EQ(train[0].hr.data.shape(), (Shape{1, 1, 24, 30}));
    EXPECT_EQ(train[0].lr.data.shape(), (Shape{1, 1, 8, 10}));
    EXPECT_EQ(test[0].hr.data.shape(), (Shape{1, 1, 24, 30}));

    EXPECT_EQ(run({"gen-data", "--from-hr", dir.file("nothing"), "--out", dir.file("o2")}).code, cli::kUsage);
}

TEST(Cli, TrainSrEvalRoundTrip) {
    TempDir dir;
    ASSERT_EQ(run({"gen-data", "--n", "2", "--dims", "48x48", "--seed", "1", "--val", "1", "--test", "1", "--out",
                   dir.file("d")})
                  .code,
              cli::kOk);
    write_tiny_config(dir.file("tiny.json"));
    const auto t = run({"train", "--manifest", dir.file("d/manifest.json"), "--config", dir.file("tiny.json"), "--out",
                        dir.file("m.msrk")});
    ASSERT_EQ(t.code, cli::kOk) << t.err;
    const auto echoed = first_line(t.out).at("config");
    EXPECT_EQ(echoed.at("model").at("in_channels"), 16);
    EXPECT_EQ(echoed.at("model").at("width"), 8);
    EXPECT_EQ(echoed.at("train").at("beta2"), 0.999);  // default filled in
    const auto log = last_line(t.out);
    EXPECT_EQ(log.at("epoch"), 1);
    EXPECT_TRUE(log.at("val_psnr").is_number());
    EXPECT_TRUE(fs::exists(dir.file("m.msrk")));
    EXPECT_TRUE(fs::exists(dir.file("m.msrk.last")));

    const auto e = run({"eval", "--manifest", dir.file("d/manifest.json"), "--ckpt", dir.file("m.msrk"), "--csv",
                        dir.file("r.csv")});
    ASSERT_EQ(e.code, cli::kOk) << e.err;
    const auto report = last_line(e.out);
    EXPECT_EQ(report.at("count"), 1);
    EXPECT_TRUE(report.at("psnr").at("mean").is_number());
    EXPECT_NE(slurp(dir.file("r.csv")).find("name,psnr,ssim"), std::string::npos);

    const auto sr = run({"sr", "--ckpt", dir.file("m.msrk"), "--in", dir.file("d/lr_0000.pgm"), "--out", dir.file("a.pgm")});
    ASSERT_EQ(sr.code, cli::kOk) << sr.err;
    const auto out = load_mosaic_pgm(dir.file("a.pgm"), MosaicPattern::ms4x4());
    EXPECT_EQ(out.data.shape(), (Shape{1, 1, 48, 48}));
    for (int y = 3; y < 48; y += 4)
        for (int x = 2; x < 48; x += 4) EXPECT_EQ(out.data.at(0, 0, y, x), 0.f);
    ASSERT_EQ(run({"sr", "--ckpt", dir.file("m.msrk"), "--in", dir.file("d/lr_0000.pgm"), "--out", dir.file("b.pgm")}).code,
              cli::kOk);
    EXPECT_EQ(slurp(dir.file("a.pgm")), slurp(dir.file("b.pgm")));

    // Resuming a finished run with more epochs continues from the last state.
    const auto more = run({"train", "--manifest", dir.file("d/manifest.json"), "--config", dir.file("tiny.json"), "--out",
                           dir.file("m2.msrk"), "--resume", dir.file("m.msrk.last"), "--epochs", "3"});
    ASSERT_EQ(more.code, cli::kOk) << more.err;
    EXPECT_EQ(last_line(more.out).at("epoch"), 2);

    // A Bayer manifest does not match an MS checkpoint.
    ASSERT_EQ(run({"gen-data", "--pattern", "bayer", "--n", "1", "--test", "1", "--dims", "12x12", "--out", dir.file("b")})
                  .code,
              cli::kOk);
    EXPECT_EQ(run({"eval", "--manifest", dir.file("b/manifest.json"), "--ckpt", dir.file("m.msrk")}).code, cli::kUsage);
    EXPECT_EQ(run({"eval", "--manifest", dir.file("d/manifest.json")}).code, cli::kUsage);
}

TEST(Cli, TrainRejectsInconsistentConfig) {
    TempDir dir;
    ASSERT_EQ(run({"gen-data", "--n", "1", "--dims", "48x48", "--out", dir.file("d")}).code, cli::kOk);
    std::ofstream(dir.file("c.json")) << R"({"model": {"in_channels": 1, "width": 8, "n_rg": 1, "n_rb": 1, "ca_reduction": 4}})";
    const auto r = run({"train", "--manifest", dir.file("d/manifest.json"), "--config", dir.file("c.json"), "--out",
                        dir.file("m.msrk"), "--crop-lr", "8", "--epochs", "1"});
    EXPECT_EQ(r.code, cli::kUsage);
    EXPECT_NE(r.err.find("input channels"), std::string::npos) << r.err;

    std::ofstream(dir.file("bad.json")) << R"({"optimizer": {}})";
    EXPECT_EQ(run({"train", "--manifest", dir.file("d/manifest.json"), "--config", dir.file("bad.json"), "--out",
                   dir.file("m.msrk")})
                  .code,
              cli::kUsage);
}

TEST(Cli, VariantConfigsDifferOnlyInTheirSwitches) {
    const auto rcan = ModelConfig::preset("rcan").to_json();
    const auto pyr = ModelConfig::preset("pyrrcan_lstma").to_json();
    std::vector<std::string> differing;
    for (const auto& [key, value] : rcan.items())
        if (pyr.at(key) != value) differing.push_back(key);
    EXPECT_EQ(differing, (std::vector<std::string>{"between_rg_attention", "use_pyramid_convlstm"}));
}

TEST(Cli, GradcheckExitCodes) {
    const auto ok = run({"gradcheck", "--scope", "op"});
    EXPECT_EQ(ok.code, cli::kOk) << ok.err;
    EXPECT_NE(ok.out.find("\"max_rel_error\""), std::string::npos);
    EXPECT_NE(ok.out.find("\"conv2d\""), std::string::npos);
    EXPECT_EQ(run({"gradcheck", "--scope", "layer", "--inject-corruption", "0.5"}).code, cli::kCheckFailed);
}
