#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "radargate/experiments.hpp"

namespace fs = std::filesystem;
using namespace radargate;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "radargate_cli_test";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path write_config(const std::string& name, const std::string& text) {
    fs::create_directories(kRoot);
    const auto p = kRoot / name;
    std::ofstream(p) << text;
    return p;
}

int run(const std::string& args) {
    const std::string cmd = std::string(RADARGATE_CLI) + " " + args + " > " + (kRoot / "stdout.txt").string() +
                            " 2> " + (kRoot / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Every opening tag is closed in order; self-closing tags and the prolog
// are skipped.
bool tags_balanced(const std::string& xml) {
    std::vector<std::string> stack;
    const std::regex tag(R"(<(/?)([A-Za-z][A-Za-z0-9]*)[^>]*?(/?)>)");
    for (auto it = std::sregex_iterator(xml.begin(), xml.end(), tag); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        if (m[3] == "/") continue;
        if (m[1] == "/") {
            if (stack.empty() || stack.back() != m[2]) return false;
            stack.pop_back();
        } else {
            stack.push_back(m[2]);
        }
    }
    return stack.empty();
}

const char* kSmallTrain = "steps = 30\neval_every = 10\nsamples = 4\nn = 3\nk = 2\nd_in = 4\nd_out = 4\nr = 2\n";

}  // namespace

TEST(Cli, TrainIsByteReproducible) {
    const auto cfg = write_config("train.cfg", std::string(kSmallTrain) + "repeats = 2\n");
    const auto a = kRoot / "train_a", b = kRoot / "train_b";
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + a.string()), 0) << slurp(kRoot / "stderr.txt");
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + b.string()), 0);
    for (const char* f : {"summary.csv", "run_stretch_0.csv", "run_radar_1.csv", "run_radar_1.rgk"})
        EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
    EXPECT_FALSE(slurp(a / "run_radar_0.csv").empty());
    const auto ck = load_checkpoint((a / "run_radar_0.rgk").string());
    EXPECT_EQ(ck.step, 30u);
}

TEST(Cli, SeedOverrideChangesResults) {
    const auto cfg = write_config("seed.cfg", kSmallTrain);
    const auto a = kRoot / "seed_a", b = kRoot / "seed_b";
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + a.string() + " --seed 1"), 0);
    ASSERT_EQ(run("train --config " + cfg.string() + " --out " + b.string() + " --seed 2"), 0);
    EXPECT_NE(slurp(a / "run_radar_0.csv"), slurp(b / "run_radar_0.csv"));
    EXPECT_NE(slurp(a / "run_radar_0.json").find("\"seed\""), std::string::npos);
}

TEST(Cli, GradcheckAndComplexityReproducible) {
    const auto cfg = write_config("gc.cfg", "configs = 6\nd_list = 8, 16\n");
    for (const char* sub : {"gradcheck", "complexity"}) {
        const auto a = kRoot / (std::string(sub) + "_a"), b = kRoot / (std::string(sub) + "_b");
        ASSERT_EQ(run(std::string(sub) + " --config " + cfg.string() + " --out " + a.string()), 0) << sub;
        ASSERT_EQ(run(std::string(sub) + " --config " + cfg.string() + " --out " + b.string()), 0) << sub;
        const std::string file = std::string(sub) + ".csv";
        EXPECT_EQ(slurp(a / file), slurp(b / file));
    }
    std::istringstream rows(slurp(kRoot / "complexity_a" / "complexity.csv"));
    std::string line;
    std::size_t count = 0;
    while (std::getline(rows, line)) ++count;
    EXPECT_EQ(count, 1u + 2u * 2u);
}

TEST(Cli, ScaleSweepWritesSummary) {
    const auto cfg = write_config("sweep.cfg",
                                  "n_list = 2, 4\nrepeats = 1\nsteps = 10\neval_every = 10\nsamples = 4\nbatch = 4\n"
                                  "clusters = 2\n");
    const auto out = kRoot / "sweep";
    const int code = run("scale-sweep --config " + cfg.string() + " --out " + out.string());
    EXPECT_TRUE(code == 0 || code == 1) << slurp(kRoot / "stderr.txt");
    const auto summary = slurp(out / "scale_summary.csv");
    EXPECT_EQ(summary.rfind("n,mode,mean_final_loss\n", 0), 0u);
    EXPECT_NE(summary.find("\n4,radar,"), std::string::npos);
}

TEST(Cli, ConeDemoWritesWellFormedSvg) {
    const auto cfg = write_config("cone.cfg", "steps = 10\neval_every = 5\nprobe_samples = 32\n");
    const auto out = kRoot / "cone";
    ASSERT_EQ(run("cone-demo --config " + cfg.string() + " --out " + out.string()), 0) << slurp(kRoot / "stderr.txt");
    const auto svg = slurp(out / "cone_0.svg");
    EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
    EXPECT_NE(svg.find("<svg xmlns=\"http://www.w3.org/2000/svg\""), std::string::npos);
    EXPECT_NE(svg.find("id=\"cartesian\""), std::string::npos);
    EXPECT_NE(svg.find("id=\"polar\""), std::string::npos);
    EXPECT_TRUE(tags_balanced(svg));
    EXPECT_FALSE(slurp(out / "cone_0_points.csv").empty());
    EXPECT_NE(slurp(out / "cone.csv").find("\n0,4,8,"), std::string::npos);
}

TEST(Cli, RejectsBadInput) {
    const auto odd = write_config("odd.cfg", "d_list = 64, 65\n");
    EXPECT_EQ(run("complexity --config " + odd.string() + " --out " + (kRoot / "odd").string()), 2);
    EXPECT_NE(slurp(kRoot / "stderr.txt").find("65"), std::string::npos);
    const auto unk = write_config("unk.cfg", "bogus = 1\n");
    EXPECT_EQ(run("train --config " + unk.string()), 2);
    EXPECT_NE(slurp(kRoot / "stderr.txt").find("bogus"), std::string::npos);
    EXPECT_EQ(run("train --config " + (kRoot / "missing.cfg").string()), 2);
    EXPECT_NE(run("no-such-command"), 0);
    EXPECT_NE(run(""), 0);
}

TEST(ConePlot, ZeroRotationOverlaysExperts) {
    Rng rng(1);
    LayerDims d;
    d.n = 3;
    d.d_in = 4;
    d.d_out = 4;
    d.r = 2;
    d.k = 3;
    auto L = make_layer(rng, d);
    const Vec x = random_gaussian(rng, 4), t = random_gaussian(rng, 4, 5.0);
    const auto in = rotation_inputs(L, x, t);
    const auto pts = cone_plot_points(in, Mat(4, 2), cone_project(in.delta, in.v));
    ASSERT_EQ(pts.size(), 2u * 3u + 2u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(pts[3 + i].kind, "rotated");
        EXPECT_NEAR(pts[3 + i].x, pts[i].x, 1e-12);
        EXPECT_NEAR(pts[3 + i].y, pts[i].y, 1e-12);
    }
}

TEST(RunSeed, DistinctAcrossCells) {
    std::set<std::uint64_t> seen;
    for (std::size_t pos = 0; pos < 4; ++pos)
        for (std::size_t rep = 0; rep < 5; ++rep) seen.insert(run_seed(17, pos, 5 * (pos + 1), rep));
    EXPECT_EQ(seen.size(), 20u);
    EXPECT_EQ(run_seed(17, 1, 10, 2), run_seed(17, 1, 10, 2));
}
