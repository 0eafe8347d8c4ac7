#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "radargate/io.hpp"

using namespace radargate;

namespace {

ExperimentConfig parse(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

RadarLayer sample_layer(std::size_t r_a, StretchVariant var, std::uint64_t seed) {
    Rng rng(seed);
    LayerDims d;
    d.n = 3;
    d.d_in = 5;
    d.d_out = 6;
    d.r = 2;
    d.k = 2;
    d.r_a = r_a;
    d.variant = var;
    return make_layer(rng, d, true);
}

}  // namespace

TEST(Config, DefaultsWhenEmpty) {
    const auto cfg = parse("# nothing\n\n");
    EXPECT_EQ(cfg.train.dims.n, LayerDims{}.n);
    EXPECT_EQ(cfg.n_list, (std::vector<std::size_t>{5, 10, 20, 40}));
}

TEST(Config, ParsesEveryKind) {
    const auto cfg = parse(
        "seed = 42\n n=6\nk = 3\ntau=0.5\nvariant = input\nmode = stretch\nmodes = radar, base\n"
        "task = multitask\noptimizer = sgd\nlr = 1e-3\ngrad_mode = approx\nn_list = 2,4\n"
        "d_list = 8, 16\nr_a = 2\n");
    EXPECT_EQ(cfg.train.seed, 42u);
    EXPECT_EQ(cfg.train.dims.n, 6u);
    EXPECT_EQ(cfg.train.dims.k, 3u);
    EXPECT_EQ(cfg.train.dims.tau, 0.5);
    EXPECT_EQ(cfg.train.dims.variant, StretchVariant::InputProj);
    EXPECT_EQ(cfg.train.dims.mode, GateMode::StretchOnly);
    EXPECT_EQ(cfg.modes, (std::vector<GateMode>{GateMode::Radar, GateMode::BaseOnly}));
    EXPECT_EQ(cfg.train.task, TaskKind::MultiTaskMix);
    EXPECT_EQ(cfg.train.optimizer, Optimizer::SGD);
    EXPECT_EQ(cfg.train.lr, 1e-3);
    EXPECT_EQ(cfg.train.grad_mode, StretchGradMode::Approximate);
    EXPECT_EQ(cfg.n_list, (std::vector<std::size_t>{2, 4}));
    EXPECT_EQ(cfg.d_list, (std::vector<std::uint64_t>{8, 16}));
    EXPECT_EQ(cfg.train.dims.r_a, 2u);
}

TEST(Config, UnknownKeyIsNamed) {
    const auto msg = error_of("n = 4\nlearning_rate = 0.1\n");
    EXPECT_NE(msg.find("unknown key 'learning_rate' (line 2)"), std::string::npos) << msg;
}

TEST(Config, AllFieldErrorsReportedTogether) {
    const auto msg = error_of("d_out = 7\nk = 9\nlr = -1\nvariant = wide\nsteps = ten\n");
    EXPECT_EQ(msg.rfind("invalid config:", 0), 0u);
    for (const char* key : {"d_out:", "k:", "lr:", "variant:", "steps:"})
        EXPECT_NE(msg.find(key), std::string::npos) << key << " missing from\n" << msg;
}

TEST(Config, RejectsMalformedLines) {
    EXPECT_NE(error_of("n 4\n").find("line 1: expected key = value"), std::string::npos);
    EXPECT_NE(error_of("n = 4\nn = 5\n").find("n: given more than once"), std::string::npos);
    EXPECT_NE(error_of("n = -3\n").find("n:"), std::string::npos);
    EXPECT_NE(error_of("tau = nan\n").find("tau:"), std::string::npos);
    EXPECT_NE(error_of("d_list = 64, 65\n").find("entry 65"), std::string::npos);
    EXPECT_NE(error_of("n_list = 4, x\n").find("n_list:"), std::string::npos);
}

TEST(Config, EveryKeyIsAccepted) {
    for (auto k : config_keys()) {
        const auto msg = error_of(std::string(k) + " = ???\n");
        EXPECT_EQ(msg.find("unknown key"), std::string::npos) << k;
    }
}

TEST(Config, LoadMissingFile) {
    EXPECT_THROW(load_config("/nonexistent/radargate.cfg"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    for (std::size_t r_a : {0, 2})
        for (auto var : {StretchVariant::InputProj, StretchVariant::ConcatProj}) {
            Checkpoint ck{sample_layer(r_a, var, 3 + r_a), 0xDEADBEEFCAFEULL, 1234};
            const auto bytes = encode_checkpoint(ck);
            const auto back = decode_checkpoint(bytes);
            EXPECT_EQ(encode_checkpoint(back), bytes);
            EXPECT_EQ(back.rng_state, ck.rng_state);
            EXPECT_EQ(back.step, 1234u);
            EXPECT_EQ(back.layer.base.W, ck.layer.base.W);
            EXPECT_EQ(back.layer.stretch.theta_s, ck.layer.stretch.theta_s);
            EXPECT_EQ(effective_theta_r(back.layer.rotation), effective_theta_r(ck.layer.rotation));
            const Vec x{0.1, -0.2, 0.3, 0.7, -1.1};
            EXPECT_EQ(forward(back.layer, x).y, forward(ck.layer, x).y);
        }
}

TEST(Checkpoint, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "radargate_io_test.rgk";
    Checkpoint ck{sample_layer(0, StretchVariant::ConcatProj, 9), 77, 5};
    save_checkpoint(path.string(), ck);
    EXPECT_EQ(encode_checkpoint(load_checkpoint(path.string())), encode_checkpoint(ck));
    std::filesystem::remove(path);
    EXPECT_THROW(load_checkpoint(path.string()), CheckpointError);
}

TEST(Checkpoint, TruncationReportsOffset) {
    Checkpoint ck{sample_layer(0, StretchVariant::InputProj, 4), 1, 2};
    const auto bytes = encode_checkpoint(ck);
    // header: magic 4, version 4, six u64, tau 8, three u8 = 67 bytes; W is 5x6
    const std::size_t cut = 67 + 8 * 30 + 3;
    try {
        decode_checkpoint(bytes.substr(0, cut));
        FAIL() << "no error";
    } catch (const CheckpointError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("truncated at byte " + std::to_string(cut)), std::string::npos) << msg;
        EXPECT_NE(msg.find("reading A at offset 307"), std::string::npos) << msg;
    }
    for (std::size_t n = 0; n < bytes.size(); n += 13) EXPECT_THROW(decode_checkpoint(bytes.substr(0, n)), CheckpointError);
}

TEST(Checkpoint, RejectsCorruptHeaders) {
    Checkpoint ck{sample_layer(2, StretchVariant::ConcatProj, 5), 1, 2};
    const auto bytes = encode_checkpoint(ck);
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
    bad = bytes;
    bad[4] = 2;  // version
    try {
        decode_checkpoint(bad);
        FAIL() << "no error";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
    }
    EXPECT_THROW(decode_checkpoint(bytes + "x"), CheckpointError);
    bad = bytes;
    bad[8 + 16] = 7;  // d_out 6 -> 7 makes the rest inconsistent
    EXPECT_THROW(decode_checkpoint(bad), CheckpointError);
}
