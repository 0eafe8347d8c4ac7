#pragma once

// Flat key=value experiment configs and the binary checkpoint container.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "radargate/costmodel.hpp"
#include "radargate/train.hpp"

namespace radargate {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct ExperimentConfig {
    TrainConfig train;
    std::vector<GateMode> modes{GateMode::StretchOnly, GateMode::Radar};
    std::size_t repeats = 1;  // seeds per (n, mode) in sweeps
    std::vector<std::size_t> n_list{5, 10, 20, 40};
    std::vector<std::uint64_t> d_list = default_sweep_dims();
    std::size_t tokens = 4;       // L in the cost sweep
    std::size_t configs = 100;    // gradcheck instances
    std::size_t probe_samples = 256;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace detail

inline const std::vector<std::string_view>& config_keys() {
    static const std::vector<std::string_view> keys{
        "seed",    "n",         "d_in",       "d_out",      "r",          "r_a",   "k",
        "tau",     "variant",   "mode",       "modes",      "task",       "samples", "noise",
        "margin",  "clusters",  "optimizer",  "lr",         "batch",      "steps", "eval_every",
        "lora_scale", "init_scale", "grad_mode", "repeats", "n_list",     "d_list", "tokens",
        "configs", "probe_samples"};
    return keys;
}

/// Parses a flat config. Blank lines and lines starting with '#' are
/// ignored. Every problem is collected and reported together; each message
/// names its key.
inline ExperimentConfig parse_config(std::istream& in, ExperimentConfig cfg = {}) {
    std::vector<std::string> errors;
    std::map<std::string, std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        const std::string key = detail::trim(std::string_view(t).substr(0, eq));
        const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        bool known = false;
        for (auto k : config_keys()) known = known || k == key;
        if (!known) {
            errors.push_back("unknown key '" + key + "' (line " + std::to_string(lineno) + ")");
            continue;
        }
        if (seen.count(key)) errors.push_back(key + ": given more than once");
        seen[key] = value;
    }

    auto fail = [&](const std::string& key, const std::string& why) {
        errors.push_back(key + ": " + why + " (got '" + seen[key] + "')");
    };
    auto get_uint = [&](const std::string& key, auto& dst) {
        if (!seen.count(key)) return;
        const std::string& s = seen[key];
        std::size_t pos = 0;
        try {
            if (s.empty() || s.front() == '-') throw std::invalid_argument("negative");
            const unsigned long long v = std::stoull(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("trailing");
            dst = static_cast<std::remove_reference_t<decltype(dst)>>(v);
        } catch (const std::exception&) {
            fail(key, "expected a non-negative integer");
        }
    };
    auto get_double = [&](const std::string& key, double& dst) {
        if (!seen.count(key)) return;
        const std::string& s = seen[key];
        std::size_t pos = 0;
        try {
            const double v = std::stod(s, &pos);
            if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument("bad");
            dst = v;
        } catch (const std::exception&) {
            fail(key, "expected a finite number");
        }
    };

    TrainConfig& tc = cfg.train;
    LayerDims& d = tc.dims;
    get_uint("seed", tc.seed);
    get_uint("n", d.n);
    get_uint("d_in", d.d_in);
    get_uint("d_out", d.d_out);
    get_uint("r", d.r);
    get_uint("r_a", d.r_a);
    get_uint("k", d.k);
    get_double("tau", d.tau);
    get_uint("samples", tc.samples);
    get_double("noise", tc.noise);
    get_double("margin", tc.margin);
    get_uint("clusters", tc.clusters);
    get_double("lr", tc.lr);
    get_uint("batch", tc.batch);
    get_uint("steps", tc.steps);
    get_uint("eval_every", tc.eval_every);
    get_double("lora_scale", tc.lora_scale);
    get_double("init_scale", tc.init_scale);
    get_uint("repeats", cfg.repeats);
    get_uint("tokens", cfg.tokens);
    get_uint("configs", cfg.configs);
    get_uint("probe_samples", cfg.probe_samples);

    if (seen.count("variant")) {
        if (seen["variant"] == "input") d.variant = StretchVariant::InputProj;
        else if (seen["variant"] == "concat") d.variant = StretchVariant::ConcatProj;
        else fail("variant", "expected 'input' or 'concat'");
    }
    if (seen.count("mode")) {
        if (auto m = parse_gate_mode(seen["mode"])) d.mode = *m;
        else fail("mode", "expected radar, stretch, rotation or base");
    }
    if (seen.count("modes")) {
        cfg.modes.clear();
        for (const auto& s : detail::split_list(seen["modes"])) {
            if (auto m = parse_gate_mode(s)) cfg.modes.push_back(*m);
            else fail("modes", "unknown mode '" + s + "'");
        }
    }
    if (seen.count("task")) {
        if (auto t = parse_task_kind(seen["task"])) tc.task = *t;
        else fail("task", "expected in-cone, out-of-cone or multitask");
    }
    if (seen.count("optimizer")) {
        if (seen["optimizer"] == "adam") tc.optimizer = Optimizer::Adam;
        else if (seen["optimizer"] == "sgd") tc.optimizer = Optimizer::SGD;
        else fail("optimizer", "expected 'adam' or 'sgd'");
    }
    if (seen.count("grad_mode")) {
        if (seen["grad_mode"] == "exact") tc.grad_mode = StretchGradMode::ExactMasked;
        else if (seen["grad_mode"] == "approx") tc.grad_mode = StretchGradMode::Approximate;
        else fail("grad_mode", "expected 'exact' or 'approx'");
    }
    auto parse_uints = [&](const std::string& key, auto& dst) {
        if (!seen.count(key)) return;
        dst.clear();
        for (const auto& s : detail::split_list(seen[key])) {
            try {
                std::size_t pos = 0;
                if (s.front() == '-') throw std::invalid_argument("negative");
                const auto v = std::stoull(s, &pos);
                if (pos != s.size()) throw std::invalid_argument("trailing");
                dst.push_back(v);
            } catch (const std::exception&) {
                fail(key, "expected a comma-separated list of non-negative integers");
                return;
            }
        }
    };
    parse_uints("n_list", cfg.n_list);
    parse_uints("d_list", cfg.d_list);

    // constraints
    auto check = [&](bool ok, const std::string& key, const std::string& why) {
        if (!ok) errors.push_back(key + ": " + why);
    };
    check(d.n >= 1, "n", "must be >= 1");
    check(d.d_in >= 1, "d_in", "must be >= 1");
    check(d.d_out >= 2 && d.d_out % 2 == 0, "d_out", "must be even and >= 2");
    check(d.r >= 1 && d.r <= std::min(d.d_in, d.d_out), "r", "must lie in [1, min(d_in, d_out)]");
    check(d.r_a <= d.d_out, "r_a", "must not exceed d_out");
    check(d.k >= 1 && d.k <= d.n, "k", "must lie in [1, n]");
    check(d.tau > 0.0, "tau", "must be positive");
    check(tc.samples >= 1, "samples", "must be >= 1");
    check(tc.noise >= 0.0, "noise", "must be >= 0");
    check(tc.margin > 0.0, "margin", "must be positive");
    check(tc.clusters >= 1, "clusters", "must be >= 1");
    check(tc.lr > 0.0, "lr", "must be positive");
    check(tc.batch >= 1, "batch", "must be >= 1");
    check(tc.eval_every >= 1, "eval_every", "must be >= 1");
    check(tc.lora_scale > 0.0, "lora_scale", "must be positive");
    check(tc.init_scale >= 0.0, "init_scale", "must be >= 0");
    check(!cfg.modes.empty(), "modes", "must list at least one mode");
    check(cfg.repeats >= 1, "repeats", "must be >= 1");
    check(!cfg.n_list.empty(), "n_list", "must be nonempty");
    for (auto n : cfg.n_list) check(n >= 1, "n_list", "entries must be >= 1");
    check(!cfg.d_list.empty(), "d_list", "must be nonempty");
    for (auto v : cfg.d_list) check(v >= 2 && v % 2 == 0, "d_list", "entry " + std::to_string(v) + " must be even and >= 2");
    check(cfg.tokens >= 1, "tokens", "must be >= 1");
    check(cfg.configs >= 1, "configs", "must be >= 1");

    if (!errors.empty()) {
        std::string msg = "invalid config:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig defaults = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse_config(in, std::move(defaults));
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (little-endian):
//   "RGK1"  u32 version
//   u64 n, d_in, d_out, r, r_a, k   f64 tau   u8 variant, mode, factorized
//   f64 matrices: W, A_1, B_1, ..., A_n, B_n, theta_s, then theta_r or U, V
//   u64 rng state, u64 step

inline constexpr char kCheckpointMagic[4] = {'R', 'G', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    RadarLayer layer;
    std::uint64_t rng_state = 0;
    std::uint64_t step = 0;
};

namespace detail {

class Writer {
public:
    template <class T>
    void put(T v) {
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.append(p, sizeof(T));
    }
    void put(const Mat& m) {
        for (double x : m.flat()) put(x);
    }
    void raw(const char* p, std::size_t n) { buf_.append(p, n); }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}
    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    Mat mat(std::size_t rows, std::size_t cols, const char* what) {
        need(rows * cols * sizeof(double), what);
        Mat m(rows, cols);
        std::memcpy(m.flat().data(), buf_.data() + pos_, rows * cols * sizeof(double));
        pos_ += rows * cols * sizeof(double);
        return m;
    }
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > buf_.size())
            throw CheckpointError("checkpoint truncated at byte " + std::to_string(buf_.size()) +
                                  " while reading " + what + " at offset " + std::to_string(pos_) +
                                  " (needs " + std::to_string(n) + " bytes)");
    }
    std::size_t pos() const { return pos_; }
    std::size_t size() const { return buf_.size(); }

private:
    std::string buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
    const RadarLayer& L = ck.layer;
    validate(L);
    detail::Writer w;
    w.raw(kCheckpointMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint64_t>(L.n());
    w.put<std::uint64_t>(L.d_in());
    w.put<std::uint64_t>(L.d_out());
    w.put<std::uint64_t>(L.bank.rank());
    w.put<std::uint64_t>(L.rotation.factorized ? L.rotation.r_a() : 0);
    w.put<std::uint64_t>(L.stretch.k);
    w.put<double>(L.stretch.tau);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(L.stretch.variant));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(L.mode));
    w.put<std::uint8_t>(L.rotation.factorized ? 1 : 0);
    w.put(L.base.W);
    for (const auto& m : L.bank.modules()) {
        w.put(m.A);
        w.put(m.B);
    }
    w.put(L.stretch.theta_s);
    if (L.rotation.factorized) {
        w.put(L.rotation.U);
        w.put(L.rotation.V);
    } else {
        w.put(L.rotation.full);
    }
    w.put<std::uint64_t>(ck.rng_state);
    w.put<std::uint64_t>(ck.step);
    return w.bytes();
}

inline Checkpoint decode_checkpoint(std::string bytes) {
    detail::Reader rd(std::move(bytes));
    rd.need(4, "magic");
    char magic[4];
    for (auto& c : magic) c = rd.get<char>("magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw CheckpointError("not a checkpoint: bad magic bytes");
    const auto version = rd.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    const auto n = rd.get<std::uint64_t>("header n");
    const auto d_in = rd.get<std::uint64_t>("header d_in");
    const auto d_out = rd.get<std::uint64_t>("header d_out");
    const auto r = rd.get<std::uint64_t>("header r");
    const auto r_a = rd.get<std::uint64_t>("header r_a");
    const auto k = rd.get<std::uint64_t>("header k");
    const auto tau = rd.get<double>("header tau");
    const auto variant = rd.get<std::uint8_t>("header variant");
    const auto mode = rd.get<std::uint8_t>("header mode");
    const auto factorized = rd.get<std::uint8_t>("header factorized");
    if (n == 0 || d_in == 0 || d_out == 0 || r == 0 || variant > 1 || mode > 3 || factorized > 1 ||
        (factorized && r_a == 0))
        throw CheckpointError("checkpoint header is inconsistent");
    // guard against absurd sizes before allocating
    rd.need(d_in * d_out * sizeof(double), "W");

    Mat W = rd.mat(d_in, d_out, "W");
    std::vector<LoraModule> mods;
    for (std::uint64_t i = 0; i < n; ++i) {
        Mat A = rd.mat(d_in, r, "A");
        Mat B = rd.mat(r, d_out, "B");
        mods.push_back({std::move(A), std::move(B)});
    }
    const auto variant_e = static_cast<StretchVariant>(variant);
    const std::size_t srows = variant_e == StretchVariant::InputProj ? d_in : n * d_out;
    Mat theta_s = rd.mat(srows, n, "theta_s");
    RotationParams rot;
    if (factorized) {
        Mat U = rd.mat(d_out, r_a, "U");
        Mat V = rd.mat(r_a, d_out / 2, "V");
        rot = RotationParams::lowrank(std::move(U), std::move(V));
    } else {
        rot = RotationParams::dense(rd.mat(d_out, d_out / 2, "theta_r"));
    }
    const auto rng_state = rd.get<std::uint64_t>("rng state");
    const auto step = rd.get<std::uint64_t>("step");
    if (rd.pos() != rd.size())
        throw CheckpointError("checkpoint has " + std::to_string(rd.size() - rd.pos()) +
                              " trailing bytes after offset " + std::to_string(rd.pos()));
    try {
        RadarLayer layer{FrozenBase{std::move(W)}, LoraBank(std::move(mods)),
                         StretchParams{std::move(theta_s), variant_e, tau, k}, std::move(rot),
                         static_cast<GateMode>(mode)};
        validate(layer);
        return {std::move(layer), rng_state, step};
    } catch (const std::invalid_argument& e) {
        throw CheckpointError(std::string("checkpoint contents invalid: ") + e.what());
    }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const std::string bytes = encode_checkpoint(ck);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_checkpoint(ss.str());
}

}  // namespace radargate
