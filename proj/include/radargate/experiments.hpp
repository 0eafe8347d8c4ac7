#pragma once

// Experiment drivers behind the command-line tool. Each command writes its
// artifacts into an output directory and reports whether its run-level
// checks passed.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "radargate/costmodel.hpp"
#include "radargate/geometry.hpp"
#include "radargate/grads.hpp"
#include "radargate/io.hpp"
#include "radargate/train.hpp"

namespace radargate {

struct CommandResult {
    bool ok = true;
    std::vector<std::filesystem::path> files;
    std::string summary;
};

/// Seed of one run inside a sweep. The gate mode is deliberately not an
/// input, so every mode of a (position, n, repeat) cell sees the same
/// bank, task, initialization and batch order. The list position keeps
/// duplicated n entries independent.
inline std::uint64_t run_seed(std::uint64_t base, std::size_t position, std::size_t n, std::size_t repeat) {
    std::uint64_t h = Rng::mix(position + 1);
    h = Rng::mix(h ^ (n + 0x100));
    h = Rng::mix(h ^ (repeat + 0x10000));
    return base ^ h;
}

namespace detail {

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvFile {
public:
    CsvFile(const std::filesystem::path& path, const std::string& header) : path_(path), out_(path) {
        if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
        out_ << header << '\n';
    }
    template <class... Ts>
    void row(const Ts&... cells) {
        bool first = true;
        ((out_ << (first ? "" : ",") << cell(cells), first = false), ...);
        out_ << '\n';
    }
    const std::filesystem::path& path() const { return path_; }

private:
    static std::string cell(double v) { return fmt(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(std::string_view s) { return std::string(s); }
    static std::string cell(const char* s) { return s; }
    template <class T>
        requires std::is_integral_v<T>
    static std::string cell(T v) {
        return std::to_string(v);
    }

    std::filesystem::path path_;
    std::ofstream out_;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

inline nlohmann::json config_json(const TrainConfig& c) {
    return {{"seed", c.seed},
            {"n", c.dims.n},
            {"d_in", c.dims.d_in},
            {"d_out", c.dims.d_out},
            {"r", c.dims.r},
            {"r_a", c.dims.r_a},
            {"k", c.dims.k},
            {"tau", c.dims.tau},
            {"variant", c.dims.variant == StretchVariant::InputProj ? "input" : "concat"},
            {"mode", to_string(c.dims.mode)},
            {"task", to_string(c.task)},
            {"samples", c.samples},
            {"noise", c.noise},
            {"margin", c.margin},
            {"clusters", c.clusters},
            {"optimizer", c.optimizer == Optimizer::Adam ? "adam" : "sgd"},
            {"lr", c.lr},
            {"batch", c.batch},
            {"steps", c.steps},
            {"eval_every", c.eval_every},
            {"lora_scale", c.lora_scale},
            {"init_scale", c.init_scale},
            {"grad_mode", c.grad_mode == StretchGradMode::ExactMasked ? "exact" : "approx"}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckRow {
    std::size_t config_id = 0;
    std::uint64_t seed = 0;
    LayerDims dims;
    FdReport report;
};

/// Instance i alternates the gate variant (i even: concat) and the theta_r
/// form (bit 1 of i: factorized). Instances whose top-k selection is not
/// h-stable are redrawn from the next derived seed.
inline GradcheckRow gradcheck_instance(std::uint64_t base_seed, std::size_t i, double h = 1e-5) {
    for (std::size_t attempt = 0;; ++attempt) {
        const std::uint64_t seed = base_seed ^ Rng::mix((static_cast<std::uint64_t>(i) << 16) + attempt);
        Rng rng(seed);
        LayerDims d;
        d.n = 1 + rng.index(6);
        d.d_in = 1 + rng.index(16);
        d.d_out = 2 * (1 + rng.index(8));
        d.r = 1 + rng.index(std::min(d.d_in, d.d_out));
        d.k = 1 + rng.index(d.n);
        d.variant = i % 2 == 0 ? StretchVariant::ConcatProj : StretchVariant::InputProj;
        d.r_a = (i / 2) % 2 == 1 ? 1 + rng.index(d.d_out) : 0;
        d.mode = GateMode::Radar;
        const RadarLayer layer = make_layer(rng, d, true);
        const Vec x = random_gaussian(rng, d.d_in);
        const Vec target = random_gaussian(rng, d.d_out);
        try {
            return {i, seed, d, finite_diff_check(layer, x, target, h)};
        } catch (const UnstableSelection&) {
            if (attempt > 1000) throw std::runtime_error("gradcheck: no h-stable instance found");
        }
    }
}

inline CommandResult cmd_gradcheck(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                   double tolerance = 1e-5) {
    std::filesystem::create_directories(out);
    CommandResult res;
    detail::CsvFile csv(out / "gradcheck.csv",
                        "config_id,seed,n,d_in,d_out,k,mode,max_rel_err_s,max_rel_err_r");
    double worst = 0.0;
    for (std::size_t i = 0; i < cfg.configs; ++i) {
        const auto row = gradcheck_instance(cfg.train.seed, i);
        csv.row(row.config_id, row.seed, row.dims.n, row.dims.d_in, row.dims.d_out, row.dims.k,
                to_string(row.dims.mode), row.report.max_rel_err_s, row.report.max_rel_err_r);
        worst = std::max({worst, row.report.max_rel_err_s, row.report.max_rel_err_r});
    }
    res.files.push_back(csv.path());
    res.ok = worst < tolerance;
    res.summary = std::to_string(cfg.configs) + " configurations, max relative error " + detail::fmt(worst) +
                  (res.ok ? " (ok)" : " (exceeds " + detail::fmt(tolerance) + ")");
    return res;
}

// ---------------------------------------------------------------------------
// train

inline void write_run(const RunRecord& rec, const std::filesystem::path& stem, CommandResult& res) {
    detail::CsvFile csv(stem.string() + ".csv", "step,loss,grad_norm_s,grad_norm_r,cone_gap");
    for (const auto& e : rec.evals) csv.row(e.step, e.loss, e.grad_norm_s, e.grad_norm_r, e.cone_gap);
    res.files.push_back(csv.path());

    nlohmann::json j;
    j["config"] = detail::config_json(rec.config);
    j["mean_sq_base_distance"] = rec.mean_sq_base_distance;
    j["final_loss"] = rec.final_loss();
    j["steps_run"] = rec.step_loss.size();
    j["aborted"] = rec.aborted;
    j["message"] = rec.message;
    j["wall_seconds"] = rec.wall_seconds;
    std::vector<std::vector<double>> ang;
    for (std::size_t i = 0; i < rec.angular.rows(); ++i) {
        const auto r = rec.angular.row(i);
        ang.emplace_back(r.begin(), r.end());
    }
    j["angular_similarity"] = ang;
    const std::filesystem::path json_path = stem.string() + ".json";
    detail::write_text(json_path, j.dump(2) + "\n");
    res.files.push_back(json_path);
}

inline CommandResult cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    std::filesystem::create_directories(out);
    CommandResult res;
    detail::CsvFile summary(out / "summary.csv", "mode,repeat,seed,final_loss,mean_sq_base_distance,aborted");
    std::ostringstream text;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        const std::uint64_t seed = run_seed(cfg.train.seed, 0, cfg.train.dims.n, rep);
        for (GateMode mode : cfg.modes) {
            TrainConfig c = cfg.train;
            c.dims.mode = mode;
            c.seed = seed;
            Experiment exp = build_experiment(c);
            const RunRecord rec = train(c, exp);
            const std::string stem = "run_" + std::string(to_string(mode)) + "_" + std::to_string(rep);
            write_run(rec, out / stem, res);
            save_checkpoint((out / (stem + ".rgk")).string(), {exp.layer, rec.rng_state, rec.step_loss.size()});
            res.files.push_back(out / (stem + ".rgk"));
            summary.row(to_string(mode), rep, seed, rec.final_loss(), rec.mean_sq_base_distance,
                        rec.aborted ? 1 : 0);
            text << to_string(mode) << " repeat " << rep << ": final loss " << detail::fmt(rec.final_loss())
                 << (rec.aborted ? " ABORTED: " + rec.message : "") << "\n";
            if (rec.aborted) res.ok = false;
        }
    }
    res.files.push_back(summary.path());
    res.summary = text.str();
    return res;
}

// ---------------------------------------------------------------------------
// scale-sweep

struct SweepRow {
    std::size_t n = 0;
    GateMode mode = GateMode::Radar;
    std::size_t repeat = 0;
    std::uint64_t seed = 0;
    double final_loss = 0.0;
    bool aborted = false;
};

inline std::vector<SweepRow> scale_sweep(const ExperimentConfig& cfg) {
    detail::require(!cfg.n_list.empty(), "scale_sweep: n_list must be nonempty");
    std::vector<SweepRow> rows;
    for (std::size_t p = 0; p < cfg.n_list.size(); ++p) {
        const std::size_t n = cfg.n_list[p];
        for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
            const std::uint64_t seed = run_seed(cfg.train.seed, p, n, rep);
            for (GateMode mode : cfg.modes) {
                TrainConfig c = cfg.train;
                c.dims.n = n;
                c.dims.mode = mode;
                c.task = TaskKind::MultiTaskMix;
                c.seed = seed;
                const RunRecord rec = train(c);
                rows.push_back({n, mode, rep, seed, rec.final_loss(), rec.aborted});
            }
        }
    }
    return rows;
}

/// Mean final loss of `mode` over every row with this n.
inline double sweep_mean(const std::vector<SweepRow>& rows, std::size_t n, GateMode mode) {
    double acc = 0.0;
    std::size_t count = 0;
    for (const auto& r : rows)
        if (r.n == n && r.mode == mode) acc += r.final_loss, ++count;
    return count ? acc / static_cast<double>(count) : 0.0;
}

inline CommandResult cmd_scale_sweep(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    std::filesystem::create_directories(out);
    CommandResult res;
    const auto rows = scale_sweep(cfg);
    detail::CsvFile csv(out / "scale_sweep.csv", "n,mode,repeat,seed,final_loss,aborted");
    for (const auto& r : rows) {
        csv.row(r.n, to_string(r.mode), r.repeat, r.seed, r.final_loss, r.aborted ? 1 : 0);
        if (r.aborted) res.ok = false;
    }
    res.files.push_back(csv.path());

    detail::CsvFile agg(out / "scale_summary.csv", "n,mode,mean_final_loss");
    std::ostringstream text;
    std::vector<std::size_t> seen;
    for (auto n : cfg.n_list) {
        if (std::find(seen.begin(), seen.end(), n) != seen.end()) continue;
        seen.push_back(n);
        text << "n=" << n;
        for (GateMode m : cfg.modes) {
            const double mean = sweep_mean(rows, n, m);
            agg.row(n, to_string(m), mean);
            text << "  " << to_string(m) << " " << detail::fmt(mean);
        }
        text << "\n";
    }
    res.files.push_back(agg.path());
    res.summary = text.str();
    return res;
}

// ---------------------------------------------------------------------------
// cone-demo

struct PlotPoint {
    std::string kind;  // expert, rotated, target, projection
    std::size_t index = 0;
    double x = 0.0;
    double y = 0.0;
};

/// PCA-2D coordinates of the experts, the rotated experts, the target and
/// its hull projection, all in one shared basis.
inline std::vector<PlotPoint> cone_plot_points(const RotationInputs& in, const Mat& theta_r,
                                               const ConeProjection& proj) {
    const auto p = RotationParams::dense(theta_r);
    std::vector<Vec> pts;
    std::vector<PlotPoint> meta;
    for (std::size_t i = 0; i < in.v.size(); ++i) {
        pts.push_back(in.v[i]);
        meta.push_back({"expert", i, 0, 0});
    }
    for (std::size_t i = 0; i < in.v.size(); ++i) {
        pts.push_back(apply_rotation(in.v[i], apply_theta_r(p, in.u[i])));
        meta.push_back({"rotated", i, 0, 0});
    }
    pts.push_back(in.delta);
    meta.push_back({"target", 0, 0, 0});
    pts.push_back(proj.point);
    meta.push_back({"projection", 0, 0, 0});
    const auto xy = pca_2d(pts);
    for (std::size_t i = 0; i < meta.size(); ++i) meta[i].x = xy[i].first, meta[i].y = xy[i].second;
    return meta;
}

inline std::string cone_svg(const std::vector<PlotPoint>& pts) {
    double extent = 1e-12;
    for (const auto& p : pts) extent = std::max({extent, std::abs(p.x), std::abs(p.y)});
    auto colour = [](const std::string& kind) {
        if (kind == "expert") return "#1f77b4";
        if (kind == "rotated") return "#d62728";
        if (kind == "target") return "#2ca02c";
        return "#7f7f7f";
    };
    std::ostringstream s;
    s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"800\" height=\"400\" "
         "viewBox=\"0 0 800 400\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"400\" fill=\"white\"/>\n";
    // left: Cartesian
    s << "<g id=\"cartesian\">\n"
      << "<text x=\"200\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">PCA (Cartesian)</text>\n"
      << "<line x1=\"30\" y1=\"210\" x2=\"370\" y2=\"210\" stroke=\"#ccc\"/>\n"
      << "<line x1=\"200\" y1=\"40\" x2=\"200\" y2=\"380\" stroke=\"#ccc\"/>\n";
    const double sc = 160.0 / extent;
    for (const auto& p : pts) {
        const double cx = 200.0 + p.x * sc, cy = 210.0 - p.y * sc;
        if (p.kind == "expert" || p.kind == "rotated")
            s << "<line x1=\"200\" y1=\"210\" x2=\"" << detail::fmt(cx) << "\" y2=\"" << detail::fmt(cy)
              << "\" stroke=\"" << colour(p.kind) << "\" stroke-opacity=\"0.4\"/>\n";
        s << "<circle cx=\"" << detail::fmt(cx) << "\" cy=\"" << detail::fmt(cy) << "\" r=\"4\" fill=\""
          << colour(p.kind) << "\"><title>" << p.kind << " " << p.index << "</title></circle>\n";
    }
    s << "</g>\n";
    // right: polar (angle kept, radius normalized)
    s << "<g id=\"polar\">\n"
      << "<text x=\"600\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">PCA (polar)</text>\n"
      << "<circle cx=\"600\" cy=\"210\" r=\"160\" fill=\"none\" stroke=\"#ccc\"/>\n"
      << "<circle cx=\"600\" cy=\"210\" r=\"80\" fill=\"none\" stroke=\"#eee\"/>\n";
    for (const auto& p : pts) {
        const double rad = std::hypot(p.x, p.y) / extent * 160.0;
        const double ang = std::atan2(p.y, p.x);
        const double cx = 600.0 + rad * std::cos(ang), cy = 210.0 - rad * std::sin(ang);
        s << "<circle cx=\"" << detail::fmt(cx) << "\" cy=\"" << detail::fmt(cy) << "\" r=\"4\" fill=\""
          << colour(p.kind) << "\"><title>" << p.kind << " " << p.index << "</title></circle>\n";
    }
    s << "</g>\n</svg>\n";
    return s.str();
}

inline CommandResult cmd_cone_demo(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    std::filesystem::create_directories(out);
    CommandResult res;
    detail::CsvFile csv(out / "cone.csv", "run_id,n,d_out,base_distance,best_rotated_distance,samples,success");
    detail::CsvFile trained(out / "cone_trained.csv",
                            "run_id,mode,final_loss,mean_sq_base_distance");
    std::ostringstream text;
    for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
        TrainConfig c = cfg.train;
        c.task = TaskKind::OutOfCone;
        c.seed = run_seed(cfg.train.seed, 0, c.dims.n, rep);
        c.dims.mode = GateMode::Radar;
        Experiment exp = build_experiment(c);
        const Vec x = exp.task.X.row_vec(0);
        const Vec target = exp.task.Y.row_vec(0);
        const Rng probe_rng = Rng(c.seed).fork(4);
        const EscapeProbe probe = escape_probe(exp.layer, x, target, cfg.probe_samples, probe_rng);
        csv.row(rep, c.dims.n, c.dims.d_out, probe.base_distance, probe.best_rotated_distance, probe.samples,
                probe.success ? 1 : 0);
        text << "run " << rep << ": base distance " << detail::fmt(probe.base_distance) << ", best rotated "
             << detail::fmt(probe.best_rotated_distance) << (probe.success ? " (escaped)" : " (no escape)")
             << "\n";

        const auto in = rotation_inputs(exp.layer, x, target);
        const auto proj = cone_project(in.delta, in.v);
        const auto pts = cone_plot_points(in, probe.witness_theta_r, proj);
        const std::string stem = "cone_" + std::to_string(rep);
        detail::CsvFile pc(out / (stem + "_points.csv"), "kind,index,x,y,radius,angle");
        for (const auto& p : pts) pc.row(p.kind, p.index, p.x, p.y, std::hypot(p.x, p.y), std::atan2(p.y, p.x));
        res.files.push_back(pc.path());
        detail::write_text(out / (stem + ".svg"), cone_svg(pts));
        res.files.push_back(out / (stem + ".svg"));

        for (GateMode mode : {GateMode::StretchOnly, GateMode::Radar}) {
            TrainConfig tc = c;
            tc.dims.mode = mode;
            const RunRecord rec = train(tc);
            trained.row(rep, to_string(mode), rec.final_loss(), rec.mean_sq_base_distance);
            if (rec.aborted) res.ok = false;
        }
    }
    res.files.push_back(csv.path());
    res.files.push_back(trained.path());
    res.summary = text.str();
    return res;
}

// ---------------------------------------------------------------------------
// complexity

inline CostParams cost_params(const ExperimentConfig& cfg) {
    CostParams p;
    p.L = cfg.tokens;
    p.n = cfg.train.dims.n;
    p.r = cfg.train.dims.r;
    p.k = cfg.train.dims.k;
    p.r_a = cfg.train.dims.r_a;
    return p;
}

inline CommandResult cmd_complexity(const ExperimentConfig& cfg, const std::filesystem::path& out) {
    std::filesystem::create_directories(out);
    CommandResult res;
    const auto reports = parity_sweep(cfg.d_list, cost_params(cfg), Rng(cfg.train.seed));
    detail::CsvFile csv(out / "complexity.csv", "d,which,analytic_flops,counted_flops,analytic_mem,ratio");
    std::ostringstream text;
    for (const auto& r : reports) {
        csv.row(r.params.d_in, "stretch", r.analytic_flops_stretch, r.counted_flops_stretch,
                r.analytic_mem_stretch, r.ratio);
        csv.row(r.params.d_in, "radar", r.analytic_flops_radar, r.counted_flops_radar, r.analytic_mem_radar,
                r.ratio);
        text << "d=" << r.params.d_in << " ratio " << detail::fmt(r.ratio) << " counted/analytic stretch "
             << detail::fmt(r.bracket(Which::Stretch)) << " radar " << detail::fmt(r.bracket(Which::Radar))
             << "\n";
    }
    res.files.push_back(csv.path());
    res.summary = text.str();
    return res;
}

/// Built-in defaults per subcommand; a config file overrides any of them.
inline ExperimentConfig command_defaults(std::string_view cmd) {
    ExperimentConfig c;
    auto& t = c.train;
    if (cmd == "train" || cmd == "cone-demo") {
        t.task = TaskKind::OutOfCone;
        t.samples = 4;
        t.batch = 4;
        t.lr = 1e-2;
        t.steps = cmd == "train" ? 5000 : 2000;
        t.eval_every = 50;
    } else if (cmd == "scale-sweep") {
        t.dims.k = 2;
        t.task = TaskKind::MultiTaskMix;
        t.clusters = 4;
        t.samples = 32;
        t.batch = 32;
        t.lr = 1e-2;
        t.steps = 3000;
        t.eval_every = 3000;
        c.repeats = 5;
    } else if (cmd == "complexity") {
        t.dims.n = 8;
        t.dims.r = 8;
        t.dims.k = 2;
        t.dims.r_a = 4;
        t.dims.variant = StretchVariant::InputProj;
    }
    return c;
}

}  // namespace radargate
