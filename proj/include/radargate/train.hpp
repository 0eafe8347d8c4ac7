#pragma once

// Synthetic tasks and gate-only training loops.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "radargate/factory.hpp"
#include "radargate/geometry.hpp"
#include "radargate/grads.hpp"
#include "radargate/layer.hpp"

namespace radargate {

// ---------------------------------------------------------------------------
// Tasks

enum class TaskKind { InCone, OutOfCone, MultiTaskMix };

inline constexpr std::string_view to_string(TaskKind k) {
    switch (k) {
        case TaskKind::InCone: return "in-cone";
        case TaskKind::OutOfCone: return "out-of-cone";
        case TaskKind::MultiTaskMix: return "multitask";
    }
    return "?";
}

inline std::optional<TaskKind> parse_task_kind(std::string_view s) {
    if (s == "in-cone") return TaskKind::InCone;
    if (s == "out-of-cone") return TaskKind::OutOfCone;
    if (s == "multitask") return TaskKind::MultiTaskMix;
    return std::nullopt;
}

struct SyntheticTask {
    Mat X;
    Mat Y;
    TaskKind kind = TaskKind::InCone;
    std::vector<double> cone_meta;  // per-sample distance of y - xW to the un-rotated hull
    std::vector<std::size_t> cluster;

    std::size_t size() const { return X.rows(); }

    double mean_sq_base_distance() const {
        double acc = 0.0;
        for (double d : cone_meta) acc += d * d;
        return cone_meta.empty() ? 0.0 : acc / static_cast<double>(cone_meta.size());
    }
};

namespace detail {

inline void set_row(Mat& m, std::size_t r, const Vec& v) {
    for (std::size_t j = 0; j < v.size(); ++j) m(r, j) = v[j];
}

inline Vec mixture(std::span<const Vec> v, const Vec& g) {
    Vec out(v[0].size());
    for (std::size_t i = 0; i < v.size(); ++i) axpy(g[i], v[i], out);
    return out;
}

/// Unit vector orthogonal to span{v_i - v_0}, or nullopt when that span is
/// (numerically) the whole space.
inline std::optional<Vec> affine_normal(Rng& rng, std::span<const Vec> v) {
    const std::size_t dim = v[0].size();
    std::vector<Vec> basis;
    double extent = 0.0;
    for (const auto& vi : v) extent = std::max(extent, norm2(vi));
    for (std::size_t i = 1; i < v.size(); ++i) {
        Vec w = sub(v[i], v[0]);
        for (const auto& b : basis) axpy(-dot(w, b), b, w);
        const double nw = norm2(w);
        if (nw > 1e-10 * std::max(extent, 1.0)) basis.push_back(scale(w, 1.0 / nw));
    }
    if (basis.size() >= dim) return std::nullopt;
    for (int attempt = 0; attempt < 16; ++attempt) {
        Vec u = random_gaussian(rng, dim);
        for (int pass = 0; pass < 2; ++pass)
            for (const auto& b : basis) axpy(-dot(u, b), b, u);
        const double nu = norm2(u);
        if (nu > 1e-6) return scale(u, 1.0 / nu);
    }
    return std::nullopt;
}

}  // namespace detail

inline Vec sample_input(Rng& rng, std::size_t d_in) { return random_gaussian(rng, d_in); }

/// Targets y = xW + sum_i g*_i v_i(x) + noise * N(0, I), g* ~ Dirichlet(1).
inline SyntheticTask make_in_cone_task(Rng& rng, const FrozenBase& base, const LoraBank& bank,
                                       std::size_t N, double noise = 0.0) {
    detail::require(noise >= 0.0, "make_in_cone_task: noise must be non-negative");
    detail::require(N >= 1, "make_in_cone_task: need at least one sample");
    SyntheticTask task{Mat(N, bank.d_in()), Mat(N, bank.d_out()), TaskKind::InCone, {}, {}};
    for (std::size_t s = 0; s < N; ++s) {
        const Vec x = sample_input(rng, bank.d_in());
        const auto v = expert_outputs(bank, x);
        Vec delta = detail::mixture(v, rng.dirichlet_flat(bank.size()));
        if (noise > 0.0) delta = add(delta, random_gaussian(rng, bank.d_out(), noise));
        detail::set_row(task.X, s, x);
        detail::set_row(task.Y, s, add(vecmat(x, base.W), delta));
        task.cone_meta.push_back(cone_project(delta, v).distance);
        task.cluster.push_back(0);
    }
    return task;
}

/// Targets at distance `margin` outside the hull of the expert outputs:
/// a Dirichlet point of the hull pushed along a unit direction orthogonal
/// to the hull's affine span. When the span is the whole space, a random
/// far exterior point is projected onto the hull instead and the target is
/// placed along the outward normal at the projection.
inline SyntheticTask make_out_of_cone_task(Rng& rng, const FrozenBase& base, const LoraBank& bank,
                                           std::size_t N, double margin) {
    detail::require(margin > 0.0, "make_out_of_cone_task: margin must be positive");
    detail::require(N >= 1, "make_out_of_cone_task: need at least one sample");
    SyntheticTask task{Mat(N, bank.d_in()), Mat(N, bank.d_out()), TaskKind::OutOfCone, {}, {}};
    for (std::size_t s = 0; s < N; ++s) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const Vec x = sample_input(rng, bank.d_in());
            const auto v = expert_outputs(bank, x);
            Vec point = detail::mixture(v, rng.dirichlet_flat(bank.size()));
            Vec direction;
            if (auto u = detail::affine_normal(rng, v)) {
                direction = *u;
            } else {
                double radius = 0.0;
                for (const auto& vi : v) radius = std::max(radius, norm2(vi));
                const Vec far = add(point, scale(random_gaussian(rng, bank.d_out()),
                                                     10.0 * (radius + margin)));
                const auto proj = cone_project(far, v);
                const Vec out = sub(far, proj.point);
                if (norm2(out) <= 0.0) continue;
                point = proj.point;
                direction = scale(out, 1.0 / norm2(out));
            }
            const Vec delta = add(point, scale(direction, margin));
            const double dist = cone_project(delta, v).distance;
            if (dist < margin * (1.0 - 1e-6)) continue;
            detail::set_row(task.X, s, x);
            detail::set_row(task.Y, s, add(vecmat(x, base.W), delta));
            task.cone_meta.push_back(dist);
            task.cluster.push_back(0);
            placed = true;
        }
        if (!placed)
            throw std::invalid_argument("make_out_of_cone_task: could not reach margin " +
                                        std::to_string(margin) + " after 100 resamples");
    }
    return task;
}

/// Experts of cluster c: the contiguous block [c n / C, (c + 1) n / C).
inline std::vector<std::size_t> cluster_members(std::size_t n, std::size_t clusters, std::size_t c) {
    std::vector<std::size_t> out;
    for (std::size_t i = c * n / clusters; i < (c + 1) * n / clusters; ++i) out.push_back(i);
    return out;
}

/// Each sample belongs to one cluster (round robin). Its input is drawn
/// around a cluster-specific centre, and its target mixes only that
/// cluster's experts with Dirichlet weights.
inline SyntheticTask make_multitask_mix(Rng& rng, const FrozenBase& base, const LoraBank& bank,
                                        std::size_t clusters, std::size_t N,
                                        double spread = 0.5) {
    detail::require(clusters >= 1, "make_multitask_mix: need at least one cluster");
    detail::require(clusters <= bank.size(), "make_multitask_mix: clusters (" +
                                                 std::to_string(clusters) + ") exceed n (" +
                                                 std::to_string(bank.size()) + ")");
    detail::require(N >= 1, "make_multitask_mix: need at least one sample");
    std::vector<Vec> centres;
    for (std::size_t c = 0; c < clusters; ++c) centres.push_back(random_gaussian(rng, bank.d_in()));

    SyntheticTask task{Mat(N, bank.d_in()), Mat(N, bank.d_out()), TaskKind::MultiTaskMix, {}, {}};
    for (std::size_t s = 0; s < N; ++s) {
        const std::size_t c = s % clusters;
        const Vec x = add(centres[c], random_gaussian(rng, bank.d_in(), spread));
        const auto v = expert_outputs(bank, x);
        const auto members = cluster_members(bank.size(), clusters, c);
        const Vec w = rng.dirichlet_flat(members.size());
        Vec delta(bank.d_out());
        for (std::size_t m = 0; m < members.size(); ++m) axpy(w[m], v[members[m]], delta);
        detail::set_row(task.X, s, x);
        detail::set_row(task.Y, s, add(vecmat(x, base.W), delta));
        task.cone_meta.push_back(cone_project(delta, v).distance);
        task.cluster.push_back(c);
    }
    return task;
}

// ---------------------------------------------------------------------------
// Optimization

enum class Optimizer { SGD, Adam };

struct OptimState {
    Optimizer algorithm = Optimizer::Adam;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long t = 0;
    std::vector<Mat> m;
    std::vector<Mat> u;
};

/// The trainable matrices of a layer in a fixed order: theta_s (stretch
/// modes), then theta_r or (U, V) (rotation modes).
inline std::vector<Mat*> trainable(RadarLayer& layer) {
    std::vector<Mat*> out;
    if (uses_stretch(layer.mode)) out.push_back(&layer.stretch.theta_s);
    if (uses_rotation(layer.mode)) {
        if (layer.rotation.factorized) {
            out.push_back(&layer.rotation.U);
            out.push_back(&layer.rotation.V);
        } else {
            out.push_back(&layer.rotation.full);
        }
    }
    return out;
}

inline std::vector<const Mat*> gradient_list(const RadarLayer& layer, const GateGrads& g) {
    std::vector<const Mat*> out;
    if (uses_stretch(layer.mode)) out.push_back(&g.d_theta_s);
    if (uses_rotation(layer.mode)) {
        if (layer.rotation.factorized) {
            out.push_back(&g.d_U);
            out.push_back(&g.d_V);
        } else {
            out.push_back(&g.d_theta_r);
        }
    }
    return out;
}

struct BatchResult {
    double loss = 0.0;
    GateGrads grads;
};

/// Mean loss and mean gradient over the given rows of the task.
inline BatchResult batch_gradient(const RadarLayer& layer, const SyntheticTask& task,
                                  std::span<const std::size_t> rows,
                                  StretchGradMode mode = StretchGradMode::ExactMasked) {
    detail::require(!rows.empty(), "batch_gradient: empty batch");
    BatchResult out;
    const double w = 1.0 / static_cast<double>(rows.size());
    for (auto r : rows) {
        const Vec x = task.X.row_vec(r);
        const Vec target = task.Y.row_vec(r);
        const auto trace = forward(layer, x);
        out.loss += w * loss_mse(trace.y, target);
        accumulate(out.grads, gate_gradients(layer, trace, target, mode), w);
    }
    return out;
}

/// Applies one update with the given gradients.
inline void apply_update(RadarLayer& layer, OptimState& opt, const GateGrads& grads) {
    auto params = trainable(layer);
    auto gs = gradient_list(layer, grads);
    if (opt.m.empty()) {
        for (auto* p : params) {
            opt.m.emplace_back(p->rows(), p->cols());
            opt.u.emplace_back(p->rows(), p->cols());
        }
    }
    detail::require(opt.m.size() == params.size(), "apply_update: optimizer state does not match parameters");
    ++opt.t;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto theta = params[k]->flat();
        auto grad = gs[k]->flat();
        detail::require(grad.size() == theta.size(), "apply_update: gradient shape mismatch");
        if (opt.algorithm == Optimizer::SGD) {
            for (std::size_t e = 0; e < theta.size(); ++e) theta[e] -= opt.lr * grad[e];
            continue;
        }
        auto m = opt.m[k].flat();
        auto u = opt.u[k].flat();
        const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
        const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
        for (std::size_t e = 0; e < theta.size(); ++e) {
            m[e] = opt.beta1 * m[e] + (1.0 - opt.beta1) * grad[e];
            u[e] = opt.beta2 * u[e] + (1.0 - opt.beta2) * grad[e] * grad[e];
            const double mhat = m[e] / c1;
            const double uhat = u[e] / c2;
            theta[e] -= opt.lr * mhat / (std::sqrt(uhat) + opt.eps);
        }
    }
}

struct NonFiniteGradient : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One optimizer step on a batch; returns the pre-update batch loss.
inline BatchResult step(RadarLayer& layer, OptimState& opt, const SyntheticTask& task,
                        std::span<const std::size_t> rows,
                        StretchGradMode mode = StretchGradMode::ExactMasked) {
    auto result = batch_gradient(layer, task, rows, mode);
    if (!std::isfinite(result.loss) || !result.grads.finite())
        throw NonFiniteGradient("step " + std::to_string(opt.t + 1) +
                                ": non-finite loss or gradient (loss = " +
                                std::to_string(result.loss) + ")");
    apply_update(layer, opt, result.grads);
    return result;
}

// ---------------------------------------------------------------------------
// Training runs

struct TrainConfig {
    LayerDims dims;
    TaskKind task = TaskKind::OutOfCone;
    std::size_t samples = 16;
    double noise = 0.0;
    double margin = 0.1;
    std::size_t clusters = 2;
    Optimizer optimizer = Optimizer::Adam;
    double lr = 1e-4;
    std::size_t batch = 4;
    std::size_t steps = 1000;
    std::size_t eval_every = 10;
    double lora_scale = 1.0;
    double init_scale = 1e-2;
    std::uint64_t seed = 0;
    StretchGradMode grad_mode = StretchGradMode::ExactMasked;
};

struct EvalPoint {
    std::size_t step = 0;
    double loss = 0.0;  // mean over the task of the squared error
    double grad_norm_s = 0.0;
    double grad_norm_r = 0.0;
    double cone_gap = 0.0;  // loss - mean squared base distance
};

struct RunRecord {
    TrainConfig config;
    std::vector<double> step_loss;  // pre-update batch loss per step
    std::vector<EvalPoint> evals;
    Mat angular;  // mean pairwise cosine of rotated expert outputs
    double mean_sq_base_distance = 0.0;
    double wall_seconds = 0.0;
    bool aborted = false;
    std::string message;
    std::uint64_t rng_state = 0;  // batch-order stream after the last step

    double final_loss() const { return evals.empty() ? 0.0 : evals.back().loss; }
};

/// Task and frozen layer shared by every mode for a given seed: bank, base
/// and task come from stream 1, theta_s initialization from stream 2.
struct Experiment {
    RadarLayer layer;
    SyntheticTask task;
};

inline Experiment build_experiment(const TrainConfig& cfg) {
    validate(cfg.dims);
    const Rng root(cfg.seed);
    Rng data = root.fork(1);
    Rng init = root.fork(2);
    LoraBank bank = random_bank(data, cfg.dims, cfg.lora_scale);
    FrozenBase base = random_base(data, cfg.dims);
    SyntheticTask task;
    switch (cfg.task) {
        case TaskKind::InCone: task = make_in_cone_task(data, base, bank, cfg.samples, cfg.noise); break;
        case TaskKind::OutOfCone: task = make_out_of_cone_task(data, base, bank, cfg.samples, cfg.margin); break;
        case TaskKind::MultiTaskMix: task = make_multitask_mix(data, base, bank, cfg.clusters, cfg.samples); break;
    }
    StretchParams stretch = initial_stretch(init, cfg.dims, cfg.init_scale);
    RotationParams rotation = initial_rotation(init, cfg.dims, cfg.init_scale);
    RadarLayer layer{std::move(base), std::move(bank), std::move(stretch), std::move(rotation),
                     cfg.dims.mode};
    validate(layer);
    return {std::move(layer), std::move(task)};
}

inline EvalPoint evaluate(const RadarLayer& layer, const SyntheticTask& task, std::size_t step,
                          StretchGradMode mode = StretchGradMode::ExactMasked) {
    std::vector<std::size_t> all(task.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto full = batch_gradient(layer, task, all, mode);
    return {step, full.loss, full.grads.norm_s(), full.grads.norm_r(),
            full.loss - task.mean_sq_base_distance()};
}

/// Mean over the task of cos(v~_i, v~_j) with every expert rotated.
inline Mat angular_similarity(const RadarLayer& layer, const SyntheticTask& task) {
    const std::size_t n = layer.n();
    Mat acc(n, n);
    for (std::size_t s = 0; s < task.size(); ++s) {
        const Vec x = task.X.row_vec(s);
        const auto v = expert_outputs(layer.bank, x);
        std::vector<Vec> rotated = v;
        if (uses_rotation(layer.mode)) {
            Vec total(layer.d_out());
            for (const auto& vi : v) axpy(1.0, vi, total);
            for (std::size_t i = 0; i < n; ++i)
                rotated[i] = apply_rotation(
                    v[i], rotation_angles_from_outputs(layer.rotation, v[i], sub(total, v[i])));
        }
        const Mat c = cosine_similarity_matrix(rotated);
        for (std::size_t e = 0; e < acc.size(); ++e) acc.flat()[e] += c.flat()[e];
    }
    for (auto& a : acc.flat()) a /= static_cast<double>(std::max<std::size_t>(task.size(), 1));
    return acc;
}

/// Runs a full training loop: shuffled mini-batches (batch order from
/// stream 3), evaluation every `eval_every` steps and at the end. The
/// experiment's layer is trained in place.
inline RunRecord train(const TrainConfig& cfg, Experiment& exp) {
    const auto started = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.config = cfg;
    rec.mean_sq_base_distance = exp.task.mean_sq_base_distance();
    detail::require(cfg.batch >= 1, "train: batch must be >= 1");
    detail::require(cfg.eval_every >= 1, "train: eval_every must be >= 1");
    detail::require(cfg.lr > 0.0, "train: lr must be positive");

    RadarLayer& layer = exp.layer;
    const SyntheticTask& task = exp.task;
    OptimState opt;
    opt.algorithm = cfg.optimizer;
    opt.lr = cfg.lr;
    Rng order_rng = Rng(cfg.seed).fork(3);

    std::vector<std::size_t> order(task.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t cursor = order.size();

    try {
        rec.evals.push_back(evaluate(layer, task, 0, cfg.grad_mode));
        for (std::size_t s = 1; s <= cfg.steps; ++s) {
            if (cursor >= order.size()) {
                for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.index(i)]);
                cursor = 0;
            }
            const std::size_t len = std::min(cfg.batch, order.size() - cursor);
            std::span<const std::size_t> rows(order.data() + cursor, len);
            cursor += len;
            rec.step_loss.push_back(step(layer, opt, task, rows, cfg.grad_mode).loss);
            if (s % cfg.eval_every == 0 || s == cfg.steps) {
                rec.evals.push_back(evaluate(layer, task, s, cfg.grad_mode));
                if (!std::isfinite(rec.evals.back().loss))
                    throw NonFiniteGradient("non-finite loss at step " + std::to_string(s));
            }
        }
    } catch (const NonFiniteGradient& e) {
        rec.aborted = true;
        rec.message = e.what();
    }
    rec.rng_state = order_rng.state();
    rec.angular = angular_similarity(layer, task);
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return rec;
}

inline RunRecord train(const TrainConfig& cfg) {
    Experiment exp = build_experiment(cfg);
    return train(cfg, exp);
}

}  // namespace radargate
