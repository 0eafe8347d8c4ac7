#pragma once

// Reachable-set geometry of a weighted-sum gate: projection of a target
// onto the simplex hull of expert outputs, membership, and a sampling
// probe showing that rotated experts reach targets outside that hull.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "radargate/gates.hpp"
#include "radargate/layer.hpp"
#include "radargate/numkernel.hpp"

namespace radargate {

struct ConeProjection {
    Vec g_star;
    Vec point;
    double distance = 0.0;
    double gap = 0.0;
    long iterations = 0;
    bool converged = false;
};

inline constexpr double kConeTol = 1e-9;
inline constexpr long kConeMaxIter = 100000;

namespace detail {

/// Minimizer of w^T G w - 2 b^T w over the affine hull of the vertices in
/// `active` (sum w = 1), from the KKT system [G 1; 1^T 0]. Rank-deficient
/// systems get a basic solution: free variables are set to zero, which
/// still minimizes over the hull and shrinks the support.
inline Vec affine_minimizer(const Mat& gram, const Vec& b, const std::vector<std::size_t>& active) {
    const std::size_t m = active.size(), cols = m + 1;
    Mat a(cols, cols + 1);
    double scale = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            a(i, j) = gram(active[i], active[j]);
            scale = std::max(scale, std::abs(a(i, j)));
        }
        a(i, m) = 1.0;
        a(m, i) = 1.0;
        a(i, cols) = b[active[i]];
    }
    a(m, cols) = 1.0;
    const double eps = 1e-12 * std::max(scale, 1.0);

    std::vector<std::size_t> pivot_col;
    std::size_t row = 0;
    for (std::size_t c = 0; c < cols && row < cols; ++c) {
        std::size_t p = row;
        for (std::size_t r = row + 1; r < cols; ++r)
            if (std::abs(a(r, c)) > std::abs(a(p, c))) p = r;
        if (std::abs(a(p, c)) <= eps) continue;  // free variable
        for (std::size_t k = 0; k <= cols; ++k) std::swap(a(row, k), a(p, k));
        for (std::size_t r = 0; r < cols; ++r) {
            if (r == row || a(r, c) == 0.0) continue;
            const double f = a(r, c) / a(row, c);
            for (std::size_t k = c; k <= cols; ++k) a(r, k) -= f * a(row, k);
        }
        pivot_col.push_back(c);
        ++row;
    }
    Vec sol(cols);
    for (std::size_t r = 0; r < pivot_col.size(); ++r) sol[pivot_col[r]] = a(r, cols) / a(r, pivot_col[r]);
    Vec w(m);
    for (std::size_t i = 0; i < m; ++i) w[i] = sol[i];
    return w;
}

}  // namespace detail

/// Minimizes ||target - sum_i g_i v_i||^2 over the probability simplex with
/// away-step Frank-Wolfe and exact line search. After every step the
/// iterate is pulled toward the minimizer over the affine hull of its
/// support (Wolfe's minor cycle), which removes the slow zig-zag of plain
/// Frank-Wolfe on faces. Stops once the Frank-Wolfe duality gap (an upper
/// bound on the objective's suboptimality) falls below `tol`. If `objective` is given, the objective after every
/// iteration is appended to it.
inline ConeProjection cone_project(const Vec& target, std::span<const Vec> v, double tol = kConeTol,
                                   long max_iter = kConeMaxIter,
                                   std::vector<double>* objective = nullptr) {
    detail::require(!v.empty(), "cone_project: need at least one expert output");
    detail::require(tol > 0.0, "cone_project: tol must be positive");
    const std::size_t n = v.size();
    for (const auto& vi : v)
        detail::require(vi.size() == target.size(), "cone_project: expert output length " +
                                                        std::to_string(vi.size()) +
                                                        " != target length " +
                                                        std::to_string(target.size()));

    Mat gram(n, n);
    Vec b(n);
    for (std::size_t i = 0; i < n; ++i) {
        b[i] = dot(v[i], target);
        for (std::size_t j = i; j < n; ++j) gram(i, j) = gram(j, i) = dot(v[i], v[j]);
    }
    const double tt = dot(target, target);

    std::size_t start = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        const double f = gram(i, i) - 2.0 * b[i] + tt;
        if (f < best) best = f, start = i;
    }
    Vec g(n);
    g[start] = 1.0;
    Vec gg(n);  // gram * g
    auto refresh = [&] {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += gram(i, j) * g[j];
            gg[i] = acc;
        }
    };
    refresh();
    auto value = [&] { return dot(g, gg) - 2.0 * dot(b, g) + tt; };

    auto correct = [&] {
        for (std::size_t cycle = 0; cycle < n; ++cycle) {
            std::vector<std::size_t> active;
            for (std::size_t i = 0; i < n; ++i)
                if (g[i] > 0.0) active.push_back(i);
            if (active.size() < 2) return;
            const Vec w = detail::affine_minimizer(gram, b, active);
            // largest step toward w that keeps g non-negative
            double theta = 1.0;
            std::size_t hit = n;
            for (std::size_t j = 0; j < active.size(); ++j) {
                const double gi = g[active[j]];
                if (w[j] < 0.0 && gi / (gi - w[j]) < theta) theta = gi / (gi - w[j]), hit = active[j];
            }
            const Vec saved = g;
            const double before = value();
            for (std::size_t j = 0; j < active.size(); ++j) {
                auto& gi = g[active[j]];
                gi = std::max(gi + theta * (w[j] - gi), 0.0);
            }
            if (hit < n) g[hit] = 0.0;
            refresh();
            if (!(value() <= before)) {
                g = saved;
                refresh();
                return;
            }
            if (hit == n) return;
        }
    };

    ConeProjection out;
    long it = 0;
    for (; it < max_iter; ++it) {
        // half-gradient: gram g - b
        std::size_t s = 0, a = n;
        double gs = std::numeric_limits<double>::infinity();
        double ga = -std::numeric_limits<double>::infinity();
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = gg[i] - b[i];
            mean += g[i] * gi;
            if (gi < gs) gs = gi, s = i;
            if (g[i] > 0.0 && gi > ga) ga = gi, a = i;
        }
        const double fw_gap = 2.0 * (mean - gs);
        out.gap = fw_gap;
        if (fw_gap < tol) {
            out.converged = true;
            break;
        }
        const double away_gap = 2.0 * (ga - mean);
        const double ggg = dot(g, gg);
        if (fw_gap >= away_gap || a == n) {
            // d = e_s - g
            const double num = -(gs - mean);
            const double den = gram(s, s) - 2.0 * gg[s] + ggg;
            double step = den > 0.0 ? std::clamp(num / den, 0.0, 1.0) : 1.0;
            for (std::size_t i = 0; i < n; ++i) g[i] *= (1.0 - step);
            g[s] += step;
            for (std::size_t i = 0; i < n; ++i) gg[i] = (1.0 - step) * gg[i] + step * gram(i, s);
        } else {
            // d = g - e_a
            const double max_step = g[a] < 1.0 ? g[a] / (1.0 - g[a]) : 1e300;
            const double num = -(mean - ga);
            const double den = ggg - 2.0 * gg[a] + gram(a, a);
            double step = den > 0.0 ? std::clamp(num / den, 0.0, max_step) : max_step;
            const bool drop = step >= max_step;
            for (std::size_t i = 0; i < n; ++i) g[i] *= (1.0 + step);
            g[a] -= step;
            if (drop) g[a] = 0.0;
            for (std::size_t i = 0; i < n; ++i) gg[i] = (1.0 + step) * gg[i] - step * gram(i, a);
        }
        for (auto& gi : g) gi = std::max(gi, 0.0);
        if ((it + 1) % 64 == 0) refresh();
        correct();
        if (objective) objective->push_back(value());
    }
    out.iterations = it;

    double total = 0.0;
    for (double gi : g) total += gi;
    for (auto& gi : g) gi /= total;
    out.g_star = g;
    out.point = Vec(target.size());
    for (std::size_t i = 0; i < n; ++i)
        if (g[i] != 0.0) axpy(g[i], v[i], out.point);
    out.distance = norm2(sub(target, out.point));
    return out;
}

/// True when the target lies within `tol` of the simplex hull.
inline bool in_cone(const Vec& target, std::span<const Vec> v, double tol) {
    detail::require(tol > 0.0, "in_cone: tol must be positive");
    const double fw_tol = std::max(1e-3 * tol * tol, 1e-18);
    return cone_project(target, v, fw_tol).distance < tol;
}

// ---------------------------------------------------------------------------
// Escape probe

struct EscapeProbe {
    Vec target;
    double base_distance = 0.0;
    double best_rotated_distance = 0.0;
    Mat witness_theta_r;
    std::size_t samples = 0;
    bool success = false;
};

struct RotationInputs {
    std::vector<Vec> v;
    std::vector<Vec> u;  // v_i (.) ref_i
    Vec delta;           // target - x W
};

inline RotationInputs rotation_inputs(const RadarLayer& layer, const Vec& x, const Vec& target) {
    detail::require(target.size() == layer.d_out(), "escape_probe: target length must be d_out");
    RotationInputs in;
    in.v = expert_outputs(layer.bank, x);
    Vec total(layer.d_out());
    for (const auto& vi : in.v) axpy(1.0, vi, total);
    for (const auto& vi : in.v) in.u.push_back(hadamard(vi, sub(total, vi)));
    in.delta = sub(target, vecmat(x, layer.base.W));
    return in;
}

/// Hull distance of target - xW to the experts rotated under a dense theta_r.
inline double rotated_hull_distance(const RotationInputs& in, const Mat& theta_r) {
    const auto p = RotationParams::dense(theta_r);
    std::vector<Vec> rotated;
    rotated.reserve(in.v.size());
    for (std::size_t i = 0; i < in.v.size(); ++i)
        rotated.push_back(apply_rotation(in.v[i], apply_theta_r(p, in.u[i])));
    return cone_project(in.delta, rotated).distance;
}

/// Evaluates the given theta_r candidates and keeps the best. The target is
/// in layer-output space; the hull is taken over all n experts.
inline EscapeProbe escape_probe(const RadarLayer& layer, const Vec& x, const Vec& target,
                                std::span<const Mat> candidates, double tol = 1e-9) {
    const auto in = rotation_inputs(layer, x, target);
    EscapeProbe probe;
    probe.target = target;
    probe.base_distance = cone_project(in.delta, in.v).distance;
    if (probe.base_distance <= tol)
        throw std::invalid_argument("escape_probe: target lies inside the un-rotated hull (distance " +
                                    std::to_string(probe.base_distance) + ")");
    probe.best_rotated_distance = probe.base_distance;
    probe.witness_theta_r = Mat(layer.d_out(), layer.d_out() / 2);
    for (const auto& theta : candidates) {
        const double d = rotated_hull_distance(in, theta);
        if (d < probe.best_rotated_distance) {
            probe.best_rotated_distance = d;
            probe.witness_theta_r = theta;
        }
        ++probe.samples;
    }
    probe.success = probe.best_rotated_distance < probe.base_distance - tol;
    return probe;
}

/// Random theta_r with entries uniform in [-pi, pi] divided by the mean
/// norm of the rotation inputs U_i, so the induced angles are O(pi).
/// Sample s draws from its own stream rng.fork(s).
inline EscapeProbe escape_probe(const RadarLayer& layer, const Vec& x, const Vec& target,
                                std::size_t samples, const Rng& rng, double tol = 1e-9) {
    const auto in = rotation_inputs(layer, x, target);
    double mean_u = 0.0;
    for (const auto& u : in.u) mean_u += norm2(u);
    mean_u /= static_cast<double>(in.u.size());
    const double scale = mean_u > 0.0 ? 1.0 / mean_u : 1.0;

    std::vector<Mat> candidates;
    candidates.reserve(samples);
    for (std::size_t s = 0; s < samples; ++s) {
        Rng stream = rng.fork(s);
        Mat theta = random_uniform(stream, layer.d_out(), layer.d_out() / 2, -std::numbers::pi,
                                   std::numbers::pi);
        for (auto& t : theta.flat()) t *= scale;
        candidates.push_back(std::move(theta));
    }
    return escape_probe(layer, x, target, candidates, tol);
}

}  // namespace radargate
