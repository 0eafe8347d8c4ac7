#pragma once

// StretchGate (magnitude routing) and RotationGate (input-dependent
// pairwise rotation of expert outputs).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "radargate/lora.hpp"
#include "radargate/numkernel.hpp"

namespace radargate {

enum class StretchVariant {
    InputProj,   // logits = x theta_s, theta_s is d_in x n
    ConcatProj,  // logits = l2_normalize(v_1 ++ ... ++ v_n) theta_s, theta_s is (n d_out) x n
};

struct StretchParams {
    Mat theta_s;
    StretchVariant variant = StretchVariant::ConcatProj;
    double tau = 1.0;
    std::size_t k = 1;
};

/// Rotation projection theta_r of effective shape d_out x d_out/2, either
/// dense or factorized as U (d_out x r_a) times V (r_a x d_out/2).
struct RotationParams {
    bool factorized = false;
    Mat full;
    Mat U;
    Mat V;

    static RotationParams dense(Mat theta) { return {false, std::move(theta), {}, {}}; }
    static RotationParams lowrank(Mat u, Mat v) { return {true, {}, std::move(u), std::move(v)}; }
    static RotationParams zeros(std::size_t d_out, std::optional<std::size_t> r_a = {}) {
        if (r_a) return lowrank(Mat(d_out, *r_a), Mat(*r_a, d_out / 2));
        return dense(Mat(d_out, d_out / 2));
    }

    std::size_t rows() const { return factorized ? U.rows() : full.rows(); }
    std::size_t cols() const { return factorized ? V.cols() : full.cols(); }
    std::size_t r_a() const { return factorized ? U.cols() : 0; }
};

struct GateDecision {
    Vec logits;
    Vec probs;
    std::vector<std::size_t> selected;  // ascending order
    Vec g;
};

inline void validate(const RotationParams& p, std::size_t d_out) {
    if (p.factorized) {
        detail::require(p.U.cols() == p.V.rows() && p.U.cols() >= 1,
                        "RotationParams: factor inner dimensions disagree");
    }
    detail::require(p.rows() == d_out && p.cols() == d_out / 2,
                    "RotationParams: effective theta_r must be " + std::to_string(d_out) + "x" +
                        std::to_string(d_out / 2) + ", got " + std::to_string(p.rows()) + "x" +
                        std::to_string(p.cols()));
}

inline Mat effective_theta_r(const RotationParams& p) {
    return p.factorized ? matmul(p.U, p.V) : p.full;
}

// ---------------------------------------------------------------------------
// StretchGate

/// Gate input: x for InputProj, the normalized concatenation of expert
/// outputs for ConcatProj.
inline Vec stretch_features(const StretchParams& params, const Vec& x, std::span<const Vec> v,
                            OpCounter* counter = nullptr) {
    if (params.variant == StretchVariant::InputProj) return x;
    return l2_normalize(concat(v), 1e-12, counter);
}

inline Vec stretch_logits(const StretchParams& params, const Vec& x, std::span<const Vec> v,
                          OpCounter* counter = nullptr) {
    const Vec features = stretch_features(params, x, v, counter);
    detail::require(params.theta_s.rows() == features.size(),
                    "stretch_logits: theta_s has " + std::to_string(params.theta_s.rows()) +
                        " rows, gate input has length " + std::to_string(features.size()));
    return vecmat(features, params.theta_s, counter);
}

/// Temperature softmax, then keep the k largest probabilities (ties to the
/// lowest index) and renormalize them. The kept weights are evaluated as a
/// softmax over the selected logits alone, which equals the renormalized
/// probabilities and does not depend on the discarded logits.
inline GateDecision topk_gate(const Vec& logits, double tau, std::size_t k) {
    const std::size_t n = logits.size();
    detail::require(n >= 1, "topk_gate: empty logits");
    detail::require(k >= 1 && k <= n, "topk_gate: k must lie in [1, n], got k = " +
                                          std::to_string(k) + ", n = " + std::to_string(n));
    GateDecision d;
    d.logits = logits;
    d.probs = softmax(logits, tau);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return d.probs[a] > d.probs[b]; });
    d.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(d.selected.begin(), d.selected.end());

    d.g = Vec(n);
    if (k == n) {
        d.g = d.probs;
        return d;
    }
    Vec kept(k);
    for (std::size_t s = 0; s < k; ++s) kept[s] = logits[d.selected[s]];
    const Vec w = softmax(kept, tau);
    for (std::size_t s = 0; s < k; ++s) d.g[d.selected[s]] = w[s];
    return d;
}

/// Gap between the weakest selected and the strongest discarded
/// probability; infinite when nothing is discarded.
inline double selection_margin(const GateDecision& d) {
    const std::size_t n = d.probs.size();
    if (d.selected.size() == n) return std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    std::vector<bool> in(n, false);
    for (auto s : d.selected) in[s] = true;
    for (std::size_t i = 0; i < n; ++i) {
        if (in[i]) lo = std::min(lo, d.probs[i]);
        else hi = std::max(hi, d.probs[i]);
    }
    return lo - hi;
}

// ---------------------------------------------------------------------------
// RotationGate

/// theta applied to a length-d_out row. A factorized theta is applied as
/// (u U) V so the cost stays linear in d_out.
inline Vec apply_theta_r(const RotationParams& p, const Vec& u, OpCounter* counter = nullptr) {
    if (p.factorized) return vecmat(vecmat(u, p.U, counter), p.V, counter);
    return vecmat(u, p.full, counter);
}

/// Rotation control factor from an expert output and the summed output of
/// its reference set: alpha = (v_i (.) ref_i) theta_r.
inline Vec rotation_angles_from_outputs(const RotationParams& p, const Vec& v_i, const Vec& ref_i,
                                        OpCounter* counter = nullptr) {
    validate(p, v_i.size());
    return apply_theta_r(p, hadamard(v_i, ref_i, counter), counter);
}

/// alpha_i = ((x P_i) (.) (x Q_i)) theta_r.
inline Vec rotation_angles(const RotationParams& p, const Vec& x, const Mat& P_i, const Mat& Q_i) {
    detail::require(P_i.rows() == Q_i.rows() && P_i.cols() == Q_i.cols(),
                    "rotation_angles: P_i and Q_i shapes differ");
    return rotation_angles_from_outputs(p, vecmat(x, P_i), vecmat(x, Q_i));
}

/// Applies the block-diagonal rotation with 2x2 blocks
/// [cos a, -sin a; sin a, cos a] to pairs (2m, 2m+1), element-wise.
inline Vec apply_rotation(const Vec& v, const Vec& alpha, OpCounter* counter = nullptr) {
    detail::require(v.size() % 2 == 0, "apply_rotation: length must be even, got " +
                                           std::to_string(v.size()));
    detail::require(alpha.size() * 2 == v.size(), "apply_rotation: need " +
                                                      std::to_string(v.size() / 2) +
                                                      " angles, got " + std::to_string(alpha.size()));
    Vec out(v.size());
    for (std::size_t m = 0; m < alpha.size(); ++m) {
        const double c = std::cos(alpha[m]);
        const double s = std::sin(alpha[m]);
        const double a = v[2 * m];
        const double b = v[2 * m + 1];
        out[2 * m] = a * c - b * s;
        out[2 * m + 1] = a * s + b * c;
    }
    // two trig evaluations plus four products per pair
    tally(counter, 3 * v.size());
    return out;
}

/// Pairwise cosine similarity of the given vectors; zero vectors give 0.
inline Mat cosine_similarity_matrix(std::span<const Vec> vs) {
    Mat m(vs.size(), vs.size());
    for (std::size_t i = 0; i < vs.size(); ++i) {
        for (std::size_t j = 0; j < vs.size(); ++j) {
            const double den = norm2(vs[i]) * norm2(vs[j]);
            m(i, j) = den > 0.0 ? dot(vs[i], vs[j]) / den : 0.0;
        }
    }
    return m;
}

}  // namespace radargate
