#pragma once

// Analytic gradients of the squared-error loss with respect to the gate
// parameters theta_s and theta_r, and a central-difference checker.
//
// The expert matrices and the base W are frozen; only gate parameters get
// gradients. Top-k selection is held fixed as a mask while differentiating.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "radargate/layer.hpp"
#include "radargate/numkernel.hpp"

namespace radargate {

enum class StretchGradMode {
    /// Diagonal softmax-derivative approximation applied to the selected
    /// experts: dg_i/de_j ~ delta_ij S(e_i)(1 - S(e_i)) / tau, with S the
    /// pre-top-k softmax.
    Approximate,
    /// Exact derivative of the renormalized top-k weights with the
    /// selection mask held constant.
    ExactMasked,
};

/// Squared L2 distance, no 1/2 factor.
inline double loss_mse(const Vec& y, const Vec& target) {
    detail::require(y.size() == target.size(), "loss_mse: length mismatch " +
                                                   std::to_string(y.size()) + " vs " +
                                                   std::to_string(target.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double e = y[i] - target[i];
        acc += e * e;
    }
    return acc;
}

/// dL/dy = 2 (y - target).
inline Vec loss_grad_y(const Vec& y, const Vec& target) { return scale(sub(y, target), 2.0); }

/// dL/d(logits), zero outside the selected set.
inline Vec logit_gradient(const ForwardTrace& trace, const Vec& dy, StretchGradMode mode) {
    const auto& d = trace.decision;
    const std::size_t n = d.g.size();
    Vec c(n);
    for (auto i : d.selected) c[i] = dot(dy, trace.v_tilde[i]);

    Vec de(n);
    const double inv_tau = 1.0 / trace.tau;
    if (mode == StretchGradMode::Approximate) {
        for (auto j : d.selected) de[j] = c[j] * inv_tau * d.probs[j] * (1.0 - d.probs[j]);
    } else {
        double mean_c = 0.0;
        for (auto i : d.selected) mean_c += d.g[i] * c[i];
        for (auto j : d.selected) de[j] = inv_tau * d.g[j] * (c[j] - mean_c);
    }
    return de;
}

/// dL/dtheta_s = features^T dL/d(logits).
inline Mat backward_stretch(const ForwardTrace& trace, const Vec& target,
                            StretchGradMode mode = StretchGradMode::ExactMasked) {
    if (!uses_stretch(trace.mode) || !trace.features)
        throw std::invalid_argument("backward_stretch: trace mode '" +
                                    std::string(to_string(trace.mode)) + "' has no stretch gate");
    const Vec dy = loss_grad_y(trace.y, target);
    return outer(*trace.features, logit_gradient(trace, dy, mode));
}

/// dL/d(alpha_i) for every weighted expert; empty for the rest.
inline std::vector<Vec> angle_gradients(const ForwardTrace& trace, const Vec& dy) {
    std::vector<Vec> out(trace.v.size());
    for (auto i : trace.decision.selected) {
        const Vec& v = trace.v[i];
        const Vec& a = trace.alpha[i];
        const double g = trace.decision.g[i];
        Vec da(a.size());
        for (std::size_t m = 0; m < a.size(); ++m) {
            const double c = std::cos(a[m]);
            const double s = std::sin(a[m]);
            const double d_even = -v[2 * m] * s - v[2 * m + 1] * c;
            const double d_odd = v[2 * m] * c - v[2 * m + 1] * s;
            da[m] = g * (dy[2 * m] * d_even + dy[2 * m + 1] * d_odd);
        }
        out[i] = std::move(da);
    }
    return out;
}

/// Gradient with respect to the effective (dense) theta_r:
/// dL/dtheta_r(j, k) = sum_i dL/dalpha_i(k) * U_i(j), U_i = v_i (.) ref_i.
inline Mat backward_rotation(const ForwardTrace& trace, const Vec& target) {
    if (!uses_rotation(trace.mode))
        throw std::invalid_argument("backward_rotation: trace mode '" +
                                    std::string(to_string(trace.mode)) + "' has no rotation gate");
    const std::size_t d_out = trace.y.size();
    const Vec dy = loss_grad_y(trace.y, target);
    const auto da = angle_gradients(trace, dy);
    Mat grad(d_out, d_out / 2);
    for (auto i : trace.decision.selected) {
        const Vec u = hadamard(trace.v[i], trace.ref[i]);
        for (std::size_t j = 0; j < d_out; ++j) {
            if (u[j] == 0.0) continue;
            for (std::size_t k = 0; k < d_out / 2; ++k) grad(j, k) += da[i][k] * u[j];
        }
    }
    return grad;
}

/// Gradients shaped like the parameters they belong to. For a factorized
/// theta_r = U V, d_U = G V^T and d_V = U^T G with G the dense gradient.
struct GateGrads {
    Mat d_theta_s;
    Mat d_theta_r;
    Mat d_U;
    Mat d_V;
    bool has_stretch = false;
    bool has_rotation = false;

    double norm_s() const { return has_stretch ? frobenius(d_theta_s) : 0.0; }
    double norm_r() const {
        if (!has_rotation) return 0.0;
        if (d_U.size() > 0) {
            const double a = frobenius(d_U), b = frobenius(d_V);
            return std::sqrt(a * a + b * b);
        }
        return frobenius(d_theta_r);
    }
    bool finite() const {
        return all_finite(d_theta_s.flat()) && all_finite(d_theta_r.flat()) &&
               all_finite(d_U.flat()) && all_finite(d_V.flat());
    }
};

inline GateGrads gate_gradients(const RadarLayer& layer, const ForwardTrace& trace,
                                const Vec& target,
                                StretchGradMode mode = StretchGradMode::ExactMasked) {
    GateGrads g;
    if (uses_stretch(layer.mode)) {
        g.d_theta_s = backward_stretch(trace, target, mode);
        g.has_stretch = true;
    }
    if (uses_rotation(layer.mode)) {
        g.d_theta_r = backward_rotation(trace, target);
        if (layer.rotation.factorized) {
            g.d_U = matmul(g.d_theta_r, transpose(layer.rotation.V));
            g.d_V = matmul(transpose(layer.rotation.U), g.d_theta_r);
        }
        g.has_rotation = true;
    }
    return g;
}

inline void accumulate(GateGrads& into, const GateGrads& g, double weight) {
    auto acc = [weight](Mat& dst, const Mat& src) {
        if (src.size() == 0) return;
        if (dst.size() == 0) dst = Mat(src.rows(), src.cols());
        for (std::size_t i = 0; i < src.size(); ++i) dst.flat()[i] += weight * src.flat()[i];
    };
    acc(into.d_theta_s, g.d_theta_s);
    acc(into.d_theta_r, g.d_theta_r);
    acc(into.d_U, g.d_U);
    acc(into.d_V, g.d_V);
    into.has_stretch = into.has_stretch || g.has_stretch;
    into.has_rotation = into.has_rotation || g.has_rotation;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

/// Thrown when the top-k selection could flip under a perturbation of
/// size h; callers resample the configuration.
struct UnstableSelection : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FdReport {
    double max_rel_err_s = 0.0;
    double max_rel_err_r = 0.0;
    std::size_t entries = 0;
};

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-8);
}

inline double sample_loss(const RadarLayer& layer, const Vec& x, const Vec& target) {
    return loss_mse(forward(layer, x).y, target);
}

namespace detail {

#if defined(__SIZEOF_FLOAT128__) && defined(__GLIBC__)
using Wide = _Float128;
inline Wide wide_exp(Wide v) { return expf128(v); }
inline Wide wide_sqrt(Wide v) { return sqrtf128(v); }
inline Wide wide_sin(Wide v) { return sinf128(v); }
inline Wide wide_cos(Wide v) { return cosf128(v); }
#else
using Wide = long double;
inline Wide wide_exp(Wide v) { return std::exp(v); }
inline Wide wide_sqrt(Wide v) { return std::sqrt(v); }
inline Wide wide_sin(Wide v) { return std::sin(v); }
inline Wide wide_cos(Wide v) { return std::cos(v); }
#endif

}  // namespace detail

/// The same loss evaluated end to end in quadruple precision (long double
/// where that is unavailable). A difference quotient with h = 1e-5 loses
/// about five digits to cancellation, which in double swamps gradient
/// entries near 1e-8.
inline detail::Wide sample_loss_extended(const RadarLayer& layer, const Vec& x, const Vec& target) {
    using R = detail::Wide;
    using RV = std::vector<R>;
    const std::size_t n = layer.n(), d_out = layer.d_out();
    auto vm = [](const RV& a, const Mat& m) {
        RV out(m.cols(), R(0));
        for (std::size_t i = 0; i < m.rows(); ++i)
            for (std::size_t j = 0; j < m.cols(); ++j) out[j] += a[i] * static_cast<R>(m(i, j));
        return out;
    };
    RV xv(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) xv[i] = x[i];
    RV y = vm(xv, layer.base.W);
    if (layer.mode == GateMode::BaseOnly) {
        R acc = R(0);
        for (std::size_t j = 0; j < d_out; ++j) acc += (y[j] - R(target[j])) * (y[j] - R(target[j]));
        return acc;
    }
    std::vector<RV> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = vm(vm(xv, layer.bank.module(i).A), layer.bank.module(i).B);

    RV g(n, R(0));
    if (uses_stretch(layer.mode)) {
        RV feat;
        if (layer.stretch.variant == StretchVariant::InputProj) {
            feat = xv;
        } else {
            for (const auto& vi : v) feat.insert(feat.end(), vi.begin(), vi.end());
            R nn = R(0);
            for (R f : feat) nn += f * f;
            const R norm = std::max(detail::wide_sqrt(nn), static_cast<R>(1e-12));
            for (R& f : feat) f /= norm;
        }
        const RV logits = vm(feat, layer.stretch.theta_s);
        const R tau = layer.stretch.tau;
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
        order.resize(layer.stretch.k);
        R mx = logits[order[0]];
        R z = R(0);
        for (auto i : order) z += detail::wide_exp((logits[i] - mx) / tau);
        for (auto i : order) g[i] = detail::wide_exp((logits[i] - mx) / tau) / z;
    } else {
        for (auto& gi : g) gi = R(1) / static_cast<R>(n);
    }

    RV total(d_out, R(0));
    if (uses_rotation(layer.mode))
        for (const auto& vi : v)
            for (std::size_t j = 0; j < d_out; ++j) total[j] += vi[j];
    const Mat& theta = layer.rotation.full;
    for (std::size_t i = 0; i < n; ++i) {
        if (g[i] == R(0)) continue;
        RV vt = v[i];
        if (uses_rotation(layer.mode)) {
            RV u(d_out);
            for (std::size_t j = 0; j < d_out; ++j) u[j] = v[i][j] * (total[j] - v[i][j]);
            RV a(d_out / 2, R(0));
            if (layer.rotation.factorized) a = vm(vm(u, layer.rotation.U), layer.rotation.V);
            else a = vm(u, theta);
            for (std::size_t m = 0; m < d_out / 2; ++m) {
                const R c = detail::wide_cos(a[m]), s = detail::wide_sin(a[m]);
                vt[2 * m] = v[i][2 * m] * c - v[i][2 * m + 1] * s;
                vt[2 * m + 1] = v[i][2 * m] * s + v[i][2 * m + 1] * c;
            }
        }
        for (std::size_t j = 0; j < d_out; ++j) y[j] += g[i] * vt[j];
    }
    R acc = R(0);
    for (std::size_t j = 0; j < d_out; ++j) acc += (y[j] - R(target[j])) * (y[j] - R(target[j]));
    return acc;
}

/// Perturbs every gate parameter entry by +-h and compares the central
/// difference of the wide-precision loss with the ExactMasked analytic
/// gradient. `tamper` may edit
/// the analytic gradient before comparison (negative controls).
inline FdReport finite_diff_check(const RadarLayer& layer, const Vec& x, const Vec& target,
                                  double h = 1e-5,
                                  const std::function<void(GateGrads&)>& tamper = {}) {
    detail::require(h > 0.0, "finite_diff_check: h must be positive");
    const auto trace = forward(layer, x);
    const double margin = selection_margin(trace.decision);
    if (uses_stretch(layer.mode) && margin <= 10.0 * h)
        throw UnstableSelection("finite_diff_check: selection margin " + std::to_string(margin) +
                                " is within 10h");

    GateGrads analytic = gate_gradients(layer, trace, target, StretchGradMode::ExactMasked);
    if (tamper) tamper(analytic);

    RadarLayer work = layer;
    FdReport report;
    auto sweep = [&](Mat& param, const Mat& grad, double& worst) {
        for (std::size_t e = 0; e < param.size(); ++e) {
            const double saved = param.flat()[e];
            param.flat()[e] = saved + h;
            const detail::Wide up = sample_loss_extended(work, x, target);
            param.flat()[e] = saved - h;
            const detail::Wide down = sample_loss_extended(work, x, target);
            param.flat()[e] = saved;
            const double numeric = static_cast<double>((up - down) / (detail::Wide(2) * detail::Wide(h)));
            worst = std::max(worst, relative_error(grad.flat()[e], numeric));
            ++report.entries;
        }
    };
    if (uses_stretch(layer.mode)) sweep(work.stretch.theta_s, analytic.d_theta_s, report.max_rel_err_s);
    if (uses_rotation(layer.mode)) {
        if (layer.rotation.factorized) {
            sweep(work.rotation.U, analytic.d_U, report.max_rel_err_r);
            sweep(work.rotation.V, analytic.d_V, report.max_rel_err_r);
        } else {
            sweep(work.rotation.full, analytic.d_theta_r, report.max_rel_err_r);
        }
    }
    return report;
}

/// Cosine between flattened matrices; 0 when either is zero.
inline double flat_cosine(const Mat& a, const Mat& b) {
    detail::require(a.size() == b.size(), "flat_cosine: size mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a.flat()[i] * b.flat()[i];
        aa += a.flat()[i] * a.flat()[i];
        bb += b.flat()[i] * b.flat()[i];
    }
    return (aa > 0.0 && bb > 0.0) ? ab / std::sqrt(aa * bb) : 0.0;
}

}  // namespace radargate
