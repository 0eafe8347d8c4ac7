#pragma once

// Closed-form FLOP and memory counts of the gating path, and an
// instrumented count of what forward() actually executes.
//
// Convention: one multiply-accumulate is one FLOP. The frozen base x W is
// excluded from both the formulas and the counts.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "radargate/factory.hpp"
#include "radargate/layer.hpp"
#include "radargate/numkernel.hpp"

namespace radargate {

enum class Which { Stretch, Radar };

inline constexpr std::string_view to_string(Which w) {
    return w == Which::Stretch ? "stretch" : "radar";
}

struct CostParams {
    std::uint64_t L = 1;  // tokens
    std::uint64_t n = 8;
    std::uint64_t d_in = 64;
    std::uint64_t d_out = 64;
    std::uint64_t r = 8;
    std::uint64_t k = 2;
    std::uint64_t r_a = 4;
};

inline void validate(const CostParams& p) {
    detail::require(p.n >= 1 && p.d_in >= 1 && p.d_out >= 1 && p.r >= 1 && p.k >= 1,
                    "CostParams: n, d_in, d_out, r, k must be positive");
    detail::require(p.k <= p.n, "CostParams: k must not exceed n");
    detail::require(p.r_a <= p.d_out, "CostParams: r_a must not exceed d_out");
}

/// O_s = L[n d_in + k r (d_in + d_out) + k d_out]
/// O_r = L[(2n + 2 r_a) d_in + k r (d_in + d_out) + k d_out]
inline std::uint64_t analytic_flops(const CostParams& p, Which w) {
    validate(p);
    const std::uint64_t gate = w == Which::Stretch ? p.n * p.d_in : (2 * p.n + 2 * p.r_a) * p.d_in;
    return p.L * (gate + p.k * p.r * (p.d_in + p.d_out) + p.k * p.d_out);
}

/// M_s = n[d_in + r (d_in + d_out)] + L(n + k r)
/// M_r = n[(2 r_a + 1) d_in + r (d_in + d_out)] + L(n + k r)
inline std::uint64_t analytic_memory(const CostParams& p, Which w) {
    validate(p);
    const std::uint64_t gate = w == Which::Stretch ? p.d_in : (2 * p.r_a + 1) * p.d_in;
    return p.n * (gate + p.r * (p.d_in + p.d_out)) + p.L * (p.n + p.k * p.r);
}

/// MACs of forward_batch over the rows of X, base product excluded.
inline std::uint64_t counted_flops(const RadarLayer& layer, const Mat& X,
                                   FlopBreakdown* breakdown = nullptr) {
    FlopBreakdown b;
    forward_batch(layer, X, &b);
    if (breakdown) *breakdown += b;
    return b.total();
}

struct CostReport {
    CostParams params;
    std::uint64_t analytic_flops_stretch = 0;
    std::uint64_t analytic_flops_radar = 0;
    std::uint64_t counted_flops_stretch = 0;
    std::uint64_t counted_flops_radar = 0;
    std::uint64_t analytic_mem_stretch = 0;
    std::uint64_t analytic_mem_radar = 0;
    double ratio = 0.0;  // analytic radar / analytic stretch

    double bracket(Which w) const {
        const auto a = w == Which::Stretch ? analytic_flops_stretch : analytic_flops_radar;
        const auto c = w == Which::Stretch ? counted_flops_stretch : counted_flops_radar;
        return static_cast<double>(c) / static_cast<double>(a);
    }
};

inline CostReport analytic_report(const CostParams& p) {
    CostReport rep;
    rep.params = p;
    rep.analytic_flops_stretch = analytic_flops(p, Which::Stretch);
    rep.analytic_flops_radar = analytic_flops(p, Which::Radar);
    rep.analytic_mem_stretch = analytic_memory(p, Which::Stretch);
    rep.analytic_mem_radar = analytic_memory(p, Which::Radar);
    rep.ratio = static_cast<double>(rep.analytic_flops_radar) /
                static_cast<double>(rep.analytic_flops_stretch);
    return rep;
}

/// Counts one random instance per d with d_in = d_out = d. The gate uses
/// the input projection, which is what the closed forms describe. The
/// frozen base is left at zero since it is never counted.
inline CostReport measure_cost(Rng& rng, const CostParams& p) {
    CostReport rep = analytic_report(p);
    LayerDims dims;
    dims.n = p.n;
    dims.d_in = p.d_in;
    dims.d_out = p.d_out;
    dims.r = p.r;
    dims.r_a = p.r_a;
    dims.k = p.k;
    dims.variant = StretchVariant::InputProj;
    validate(dims);

    RadarLayer layer{FrozenBase{Mat(p.d_in, p.d_out)}, random_bank(rng, dims), random_stretch(rng, dims),
                     random_rotation(rng, dims), GateMode::StretchOnly};
    validate(layer);
    const Mat X = random_gaussian(rng, p.L, p.d_in, 1.0);
    rep.counted_flops_stretch = counted_flops(layer, X);
    layer.mode = GateMode::Radar;
    rep.counted_flops_radar = counted_flops(layer, X);
    return rep;
}

inline std::vector<std::uint64_t> default_sweep_dims() { return {64, 128, 256, 512, 1024, 2048, 4096}; }

/// One report per d. The rng is forked per entry so rows do not depend on
/// the order of the list.
inline std::vector<CostReport> parity_sweep(std::span<const std::uint64_t> dims, const CostParams& base,
                                            const Rng& rng, bool count = true) {
    detail::require(!dims.empty(), "parity_sweep: dims must be nonempty");
    std::vector<CostReport> out;
    out.reserve(dims.size());
    for (auto d : dims) {
        detail::require(d % 2 == 0, "parity_sweep: d = " + std::to_string(d) + " is odd; d_out must be even");
        CostParams p = base;
        p.d_in = p.d_out = d;
        if (count) {
            Rng stream = rng.fork(d);
            out.push_back(measure_cost(stream, p));
        } else {
            out.push_back(analytic_report(p));
        }
    }
    return out;
}

}  // namespace radargate
