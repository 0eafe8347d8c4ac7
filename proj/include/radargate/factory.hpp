#pragma once

// Construction of random frozen banks and gate parameters for experiments.

#include <cmath>
#include <cstddef>
#include <string>

#include "radargate/layer.hpp"

namespace radargate {

struct LayerDims {
    std::size_t n = 4;
    std::size_t d_in = 8;
    std::size_t d_out = 8;
    std::size_t r = 2;
    std::size_t r_a = 0;  // 0 selects a dense theta_r
    std::size_t k = 4;
    double tau = 1.0;
    StretchVariant variant = StretchVariant::ConcatProj;
    GateMode mode = GateMode::Radar;
};

inline void validate(const LayerDims& d) {
    detail::require(d.n >= 1, "n must be >= 1");
    detail::require(d.d_in >= 1, "d_in must be >= 1");
    detail::require(d.d_out >= 2 && d.d_out % 2 == 0, "d_out must be even and >= 2");
    detail::require(d.r >= 1 && d.r <= std::min(d.d_in, d.d_out), "r must lie in [1, min(d_in, d_out)]");
    detail::require(d.r_a <= d.d_out, "r_a must not exceed d_out");
    detail::require(d.k >= 1 && d.k <= d.n, "k must lie in [1, n]");
    detail::require(d.tau > 0.0, "tau must be positive");
}

inline LoraBank random_bank(Rng& rng, const LayerDims& d, double scale = 1.0) {
    std::vector<LoraModule> mods;
    mods.reserve(d.n);
    for (std::size_t i = 0; i < d.n; ++i) mods.push_back(random_lora(rng, d.d_in, d.d_out, d.r, scale));
    return LoraBank(std::move(mods));
}

inline FrozenBase random_base(Rng& rng, const LayerDims& d) {
    return {random_gaussian(rng, d.d_in, d.d_out, 1.0 / std::sqrt(static_cast<double>(d.d_in)))};
}

inline std::size_t stretch_rows(const LayerDims& d) {
    return d.variant == StretchVariant::InputProj ? d.d_in : d.n * d.d_out;
}

/// Training start: theta_s small uniform in +-init, effective theta_r zero,
/// so a Radar layer starts exactly at the stretch-only hypothesis.
inline StretchParams initial_stretch(Rng& rng, const LayerDims& d, double init = 1e-2) {
    return {random_uniform(rng, stretch_rows(d), d.n, -init, init), d.variant, d.tau, d.k};
}

/// Dense theta_r starts at zero. A factorized one starts with U small and
/// V zero: U = V = 0 is a stationary point that gradient descent never
/// leaves.
inline RotationParams initial_rotation(Rng& rng, const LayerDims& d, double init = 1e-2) {
    if (d.r_a == 0) return RotationParams::zeros(d.d_out);
    return RotationParams::lowrank(random_uniform(rng, d.d_out, d.r_a, -init, init),
                                   Mat(d.r_a, d.d_out / 2));
}

/// Generic (non-degenerate) gate parameters for derivative checks.
inline StretchParams random_stretch(Rng& rng, const LayerDims& d, double sigma = 1.0) {
    const auto rows = stretch_rows(d);
    return {random_gaussian(rng, rows, d.n, sigma), d.variant, d.tau, d.k};
}

inline RotationParams random_rotation(Rng& rng, const LayerDims& d, double sigma = 0.3) {
    const std::size_t half = d.d_out / 2;
    if (d.r_a > 0)
        return RotationParams::lowrank(random_gaussian(rng, d.d_out, d.r_a, sigma),
                                       random_gaussian(rng, d.r_a, half, sigma));
    return RotationParams::dense(random_gaussian(rng, d.d_out, half, sigma));
}

inline RadarLayer make_layer(Rng& rng, const LayerDims& d, bool random_gates = false,
                             double lora_scale = 1.0) {
    validate(d);
    LoraBank bank = random_bank(rng, d, lora_scale);
    FrozenBase base = random_base(rng, d);
    StretchParams s = random_gates ? random_stretch(rng, d) : initial_stretch(rng, d);
    RotationParams r = random_gates ? random_rotation(rng, d) : initial_rotation(rng, d);
    RadarLayer layer{std::move(base), std::move(bank), std::move(s), std::move(r), d.mode};
    validate(layer);
    return layer;
}

}  // namespace radargate
