#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "radargate/gates.hpp"
#include "radargate/lora.hpp"
#include "radargate/numkernel.hpp"

namespace radargate {

enum class GateMode { Radar, StretchOnly, RotationOnly, BaseOnly };

inline constexpr std::string_view to_string(GateMode m) {
    switch (m) {
        case GateMode::Radar: return "radar";
        case GateMode::StretchOnly: return "stretch";
        case GateMode::RotationOnly: return "rotation";
        case GateMode::BaseOnly: return "base";
    }
    return "?";
}

inline std::optional<GateMode> parse_gate_mode(std::string_view s) {
    if (s == "radar") return GateMode::Radar;
    if (s == "stretch") return GateMode::StretchOnly;
    if (s == "rotation") return GateMode::RotationOnly;
    if (s == "base") return GateMode::BaseOnly;
    return std::nullopt;
}

inline constexpr bool uses_rotation(GateMode m) {
    return m == GateMode::Radar || m == GateMode::RotationOnly;
}

inline constexpr bool uses_stretch(GateMode m) {
    return m == GateMode::Radar || m == GateMode::StretchOnly;
}

struct RadarLayer {
    FrozenBase base;
    LoraBank bank;
    StretchParams stretch;
    RotationParams rotation;
    GateMode mode = GateMode::Radar;

    std::size_t n() const { return bank.size(); }
    std::size_t d_in() const { return bank.d_in(); }
    std::size_t d_out() const { return bank.d_out(); }
};

inline std::size_t stretch_input_dim(const RadarLayer& layer) {
    return layer.stretch.variant == StretchVariant::InputProj ? layer.d_in()
                                                              : layer.n() * layer.d_out();
}

inline void validate(const RadarLayer& layer) {
    const auto& W = layer.base.W;
    detail::require(W.rows() == layer.d_in() && W.cols() == layer.d_out(),
                    "RadarLayer: W is " + detail::shape(W) + ", bank expects " +
                        std::to_string(layer.d_in()) + "x" + std::to_string(layer.d_out()));
    const auto& ts = layer.stretch.theta_s;
    detail::require(ts.rows() == stretch_input_dim(layer) && ts.cols() == layer.n(),
                    "RadarLayer: theta_s is " + detail::shape(ts) + ", expected " +
                        std::to_string(stretch_input_dim(layer)) + "x" + std::to_string(layer.n()));
    detail::require(layer.stretch.tau > 0.0, "RadarLayer: tau must be positive");
    detail::require(layer.stretch.k >= 1 && layer.stretch.k <= layer.n(),
                    "RadarLayer: k must lie in [1, n]");
    validate(layer.rotation, layer.d_out());
}

/// Where the multiply-accumulates of one forward pass went. The frozen
/// base product x W is never counted.
struct FlopBreakdown {
    OpCounter gate;       // stretch logits, softmax, gate-only expert outputs
    OpCounter experts;    // outputs of experts that receive weight
    OpCounter reference;  // extra expert outputs needed only for reference sums
    OpCounter angles;     // (v_i (.) ref_i) theta_r
    OpCounter rotation;   // element-wise rotation
    OpCounter combine;    // sum_i g_i v~_i

    std::uint64_t total() const {
        return gate.macs + experts.macs + reference.macs + angles.macs + rotation.macs +
               combine.macs;
    }
    std::uint64_t rotation_path() const { return reference.macs + angles.macs + rotation.macs; }

    FlopBreakdown& operator+=(const FlopBreakdown& o) {
        gate.macs += o.gate.macs;
        experts.macs += o.experts.macs;
        reference.macs += o.reference.macs;
        angles.macs += o.angles.macs;
        rotation.macs += o.rotation.macs;
        combine.macs += o.combine.macs;
        return *this;
    }
};

/// Intermediates of one forward pass. Per-expert entries that the active
/// path did not need are left empty (size 0); they always carry g_i = 0.
struct ForwardTrace {
    GateMode mode = GateMode::Radar;
    double tau = 1.0;
    Vec x;
    Vec base_out;                 // x W
    std::vector<Vec> v;           // x A_i B_i
    std::vector<Vec> ref;         // sum_{j != i} v_j (rotation modes)
    std::vector<Vec> alpha;       // rotation angles
    std::vector<Vec> v_tilde;     // rotated outputs (v itself when rotation is off)
    std::optional<Vec> features;  // gate input: x or normalized concat(v)
    GateDecision decision;
    Vec y;
};

inline ForwardTrace forward(const RadarLayer& layer, const Vec& x, FlopBreakdown* flops = nullptr) {
    detail::require(x.size() == layer.d_in(), "forward: input length " + std::to_string(x.size()) +
                                                  " != d_in " + std::to_string(layer.d_in()));
    const std::size_t n = layer.n();
    auto counter = [flops](OpCounter FlopBreakdown::*field) -> OpCounter* {
        return flops ? &(flops->*field) : nullptr;
    };

    ForwardTrace t;
    t.mode = layer.mode;
    t.tau = layer.stretch.tau;
    t.x = x;
    t.base_out = vecmat(x, layer.base.W);
    t.v.assign(n, Vec());
    t.ref.assign(n, Vec());
    t.alpha.assign(n, Vec());
    t.v_tilde.assign(n, Vec());

    if (layer.mode == GateMode::BaseOnly) {
        t.decision.logits = Vec(n);
        t.decision.probs = Vec(n, 1.0 / static_cast<double>(n));
        t.decision.g = Vec(n);
        t.y = t.base_out;
        return t;
    }

    const bool concat_gate = uses_stretch(layer.mode) &&
                             layer.stretch.variant == StretchVariant::ConcatProj;
    const bool need_all = concat_gate || uses_rotation(layer.mode);

    std::vector<OpCounter> per_expert(n);
    if (need_all)
        for (std::size_t i = 0; i < n; ++i) t.v[i] = layer.bank.expert_output(i, x, &per_expert[i]);

    if (uses_stretch(layer.mode)) {
        t.features = stretch_features(layer.stretch, x, t.v, counter(&FlopBreakdown::gate));
        t.decision.logits = vecmat(*t.features, layer.stretch.theta_s, counter(&FlopBreakdown::gate));
        t.decision = topk_gate(t.decision.logits, layer.stretch.tau, layer.stretch.k);
        tally(counter(&FlopBreakdown::gate), n);  // exponentials
    } else {
        t.decision.logits = Vec(n);
        t.decision.probs = Vec(n, 1.0 / static_cast<double>(n));
        t.decision.g = t.decision.probs;
        t.decision.selected.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.decision.selected[i] = i;
    }

    std::vector<bool> weighted(n, false);
    for (auto s : t.decision.selected) weighted[s] = true;

    for (std::size_t i = 0; i < n; ++i) {
        if (weighted[i] && t.v[i].empty())
            t.v[i] = layer.bank.expert_output(i, x, &per_expert[i]);
        if (flops) {
            if (weighted[i]) flops->experts.add(per_expert[i].macs);
            else if (concat_gate) flops->gate.add(per_expert[i].macs);
            else flops->reference.add(per_expert[i].macs);
        }
    }

    if (uses_rotation(layer.mode)) {
        Vec total(layer.d_out());
        for (const auto& vi : t.v) axpy(1.0, vi, total);
        for (auto i : t.decision.selected) {
            t.ref[i] = sub(total, t.v[i]);
            t.alpha[i] = rotation_angles_from_outputs(layer.rotation, t.v[i], t.ref[i],
                                                      counter(&FlopBreakdown::angles));
            t.v_tilde[i] = apply_rotation(t.v[i], t.alpha[i], counter(&FlopBreakdown::rotation));
        }
    } else {
        for (auto i : t.decision.selected) t.v_tilde[i] = t.v[i];
    }

    t.y = t.base_out;
    for (auto i : t.decision.selected) axpy(t.decision.g[i], t.v_tilde[i], t.y);
    tally(counter(&FlopBreakdown::combine), t.decision.selected.size() * layer.d_out());
    return t;
}

inline std::vector<ForwardTrace> forward_batch(const RadarLayer& layer, const Mat& X,
                                               FlopBreakdown* flops = nullptr) {
    detail::require(X.cols() == layer.d_in(), "forward_batch: X has " + std::to_string(X.cols()) +
                                                  " columns, d_in is " +
                                                  std::to_string(layer.d_in()));
    std::vector<ForwardTrace> out;
    out.reserve(X.rows());
    for (std::size_t r = 0; r < X.rows(); ++r) out.push_back(forward(layer, X.row_vec(r), flops));
    return out;
}

}  // namespace radargate
