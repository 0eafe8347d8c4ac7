#include <gtest/gtest.h>

#include "radargate/experiments.hpp"
#include "radargate/factory.hpp"
#include "radargate/grads.hpp"

using namespace radargate;

namespace {

LayerDims dims(std::size_t n, std::size_t d, std::size_t k, StretchVariant var, std::size_t r_a = 0) {
    LayerDims D;
    D.n = n;
    D.d_in = d;
    D.d_out = d;
    D.r = 2;
    D.k = k;
    D.variant = var;
    D.r_a = r_a;
    return D;
}

// Central difference of the double-precision loss, written without the
// library checker.
double numeric(RadarLayer L, Mat& (*pick)(RadarLayer&), std::size_t e, const Vec& x, const Vec& t,
               double h = 1e-5) {
    Mat& p = pick(L);
    const double s = p.flat()[e];
    p.flat()[e] = s + h;
    const double up = loss_mse(forward(L, x).y, t);
    p.flat()[e] = s - h;
    const double dn = loss_mse(forward(L, x).y, t);
    return (up - dn) / (2 * h);
}

Mat& pick_s(RadarLayer& L) { return L.stretch.theta_s; }
Mat& pick_r(RadarLayer& L) { return L.rotation.full; }

}  // namespace

TEST(LossMse, Values) {
    EXPECT_EQ(loss_mse(Vec{1, 2}, Vec{1, 2}), 0.0);
    EXPECT_EQ(loss_mse(Vec{0, 0}, Vec{3, 4}), 25.0);
    Rng rng(1);
    const Vec a = random_gaussian(rng, 7), b = random_gaussian(rng, 7);
    double ref = 0.0;
    for (int i = 0; i < 7; ++i) ref += (a[i] - b[i]) * (a[i] - b[i]);
    EXPECT_NEAR(loss_mse(a, b), ref, 1e-14);
    EXPECT_THROW(loss_mse(Vec{1}, Vec{1, 2}), std::invalid_argument);
}

TEST(BackwardStretch, ZeroAtPerfectFitAndZeroFeatures) {
    Rng rng(2);
    auto L = make_layer(rng, dims(3, 4, 2, StretchVariant::InputProj), true);
    const Vec x = random_gaussian(rng, 4);
    const auto tr = forward(L, x);
    for (auto m : {StretchGradMode::ExactMasked, StretchGradMode::Approximate})
        EXPECT_EQ(frobenius(backward_stretch(tr, tr.y, m)), 0.0);
    EXPECT_EQ(frobenius(backward_rotation(tr, tr.y)), 0.0);
    const auto tz = forward(L, Vec(4));
    EXPECT_EQ(frobenius(backward_stretch(tz, random_gaussian(rng, 4))), 0.0);
    EXPECT_EQ(frobenius(backward_rotation(tz, random_gaussian(rng, 4))), 0.0);
}

TEST(BackwardStretch, RejectsModesWithoutStretch) {
    Rng rng(3);
    auto L = make_layer(rng, dims(2, 4, 1, StretchVariant::InputProj), true);
    L.mode = GateMode::RotationOnly;
    const auto tr = forward(L, Vec(4, 1.0));
    EXPECT_THROW(backward_stretch(tr, Vec(4)), std::invalid_argument);
    L.mode = GateMode::StretchOnly;
    EXPECT_THROW(backward_rotation(forward(L, Vec(4, 1.0)), Vec(4)), std::invalid_argument);
}

TEST(BackwardStretch, SmallInstanceMatchesDoubleFd) {
    Rng rng(4);
    auto L = make_layer(rng, dims(3, 4, 3, StretchVariant::ConcatProj), true);
    const Vec x = random_gaussian(rng, 4), t = random_gaussian(rng, 4);
    const Mat g = backward_stretch(forward(L, x), t);
    for (std::size_t e = 0; e < g.size(); ++e) {
        const double f = numeric(L, pick_s, e, x, t);
        EXPECT_LT(relative_error(g.flat()[e], f), 1e-4) << e;
    }
    EXPECT_LT(finite_diff_check(L, x, t).max_rel_err_s, 1e-6);
}

TEST(BackwardRotation, SmallInstanceMatchesDoubleFd) {
    Rng rng(5);
    auto L = make_layer(rng, dims(2, 4, 2, StretchVariant::ConcatProj), true);
    const Vec x = random_gaussian(rng, 4), t = random_gaussian(rng, 4);
    const Mat g = backward_rotation(forward(L, x), t);
    for (std::size_t e = 0; e < g.size(); ++e) {
        const double f = numeric(L, pick_r, e, x, t);
        EXPECT_LT(relative_error(g.flat()[e], f), 1e-4) << e;
    }
    EXPECT_LT(finite_diff_check(L, x, t).max_rel_err_r, 1e-6);
}

TEST(FiniteDiff, NearLinearRegime) {
    Rng rng(6);
    auto L = make_layer(rng, dims(3, 4, 3, StretchVariant::InputProj), true);
    L.stretch.tau = 1e3;
    const auto rep = finite_diff_check(L, random_gaussian(rng, 4), random_gaussian(rng, 4));
    EXPECT_LT(rep.max_rel_err_s, 1e-7);
}

TEST(FiniteDiff, ZeroRotationNeighbourhood) {
    Rng rng(7);
    for (std::size_t r_a : {0, 3}) {
        auto L = make_layer(rng, dims(3, 6, 2, StretchVariant::ConcatProj, r_a), true);
        L.rotation = r_a ? RotationParams::lowrank(random_gaussian(rng, 6, 3, 1e-3), random_gaussian(rng, 3, 3, 1e-3))
                         : RotationParams::zeros(6);
        try {
            const auto rep = finite_diff_check(L, random_gaussian(rng, 6), random_gaussian(rng, 6));
            EXPECT_LT(rep.max_rel_err_r, 1e-6);
        } catch (const UnstableSelection&) {
            GTEST_SKIP() << "unstable draw";
        }
    }
}

TEST(FiniteDiff, RandomStableConfigs) {
    for (std::size_t i = 0; i < 40; ++i) {
        const auto row = gradcheck_instance(99, i);
        EXPECT_LT(row.report.max_rel_err_s, 1e-5) << i;
        EXPECT_LT(row.report.max_rel_err_r, 1e-5) << i;
    }
}

TEST(FiniteDiff, DetectsTamperedGradients) {
    Rng rng(8);
    auto L = make_layer(rng, dims(3, 4, 3, StretchVariant::ConcatProj), true);
    const Vec x = random_gaussian(rng, 4), t = random_gaussian(rng, 4);
    const auto off_s = finite_diff_check(L, x, t, 1e-5, [](GateGrads& g) { g.d_theta_s.flat()[0] *= 1.001; });
    EXPECT_GT(off_s.max_rel_err_s, 1e-4);
    const auto off_r = finite_diff_check(L, x, t, 1e-5, [](GateGrads& g) {
        for (auto& v : g.d_theta_r.flat()) v = -v;
    });
    EXPECT_GT(off_r.max_rel_err_r, 1.0);
}

TEST(FiniteDiff, ApproximateFailsTheCheck) {
    Rng rng(9);
    auto L = make_layer(rng, dims(3, 4, 3, StretchVariant::ConcatProj), true);
    const Vec x = random_gaussian(rng, 4), t = random_gaussian(rng, 4);
    const auto tr = forward(L, x);
    const Mat approx = backward_stretch(tr, t, StretchGradMode::Approximate);
    const auto rep = finite_diff_check(L, x, t, 1e-5, [&](GateGrads& g) { g.d_theta_s = approx; });
    EXPECT_GT(rep.max_rel_err_s, 1e-3);
}

TEST(FiniteDiff, RejectsUnstableSelection) {
    Rng rng(10);
    auto L = make_layer(rng, dims(3, 4, 2, StretchVariant::InputProj), true);
    L.stretch.theta_s = Mat(4, 3);  // all logits tie
    EXPECT_THROW(finite_diff_check(L, random_gaussian(rng, 4), random_gaussian(rng, 4)), UnstableSelection);
    EXPECT_THROW(finite_diff_check(L, Vec(4), Vec(4), 0.0), std::invalid_argument);
}

TEST(FactorizedGradient, ChainsThroughFactors) {
    Rng rng(11);
    auto L = make_layer(rng, dims(3, 6, 3, StretchVariant::InputProj, 2), true);
    const Vec x = random_gaussian(rng, 6), t = random_gaussian(rng, 6);
    const auto tr = forward(L, x);
    const auto g = gate_gradients(L, tr, t);
    const Mat G = backward_rotation(tr, t);
    EXPECT_LT(max_abs_diff(g.d_U.flat(), matmul(G, transpose(L.rotation.V)).flat()), 1e-14);
    EXPECT_LT(max_abs_diff(g.d_V.flat(), matmul(transpose(L.rotation.U), G).flat()), 1e-14);
    const auto rep = finite_diff_check(L, x, t);
    EXPECT_LT(rep.max_rel_err_r, 1e-5);
}

TEST(Approximate, PositivelyAlignedWithExact) {
    std::size_t total = 0, aligned = 0;
    Rng rng(12);
    while (total < 200) {
        const std::size_t n = 2 + rng.index(5);
        auto L = make_layer(rng, dims(n, 2 * (1 + rng.index(8)), 2 + rng.index(n - 1), StretchVariant::ConcatProj), true);
        const Vec x = random_gaussian(rng, L.d_in()), t = random_gaussian(rng, L.d_out());
        const auto tr = forward(L, x);
        if (selection_margin(tr.decision) <= 1e-4) continue;
        const Mat a = backward_stretch(tr, t, StretchGradMode::Approximate);
        const Mat e = backward_stretch(tr, t, StretchGradMode::ExactMasked);
        if (frobenius(e) == 0.0) continue;
        ++total;
        if (flat_cosine(a, e) > 0.0) ++aligned;
    }
    EXPECT_GE(aligned, 190u) << aligned << " of " << total;
}

TEST(ZeroLoss, FixedPoint) {
    Rng rng(13);
    auto L = make_layer(rng, dims(4, 6, 2, StretchVariant::ConcatProj, 2), true);
    const Vec x = random_gaussian(rng, 6);
    const auto tr = forward(L, x);
    const auto g = gate_gradients(L, tr, tr.y);
    EXPECT_EQ(g.norm_s(), 0.0);
    EXPECT_EQ(g.norm_r(), 0.0);
}

TEST(Accumulate, WeightedSum) {
    GateGrads a, b;
    b.d_theta_s = Mat{{1, 2}};
    b.has_stretch = true;
    accumulate(a, b, 0.5);
    accumulate(a, b, 0.5);
    EXPECT_EQ(a.d_theta_s, (Mat{{1, 2}}));
    EXPECT_TRUE(a.has_stretch);
    EXPECT_FALSE(a.has_rotation);
}
