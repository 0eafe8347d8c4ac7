#include <gtest/gtest.h>

#include <numbers>

#include "oracles.hpp"
#include "radargate/factory.hpp"
#include "radargate/gates.hpp"

using namespace radargate;

TEST(StretchLogits, Trivial) {
    StretchParams p{Mat(3, 2), StretchVariant::InputProj, 1.0, 1};
    EXPECT_EQ(stretch_logits(p, Vec{1, 2, 3}, {}), (Vec{0, 0}));

    Rng rng(1);
    p.theta_s = random_gaussian(rng, 3, 2);
    const Vec e = stretch_logits(p, Vec{1, 0, 0}, {});
    EXPECT_EQ(e, (Vec{p.theta_s(0, 0), p.theta_s(0, 1)}));

    StretchParams c{random_gaussian(rng, 4, 2), StretchVariant::ConcatProj, 1.0, 1};
    const std::vector<Vec> zeros{Vec(2), Vec(2)};
    EXPECT_EQ(stretch_logits(c, Vec(3), zeros), (Vec{0, 0}));
}

TEST(StretchLogits, ConcatIsScaleInvariant) {
    Rng rng(2);
    StretchParams c{random_gaussian(rng, 6, 3), StretchVariant::ConcatProj, 1.0, 1};
    std::vector<Vec> v{random_gaussian(rng, 2), random_gaussian(rng, 2), random_gaussian(rng, 2)};
    const Vec a = stretch_logits(c, Vec(1), v);
    for (auto& vi : v) vi = scale(vi, 7.5);
    const Vec b = stretch_logits(c, Vec(1), v);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(StretchLogits, WrongShapeRejected) {
    StretchParams p{Mat(4, 2), StretchVariant::InputProj, 1.0, 1};
    EXPECT_THROW(stretch_logits(p, Vec(3), {}), std::invalid_argument);
}

TEST(TopK, FullKeepsSoftmax) {
    const Vec l{0.3, -1.0, 2.0};
    const auto d = topk_gate(l, 0.7, 3);
    const Vec s = softmax(l, 0.7);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(d.g[i], s[i]);
}

TEST(TopK, TiesGoToLowestIndex) {
    const auto d = topk_gate(Vec{0, 0, 0}, 1.0, 2);
    EXPECT_EQ(d.selected, (std::vector<std::size_t>{0, 1}));
    EXPECT_DOUBLE_EQ(d.g[0], 0.5);
    EXPECT_DOUBLE_EQ(d.g[1], 0.5);
    EXPECT_EQ(d.g[2], 0.0);
}

TEST(TopK, RenormalizationArithmetic) {
    const Vec l{std::log(0.5), std::log(0.3), std::log(0.2)};
    const auto d = topk_gate(l, 1.0, 2);
    EXPECT_NEAR(d.g[0], 0.625, 1e-15);
    EXPECT_NEAR(d.g[1], 0.375, 1e-15);
    EXPECT_EQ(d.g[2], 0.0);
}

TEST(TopK, SimplexInvariant) {
    Rng rng(3);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t n = 1 + rng.index(10);
        const std::size_t k = 1 + rng.index(n);
        const Vec l = random_gaussian(rng, n, 3.0);
        const auto d = topk_gate(l, 0.1 + rng.uniform() * 2.0, k);
        double total = 0.0;
        std::size_t support = 0;
        for (std::size_t i = 0; i < n; ++i) {
            ASSERT_GE(d.g[i], 0.0);
            total += d.g[i];
            if (d.g[i] > 0.0) ++support;
        }
        ASSERT_NEAR(total, 1.0, 1e-12);
        ASSERT_LE(support, k);
        ASSERT_EQ(d.selected.size(), k);
        // selected weights equal renormalized probabilities
        double kept = 0.0;
        for (auto s : d.selected) kept += d.probs[s];
        for (auto s : d.selected) ASSERT_NEAR(d.g[s], d.probs[s] / kept, 1e-12);
    }
}

TEST(TopK, Rejects) {
    EXPECT_THROW(topk_gate(Vec{1, 2}, 1.0, 0), std::invalid_argument);
    EXPECT_THROW(topk_gate(Vec{1, 2}, 1.0, 3), std::invalid_argument);
}

TEST(SelectionMargin, Values) {
    EXPECT_TRUE(std::isinf(selection_margin(topk_gate(Vec{1, 2}, 1.0, 2))));
    const auto d = topk_gate(Vec{std::log(0.5), std::log(0.3), std::log(0.2)}, 1.0, 2);
    EXPECT_NEAR(selection_margin(d), 0.1, 1e-14);
}

TEST(RotationAngles, Trivial) {
    Rng rng(4);
    const Mat P = random_gaussian(rng, 4, 4), Q = random_gaussian(rng, 4, 4);
    const Vec x = random_gaussian(rng, 4);
    EXPECT_EQ(rotation_angles(RotationParams::zeros(4), x, P, Q), Vec(2));
    const auto theta = RotationParams::dense(random_gaussian(rng, 4, 2));
    EXPECT_EQ(rotation_angles(theta, Vec(4), P, Q), Vec(2));
    EXPECT_EQ(rotation_angles(theta, x, P, Mat(4, 4)), Vec(2));
}

TEST(RotationAngles, MatchesDenseOracle) {
    Rng rng(5);
    const auto a = random_lora(rng, 4, 4, 2), b = random_lora(rng, 4, 4, 2);
    const Mat P0 = oracle::naive_matmul(a.A, a.B), P1 = oracle::naive_matmul(b.A, b.B);
    const Vec x = random_gaussian(rng, 4);
    const auto theta = RotationParams::dense(random_gaussian(rng, 4, 2));
    const Vec xp = oracle::naive_vecmat(x, P0), xq = oracle::naive_vecmat(x, P1);
    Vec u(4);
    for (int j = 0; j < 4; ++j) u[j] = xp[j] * xq[j];
    const Vec ref = oracle::naive_vecmat(u, theta.full);
    const Vec got = rotation_angles(theta, x, P0, P1);
    for (int m = 0; m < 2; ++m) EXPECT_NEAR(got[m], ref[m], 1e-13);
}

TEST(RotationAngles, FactorizedEqualsDenseProduct) {
    Rng rng(6);
    const auto lr = RotationParams::lowrank(random_gaussian(rng, 6, 2), random_gaussian(rng, 2, 3));
    const auto dn = RotationParams::dense(effective_theta_r(lr));
    const Vec v = random_gaussian(rng, 6), ref = random_gaussian(rng, 6);
    const Vec a = rotation_angles_from_outputs(lr, v, ref), b = rotation_angles_from_outputs(dn, v, ref);
    for (int m = 0; m < 3; ++m) EXPECT_NEAR(a[m], b[m], 1e-13);
}

TEST(EffectiveTheta, Cases) {
    Rng rng(7);
    const Mat full = random_gaussian(rng, 4, 2);
    EXPECT_EQ(effective_theta_r(RotationParams::dense(full)), full);
    EXPECT_EQ(effective_theta_r(RotationParams::lowrank(Mat(4, 2), random_gaussian(rng, 2, 2))), Mat(4, 2));
    const Mat V = random_gaussian(rng, 4, 2);
    const Mat e = effective_theta_r(RotationParams::lowrank(Mat::identity(4), V));
    EXPECT_EQ(e, oracle::naive_matmul(Mat::identity(4), V));
}

TEST(RotationParams, ShapeValidation) {
    EXPECT_THROW(validate(RotationParams::dense(Mat(4, 3)), 4), std::invalid_argument);
    EXPECT_THROW(validate(RotationParams::lowrank(Mat(4, 2), Mat(3, 2)), 4), std::invalid_argument);
    EXPECT_NO_THROW(validate(RotationParams::zeros(6, 4), 6));
}

TEST(ApplyRotation, Trivial) {
    EXPECT_EQ(apply_rotation(Vec{1, 2, 3, 4}, Vec(2)), (Vec{1, 2, 3, 4}));
    const Vec q = apply_rotation(Vec{1, 0}, Vec{std::numbers::pi / 2});
    EXPECT_NEAR(q[0], 0.0, 1e-16);
    EXPECT_NEAR(q[1], 1.0, 1e-16);
}

TEST(ApplyRotation, MatchesDenseBlockDiagonal) {
    Rng rng(8);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t half = 1 + rng.index(8);
        const Vec v = random_gaussian(rng, 2 * half);
        const Vec a = random_gaussian(rng, half, 3.0);
        const Vec got = apply_rotation(v, a);
        const Vec ref = oracle::row_times(v, oracle::rotation_matrix(a));
        ASSERT_LT(max_abs_diff(got.span(), ref.span()), 1e-12);
    }
}

TEST(ApplyRotation, IsometryCompositionInverse) {
    Rng rng(9);
    for (int t = 0; t < 1000; ++t) {
        const std::size_t half = 1 + rng.index(8);
        const Vec v = random_gaussian(rng, 2 * half);
        const Vec a = random_gaussian(rng, half, 3.0), b = random_gaussian(rng, half, 3.0);
        const Vec ra = apply_rotation(v, a);
        ASSERT_NEAR(norm2(ra), norm2(v), 1e-12 * norm2(v));
        ASSERT_LT(max_abs_diff(apply_rotation(ra, b).span(), apply_rotation(v, add(a, b)).span()), 1e-12);
        ASSERT_LT(max_abs_diff(apply_rotation(ra, scale(a, -1.0)).span(), v.span()), 1e-12);
    }
}

TEST(ApplyRotation, Rejects) {
    EXPECT_THROW(apply_rotation(Vec{1, 2, 3}, Vec{0.0}), std::invalid_argument);
    EXPECT_THROW(apply_rotation(Vec{1, 2}, Vec{0.0, 0.0}), std::invalid_argument);
}

TEST(CosineMatrix, Properties) {
    const std::vector<Vec> v{Vec{1, 0}, Vec{0, 2}, Vec{-3, 0}, Vec{0, 0}};
    const Mat c = cosine_similarity_matrix(v);
    EXPECT_DOUBLE_EQ(c(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(c(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(c(0, 2), -1.0);
    EXPECT_DOUBLE_EQ(c(3, 0), 0.0);
}
