#pragma once

// Small deterministic dense linear algebra on 64-bit floats.
//
// Everything is row-major and accumulates left to right, so results are
// bitwise reproducible for a given build. Kernels optionally tally
// multiply-accumulates into an OpCounter owned by the caller.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace radargate {

/// Multiply-accumulate tally. One MAC (or one standalone multiply,
/// division or transcendental) counts as one FLOP; additions folded into
/// an accumulation are not counted separately.
struct OpCounter {
    std::uint64_t macs = 0;
    void add(std::uint64_t n) { macs += n; }
};

inline void tally(OpCounter* c, std::uint64_t n) {
    if (c != nullptr) c->add(n);
}

class Vec {
public:
    Vec() = default;
    explicit Vec(std::size_t n, double fill = 0.0) : data_(n, fill) {}
    Vec(std::initializer_list<double> init) : data_(init) {}
    explicit Vec(std::vector<double> data) : data_(std::move(data)) {}

    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> span() { return data_; }
    std::span<const double> span() const { return data_; }
    const std::vector<double>& values() const { return data_; }

    auto begin() { return data_.begin(); }
    auto end() { return data_.end(); }
    auto begin() const { return data_.begin(); }
    auto end() const { return data_.end(); }

    bool operator==(const Vec&) const = default;

private:
    std::vector<double> data_;
};

class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw std::invalid_argument("Mat: data size " + std::to_string(data_.size()) +
                                        " does not match " + std::to_string(rows_) + "x" +
                                        std::to_string(cols_));
    }
    Mat(std::initializer_list<std::initializer_list<double>> init) {
        rows_ = init.size();
        cols_ = rows_ ? init.begin()->size() : 0;
        data_.reserve(rows_ * cols_);
        for (const auto& row : init) {
            if (row.size() != cols_) throw std::invalid_argument("Mat: ragged initializer");
            data_.insert(data_.end(), row.begin(), row.end());
        }
    }

    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
    Vec row_vec(std::size_t i) const {
        auto r = row(i);
        return Vec(std::vector<double>(r.begin(), r.end()));
    }

    std::span<double> flat() { return data_; }
    std::span<const double> flat() const { return data_; }

    bool operator==(const Mat&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}
inline std::string shape(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}
}  // namespace detail

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Products

inline Mat matmul(const Mat& a, const Mat& b, OpCounter* counter = nullptr) {
    detail::require(a.cols() == b.rows(),
                    "matmul: dimension mismatch " + detail::shape(a) + " * " + detail::shape(b));
    Mat c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
            c(i, j) = acc;
        }
    }
    tally(counter, a.rows() * a.cols() * b.cols());
    return c;
}

/// Row vector times matrix: (1 x m) * (m x n).
inline Vec vecmat(const Vec& x, const Mat& m, OpCounter* counter = nullptr) {
    detail::require(x.size() == m.rows(), "vecmat: length " + std::to_string(x.size()) +
                                              " does not match " + detail::shape(m));
    Vec out(m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < m.rows(); ++p) acc += x[p] * m(p, j);
        out[j] = acc;
    }
    tally(counter, m.rows() * m.cols());
    return out;
}

inline Mat transpose(const Mat& a) {
    Mat t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

/// Outer product a^T b for row vectors a, b.
inline Mat outer(const Vec& a, const Vec& b) {
    Mat m(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
    return m;
}

inline Vec hadamard(const Vec& a, const Vec& b, OpCounter* counter = nullptr) {
    detail::require(a.size() == b.size(), "hadamard: length mismatch " + std::to_string(a.size()) +
                                              " vs " + std::to_string(b.size()));
    Vec c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * b[i];
    tally(counter, a.size());
    return c;
}

inline double dot(const Vec& a, const Vec& b) {
    detail::require(a.size() == b.size(), "dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

inline double frobenius(const Mat& m) {
    double acc = 0.0;
    for (double x : m.flat()) acc += x * x;
    return std::sqrt(acc);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    detail::require(a.size() == b.size(), "max_abs_diff: length mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------
// Element-wise helpers

inline Vec add(const Vec& a, const Vec& b) {
    detail::require(a.size() == b.size(), "add: length mismatch");
    Vec c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] + b[i];
    return c;
}

inline Vec sub(const Vec& a, const Vec& b) {
    detail::require(a.size() == b.size(), "sub: length mismatch");
    Vec c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] - b[i];
    return c;
}

inline Vec scale(const Vec& a, double s) {
    Vec c(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) c[i] = a[i] * s;
    return c;
}

/// y += s * x
inline void axpy(double s, const Vec& x, Vec& y) {
    detail::require(x.size() == y.size(), "axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

inline Mat add(const Mat& a, const Mat& b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                    "add: shape mismatch " + detail::shape(a) + " vs " + detail::shape(b));
    Mat c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.flat()[i] = a.flat()[i] + b.flat()[i];
    return c;
}

inline Mat sub(const Mat& a, const Mat& b) {
    detail::require(a.rows() == b.rows() && a.cols() == b.cols(),
                    "sub: shape mismatch " + detail::shape(a) + " vs " + detail::shape(b));
    Mat c(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) c.flat()[i] = a.flat()[i] - b.flat()[i];
    return c;
}

inline Vec concat(std::span<const Vec> parts) {
    std::vector<double> out;
    for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
    return Vec(std::move(out));
}

// ---------------------------------------------------------------------------
// Normalizations

inline Vec softmax(const Vec& logits, double tau) {
    detail::require(tau > 0.0, "softmax: tau must be positive");
    detail::require(!logits.empty(), "softmax: empty logits");
    detail::require(all_finite(logits.span()), "softmax: non-finite logits");
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : logits) mx = std::max(mx, l / tau);
    Vec p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] / tau - mx);
        total += p[i];
    }
    for (auto& x : p) x /= total;
    return p;
}

/// v / max(||v||, eps).
inline Vec l2_normalize(const Vec& v, double eps = 1e-12, OpCounter* counter = nullptr) {
    detail::require(eps > 0.0, "l2_normalize: eps must be positive");
    const double denom = std::max(norm2(v), eps);
    tally(counter, 2 * v.size());
    return scale(v, 1.0 / denom);
}

// ---------------------------------------------------------------------------
// Random generation

/// SplitMix64: a 64-bit counter advanced by the golden-ratio increment and
/// passed through a fixed mixing function. The stream depends only on the
/// seed and the number of draws, so it is identical on every platform.
/// Floating-point draws are derived with explicit arithmetic rather than
/// <random> distributions, whose algorithms are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        detail::require(n > 0, "Rng::index: empty range");
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    /// Standard normal via Box-Muller (one value per call, no caching).
    double gaussian() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Dirichlet(1, ..., 1) via normalized exponentials.
    Vec dirichlet_flat(std::size_t n) {
        Vec g(n);
        double total = 0.0;
        for (auto& x : g) {
            double u = uniform();
            while (u <= 0.0) u = uniform();
            x = -std::log(u);
            total += x;
        }
        for (auto& x : g) x /= total;
        return g;
    }

    /// Independent child stream; does not advance this generator.
    Rng fork(std::uint64_t stream) const { return Rng(mix(state_ ^ mix(stream + 1))); }

private:
    std::uint64_t state_;
};

inline Mat random_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
    Mat m(rows, cols);
    for (auto& x : m.flat()) x = rng.uniform(lo, hi);
    return m;
}

inline Mat random_gaussian(Rng& rng, std::size_t rows, std::size_t cols, double sigma = 1.0) {
    Mat m(rows, cols);
    for (auto& x : m.flat()) x = sigma * rng.gaussian();
    return m;
}

// sigma must be floating point so that random_gaussian(rng, 4, 4) means a
// 4x4 matrix rather than a length-4 vector.
template <std::floating_point S = double>
Vec random_gaussian(Rng& rng, std::size_t n, S sigma = 1.0) {
    Vec v(n);
    for (auto& x : v) x = sigma * rng.gaussian();
    return v;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition and PCA

struct SymmetricEigen {
    Vec values;    // descending
    Mat vectors;   // column j is the eigenvector of values[j]
};

/// Cyclic Jacobi rotations on a symmetric matrix. Intended for small
/// dimensions; cost per sweep is O(n^3).
inline SymmetricEigen jacobi_eigen(Mat a, double tol = 1e-14, int max_sweeps = 100) {
    detail::require(a.rows() == a.cols(), "jacobi_eigen: matrix must be square");
    const std::size_t n = a.rows();
    Mat v = Mat::identity(n);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0, diag = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            diag += a(i, i) * a(i, i);
            for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        }
        if (off <= tol * tol * std::max(diag, std::numeric_limits<double>::min())) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return a(i, i) > a(j, j); });
    SymmetricEigen out{Vec(n), Mat(n, n)};
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a(order[j], order[j]);
        for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
    }
    return out;
}

/// Projects mean-centred points onto their top two principal components
/// (covariance normalized by the point count). Each component's sign is
/// chosen so its largest-magnitude loading is positive. A degenerate cloud
/// yields zero coordinates.
inline std::vector<std::pair<double, double>> pca_2d(std::span<const Vec> points) {
    detail::require(points.size() >= 2, "pca_2d: need at least two points");
    const std::size_t dim = points[0].size();
    detail::require(dim >= 1, "pca_2d: empty points");
    for (const auto& p : points) detail::require(p.size() == dim, "pca_2d: unequal dimensions");

    const double count = static_cast<double>(points.size());
    Vec mean(dim);
    for (const auto& p : points) axpy(1.0, p, mean);
    mean = scale(mean, 1.0 / count);

    std::vector<Vec> centred;
    centred.reserve(points.size());
    for (const auto& p : points) centred.push_back(sub(p, mean));

    Mat cov(dim, dim);
    for (const auto& c : centred)
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) cov(i, j) += c[i] * c[j] / count;

    const auto eig = jacobi_eigen(cov);
    std::vector<Vec> axes;
    for (std::size_t comp = 0; comp < 2; ++comp) {
        Vec axis(dim);
        if (comp < dim && eig.values[comp] > 0.0) {
            for (std::size_t k = 0; k < dim; ++k) axis[k] = eig.vectors(k, comp);
            std::size_t arg = 0;
            for (std::size_t k = 1; k < dim; ++k)
                if (std::abs(axis[k]) > std::abs(axis[arg])) arg = k;
            if (axis[arg] < 0.0) axis = scale(axis, -1.0);
        }
        axes.push_back(std::move(axis));
    }

    std::vector<std::pair<double, double>> out;
    out.reserve(points.size());
    for (const auto& c : centred) out.emplace_back(dot(c, axes[0]), dot(c, axes[1]));
    return out;
}

}  // namespace radargate
