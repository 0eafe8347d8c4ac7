#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "radargate/numkernel.hpp"

namespace radargate {

/// One frozen low-rank adapter: A is d_in x r, B is r x d_out.
struct LoraModule {
    Mat A;
    Mat B;

    std::size_t d_in() const { return A.rows(); }
    std::size_t d_out() const { return B.cols(); }
    std::size_t rank() const { return A.cols(); }
};

struct FrozenBase {
    Mat W;
};

/// Standard LoRA initialization: A uniform in +-scale/sqrt(d_in), B zero,
/// so the adapter starts as the zero map.
inline LoraModule init_lora(Rng& rng, std::size_t d_in, std::size_t d_out, std::size_t r,
                            double scale) {
    detail::require(d_in >= 1 && d_out >= 1, "init_lora: dimensions must be positive");
    detail::require(d_out % 2 == 0, "init_lora: d_out must be even, got " + std::to_string(d_out));
    detail::require(r >= 1 && r <= std::min(d_in, d_out),
                    "init_lora: rank must lie in [1, min(d_in, d_out)], got " + std::to_string(r));
    const double bound = scale / std::sqrt(static_cast<double>(d_in));
    return {random_uniform(rng, d_in, r, -bound, bound), Mat(r, d_out)};
}

/// A non-trivial adapter standing in for an already trained one: both
/// factors random, scaled so that x A B has O(1) entries for x ~ N(0, I).
inline LoraModule random_lora(Rng& rng, std::size_t d_in, std::size_t d_out, std::size_t r,
                              double scale = 1.0) {
    LoraModule m = init_lora(rng, d_in, d_out, r, std::sqrt(3.0));
    m.B = random_gaussian(rng, r, d_out, scale / std::sqrt(static_cast<double>(r)));
    return m;
}

inline Mat compose(const LoraModule& m, OpCounter* counter = nullptr) {
    return matmul(m.A, m.B, counter);
}

/// The n frozen experts sharing (d_in, d_out). Composed matrices
/// P_i = A_i B_i and leave-one-out sums Q_i = sum_{j != i} P_j are cached
/// on first use; the bank itself is immutable, and edits produce a new bank
/// with fresh caches.
class LoraBank {
public:
    explicit LoraBank(std::vector<LoraModule> modules) : modules_(std::move(modules)) {
        detail::require(!modules_.empty(), "LoraBank: need at least one module");
        const auto d_in = modules_[0].d_in();
        const auto d_out = modules_[0].d_out();
        detail::require(d_out % 2 == 0,
                        "LoraBank: d_out must be even, got " + std::to_string(d_out));
        for (std::size_t i = 0; i < modules_.size(); ++i) {
            const auto& m = modules_[i];
            const std::string tag = "LoraBank: module " + std::to_string(i);
            detail::require(m.A.cols() == m.B.rows(), tag + " has mismatched rank");
            detail::require(m.d_in() == d_in && m.d_out() == d_out, tag + " has mismatched dims");
            detail::require(m.rank() >= 1 && m.rank() <= std::min(d_in, d_out),
                            tag + " rank exceeds min(d_in, d_out)");
            detail::require(all_finite(m.A.flat()) && all_finite(m.B.flat()),
                            tag + " has non-finite entries");
        }
    }

    std::size_t size() const { return modules_.size(); }
    std::size_t d_in() const { return modules_[0].d_in(); }
    std::size_t d_out() const { return modules_[0].d_out(); }
    std::size_t rank() const { return modules_[0].rank(); }
    const LoraModule& module(std::size_t i) const { return modules_.at(i); }
    const std::vector<LoraModule>& modules() const { return modules_; }

    const Mat& composed(std::size_t i) const {
        check_index(i);
        return cache().composed[i];
    }

    const Mat& total() const { return cache().total; }

    /// Q_i = sum_{j != i} P_j.
    const Mat& ref_sum(std::size_t i) const {
        check_index(i);
        return cache().ref_sums[i];
    }

    /// Replaces expert i; caches of the returned bank are rebuilt.
    LoraBank with_module(std::size_t i, LoraModule m) const {
        check_index(i);
        auto mods = modules_;
        mods[i] = std::move(m);
        return LoraBank(std::move(mods));
    }

    /// v_i = (x A_i) B_i for one expert.
    Vec expert_output(std::size_t i, const Vec& x, OpCounter* counter = nullptr) const {
        check_index(i);
        detail::require(x.size() == d_in(), "expert_output: input length " +
                                                std::to_string(x.size()) + " != d_in " +
                                                std::to_string(d_in()));
        return vecmat(vecmat(x, modules_[i].A, counter), modules_[i].B, counter);
    }

private:
    struct Cache {
        std::once_flag once;
        std::vector<Mat> composed;
        std::vector<Mat> ref_sums;
        Mat total;
    };

    void check_index(std::size_t i) const {
        if (i >= modules_.size())
            throw std::invalid_argument("LoraBank: expert index " + std::to_string(i) +
                                        " out of range for n = " + std::to_string(size()));
    }

    const Cache& cache() const {
        std::call_once(cache_->once, [this] {
            auto& c = *cache_;
            c.total = Mat(d_in(), d_out());
            for (const auto& m : modules_) {
                c.composed.push_back(compose(m));
                c.total = add(c.total, c.composed.back());
            }
            for (const auto& p : c.composed) c.ref_sums.push_back(sub(c.total, p));
        });
        return *cache_;
    }

    std::vector<LoraModule> modules_;
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

/// All n expert outputs v_i = x P_i, evaluated through the low-rank factors.
inline std::vector<Vec> expert_outputs(const LoraBank& bank, const Vec& x,
                                       OpCounter* counter = nullptr) {
    std::vector<Vec> v;
    v.reserve(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) v.push_back(bank.expert_output(i, x, counter));
    return v;
}

inline Mat ref_sum(const LoraBank& bank, std::size_t i) { return bank.ref_sum(i); }

}  // namespace radargate
