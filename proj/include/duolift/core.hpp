// Core scalar/tensor/RNG utilities shared by every duolift module.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace duolift {

using real = double;

#define DUOLIFT_CHECK(cond, msg)                         \
    do {                                                 \
        if (!(cond)) {                                   \
            std::ostringstream oss_;                     \
            oss_ << msg;                                 \
            throw std::invalid_argument(oss_.str());     \
        }                                                \
    } while (0)

#define DUOLIFT_REQUIRE(cond, msg)                       \
    do {                                                 \
        if (!(cond)) {                                   \
            std::ostringstream oss_;                     \
            oss_ << msg;                                 \
            throw std::runtime_error(oss_.str());        \
        }                                                \
    } while (0)

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream oss;
    oss << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) oss << "x";
        oss << s[i];
    }
    oss << ")";
    return oss.str();
}

/// Dense row-major tensor of doubles. Rank is dynamic (0..5 used here).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, real fill = 0.0)
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), fill) {
        for (int d : shape_) DUOLIFT_CHECK(d >= 0, "Tensor: negative dimension in " << shape_str(shape_));
    }

    static Tensor scalar(real v) {
        Tensor t(Shape{1});
        t.data_[0] = v;
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }

    real& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    real operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

    real sum() const {
        real s = 0;
        for (real v : data_) s += v;
        return s;
    }
    real mean() const { return data_.empty() ? 0.0 : sum() / static_cast<real>(data_.size()); }
    real min() const {
        real m = std::numeric_limits<real>::infinity();
        for (real v : data_) m = std::min(m, v);
        return m;
    }
    real max() const {
        real m = -std::numeric_limits<real>::infinity();
        for (real v : data_) m = std::max(m, v);
        return m;
    }
    bool all_finite() const {
        for (real v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor& operator+=(const Tensor& o) {
        DUOLIFT_CHECK(same_shape(o), "Tensor+=: shape mismatch " << shape_str(shape_) << " vs " << shape_str(o.shape_));
        for (size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor& operator*=(real k) {
        for (real& v : data_) v *= k;
        return *this;
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

    /// Reinterpret the flat buffer under a new shape with the same element count.
    Tensor reshaped(Shape s) const {
        DUOLIFT_CHECK(shape_numel(s) == size(), "reshape: element count mismatch "
                      << shape_str(shape_) << " -> " << shape_str(s));
        Tensor t = *this;
        t.shape_ = std::move(s);
        return t;
    }

private:
    Shape shape_;
    std::vector<real> data_;
};

/// Deterministic RNG. Distribution algorithms are written out explicitly so
/// streams are stable across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : base_seed_(seed), eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0,1).
    real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

    real uniform(real a, real b) { return a + (b - a) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi) {
        DUOLIFT_CHECK(lo <= hi, "uniform_int: empty range [" << lo << "," << hi << "]");
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    /// Standard normal via Box-Muller (no cached second value).
    real normal() {
        real u1 = uniform();
        real u2 = uniform();
        u1 = std::max(u1, real(1e-300));
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    real normal(real mu, real sigma) { return mu + sigma * normal(); }

    /// Child stream with a seed derived from the base seed and a stream index.
    Rng fork(uint64_t stream) const {
        uint64_t z = base_seed_ + (stream + 1) * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        z = z ^ (z >> 31);
        return Rng(z);
    }

    std::string save_state() const {
        std::ostringstream oss;
        oss << base_seed_ << " " << eng_;
        return oss.str();
    }
    void load_state(const std::string& s) {
        std::istringstream iss(s);
        iss >> base_seed_ >> eng_;
        DUOLIFT_REQUIRE(!iss.fail(), "Rng: malformed state string");
    }

private:
    uint64_t base_seed_;
    std::mt19937_64 eng_;
};

/// Per-axis linear resampling map with half-pixel centers and edge clamping.
/// out[i] = (1-w1[i]) * in[i0[i]] + w1[i] * in[i1[i]]. When out_n == in_n the
/// map is the exact identity (w1 == 0, i0 == i).
struct LinearAxisMap {
    std::vector<int> i0, i1;
    std::vector<real> w1;
};

inline LinearAxisMap linear_axis_map(int in_n, int out_n) {
    DUOLIFT_CHECK(in_n >= 1 && out_n >= 1, "linear_axis_map: sizes must be >= 1");
    LinearAxisMap m;
    m.i0.resize(static_cast<size_t>(out_n));
    m.i1.resize(static_cast<size_t>(out_n));
    m.w1.resize(static_cast<size_t>(out_n));
    const real scale = static_cast<real>(in_n) / static_cast<real>(out_n);
    for (int i = 0; i < out_n; ++i) {
        real src = (static_cast<real>(i) + 0.5) * scale - 0.5;
        if (src <= 0.0) {
            m.i0[i] = m.i1[i] = 0;
            m.w1[i] = 0.0;
        } else if (src >= static_cast<real>(in_n - 1)) {
            m.i0[i] = m.i1[i] = in_n - 1;
            m.w1[i] = 0.0;
        } else {
            int lo = static_cast<int>(std::floor(src));
            m.i0[i] = lo;
            m.i1[i] = lo + 1;
            m.w1[i] = src - static_cast<real>(lo);
        }
    }
    return m;
}

/// Static-schedule parallel loop. Each index is processed by exactly one
/// thread, so results are independent of the thread count.
template <typename F>
inline void parallel_for(int64_t n, F&& f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) f(i);
#else
    for (int64_t i = 0; i < n; ++i) f(i);
#endif
}

}  // namespace duolift
