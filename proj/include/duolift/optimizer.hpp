// Adam optimizer with serializable per-parameter state.
#pragma once

#include <string>
#include <vector>

#include "duolift/io.hpp"
#include "duolift/layers.hpp"

namespace duolift::nn {

class Adam {
public:
    Adam() = default;
    Adam(const ParamList& params, real beta1, real beta2 = 0.999, real eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (const auto& p : params) {
            states_.push_back({Tensor(p.var->value.shape(), 0.0), Tensor(p.var->value.shape(), 0.0)});
        }
    }

    /// One update using grad * grad_scale (the mean over accumulated
    /// micro-batches). Does not zero the gradients.
    void step(const ParamList& params, real lr, real grad_scale) {
        DUOLIFT_REQUIRE(params.size() == states_.size(), "Adam: parameter list changed size");
        ++t_;
        const real bc1 = 1.0 - std::pow(beta1_, static_cast<real>(t_));
        const real bc2 = 1.0 - std::pow(beta2_, static_cast<real>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            ad::Node& node = *params[i].var;
            node.ensure_grad();
            State& st = states_[i];
            Tensor& w = node.value;
            for (int64_t j = 0; j < w.size(); ++j) {
                const real g = node.grad[j] * grad_scale;
                st.m[j] = beta1_ * st.m[j] + (1.0 - beta1_) * g;
                st.v[j] = beta2_ * st.v[j] + (1.0 - beta2_) * g * g;
                const real mhat = st.m[j] / bc1;
                const real vhat = st.v[j] / bc2;
                w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    int64_t steps_taken() const { return t_; }
    real beta1() const { return beta1_; }

    void save(const std::string& path, const ParamList& params) const {
        std::ofstream os(path, std::ios::binary);
        DUOLIFT_REQUIRE(os.good(), "Adam: cannot write " << path);
        io::detail::put_u32(os, static_cast<uint32_t>(states_.size()));
        io::detail::put_f64(os, static_cast<double>(t_));
        io::detail::put_f64(os, beta1_);
        io::detail::put_f64(os, beta2_);
        io::detail::put_f64(os, eps_);
        for (size_t i = 0; i < states_.size(); ++i) {
            io::detail::put_u32(os, static_cast<uint32_t>(params[i].path.size()));
            os.write(params[i].path.data(), static_cast<std::streamsize>(params[i].path.size()));
            io::detail::put_u32(os, static_cast<uint32_t>(states_[i].m.size()));
            for (int64_t j = 0; j < states_[i].m.size(); ++j) io::detail::put_f64(os, states_[i].m[j]);
            for (int64_t j = 0; j < states_[i].v.size(); ++j) io::detail::put_f64(os, states_[i].v[j]);
        }
        DUOLIFT_REQUIRE(os.good(), "Adam: write failed " << path);
    }

    void load(const std::string& path, const ParamList& params) {
        std::ifstream is(path, std::ios::binary);
        DUOLIFT_REQUIRE(is.good(), "Adam: cannot read " << path);
        uint32_t n = io::detail::get_u32(is);
        DUOLIFT_REQUIRE(n == params.size() && n == states_.size(),
                        "Adam: state count mismatch in " << path);
        t_ = static_cast<int64_t>(io::detail::get_f64(is));
        beta1_ = io::detail::get_f64(is);
        beta2_ = io::detail::get_f64(is);
        eps_ = io::detail::get_f64(is);
        for (size_t i = 0; i < n; ++i) {
            uint32_t plen = io::detail::get_u32(is);
            std::string p(plen, '\0');
            is.read(p.data(), plen);
            DUOLIFT_REQUIRE(p == params[i].path, "Adam: state order mismatch at " << p);
            uint32_t sz = io::detail::get_u32(is);
            DUOLIFT_REQUIRE(static_cast<int64_t>(sz) == states_[i].m.size(), "Adam: size mismatch at " << p);
            for (int64_t j = 0; j < states_[i].m.size(); ++j) states_[i].m[j] = io::detail::get_f64(is);
            for (int64_t j = 0; j < states_[i].v.size(); ++j) states_[i].v[j] = io::detail::get_f64(is);
        }
        DUOLIFT_REQUIRE(is.good(), "Adam: truncated state " << path);
    }

private:
    struct State {
        Tensor m, v;
    };
    real beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t t_ = 0;
    std::vector<State> states_;
};

/// Zeroes accumulated gradients on a parameter list.
inline void zero_grads(const ParamList& params) {
    for (const auto& p : params) {
        p.var->ensure_grad();
        p.var->zero_grad();
    }
}

// ---- parameter blob files (checkpoints) ----

inline void save_params(const std::string& path, const ParamList& params) {
    std::ofstream os(path, std::ios::binary);
    DUOLIFT_REQUIRE(os.good(), "save_params: cannot write " << path);
    os.write("DLPAR1", 6);
    io::detail::put_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        io::detail::put_u32(os, static_cast<uint32_t>(p.path.size()));
        os.write(p.path.data(), static_cast<std::streamsize>(p.path.size()));
        const Shape& s = p.var->value.shape();
        io::detail::put_u32(os, static_cast<uint32_t>(s.size()));
        for (int d : s) io::detail::put_u32(os, static_cast<uint32_t>(d));
        for (int64_t j = 0; j < p.var->value.size(); ++j) io::detail::put_f64(os, p.var->value[j]);
    }
    DUOLIFT_REQUIRE(os.good(), "save_params: write failed " << path);
}

inline void load_params(const std::string& path, const ParamList& params) {
    std::ifstream is(path, std::ios::binary);
    DUOLIFT_REQUIRE(is.good(), "load_params: cannot read " << path);
    char magic[6];
    is.read(magic, 6);
    DUOLIFT_REQUIRE(is.good() && std::memcmp(magic, "DLPAR1", 6) == 0, "load_params: bad magic in " << path);
    uint32_t n = io::detail::get_u32(is);
    DUOLIFT_REQUIRE(n == params.size(), "load_params: parameter count mismatch (" << n << " vs "
                    << params.size() << ") in " << path << " - incompatible architecture");
    for (const auto& p : params) {
        uint32_t plen = io::detail::get_u32(is);
        std::string name(plen, '\0');
        is.read(name.data(), plen);
        DUOLIFT_REQUIRE(name == p.path, "load_params: expected " << p.path << ", found " << name);
        uint32_t rank = io::detail::get_u32(is);
        Shape s(rank);
        for (uint32_t i = 0; i < rank; ++i) s[i] = static_cast<int>(io::detail::get_u32(is));
        DUOLIFT_REQUIRE(s == p.var->value.shape(), "load_params: shape mismatch at " << p.path);
        for (int64_t j = 0; j < p.var->value.size(); ++j) p.var->value[j] = io::detail::get_f64(is);
    }
    DUOLIFT_REQUIRE(is.good(), "load_params: truncated " << path);
}

}  // namespace duolift::nn
