// Parameterized building blocks over the autodiff substrate.
#pragma once

#include <string>
#include <vector>

#include "duolift/autodiff.hpp"
#include "duolift/core.hpp"

namespace duolift::nn {

struct Parameter {
    std::string path;
    ad::Var var;
};

using ParamList = std::vector<Parameter>;

inline int64_t param_count(const ParamList& params) {
    int64_t n = 0;
    for (const auto& p : params) n += p.var->size();
    return n;
}

/// Channel count scaled by the width multiplier m (never below 1).
inline int scale_ch(int base, real m) {
    return std::max(1, static_cast<int>(std::lround(base * m)));
}

namespace init {

/// He-normal fan-in initialization for conv kernels.
inline ad::Var conv_weight(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor t(shape);
    real std = std::sqrt(2.0 / static_cast<real>(fan_in));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, std);
    return ad::leaf(std::move(t));
}

inline ad::Var zeros(Shape shape) { return ad::leaf(Tensor(std::move(shape), 0.0)); }
inline ad::Var ones(Shape shape) { return ad::leaf(Tensor(std::move(shape), 1.0)); }

}  // namespace init

struct Conv3d {
    ad::Var w, b;
    int k = 3, stride = 1, pad = 1;

    Conv3d() = default;
    Conv3d(int cin, int cout, int k_, int stride_, int pad_, Rng& rng)
        : k(k_), stride(stride_), pad(pad_) {
        w = init::conv_weight(Shape{cout, cin, k, k, k}, int64_t(cin) * k * k * k, rng);
        b = init::zeros(Shape{cout});
    }

    ad::Var forward(const ad::Var& x) const { return ad::conv3d(x, w, b, stride, pad); }

    Shape out_shape(const Shape& in) const {
        return Shape{w->shape()[0], ad::detail::conv_out_dim(in[1], k, stride, pad),
                     ad::detail::conv_out_dim(in[2], k, stride, pad),
                     ad::detail::conv_out_dim(in[3], k, stride, pad)};
    }

    void collect(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + "/w", w});
        out.push_back({prefix + "/b", b});
    }
};

struct Conv2d {
    ad::Var w, b;
    int k = 3, stride = 1, pad = 1;

    Conv2d() = default;
    Conv2d(int cin, int cout, int k_, int stride_, int pad_, Rng& rng)
        : k(k_), stride(stride_), pad(pad_) {
        w = init::conv_weight(Shape{cout, cin, k, k}, int64_t(cin) * k * k, rng);
        b = init::zeros(Shape{cout});
    }

    ad::Var forward(const ad::Var& x) const { return ad::conv2d(x, w, b, stride, pad); }

    Shape out_shape(const Shape& in) const {
        return Shape{w->shape()[0], ad::detail::conv_out_dim(in[1], k, stride, pad),
                     ad::detail::conv_out_dim(in[2], k, stride, pad)};
    }

    void collect(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + "/w", w});
        out.push_back({prefix + "/b", b});
    }
};

/// Instance normalization (rank agnostic: normalizes each channel over all
/// remaining dims). Batch size is 1 throughout, which makes batch statistics
/// degenerate; per-sample normalization is used everywhere instead.
struct InstanceNorm {
    ad::Var gamma, beta;

    InstanceNorm() = default;
    explicit InstanceNorm(int channels) {
        gamma = init::ones(Shape{channels});
        beta = init::zeros(Shape{channels});
    }

    ad::Var forward(const ad::Var& x) const { return ad::instance_norm(x, gamma, beta); }

    void collect(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + "/gamma", gamma});
        out.push_back({prefix + "/beta", beta});
    }
};

/// conv3x3x3 -> IN -> ReLU
struct ConvBlock3d {
    Conv3d conv;
    InstanceNorm norm;

    ConvBlock3d() = default;
    ConvBlock3d(int cin, int cout, Rng& rng) : conv(cin, cout, 3, 1, 1, rng), norm(cout) {}

    ad::Var forward(const ad::Var& x) const { return ad::relu(norm.forward(conv.forward(x))); }
    Shape out_shape(const Shape& in) const { return conv.out_shape(in); }

    void collect(const std::string& prefix, ParamList& out) const {
        conv.collect(prefix + "/conv", out);
        norm.collect(prefix + "/in", out);
    }
};

/// Two 3x3x3 convolutions with normalization and an identity (or 1x1x1
/// projected) skip.
struct ResBlock3d {
    Conv3d conv1, conv2;
    InstanceNorm norm1, norm2;
    bool projected = false;
    Conv3d skip_conv;
    InstanceNorm skip_norm;

    ResBlock3d() = default;
    ResBlock3d(int cin, int cout, Rng& rng)
        : conv1(cin, cout, 3, 1, 1, rng), conv2(cout, cout, 3, 1, 1, rng),
          norm1(cout), norm2(cout), projected(cin != cout) {
        if (projected) {
            skip_conv = Conv3d(cin, cout, 1, 1, 0, rng);
            skip_norm = InstanceNorm(cout);
        }
    }

    ad::Var forward(const ad::Var& x) const {
        ad::Var h = ad::relu(norm1.forward(conv1.forward(x)));
        h = norm2.forward(conv2.forward(h));
        ad::Var s = projected ? skip_norm.forward(skip_conv.forward(x)) : x;
        return ad::relu(ad::add(h, s));
    }

    Shape out_shape(const Shape& in) const { return conv1.out_shape(in); }

    void collect(const std::string& prefix, ParamList& out) const {
        conv1.collect(prefix + "/conv1", out);
        norm1.collect(prefix + "/in1", out);
        conv2.collect(prefix + "/conv2", out);
        norm2.collect(prefix + "/in2", out);
        if (projected) {
            skip_conv.collect(prefix + "/skip_conv", out);
            skip_norm.collect(prefix + "/skip_in", out);
        }
    }
};

/// 2D basic residual block, optionally strided (downsampling variant).
struct ResBlock2d {
    Conv2d conv1, conv2;
    InstanceNorm norm1, norm2;
    bool projected = false;
    Conv2d skip_conv;
    InstanceNorm skip_norm;

    ResBlock2d() = default;
    ResBlock2d(int cin, int cout, int stride, Rng& rng)
        : conv1(cin, cout, 3, stride, 1, rng), conv2(cout, cout, 3, 1, 1, rng),
          norm1(cout), norm2(cout), projected(cin != cout || stride != 1) {
        if (projected) {
            skip_conv = Conv2d(cin, cout, 1, stride, 0, rng);
            skip_norm = InstanceNorm(cout);
        }
    }

    ad::Var forward(const ad::Var& x) const {
        ad::Var h = ad::relu(norm1.forward(conv1.forward(x)));
        h = norm2.forward(conv2.forward(h));
        ad::Var s = projected ? skip_norm.forward(skip_conv.forward(x)) : x;
        return ad::relu(ad::add(h, s));
    }

    Shape out_shape(const Shape& in) const { return conv1.out_shape(in); }

    void collect(const std::string& prefix, ParamList& out) const {
        conv1.collect(prefix + "/conv1", out);
        norm1.collect(prefix + "/in1", out);
        conv2.collect(prefix + "/conv2", out);
        norm2.collect(prefix + "/in2", out);
        if (projected) {
            skip_conv.collect(prefix + "/skip_conv", out);
            skip_norm.collect(prefix + "/skip_in", out);
        }
    }
};

/// Upsample Type 2: optional trilinear 2x followed by a channel-reducing
/// 3x3x3 convolution. The first decoder stage keeps its spatial size.
struct UpsampleType2 {
    bool upsample = true;
    ConvBlock3d block;

    UpsampleType2() = default;
    UpsampleType2(int cin, int cout, bool up, Rng& rng) : upsample(up), block(cin, cout, rng) {}

    ad::Var forward(const ad::Var& x) const {
        ad::Var h = x;
        if (upsample) {
            const Shape& s = x->shape();
            h = ad::resize3d(h, s[1] * 2, s[2] * 2, s[3] * 2);
        }
        return block.forward(h);
    }

    Shape out_shape(Shape in) const {
        if (upsample)
            for (int a = 1; a <= 3; ++a) in[a] *= 2;
        return block.out_shape(in);
    }

    void collect(const std::string& prefix, ParamList& out) const {
        block.collect(prefix + "/block", out);
    }
};

/// Upsample Type 1: repeated [trilinear 2x + conv] until full resolution,
/// then a 1x1x1 projection to the shared channel width.
struct UpsampleType1 {
    std::vector<ConvBlock3d> steps;
    Conv3d proj;
    InstanceNorm proj_norm;

    UpsampleType1() = default;
    UpsampleType1(int cin, int cout, int doublings, Rng& rng) {
        int c = cin;
        for (int i = 0; i < doublings; ++i) {
            int next = std::max(cout, c / 2);
            steps.emplace_back(c, next, rng);
            c = next;
        }
        proj = Conv3d(c, cout, 1, 1, 0, rng);
        proj_norm = InstanceNorm(cout);
    }

    ad::Var forward(const ad::Var& x) const {
        ad::Var h = x;
        for (const auto& step : steps) {
            const Shape& s = h->shape();
            h = step.forward(ad::resize3d(h, s[1] * 2, s[2] * 2, s[3] * 2));
        }
        return ad::relu(proj_norm.forward(proj.forward(h)));
    }

    Shape out_shape(Shape in) const {
        for (const auto& step : steps) {
            for (int a = 1; a <= 3; ++a) in[a] *= 2;
            in = step.out_shape(in);
        }
        return proj.out_shape(in);
    }

    void collect(const std::string& prefix, ParamList& out) const {
        for (size_t i = 0; i < steps.size(); ++i)
            steps[i].collect(prefix + "/step" + std::to_string(i), out);
        proj.collect(prefix + "/proj", out);
        proj_norm.collect(prefix + "/proj_in", out);
    }
};

}  // namespace duolift::nn
