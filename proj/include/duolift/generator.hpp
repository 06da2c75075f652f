// The dual-branch lifting generator: 2D encoders, feature/image lifting,
// multi-scale 3D decoding, and the nested-skip reconstruction head.
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "duolift/layers.hpp"
#include "duolift/phantom.hpp"
#include "duolift/volume.hpp"

namespace duolift {

enum class ViewMode { single, double_view };

inline const char* view_mode_name(ViewMode v) { return v == ViewMode::single ? "single" : "double"; }

struct GeneratorConfig {
    int input_hw = 128;       // projection H = W
    int output_dhw = 128;     // volume D' = H' = W'
    ViewMode view = ViewMode::double_view;
    real multiplier = 1.0;    // channel multiplier m
    real dropout_p = 0.25;
    bool replicate_lift = true;  // ablation L: true = repeat along axis, false = learned 2D conv
    bool duo_branch = true;      // ablation DB: false drops the image-lifting branch

    void validate() const {
        DUOLIFT_CHECK(input_hw >= 4 && input_hw % 4 == 0,
                      "GeneratorConfig: input size must be >= 4 and divisible by 4, got " << input_hw);
        DUOLIFT_CHECK(output_dhw >= 4 && output_dhw % 4 == 0,
                      "GeneratorConfig: output size must be >= 4 and divisible by 4, got " << output_dhw);
        DUOLIFT_CHECK(input_hw == output_dhw,
                      "GeneratorConfig: projection size " << input_hw << " must equal volume size "
                      << output_dhw << " (the lifting geometry requires H=H', W=W')");
        const bool m_ok = multiplier == 1.0 || multiplier == 0.5 || multiplier == 0.25 || multiplier == 0.125;
        DUOLIFT_CHECK(m_ok, "GeneratorConfig: multiplier must be one of {1/8,1/4,1/2,1}, got " << multiplier);
        DUOLIFT_CHECK(dropout_p >= 0.0 && dropout_p < 1.0,
                      "GeneratorConfig: dropout must lie in [0,1), got " << dropout_p);
    }
};

/// Named intermediate shapes of one forward pass; every entry is derived by
/// the same out_shape() arithmetic the forward pass uses to size its tensors.
struct ShapeLedger {
    Shape f2d, f3d, f_b;
    Shape f_u21, f_u22, f_u23;
    Shape f_u11, f_u12;
    Shape f_o, f_u;
    Shape output;
};

namespace nn {

/// ResNet-34-style 2D encoder truncated after its second stage, with a 1x1
/// projection to 512m channels. Total spatial reduction is /4.
struct Encoder2d {
    Conv2d stem;
    InstanceNorm stem_norm;
    std::vector<ResBlock2d> layer1, layer2;
    Conv2d proj;
    InstanceNorm proj_norm;
    int out_channels = 0;

    Encoder2d() = default;
    Encoder2d(real m, Rng& rng) {
        const int c64 = scale_ch(64, m), c128 = scale_ch(128, m), c512 = scale_ch(512, m);
        stem = Conv2d(1, c64, 7, 2, 3, rng);
        stem_norm = InstanceNorm(c64);
        for (int i = 0; i < 3; ++i) layer1.emplace_back(c64, c64, 1, rng);
        layer2.emplace_back(c64, c128, 2, rng);
        for (int i = 0; i < 3; ++i) layer2.emplace_back(c128, c128, 1, rng);
        proj = Conv2d(c128, c512, 1, 1, 0, rng);
        proj_norm = InstanceNorm(c512);
        out_channels = c512;
    }

    ad::Var forward(const ad::Var& x) const {
        ad::Var h = ad::relu(stem_norm.forward(stem.forward(x)));
        for (const auto& b : layer1) h = b.forward(h);
        for (const auto& b : layer2) h = b.forward(h);
        return ad::relu(proj_norm.forward(proj.forward(h)));
    }

    Shape out_shape(const Shape& in) const { return Shape{out_channels, in[1] / 4, in[2] / 4}; }

    void collect(const std::string& prefix, ParamList& out) const {
        stem.collect(prefix + "/stem", out);
        stem_norm.collect(prefix + "/stem_in", out);
        for (size_t i = 0; i < layer1.size(); ++i) layer1[i].collect(prefix + "/l1_" + std::to_string(i), out);
        for (size_t i = 0; i < layer2.size(); ++i) layer2[i].collect(prefix + "/l2_" + std::to_string(i), out);
        proj.collect(prefix + "/proj", out);
        proj_norm.collect(prefix + "/proj_in", out);
    }
};

/// Learned substitute for the replication lift (ablation L = off): a 1x1 2D
/// convolution emitting channels-times-depth planes, reshaped into a volume.
struct ConvLift {
    Conv2d conv;
    int channels = 0, depth = 0;
    bool lateral = false;

    ConvLift() = default;
    ConvLift(int channels_, int depth_, bool lateral_, Rng& rng)
        : conv(channels_, channels_ * depth_, 1, 1, 0, rng), channels(channels_), depth(depth_),
          lateral(lateral_) {}

    ad::Var forward(const ad::Var& x) const {
        const Shape& s = x->shape();
        ad::Var y = conv.forward(x);  // [C*R, rows, cols]
        y = ad::reshape(y, Shape{channels, depth, s[1], s[2]});
        if (lateral) y = ad::permute_spatial(y, {2, 1, 0});  // (R,h,d) -> (d,h,R)
        return y;
    }
};

/// Standard UNet++ (nested dense skips, deep supervision). `levels` is the
/// number of downsamplings; the canonical configuration has four encoder
/// transitions, four decoder layers, and six nested skip nodes.
struct UNetPlusPlus {
    int levels = 4;
    std::vector<int> level_ch;
    // node_conv[i][j] computes X[i][j]; head[j-1] is the deep-supervision
    // 1x1 conv over X[0][j].
    std::vector<std::vector<ConvBlock3d>> node_conv;
    std::vector<Conv3d> heads;
    int out_channels = 0;

    UNetPlusPlus() = default;
    UNetPlusPlus(int in_channels, real m, int levels_, Rng& rng) : levels(levels_) {
        DUOLIFT_CHECK(levels >= 1, "UNetPlusPlus: need at least one level");
        for (int i = 0; i <= levels; ++i) level_ch.push_back(std::min(scale_ch(512, m), scale_ch(32, m) << i));
        node_conv.resize(static_cast<size_t>(levels) + 1);
        for (int i = 0; i <= levels; ++i) {
            for (int j = 0; j <= levels - i; ++j) {
                int cin;
                if (j == 0) {
                    cin = i == 0 ? in_channels : level_ch[i - 1];
                } else {
                    cin = j * level_ch[i] + level_ch[i + 1];
                }
                node_conv[i].emplace_back(cin, level_ch[i], rng);
            }
        }
        for (int j = 1; j <= levels; ++j) heads.emplace_back(level_ch[0], level_ch[0], 1, 1, 0, rng);
        out_channels = level_ch[0];
    }

    ad::Var forward(const ad::Var& x) const {
        std::vector<std::vector<ad::Var>> X(static_cast<size_t>(levels) + 1);
        X[0].push_back(node_conv[0][0].forward(x));
        for (int i = 1; i <= levels; ++i)
            X[i].push_back(node_conv[i][0].forward(ad::avgpool3d(X[i - 1][0], 2, 2, 0)));
        for (int j = 1; j <= levels; ++j) {
            for (int i = 0; i <= levels - j; ++i) {
                const Shape& tgt = X[i][0]->shape();
                ad::Var up = ad::resize3d(X[i + 1][static_cast<size_t>(j) - 1], tgt[1], tgt[2], tgt[3]);
                std::vector<ad::Var> parts(X[i].begin(), X[i].end());
                parts.push_back(up);
                X[i].push_back(node_conv[i][static_cast<size_t>(j)].forward(ad::concat_ch(parts)));
            }
        }
        // Deep supervision: average the per-depth heads into one feature map.
        ad::Var acc = heads[0].forward(X[0][1]);
        for (int j = 2; j <= levels; ++j)
            acc = ad::add(acc, heads[static_cast<size_t>(j) - 1].forward(X[0][static_cast<size_t>(j)]));
        return ad::scale(acc, 1.0 / static_cast<real>(levels));
    }

    void collect(const std::string& prefix, ParamList& out) const {
        for (size_t i = 0; i < node_conv.size(); ++i)
            for (size_t j = 0; j < node_conv[i].size(); ++j)
                node_conv[i][j].collect(prefix + "/x" + std::to_string(i) + "_" + std::to_string(j), out);
        for (size_t j = 0; j < heads.size(); ++j)
            heads[j].collect(prefix + "/head" + std::to_string(j + 1), out);
    }
};

/// Plain U-Net head emitting the final 1-channel volume (pre-sigmoid).
struct UNetHead {
    int levels = 2;
    std::vector<ConvBlock3d> enc1, enc2;  // two convs per level
    std::vector<ConvBlock3d> dec1, dec2;
    ConvBlock3d bott1, bott2;
    Conv3d final_conv;

    UNetHead() = default;
    UNetHead(int in_channels, real m, int levels_, Rng& rng) : levels(levels_) {
        DUOLIFT_CHECK(levels >= 1, "UNetHead: need at least one level");
        std::vector<int> ch;
        for (int i = 0; i <= levels; ++i) ch.push_back(std::min(scale_ch(512, m), scale_ch(32, m) << i));
        int c = in_channels;
        for (int i = 0; i < levels; ++i) {
            enc1.emplace_back(c, ch[i], rng);
            enc2.emplace_back(ch[i], ch[i], rng);
            c = ch[i];
        }
        bott1 = ConvBlock3d(c, ch[levels], rng);
        bott2 = ConvBlock3d(ch[levels], ch[levels], rng);
        c = ch[levels];
        for (int i = levels - 1; i >= 0; --i) {
            dec1.emplace_back(c + ch[i], ch[i], rng);
            dec2.emplace_back(ch[i], ch[i], rng);
            c = ch[i];
        }
        final_conv = Conv3d(c, 1, 1, 1, 0, rng);
    }

    ad::Var forward(const ad::Var& x) const {
        std::vector<ad::Var> skips;
        ad::Var h = x;
        for (int i = 0; i < levels; ++i) {
            h = enc2[i].forward(enc1[i].forward(h));
            skips.push_back(h);
            h = ad::avgpool3d(h, 2, 2, 0);
        }
        h = bott2.forward(bott1.forward(h));
        for (int i = levels - 1; i >= 0; --i) {
            const Shape& tgt = skips[static_cast<size_t>(i)]->shape();
            h = ad::resize3d(h, tgt[1], tgt[2], tgt[3]);
            h = ad::concat_ch({h, skips[static_cast<size_t>(i)]});
            size_t di = static_cast<size_t>(levels - 1 - i);
            h = dec2[di].forward(dec1[di].forward(h));
        }
        return final_conv.forward(h);
    }

    void collect(const std::string& prefix, ParamList& out) const {
        for (int i = 0; i < levels; ++i) {
            enc1[i].collect(prefix + "/enc" + std::to_string(i) + "a", out);
            enc2[i].collect(prefix + "/enc" + std::to_string(i) + "b", out);
        }
        bott1.collect(prefix + "/bott_a", out);
        bott2.collect(prefix + "/bott_b", out);
        for (int i = 0; i < levels; ++i) {
            dec1[i].collect(prefix + "/dec" + std::to_string(i) + "a", out);
            dec2[i].collect(prefix + "/dec" + std::to_string(i) + "b", out);
        }
        final_conv.collect(prefix + "/final", out);
    }
};

}  // namespace nn

// ---- free lifting/fusion ops ----

/// Replicates a 2D feature map along the inserted axis: frontal inserts the
/// depth axis, lateral inserts the width axis (2D columns become depth).
inline ad::Var lift(const ad::Var& f, View axis, int repeats) {
    return axis == View::frontal ? ad::lift_frontal(f, repeats) : ad::lift_lateral(f, repeats);
}

/// Channel-wise concatenation of the two lifted feature maps.
inline ad::Var fuse(const ad::Var& ff, const ad::Var& fs) {
    return ad::concat_ch({ff, fs});
}

class Generator {
public:
    explicit Generator(const GeneratorConfig& cfg, uint64_t init_seed = 7)
        : cfg_(cfg) {
        cfg_.validate();
        Rng rng = Rng(init_seed).fork(11);
        const real m = cfg_.multiplier;
        const int s4 = cfg_.output_dhw / 4;
        c512_ = nn::scale_ch(512, m);
        c256_ = nn::scale_ch(256, m);
        c128_ = nn::scale_ch(128, m);
        c64_ = nn::scale_ch(64, m);
        c32_ = nn::scale_ch(32, m);

        enc_frontal_ = nn::Encoder2d(m, rng);
        if (double_view()) enc_lateral_ = nn::Encoder2d(m, rng);
        if (!cfg_.replicate_lift) {
            lift_feat_f_ = nn::ConvLift(c512_, s4, false, rng);
            if (double_view()) lift_feat_s_ = nn::ConvLift(c512_, s4, true, rng);
            lift_img_f_ = nn::ConvLift(1, cfg_.output_dhw, false, rng);
            if (double_view()) lift_img_s_ = nn::ConvLift(1, cfg_.output_dhw, true, rng);
        }

        const int fb_ch = double_view() ? 2 * c512_ : c512_;
        stage_rb_[0] = nn::ResBlock3d(fb_ch, c512_, rng);
        stage_up_[0] = nn::UpsampleType2(c512_, c256_, /*up=*/false, rng);
        stage_rb_[1] = nn::ResBlock3d(c256_, c256_, rng);
        stage_up_[1] = nn::UpsampleType2(c256_, c128_, /*up=*/true, rng);
        stage_rb_[2] = nn::ResBlock3d(c128_, c128_, rng);
        stage_up_[2] = nn::UpsampleType2(c128_, c64_, /*up=*/true, rng);

        up1_from_u21_ = nn::UpsampleType1(c256_, c64_, 2, rng);
        up1_from_u22_ = nn::UpsampleType1(c128_, c64_, 1, rng);

        if (cfg_.duo_branch)
            image_block_ = nn::ResBlock3d(double_view() ? 2 : 1, c32_, rng);

        const int fu_ch = assembled_channels();
        const int levels = reconstruct_levels(cfg_.output_dhw);
        unetpp_ = nn::UNetPlusPlus(fu_ch, m, levels, rng);
        head_ = nn::UNetHead(unetpp_.out_channels, m, std::min(2, levels), rng);
    }

    const GeneratorConfig& config() const { return cfg_; }
    bool double_view() const { return cfg_.view == ViewMode::double_view; }
    int assembled_channels() const { return (cfg_.duo_branch ? c32_ : 0) + 3 * c64_; }

    static int reconstruct_levels(int size) {
        int levels = 0;
        while (levels < 4 && (size >> (levels + 1)) >= 1) ++levels;
        return std::max(1, levels);
    }

    // -- spec operations (autodiff level) --

    ad::Var encode2d(const ad::Var& image, View view) const {
        const Shape& s = image->shape();
        DUOLIFT_CHECK(s == Shape({1, cfg_.input_hw, cfg_.input_hw}),
                      "encode2d: input " << shape_str(s) << " does not match configured "
                      << cfg_.input_hw << "x" << cfg_.input_hw);
        if (view == View::lateral)
            DUOLIFT_CHECK(double_view(), "encode2d: lateral view requested in single-view mode");
        return view == View::frontal ? enc_frontal_.forward(image) : enc_lateral_.forward(image);
    }

    /// Feature lifting: replication by default, learned conv under L = off.
    ad::Var lift_features(const ad::Var& f2d, View axis) const {
        const int s4 = cfg_.output_dhw / 4;
        if (cfg_.replicate_lift) return lift(f2d, axis, s4);
        return axis == View::frontal ? lift_feat_f_.forward(f2d) : lift_feat_s_.forward(f2d);
    }

    std::array<ad::Var, 3> decode_multiscale(const ad::Var& f_b) const {
        const int s4 = cfg_.output_dhw / 4;
        const int fb_ch = double_view() ? 2 * c512_ : c512_;
        DUOLIFT_CHECK(f_b->shape() == Shape({fb_ch, s4, s4, s4}),
                      "decode_multiscale: expected " << shape_str(Shape{fb_ch, s4, s4, s4})
                      << ", got " << shape_str(f_b->shape()));
        ad::Var u21 = stage_up_[0].forward(stage_rb_[0].forward(f_b));
        ad::Var u22 = stage_up_[1].forward(stage_rb_[1].forward(u21));
        ad::Var u23 = stage_up_[2].forward(stage_rb_[2].forward(u22));
        return {u21, u22, u23};
    }

    /// Raises f_u21 or f_u22 to full resolution at 64m channels; any other
    /// input scale is rejected.
    ad::Var upsample_to_full(const ad::Var& f) const {
        const int s4 = cfg_.output_dhw / 4, s2 = cfg_.output_dhw / 2;
        const Shape& s = f->shape();
        if (s == Shape{c256_, s4, s4, s4}) return up1_from_u21_.forward(f);
        if (s == Shape{c128_, s2, s2, s2}) return up1_from_u22_.forward(f);
        DUOLIFT_CHECK(false, "upsample_to_full: unsupported input scale " << shape_str(s));
        return f;
    }

    /// Image branch: D'-fold replication of the raw projections (or the
    /// learned conv lift), concatenation, one ResNet block to 32m channels.
    ad::Var lift_images(const ad::Var& i_f, const ad::Var* i_s) const {
        DUOLIFT_CHECK(cfg_.duo_branch, "lift_images: image branch disabled (DB off)");
        const int s = cfg_.output_dhw;
        DUOLIFT_CHECK(i_f->shape() == Shape({1, s, s}),
                      "lift_images: frontal projection must be 1x" << s << "x" << s
                      << " after resampling, got " << shape_str(i_f->shape()));
        ad::Var vol_f = cfg_.replicate_lift ? lift(i_f, View::frontal, s) : lift_img_f_.forward(i_f);
        ad::Var pre;
        if (double_view()) {
            DUOLIFT_CHECK(i_s != nullptr, "lift_images: double view needs the lateral projection");
            DUOLIFT_CHECK((*i_s)->shape() == Shape({1, s, s}),
                          "lift_images: lateral projection must be 1x" << s << "x" << s
                          << " after resampling, got " << shape_str((*i_s)->shape()));
            ad::Var vol_s = cfg_.replicate_lift ? lift(*i_s, View::lateral, s) : lift_img_s_.forward(*i_s);
            pre = ad::concat_ch({vol_f, vol_s});
        } else {
            DUOLIFT_CHECK(i_s == nullptr, "lift_images: lateral projection supplied in single-view mode");
            pre = vol_f;
        }
        return image_block_.forward(pre);
    }

    /// Channel concatenation [F_o | f_u11 | f_u12 | f_u23] (F_o omitted when
    /// the image branch is ablated): 32m + 64m + 64m + 64m = 224m channels.
    ad::Var assemble(const ad::Var* f_o, const ad::Var& f_u11, const ad::Var& f_u12,
                     const ad::Var& f_u23) const {
        std::vector<ad::Var> parts;
        if (cfg_.duo_branch) {
            DUOLIFT_CHECK(f_o != nullptr, "assemble: F_o required when the image branch is enabled");
            parts.push_back(*f_o);
        } else {
            DUOLIFT_CHECK(f_o == nullptr, "assemble: F_o supplied but the image branch is disabled");
        }
        parts.push_back(f_u11);
        parts.push_back(f_u12);
        parts.push_back(f_u23);
        return ad::concat_ch(parts);
    }

    /// Dropout (training only), UNet++, plain U-Net head, sigmoid to [0,1].
    ad::Var reconstruct(const ad::Var& f_u, bool training, Rng* dropout_rng = nullptr) const {
        DUOLIFT_CHECK(f_u->shape()[0] == assembled_channels(),
                      "reconstruct: expected " << assembled_channels() << " channels, got "
                      << shape_str(f_u->shape()));
        ad::Var h = f_u;
        if (training && cfg_.dropout_p > 0.0) {
            DUOLIFT_CHECK(dropout_rng != nullptr, "reconstruct: training mode needs a dropout RNG");
            h = ad::dropout(h, cfg_.dropout_p, *dropout_rng);
        }
        h = unetpp_.forward(h);
        h = head_.forward(h);
        return ad::sigmoid(h);
    }

    /// Full composition. i_s must be null in single-view mode.
    ad::Var forward(const ad::Var& i_f, const ad::Var* i_s, bool training,
                    Rng* dropout_rng = nullptr) const {
        if (double_view())
            DUOLIFT_CHECK(i_s != nullptr, "generator: double view needs frontal and lateral projections");
        else
            DUOLIFT_CHECK(i_s == nullptr, "generator: single view takes the frontal projection only");

        ad::Var f2d_f = encode2d(i_f, View::frontal);
        ad::Var f_b;
        if (double_view()) {
            ad::Var f2d_s = encode2d(*i_s, View::lateral);
            f_b = fuse(lift_features(f2d_f, View::frontal), lift_features(f2d_s, View::lateral));
        } else {
            f_b = lift_features(f2d_f, View::frontal);
        }
        auto [u21, u22, u23] = decode_multiscale(f_b);
        ad::Var f_u11 = upsample_to_full(u21);
        ad::Var f_u12 = upsample_to_full(u22);
        ad::Var f_u;
        if (cfg_.duo_branch) {
            ad::Var f_o = lift_images(i_f, i_s);
            f_u = assemble(&f_o, f_u11, f_u12, u23);
        } else {
            f_u = assemble(nullptr, f_u11, f_u12, u23);
        }
        return reconstruct(f_u, training, dropout_rng);
    }

    // -- domain-level API --

    ad::Var projection_var(const Projection& p, bool as_leaf = false) const {
        Projection q = p;
        if (p.rows() != cfg_.input_hw || p.cols() != cfg_.input_hw)
            q = resample2d(p, cfg_.input_hw, cfg_.input_hw);
        Tensor t = q.data.reshaped(Shape{1, cfg_.input_hw, cfg_.input_hw});
        return as_leaf ? ad::leaf(std::move(t)) : ad::constant(std::move(t));
    }

    Volume generator_forward(const Projection& i_f, const Projection* i_s, bool training = false,
                             Rng* dropout_rng = nullptr) const {
        DUOLIFT_CHECK(i_f.view == View::frontal, "generator: first input must be the frontal projection");
        if (i_s) DUOLIFT_CHECK(i_s->view == View::lateral, "generator: second input must be the lateral projection");
        ad::Var vf = projection_var(i_f);
        ad::Var out;
        if (i_s) {
            ad::Var vs = projection_var(*i_s);
            out = forward(vf, &vs, training, dropout_rng);
        } else {
            out = forward(vf, nullptr, training, dropout_rng);
        }
        DUOLIFT_REQUIRE(out->value.all_finite(), "generator: non-finite values in the output volume");
        const int s = cfg_.output_dhw;
        Volume v(s, s, s);
        v.data = out->value.reshaped(Shape{s, s, s});
        return v;
    }

    ShapeLedger shape_ledger() const {
        ShapeLedger led;
        const int hw = cfg_.input_hw, s = cfg_.output_dhw, s4 = s / 4;
        led.f2d = enc_frontal_.out_shape(Shape{1, hw, hw});
        led.f3d = Shape{c512_, s4, s4, s4};
        led.f_b = Shape{double_view() ? 2 * c512_ : c512_, s4, s4, s4};
        Shape cur = led.f_b;
        cur = stage_up_[0].out_shape(stage_rb_[0].out_shape(cur));
        led.f_u21 = cur;
        cur = stage_up_[1].out_shape(stage_rb_[1].out_shape(cur));
        led.f_u22 = cur;
        cur = stage_up_[2].out_shape(stage_rb_[2].out_shape(cur));
        led.f_u23 = cur;
        led.f_u11 = up1_from_u21_.out_shape(led.f_u21);
        led.f_u12 = up1_from_u22_.out_shape(led.f_u22);
        if (cfg_.duo_branch) led.f_o = Shape{c32_, s, s, s};
        led.f_u = Shape{assembled_channels(), s, s, s};
        led.output = Shape{1, s, s, s};
        return led;
    }

    void collect_params(const std::string& prefix, nn::ParamList& out) const {
        enc_frontal_.collect(prefix + "/enc_f", out);
        if (double_view()) enc_lateral_.collect(prefix + "/enc_s", out);
        if (!cfg_.replicate_lift) {
            lift_feat_f_.conv.collect(prefix + "/convlift_feat_f", out);
            if (double_view()) lift_feat_s_.conv.collect(prefix + "/convlift_feat_s", out);
            lift_img_f_.conv.collect(prefix + "/convlift_img_f", out);
            if (double_view()) lift_img_s_.conv.collect(prefix + "/convlift_img_s", out);
        }
        for (int i = 0; i < 3; ++i) {
            stage_rb_[i].collect(prefix + "/dec" + std::to_string(i) + "_rb", out);
            stage_up_[i].collect(prefix + "/dec" + std::to_string(i) + "_up2", out);
        }
        up1_from_u21_.collect(prefix + "/up1_u21", out);
        up1_from_u22_.collect(prefix + "/up1_u22", out);
        if (cfg_.duo_branch) image_block_.collect(prefix + "/img_block", out);
        unetpp_.collect(prefix + "/unetpp", out);
        head_.collect(prefix + "/unet", out);
    }

    nn::ParamList params() const {
        nn::ParamList out;
        collect_params("g", out);
        return out;
    }

    void set_requires_grad(bool on) const {
        for (const auto& p : params()) {
            p.var->requires_grad = on;
            p.var->needs_grad = on;
        }
    }

private:
    GeneratorConfig cfg_;
    int c512_ = 0, c256_ = 0, c128_ = 0, c64_ = 0, c32_ = 0;
    nn::Encoder2d enc_frontal_, enc_lateral_;
    nn::ConvLift lift_feat_f_, lift_feat_s_, lift_img_f_, lift_img_s_;
    nn::ResBlock3d stage_rb_[3];
    nn::UpsampleType2 stage_up_[3];
    nn::UpsampleType1 up1_from_u21_, up1_from_u22_;
    nn::ResBlock3d image_block_;
    nn::UNetPlusPlus unetpp_;
    nn::UNetHead head_;
};

}  // namespace duolift
