// Volumetric patch discriminator: [conv k4 s1 p2 -> leaky ReLU -> avgpool
// k3 s2 p1] blocks down to a 5x5x5 probability grid.
#pragma once

#include <string>
#include <vector>

#include "duolift/layers.hpp"
#include "duolift/volume.hpp"

namespace duolift {

struct DiscriminatorConfig {
    int input_size = 128;   // cube edge of the input volume
    real multiplier = 1.0;
    int base_channels = 64;
    int max_channels = 512;

    /// Each block maps spatial size s -> floor(s/2) + 1 (conv grows s by one,
    /// pooling roughly halves). Returns the block count reaching exactly 5,
    /// or throws: sizes for which no count lands on 5x5x5 are invalid.
    static int block_count_for(int input_size) {
        int s = input_size, blocks = 0;
        while (s != 5) {
            int next = s / 2 + 1;
            DUOLIFT_CHECK(next < s && blocks < 16,
                          "DiscriminatorConfig: input size " << input_size
                          << " never reaches a 5x5x5 grid (stuck at " << s << ")");
            s = next;
            ++blocks;
        }
        return blocks;
    }

    int block_count() const { return block_count_for(input_size); }

    std::vector<int> channel_schedule() const {
        std::vector<int> ch;
        int c = base_channels;
        for (int i = 0; i < block_count(); ++i) {
            ch.push_back(nn::scale_ch(std::min(c, max_channels), multiplier));
            c *= 2;
        }
        return ch;
    }
};

class Discriminator {
public:
    explicit Discriminator(const DiscriminatorConfig& cfg, uint64_t init_seed = 7) : cfg_(cfg) {
        Rng rng = Rng(init_seed).fork(23);
        std::vector<int> ch = cfg_.channel_schedule();
        int cin = 1;
        for (int cout : ch) {
            convs_.emplace_back(cin, cout, 4, 1, 2, rng);
            cin = cout;
        }
        final_ = nn::Conv3d(cin, 1, 1, 1, 0, rng);
    }

    const DiscriminatorConfig& config() const { return cfg_; }

    /// x: [1,S,S,S] -> probability grid [1,5,5,5], values strictly in (0,1).
    ad::Var forward(const ad::Var& x) const {
        const int s = cfg_.input_size;
        DUOLIFT_CHECK(x->shape() == Shape({1, s, s, s}),
                      "discriminator: expected input " << shape_str(Shape{1, s, s, s})
                      << ", got " << shape_str(x->shape()));
        ad::Var h = x;
        for (const auto& conv : convs_) {
            h = ad::leaky_relu(conv.forward(h), 0.2);
            h = ad::avgpool3d(h, 3, 2, 1);
        }
        return ad::sigmoid(final_.forward(h));
    }

    Tensor discriminator_forward(const Volume& v) const {
        DUOLIFT_CHECK(v.depth() == cfg_.input_size && v.height() == cfg_.input_size &&
                      v.width() == cfg_.input_size,
                      "discriminator: volume " << shape_str(v.data.shape())
                      << " does not match configured size " << cfg_.input_size);
        ad::Var out = forward(ad::constant(v.data.reshaped(Shape{1, cfg_.input_size, cfg_.input_size,
                                                                 cfg_.input_size})));
        return out->value.reshaped(Shape{5, 5, 5});
    }

    void collect_params(const std::string& prefix, nn::ParamList& out) const {
        for (size_t i = 0; i < convs_.size(); ++i)
            convs_[i].collect(prefix + "/conv" + std::to_string(i), out);
        final_.collect(prefix + "/final", out);
    }

    nn::ParamList params() const {
        nn::ParamList out;
        collect_params("d", out);
        return out;
    }

    void set_requires_grad(bool on) const {
        for (const auto& p : params()) {
            p.var->requires_grad = on;
            p.var->needs_grad = on;
        }
    }

private:
    DiscriminatorConfig cfg_;
    std::vector<nn::Conv3d> convs_;
    nn::Conv3d final_;
};

}  // namespace duolift
