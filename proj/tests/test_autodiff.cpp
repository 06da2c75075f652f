// Substrate tests: value oracles and finite-difference gradient checks for
// every autodiff op.
#include <gtest/gtest.h>

#include "duolift/autodiff.hpp"
#include "test_util.hpp"

using namespace duolift;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

ad::Var leaf_rand(Shape s, Rng& rng, real lo = -1.0, real hi = 1.0) {
    return ad::leaf(random_tensor(std::move(s), rng, lo, hi));
}

}  // namespace

TEST(Autodiff, ElementwiseGradients) {
    Rng rng(1);
    ad::Var a = leaf_rand(Shape{3, 4}, rng);
    ad::Var b = leaf_rand(Shape{3, 4}, rng);
    auto f = [&] {
        ad::Var h = ad::mul(ad::add(a, b), ad::sub(a, ad::scale(b, 0.7)));
        return ad::mean(ad::square(h));
    };
    auto res = grad_check(f, {a, b}, 24, rng, 1e-5);
    EXPECT_EQ(res.failures, 0);
}

TEST(Autodiff, ActivationGradients) {
    Rng rng(2);
    // Keep values away from the relu/abs kinks and clamp boundaries.
    ad::Var a = leaf_rand(Shape{40}, rng, 0.1, 0.9);
    ad::Var b = leaf_rand(Shape{40}, rng, -0.9, -0.1);
    auto f = [&] {
        ad::Var h = ad::add(ad::relu(a), ad::leaky_relu(b, 0.2));
        h = ad::add(h, ad::sigmoid(ad::mul(a, b)));
        h = ad::add(h, ad::absval(b));
        h = ad::add(h, ad::log_of(ad::clamp(a, 1e-4, 1.0 - 1e-4)));
        return ad::mean(h);
    };
    auto res = grad_check(f, {a, b}, 40, rng, 1e-5);
    EXPECT_EQ(res.failures, 0);
}

TEST(Autodiff, ClampZeroesGradientOutsideRange) {
    Tensor t(Shape{3});
    t[0] = -0.5;
    t[1] = 0.5;
    t[2] = 1.5;
    ad::Var a = ad::leaf(t);
    ad::Var y = ad::sum(ad::clamp(a, 0.0, 1.0));
    ad::backward(y);
    EXPECT_EQ(a->grad[0], 0.0);
    EXPECT_EQ(a->grad[1], 1.0);
    EXPECT_EQ(a->grad[2], 0.0);
}

TEST(Autodiff, ConcatSliceValuesAndGradients) {
    Rng rng(3);
    ad::Var a = leaf_rand(Shape{2, 3, 3}, rng);
    ad::Var b = leaf_rand(Shape{4, 3, 3}, rng);
    ad::Var cat = ad::concat_ch({a, b});
    ASSERT_EQ(cat->shape(), (Shape{6, 3, 3}));
    // channel i of the output is channel i of a for i < 2, else of b
    for (int64_t i = 0; i < a->size(); ++i) EXPECT_EQ(cat->value[i], a->value[i]);
    for (int64_t i = 0; i < b->size(); ++i) EXPECT_EQ(cat->value[a->size() + i], b->value[i]);
    ad::Var back = ad::slice_ch(cat, 2, 6);
    for (int64_t i = 0; i < b->size(); ++i) EXPECT_EQ(back->value[i], b->value[i]);

    auto f = [&] {
        ad::Var c = ad::concat_ch({a, b});
        return ad::mean(ad::square(ad::slice_ch(c, 1, 5)));
    };
    auto res = grad_check(f, {a, b}, 20, rng, 1e-5);
    EXPECT_EQ(res.failures, 0);

    ad::Var odd = leaf_rand(Shape{1, 2, 3}, rng);
    EXPECT_THROW(ad::concat_ch({a, odd}), std::invalid_argument);
    EXPECT_THROW(ad::slice_ch(a, 1, 4), std::invalid_argument);
}

TEST(Autodiff, PermuteSpatial) {
    Rng rng(4);
    ad::Var a = leaf_rand(Shape{2, 3, 4, 5}, rng);
    ad::Var p = ad::permute_spatial(a, {2, 1, 0});  // (D,H,W) -> (W,H,D)
    ASSERT_EQ(p->shape(), (Shape{2, 5, 4, 3}));
    for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 3; ++d)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w) {
                    real in = a->value[((int64_t(c) * 3 + d) * 4 + h) * 5 + w];
                    real out = p->value[((int64_t(c) * 5 + w) * 4 + h) * 3 + d];
                    EXPECT_EQ(in, out);
                }
    auto f = [&] { return ad::mean(ad::square(ad::permute_spatial(a, {2, 1, 0}))); };
    EXPECT_EQ(grad_check(f, {a}, 12, rng, 1e-5).failures, 0);
}

TEST(Autodiff, LiftFrontalSlicesBitExact) {
    Rng rng(5);
    ad::Var f2d = leaf_rand(Shape{3, 4, 5}, rng);
    ad::Var lifted = ad::lift_frontal(f2d, 6);
    ASSERT_EQ(lifted->shape(), (Shape{3, 6, 4, 5}));
    for (int c = 0; c < 3; ++c)
        for (int d = 0; d < 6; ++d)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w)
                    EXPECT_EQ(lifted->value[((int64_t(c) * 6 + d) * 4 + h) * 5 + w],
                              f2d->value[(int64_t(c) * 4 + h) * 5 + w]);
    // sum scales exactly by the repeat count: every slice sum (accumulated in
    // source order) is bit-equal to the source sum
    real src_sum = 0;
    for (int64_t i = 0; i < f2d->size(); ++i) src_sum += f2d->value[i];
    for (int d = 0; d < 6; ++d) {
        real slice_sum = 0;
        for (int c = 0; c < 3; ++c)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w)
                    slice_sum += lifted->value[((int64_t(c) * 6 + d) * 4 + h) * 5 + w];
        EXPECT_EQ(slice_sum, src_sum);
    }
    EXPECT_NEAR(lifted->value.sum(), 6.0 * src_sum, 1e-12 * std::abs(src_sum) * 6);
    auto f = [&] { return ad::mean(ad::square(ad::lift_frontal(f2d, 6))); };
    EXPECT_EQ(grad_check(f, {f2d}, 12, rng, 1e-5).failures, 0);
    EXPECT_THROW(ad::lift_frontal(f2d, 0), std::invalid_argument);
}

TEST(Autodiff, LiftLateralReinterpretsColumnsAsDepth) {
    Rng rng(6);
    ad::Var f2d = leaf_rand(Shape{2, 4, 3}, rng);  // [C,H,Dcols]
    ad::Var lifted = ad::lift_lateral(f2d, 5);
    ASSERT_EQ(lifted->shape(), (Shape{2, 3, 4, 5}));
    for (int c = 0; c < 2; ++c)
        for (int d = 0; d < 3; ++d)
            for (int h = 0; h < 4; ++h)
                for (int w = 0; w < 5; ++w)
                    EXPECT_EQ(lifted->value[((int64_t(c) * 3 + d) * 4 + h) * 5 + w],
                              f2d->value[(int64_t(c) * 4 + h) * 3 + d]);
    auto f = [&] { return ad::mean(ad::square(ad::lift_lateral(f2d, 5))); };
    EXPECT_EQ(grad_check(f, {f2d}, 12, rng, 1e-5).failures, 0);
}

TEST(Autodiff, Conv3dMatchesNaiveLoop) {
    Rng rng(7);
    const int Cin = 2, Cout = 3, D = 4, H = 5, W = 4, K = 3, S = 1, P = 1;
    ad::Var x = leaf_rand(Shape{Cin, D, H, W}, rng);
    ad::Var w = leaf_rand(Shape{Cout, Cin, K, K, K}, rng);
    ad::Var b = leaf_rand(Shape{Cout}, rng);
    ad::Var y = ad::conv3d(x, w, b, S, P);
    ASSERT_EQ(y->shape(), (Shape{Cout, D, H, W}));
    for (int oc = 0; oc < Cout; ++oc)
        for (int od = 0; od < D; ++od)
            for (int oh = 0; oh < H; ++oh)
                for (int ow = 0; ow < W; ++ow) {
                    real acc = b->value[oc];
                    for (int ic = 0; ic < Cin; ++ic)
                        for (int kd = 0; kd < K; ++kd)
                            for (int kh = 0; kh < K; ++kh)
                                for (int kw = 0; kw < K; ++kw) {
                                    int id = od * S - P + kd, ih = oh * S - P + kh, iw = ow * S - P + kw;
                                    if (id < 0 || id >= D || ih < 0 || ih >= H || iw < 0 || iw >= W)
                                        continue;
                                    acc += x->value[((int64_t(ic) * D + id) * H + ih) * W + iw] *
                                           w->value[(((int64_t(oc) * Cin + ic) * K + kd) * K + kh) * K + kw];
                                }
                    EXPECT_NEAR(acc, y->value[((int64_t(oc) * D + od) * H + oh) * W + ow], 1e-12);
                }
}

TEST(Autodiff, Conv3dGradients) {
    Rng rng(8);
    for (auto [k, s, p] : {std::array<int, 3>{3, 1, 1}, {4, 1, 2}, {1, 1, 0}, {3, 2, 1}}) {
        ad::Var x = leaf_rand(Shape{2, 5, 5, 5}, rng);
        ad::Var w = leaf_rand(Shape{3, 2, k, k, k}, rng);
        ad::Var b = leaf_rand(Shape{3}, rng);
        auto f = [&, s = s, p = p] { return ad::mean(ad::square(ad::conv3d(x, w, b, s, p))); };
        auto res = grad_check(f, {x, w, b}, 30, rng, 1e-4);
        EXPECT_EQ(res.failures, 0) << "k=" << k << " s=" << s << " p=" << p;
    }
}

TEST(Autodiff, Conv2dGradients) {
    Rng rng(9);
    for (auto [k, s, p] : {std::array<int, 3>{3, 1, 1}, {3, 2, 1}, {7, 2, 3}, {1, 1, 0}}) {
        ad::Var x = leaf_rand(Shape{2, 8, 8}, rng);
        ad::Var w = leaf_rand(Shape{3, 2, k, k}, rng);
        ad::Var b = leaf_rand(Shape{3}, rng);
        auto f = [&, s = s, p = p] { return ad::mean(ad::square(ad::conv2d(x, w, b, s, p))); };
        auto res = grad_check(f, {x, w, b}, 30, rng, 1e-4);
        EXPECT_EQ(res.failures, 0) << "k=" << k << " s=" << s << " p=" << p;
    }
}

TEST(Autodiff, AvgPool3dValueAndGradients) {
    Rng rng(10);
    ad::Var x = leaf_rand(Shape{2, 5, 5, 5}, rng);
    ad::Var y = ad::avgpool3d(x, 3, 2, 1);
    ASSERT_EQ(y->shape(), (Shape{2, 3, 3, 3}));
    // window fully interior at output (1,1,1): direct mean over 27 voxels
    real acc = 0;
    for (int kd = 0; kd < 3; ++kd)
        for (int kh = 0; kh < 3; ++kh)
            for (int kw = 0; kw < 3; ++kw)
                acc += x->value[((int64_t(0) * 5 + 1 + kd) * 5 + 1 + kh) * 5 + 1 + kw];
    EXPECT_NEAR(y->value[(int64_t(0) * 3 + 1) * 9 + 1 * 3 + 1], acc / 27.0, 1e-12);

    for (auto [k, s, p] : {std::array<int, 3>{3, 2, 1}, {2, 2, 0}}) {
        auto f = [&, k = k, s = s, p = p] { return ad::mean(ad::square(ad::avgpool3d(x, k, s, p))); };
        EXPECT_EQ(grad_check(f, {x}, 20, rng, 1e-5).failures, 0);
    }
}

TEST(Autodiff, Resize3dIdentityAndGradients) {
    Rng rng(11);
    ad::Var x = leaf_rand(Shape{2, 4, 4, 4}, rng);
    ad::Var same = ad::resize3d(x, 4, 4, 4);
    EXPECT_TRUE(same->value == x->value);  // exact identity at unchanged dims
    ad::Var up = ad::resize3d(x, 8, 8, 8);
    ASSERT_EQ(up->shape(), (Shape{2, 8, 8, 8}));
    EXPECT_TRUE(up->value.all_finite());
    for (auto dims : {std::array<int, 3>{8, 8, 8}, {3, 5, 4}, {2, 2, 2}}) {
        auto f = [&, dims = dims] {
            return ad::mean(ad::square(ad::resize3d(x, dims[0], dims[1], dims[2])));
        };
        EXPECT_EQ(grad_check(f, {x}, 20, rng, 1e-5).failures, 0);
    }
}

TEST(Autodiff, InstanceNormStatsAndGradients) {
    Rng rng(12);
    ad::Var x = leaf_rand(Shape{3, 4, 4}, rng);
    ad::Var g = ad::leaf(Tensor(Shape{3}, 1.0));
    ad::Var b = ad::leaf(Tensor(Shape{3}, 0.0));
    ad::Var y = ad::instance_norm(x, g, b);
    // per-channel output is standardized (up to eps)
    for (int c = 0; c < 3; ++c) {
        real mu = 0;
        for (int i = 0; i < 16; ++i) mu += y->value[c * 16 + i];
        EXPECT_NEAR(mu / 16, 0.0, 1e-10);
        real var = 0;
        for (int i = 0; i < 16; ++i) var += y->value[c * 16 + i] * y->value[c * 16 + i];
        EXPECT_NEAR(var / 16, 1.0, 1e-3);  // eps pulls it slightly below 1
    }
    for (Shape s : {Shape{3, 4, 4}, Shape{2, 3, 3, 3}}) {
        ad::Var xx = leaf_rand(s, rng);
        ad::Var gg = leaf_rand(Shape{s[0]}, rng, 0.5, 1.5);
        ad::Var bb = leaf_rand(Shape{s[0]}, rng, -0.5, 0.5);
        auto f = [&] { return ad::mean(ad::square(ad::instance_norm(xx, gg, bb))); };
        EXPECT_EQ(grad_check(f, {xx, gg, bb}, 36, rng, 1e-4).failures, 0);
    }
}

TEST(Autodiff, DropoutMaskAndGradient) {
    Rng rng(13);
    ad::Var x = leaf_rand(Shape{200}, rng, 0.5, 1.5);
    Rng drop_a(99), drop_b(99);
    ad::Var y1 = ad::dropout(x, 0.25, drop_a);
    ad::Var y2 = ad::dropout(x, 0.25, drop_b);
    EXPECT_TRUE(y1->value == y2->value);  // same RNG state, same mask
    int zeros = 0;
    for (int64_t i = 0; i < y1->size(); ++i) {
        if (y1->value[i] == 0.0) {
            ++zeros;
        } else {
            EXPECT_NEAR(y1->value[i], x->value[i] / 0.75, 1e-12);  // inverted scaling
        }
    }
    EXPECT_GT(zeros, 20);
    EXPECT_LT(zeros, 100);
    ad::backward(ad::sum(y1));
    for (int64_t i = 0; i < x->size(); ++i)
        EXPECT_EQ(x->grad[i], y1->value[i] == 0.0 ? 0.0 : 1.0 / 0.75);
    // p = 0 is the identity
    Rng d0(1);
    EXPECT_TRUE(ad::dropout(x, 0.0, d0)->value == x->value);
}

TEST(Autodiff, BackwardAccumulatesAcrossCalls) {
    ad::Var x = ad::leaf(Tensor::scalar(2.0));
    ad::backward(ad::square(x));
    ad::backward(ad::square(x));
    EXPECT_NEAR(x->grad[0], 8.0, 1e-12);  // two accumulated passes of d(x^2)/dx = 4
}

TEST(Autodiff, FrozenLeafReceivesNoGradient) {
    Rng rng(15);
    ad::Var x = leaf_rand(Shape{2, 3, 3, 3}, rng);
    ad::Var w = leaf_rand(Shape{2, 2, 3, 3, 3}, rng);
    w->requires_grad = false;
    w->needs_grad = false;
    ad::backward(ad::mean(ad::conv3d(x, w, nullptr, 1, 1)));
    EXPECT_TRUE(x->grad.same_shape(x->value));
    EXPECT_FALSE(w->grad.same_shape(w->value));  // never allocated, never written
}

TEST(Autodiff, DeterministicRepeatedForward) {
    Rng rng(14);
    ad::Var x = leaf_rand(Shape{3, 8, 8, 8}, rng);
    ad::Var w = leaf_rand(Shape{4, 3, 3, 3, 3}, rng);
    ad::Var b = leaf_rand(Shape{4}, rng);
    ad::Var y1 = ad::conv3d(x, w, b, 1, 1);
    ad::Var y2 = ad::conv3d(x, w, b, 1, 1);
    EXPECT_TRUE(y1->value == y2->value);
}
