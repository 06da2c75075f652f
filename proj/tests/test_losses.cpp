// Loss contracts: closed forms, brute-force per-voxel/per-cell oracles,
// masked-loss locality, composed totals, and gradients.
#include <gtest/gtest.h>

#include "duolift/losses.hpp"
#include "test_util.hpp"

using namespace duolift;
using testutil::grad_check;
using testutil::random_tensor;
using testutil::random_volume;

namespace {

Volume vol_from(const Tensor& t) {
    Volume v(t.shape()[0], t.shape()[1], t.shape()[2]);
    v.data = t;
    return v;
}

MaskVolume mask_from(const Tensor& t) {
    MaskVolume m(t.shape()[0], t.shape()[1], t.shape()[2], MaskLabel::lung);
    m.data = t;
    return m;
}

}  // namespace

TEST(Losses, IdentityAndConstantClosedForms) {
    Rng rng(50);
    Volume v = random_volume(4, 4, 4, rng);
    auto same = losses::recon_losses(v, v);
    EXPECT_EQ(same.mse, 0.0);
    EXPECT_EQ(same.l1, 0.0);

    Volume zeros(4, 4, 4, 0.0), half(4, 4, 4, 0.5);
    auto pair = losses::recon_losses(zeros, half);
    EXPECT_NEAR(pair.mse, 0.25, 1e-12);
    EXPECT_NEAR(pair.l1, 0.5, 1e-12);
}

TEST(Losses, ReconMatchesBruteForceLoop) {
    Rng rng(51);
    Volume a = random_volume(4, 4, 4, rng), b = random_volume(4, 4, 4, rng);
    real mse = 0, l1 = 0;
    for (int d = 0; d < 4; ++d)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) {
                real diff = a.at(d, h, w) - b.at(d, h, w);
                mse += diff * diff;
                l1 += std::abs(diff);
            }
    mse /= 64;
    l1 /= 64;
    auto pair = losses::recon_losses(a, b);
    EXPECT_NEAR(pair.mse, mse, 1e-7);
    EXPECT_NEAR(pair.l1, l1, 1e-7);

    Volume wrong(4, 4, 8, 0.0);
    EXPECT_THROW(losses::recon_losses(a, wrong), std::invalid_argument);
}

TEST(Losses, MaskedAnnihilationAndLocality) {
    Rng rng(52);
    Volume a = random_volume(4, 4, 4, rng), b = random_volume(4, 4, 4, rng);
    MaskVolume zero_mask(4, 4, 4, MaskLabel::lung);
    auto none = losses::masked_losses(a, b, zero_mask);
    EXPECT_EQ(none.mse, 0.0);
    EXPECT_EQ(none.l1, 0.0);

    MaskVolume m = mask_from(threshold_segment(random_volume(4, 4, 4, rng), 0.5).data);
    auto base = losses::masked_losses(a, b, m);
    // perturbing the reconstruction outside the mask changes nothing, exactly
    Volume b2 = b;
    for (int64_t i = 0; i < b2.data.size(); ++i)
        if (m.data[i] == 0.0) b2.data[i] = rng.uniform();
    auto perturbed = losses::masked_losses(a, b2, m);
    EXPECT_EQ(base.mse, perturbed.mse);
    EXPECT_EQ(base.l1, perturbed.l1);
}

TEST(Losses, MaskedHalfDomainHandValue) {
    // mask covers half of a 2x2x2 grid; |target - recon| = 0.5 inside
    Volume target(2, 2, 2, 0.0), recon(2, 2, 2, 0.5);
    MaskVolume m(2, 2, 2, MaskLabel::lung);
    for (int i = 0; i < 4; ++i) m.data[i] = 1.0;
    auto pair = losses::masked_losses(target, recon, m);
    EXPECT_NEAR(pair.mse, 0.125, 1e-12);  // 0.25 * 4 / 8
    EXPECT_NEAR(pair.l1, 0.25, 1e-12);    // 0.5 * 4 / 8
}

TEST(Losses, AdversarialClosedForms) {
    Tensor tenth(Shape{5, 5, 5}, 0.1);
    EXPECT_NEAR(losses::adv_generator_loss(tenth), 2.302585, 1e-5);

    Tensor fooled(Shape{5, 5, 5}, 1.0 - losses::kProbEps);
    EXPECT_NEAR(losses::adv_generator_loss(fooled), 0.0, 1e-5);

    Tensor real9(Shape{5, 5, 5}, 0.9), fake1(Shape{5, 5, 5}, 0.1);
    EXPECT_NEAR(losses::adv_discriminator_loss(real9, fake1), 0.210721, 1e-5);

    Tensor half(Shape{5, 5, 5}, 0.5);
    EXPECT_NEAR(losses::adv_discriminator_loss(half, half), 2.0 * std::log(2.0), 1e-9);
}

TEST(Losses, AdversarialPerCellOracle) {
    Rng rng(53);
    Tensor d_real = random_tensor(Shape{5, 5, 5}, rng, 0.05, 0.95);
    Tensor d_fake = random_tensor(Shape{5, 5, 5}, rng, 0.05, 0.95);
    real g = 0, d = 0;
    for (int64_t i = 0; i < d_fake.size(); ++i) {
        g += -std::log(d_fake[i]);
        d += -std::log(d_real[i]) - std::log(1.0 - d_fake[i]);
    }
    EXPECT_NEAR(losses::adv_generator_loss(d_fake), g / 125.0, 1e-7);
    EXPECT_NEAR(losses::adv_discriminator_loss(d_real, d_fake), d / 125.0, 1e-7);

    Tensor bad(Shape{5, 5, 5}, 0.5);
    bad[0] = std::numeric_limits<real>::quiet_NaN();
    EXPECT_THROW(losses::adv_generator_loss(bad), std::invalid_argument);
    Tensor small(Shape{3, 3, 3}, 0.5);
    EXPECT_THROW(losses::adv_discriminator_loss(small, d_fake), std::invalid_argument);
}

TEST(Losses, TotalComposition) {
    losses::LossWeights w;
    EXPECT_EQ(w.alpha, 1.0);
    EXPECT_EQ(w.beta, 0.01);

    // GAN defaults: alpha * (four similarity terms) + beta * adv_g
    auto gan = losses::total_losses(0.1, 0.2, 0.03, 0.04, 1.5, 0.8, w, losses::TrainMode::GAN, true);
    EXPECT_NEAR(gan.total_g, 1.0 * (0.1 + 0.2 + 0.03 + 0.04) + 0.01 * 1.5, 1e-12);
    EXPECT_NEAR(gan.total_d, 0.01 * 0.8, 1e-12);

    // CNN mode: adversarial terms forced to zero; no masked loss by default
    auto cnn = losses::total_losses(0.1, 0.2, 0.03, 0.04, 1.5, 0.8, w, losses::TrainMode::CNN, false);
    EXPECT_NEAR(cnn.total_g, 0.1 + 0.2, 1e-12);
    EXPECT_EQ(cnn.total_d, 0.0);
    EXPECT_EQ(cnn.adv_g, 0.0);

    // ablation SL off: inside terms forced to zero even in GAN mode
    auto sl_off = losses::total_losses(0.1, 0.2, 0.03, 0.04, 1.5, 0.8, w, losses::TrainMode::GAN, false);
    EXPECT_EQ(sl_off.inside_mse, 0.0);
    EXPECT_EQ(sl_off.inside_l1, 0.0);
    EXPECT_NEAR(sl_off.total_g, 0.3 + 0.015, 1e-12);

    // weight linearity: scaling alpha by k scales the similarity part by k
    losses::LossWeights k3{3.0, 0.01};
    auto scaled = losses::total_losses(0.1, 0.2, 0.03, 0.04, 1.5, 0.8, k3, losses::TrainMode::GAN, true);
    EXPECT_NEAR(scaled.total_g - scaled.adv_g * 0.01, 3.0 * (gan.total_g - gan.adv_g * 0.01), 1e-12);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
    Rng rng(54);
    ad::Var target = ad::constant(random_tensor(Shape{3, 3, 3}, rng, 0, 1));
    ad::Var recon = ad::leaf(random_tensor(Shape{3, 3, 3}, rng, 0, 1));
    Tensor mask_t = threshold_segment(random_volume(3, 3, 3, rng), 0.4).data;
    ad::Var mask = ad::constant(mask_t);

    EXPECT_EQ(grad_check([&] { return losses::mse(target, recon); }, {recon}, 27, rng, 1e-4).failures, 0);
    EXPECT_EQ(grad_check([&] { return losses::l1(target, recon); }, {recon}, 27, rng, 1e-4).failures, 0);
    EXPECT_EQ(grad_check([&] { return losses::masked_mse(target, recon, mask); }, {recon}, 27, rng, 1e-4).failures, 0);
    EXPECT_EQ(grad_check([&] { return losses::masked_l1(target, recon, mask); }, {recon}, 27, rng, 1e-4).failures, 0);

    ad::Var d_fake = ad::leaf(random_tensor(Shape{5, 5, 5}, rng, 0.1, 0.9));
    ad::Var d_real = ad::leaf(random_tensor(Shape{5, 5, 5}, rng, 0.1, 0.9));
    EXPECT_EQ(grad_check([&] { return losses::adv_g(d_fake); }, {d_fake}, 25, rng, 1e-4).failures, 0);
    EXPECT_EQ(grad_check([&] { return losses::adv_d(d_real, d_fake); }, {d_real, d_fake}, 30, rng, 1e-4).failures, 0);
}

TEST(Losses, MaskLocalityGradientExactlyZeroOutside) {
    Rng rng(55);
    ad::Var target = ad::constant(random_tensor(Shape{3, 3, 3}, rng, 0, 1));
    ad::Var recon = ad::leaf(random_tensor(Shape{3, 3, 3}, rng, 0, 1));
    Tensor mask_t = threshold_segment(random_volume(3, 3, 3, rng), 0.5).data;
    ad::Var mask = ad::constant(mask_t);
    ad::Var inside = ad::add(losses::masked_mse(target, recon, mask),
                             losses::masked_l1(target, recon, mask));
    ad::backward(inside);
    for (int64_t i = 0; i < mask_t.size(); ++i)
        if (mask_t[i] == 0.0) EXPECT_EQ(recon->grad[i], 0.0) << "voxel " << i;
}

TEST(Losses, ReportLineRoundTrip) {
    losses::LossReport r;
    r.recon_mse = 0.123456789;
    r.recon_l1 = 0.2;
    r.inside_mse = 0.01;
    r.inside_l1 = 0.02;
    r.adv_g = 1.5;
    r.adv_d = 1.4;
    r.total_g = 0.36845679;
    r.total_d = 0.014;
    std::string line = r.to_line();
    losses::LossReport p = losses::LossReport::parse_line(line);
    // the log format fixes 6 decimals
    EXPECT_NEAR(p.recon_mse, r.recon_mse, 1e-6);
    EXPECT_NEAR(p.total_g, r.total_g, 1e-6);
    EXPECT_EQ(losses::LossReport::header(),
              "recon_mse recon_l1 inside_mse inside_l1 adv_g adv_d total_g total_d");
}
