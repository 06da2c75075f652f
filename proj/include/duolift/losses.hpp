// Generator/discriminator objectives: plain and masked similarity losses,
// adversarial terms over the 5x5x5 probability grid, weighted totals.
#pragma once

#include <iomanip>
#include <sstream>
#include <string>

#include "duolift/autodiff.hpp"
#include "duolift/volume.hpp"

namespace duolift::losses {

/// Probabilities are clamped to [eps, 1-eps] before the (natural) logarithm.
constexpr real kProbEps = 1e-7;

struct LossWeights {
    real alpha = 1.0;
    real beta = 0.01;
};

enum class TrainMode { CNN, GAN };

inline const char* train_mode_name(TrainMode m) { return m == TrainMode::CNN ? "CNN" : "GAN"; }

struct LossReport {
    real recon_mse = 0, recon_l1 = 0;
    real inside_mse = 0, inside_l1 = 0;
    real adv_g = 0, adv_d = 0;
    real total_g = 0, total_d = 0;

    // Field order of the metrics-log line.
    static std::string header() {
        return "recon_mse recon_l1 inside_mse inside_l1 adv_g adv_d total_g total_d";
    }
    std::string to_line() const {
        std::ostringstream oss;
        oss << std::fixed << std::setprecision(6) << recon_mse << " " << recon_l1 << " "
            << inside_mse << " " << inside_l1 << " " << adv_g << " " << adv_d << " "
            << total_g << " " << total_d;
        return oss.str();
    }
    static LossReport parse_line(const std::string& line) {
        LossReport r;
        std::istringstream iss(line);
        iss >> r.recon_mse >> r.recon_l1 >> r.inside_mse >> r.inside_l1 >> r.adv_g >> r.adv_d >>
            r.total_g >> r.total_d;
        DUOLIFT_REQUIRE(!iss.fail(), "LossReport: malformed line '" << line << "'");
        return r;
    }

    LossReport& operator+=(const LossReport& o) {
        recon_mse += o.recon_mse;
        recon_l1 += o.recon_l1;
        inside_mse += o.inside_mse;
        inside_l1 += o.inside_l1;
        adv_g += o.adv_g;
        adv_d += o.adv_d;
        total_g += o.total_g;
        total_d += o.total_d;
        return *this;
    }
    LossReport& operator*=(real k) {
        recon_mse *= k;
        recon_l1 *= k;
        inside_mse *= k;
        inside_l1 *= k;
        adv_g *= k;
        adv_d *= k;
        total_g *= k;
        total_d *= k;
        return *this;
    }
};

// ---- autodiff builders (training path) ----

inline ad::Var mse(const ad::Var& target, const ad::Var& recon) {
    return ad::mean(ad::square(ad::sub(target, recon)));
}

inline ad::Var l1(const ad::Var& target, const ad::Var& recon) {
    return ad::mean(ad::absval(ad::sub(target, recon)));
}

/// Masked variants: both volumes are zeroed outside the mask; the average
/// still runs over the full domain, exactly as the equations are written.
inline ad::Var masked_mse(const ad::Var& target, const ad::Var& recon, const ad::Var& mask) {
    return mse(ad::mul(target, mask), ad::mul(recon, mask));
}

inline ad::Var masked_l1(const ad::Var& target, const ad::Var& recon, const ad::Var& mask) {
    return l1(ad::mul(target, mask), ad::mul(recon, mask));
}

/// Generator adversarial term: mean over grid cells of -ln D(G(x)).
inline ad::Var adv_g(const ad::Var& d_fake) {
    return ad::scale(ad::mean(ad::log_of(ad::clamp(d_fake, kProbEps, 1.0 - kProbEps))), -1.0);
}

/// Discriminator term: mean(-ln D(y)) + mean(-ln(1 - D(G(x)))).
inline ad::Var adv_d(const ad::Var& d_real, const ad::Var& d_fake) {
    ad::Var ones_r = ad::constant(Tensor(d_fake->shape(), 1.0));
    ad::Var term_real = ad::scale(ad::mean(ad::log_of(ad::clamp(d_real, kProbEps, 1.0 - kProbEps))), -1.0);
    ad::Var one_minus = ad::sub(ones_r, d_fake);
    ad::Var term_fake = ad::scale(ad::mean(ad::log_of(ad::clamp(one_minus, kProbEps, 1.0 - kProbEps))), -1.0);
    return ad::add(term_real, term_fake);
}

// ---- plain (non-autodiff) contract operations ----

struct SimilarityPair {
    real mse = 0, l1 = 0;
};

inline SimilarityPair recon_losses(const Volume& target, const Volume& recon) {
    DUOLIFT_CHECK(target.data.same_shape(recon.data), "recon_losses: dim mismatch "
                  << shape_str(target.data.shape()) << " vs " << shape_str(recon.data.shape()));
    SimilarityPair out;
    out.mse = mse(ad::constant(target.data), ad::constant(recon.data))->value[0];
    out.l1 = l1(ad::constant(target.data), ad::constant(recon.data))->value[0];
    return out;
}

inline SimilarityPair masked_losses(const Volume& target, const Volume& recon, const MaskVolume& mask) {
    DUOLIFT_CHECK(target.data.same_shape(recon.data) && target.data.same_shape(mask.data),
                  "masked_losses: dim mismatch");
    ad::Var m = ad::constant(mask.data);
    SimilarityPair out;
    out.mse = masked_mse(ad::constant(target.data), ad::constant(recon.data), m)->value[0];
    out.l1 = masked_l1(ad::constant(target.data), ad::constant(recon.data), m)->value[0];
    return out;
}

inline real adv_generator_loss(const Tensor& d_fake) {
    DUOLIFT_CHECK(d_fake.all_finite(), "adv_generator_loss: non-finite probability grid");
    return adv_g(ad::constant(d_fake))->value[0];
}

inline real adv_discriminator_loss(const Tensor& d_real, const Tensor& d_fake) {
    DUOLIFT_CHECK(d_real.same_shape(d_fake), "adv_discriminator_loss: grid shape mismatch "
                  << shape_str(d_real.shape()) << " vs " << shape_str(d_fake.shape()));
    DUOLIFT_CHECK(d_real.all_finite() && d_fake.all_finite(),
                  "adv_discriminator_loss: non-finite probability grid");
    return adv_d(ad::constant(d_real), ad::constant(d_fake))->value[0];
}

/// Composes Eqs. 7-8. CNN mode zeroes the adversarial terms; use_masked off
/// zeroes the inside terms (ablation SL). The DI ablation changes what the
/// discriminator sees, not this arithmetic.
inline LossReport total_losses(real recon_mse, real recon_l1, real inside_mse, real inside_l1,
                               real adv_g_val, real adv_d_val, const LossWeights& w, TrainMode mode,
                               bool use_masked) {
    LossReport r;
    r.recon_mse = recon_mse;
    r.recon_l1 = recon_l1;
    r.inside_mse = use_masked ? inside_mse : 0.0;
    r.inside_l1 = use_masked ? inside_l1 : 0.0;
    r.adv_g = mode == TrainMode::GAN ? adv_g_val : 0.0;
    r.adv_d = mode == TrainMode::GAN ? adv_d_val : 0.0;
    r.total_g = w.alpha * (r.recon_mse + r.recon_l1 + r.inside_mse + r.inside_l1) + w.beta * r.adv_g;
    r.total_d = w.beta * r.adv_d;
    return r;
}

}  // namespace duolift::losses
