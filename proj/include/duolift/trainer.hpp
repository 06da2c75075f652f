// Training orchestration: per-step objectives, gradient accumulation,
// learning-rate schedule, validation-based checkpoint selection, resume,
// and the ablation harness.
#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "duolift/config.hpp"
#include "duolift/corpus.hpp"
#include "duolift/discriminator.hpp"
#include "duolift/generator.hpp"
#include "duolift/losses.hpp"
#include "duolift/metrics.hpp"
#include "duolift/optimizer.hpp"

namespace duolift {

struct EpochStats {
    int epoch = 0;
    losses::LossReport mean_loss;
    metrics::MetricReport val_mean;
    real val_psnr3d = 0;
    real d_real_mean = 0, d_fake_mean = 0;  // GAN mode only
    real wall_seconds = 0;
};

struct CheckpointInfo {
    int epoch = -1;
    real val_psnr3d = -1e300;
    metrics::MetricReport val_mean;
};

struct TrainResult {
    CheckpointInfo best;
    std::vector<EpochStats> stats;
    std::string best_dir, latest_dir;
};

/// Piecewise-constant schedule: base lr until the drop epoch, one-tenth (the
/// configured factor) from then on.
inline real lr_base_at(int epoch, real base, const RunConfig& cfg) {
    DUOLIFT_CHECK(epoch >= 0, "lr_at: epoch must be >= 0, got " << epoch);
    return epoch < cfg.schedule_drop_epoch ? base : base * cfg.drop_factor;
}

inline real lr_at(int epoch, const RunConfig& cfg) { return lr_base_at(epoch, cfg.lr_g, cfg); }

class Trainer {
public:
    explicit Trainer(const RunConfig& cfg)
        : cfg_(validated(cfg)), gen_(cfg_.generator_config(), cfg_.seed),
          data_rng_(Rng(cfg_.seed).fork(401)), dropout_rng_(Rng(cfg_.seed).fork(402)) {
        if (gan()) disc_ = std::make_unique<Discriminator>(cfg_.discriminator_config(), cfg_.seed);
        // beta1 = 0.5 in GAN mode for stability, 0.9 otherwise.
        const real beta1 = gan() ? 0.5 : 0.9;
        opt_g_ = nn::Adam(gen_.params(), beta1);
        if (gan()) opt_d_ = nn::Adam(disc_->params(), beta1);
    }

    const RunConfig& config() const { return cfg_; }
    bool gan() const { return cfg_.mode == losses::TrainMode::GAN; }
    Generator& generator() { return gen_; }
    const Generator& generator() const { return gen_; }
    Discriminator* discriminator() { return disc_.get(); }
    int current_epoch() const { return current_epoch_; }
    void set_epoch(int e) { current_epoch_ = e; }

    /// Builds the training-mode forward graph for one sample.
    ad::Var build_fake(const Sample& s) {
        ad::Var vf = gen_.projection_var(s.frontal);
        if (cfg_.view == ViewMode::double_view) {
            ad::Var vs = gen_.projection_var(s.lateral);
            return gen_.forward(vf, &vs, true, &dropout_rng_);
        }
        return gen_.forward(vf, nullptr, true, &dropout_rng_);
    }

    /// One generator micro-batch: forward, total G loss per mode/flags,
    /// gradient accumulation, parameter update every
    /// accumulation_steps x batch_size micro-batches using the gradient mean.
    losses::LossReport g_step(const Sample& s, const ad::Var* prebuilt_fake = nullptr) {
        ad::Var fake = prebuilt_fake ? *prebuilt_fake : build_fake(s);
        const int n = cfg_.dims;
        ad::Var target = ad::constant(s.target.data.reshaped(Shape{1, n, n, n}));

        ad::Var recon_mse = losses::mse(target, fake);
        ad::Var recon_l1 = losses::l1(target, fake);
        ad::Var sim = ad::add(recon_mse, recon_l1);
        real inside_mse_v = 0, inside_l1_v = 0;
        if (cfg_.SL) {
            ad::Var mask = ad::constant(s.lung.data.reshaped(Shape{1, n, n, n}));
            ad::Var inside_mse = losses::masked_mse(target, fake, mask);
            ad::Var inside_l1 = losses::masked_l1(target, fake, mask);
            inside_mse_v = inside_mse->value[0];
            inside_l1_v = inside_l1->value[0];
            sim = ad::add(sim, ad::add(inside_mse, inside_l1));
        }
        ad::Var total = ad::scale(sim, weights_.alpha);
        real adv_g_v = 0;
        if (gan()) {
            disc_->set_requires_grad(false);  // G's update must not touch D
            ad::Var d_fake = disc_->forward(fake);
            ad::Var adv = losses::adv_g(d_fake);
            adv_g_v = adv->value[0];
            total = ad::add(total, ad::scale(adv, weights_.beta));
        }

        losses::LossReport report = losses::total_losses(
            recon_mse->value[0], recon_l1->value[0], inside_mse_v, inside_l1_v, adv_g_v, 0.0,
            weights_, cfg_.mode, cfg_.SL);

        if (!std::isfinite(total->value[0])) {
            record_incident("g_step", total->value[0]);
            if (gan()) disc_->set_requires_grad(true);
            return report;
        }
        ad::backward(total);
        if (gan()) disc_->set_requires_grad(true);

        if (++accum_g_ >= cfg_.accumulation_steps * cfg_.batch_size) flush_g();
        return report;
    }

    /// One discriminator micro-batch (GAN only). `fake` must carry no
    /// gradient back into G; it is consumed as a constant. Under the DI
    /// ablation both volumes are masked with the sample's lung mask before
    /// entering D.
    real d_step(const Sample& s, const Volume& fake) {
        DUOLIFT_CHECK(gan(), "d_step: discriminator training is disabled in CNN mode");
        const int n = cfg_.dims;
        Tensor real_t = s.target.data;
        Tensor fake_t = fake.data;
        if (cfg_.DI) {
            for (int64_t i = 0; i < real_t.size(); ++i) {
                real_t[i] *= s.lung.data[i];
                fake_t[i] *= s.lung.data[i];
            }
        }
        ad::Var d_real = disc_->forward(ad::constant(real_t.reshaped(Shape{1, n, n, n})));
        ad::Var d_fake = disc_->forward(ad::constant(fake_t.reshaped(Shape{1, n, n, n})));
        last_d_real_mean_ = d_real->value.mean();
        last_d_fake_mean_ = d_fake->value.mean();
        ad::Var adv = losses::adv_d(d_real, d_fake);
        const real adv_v = adv->value[0];
        if (!std::isfinite(adv_v)) {
            record_incident("d_step", adv_v);
            return adv_v;
        }
        ad::backward(ad::scale(adv, weights_.beta));  // L_D = beta * L_ad
        if (++accum_d_ >= cfg_.accumulation_steps * cfg_.batch_size) flush_d();
        return adv_v;
    }

    /// Reconstructs a sample in eval mode (no dropout, deterministic).
    Volume infer(const Sample& s) const {
        return gen_.generator_forward(s.frontal,
                                      cfg_.view == ViewMode::double_view ? &s.lateral : nullptr,
                                      false);
    }

    struct Validation {
        std::vector<metrics::MetricReport> reports;
        metrics::MetricReport mean;
        real psnr3d_mean = 0;
    };

    Validation validate(const std::vector<Sample>& samples) const {
        Validation v;
        for (const Sample& s : samples) {
            Volume recon = infer(s);
            v.reports.push_back(metrics::evaluate(s.target, recon, s.lung, s.vessel));
        }
        DUOLIFT_CHECK(!v.reports.empty(), "validate: no samples");
        metrics::MetricAggregate agg = metrics::aggregate(v.reports);
        v.mean.psnr2d = agg.psnr2d.mean;
        v.mean.psnr3d = agg.psnr3d.mean;
        v.mean.ssim2d = agg.ssim2d.mean;
        v.mean.ssim3d = agg.ssim3d.mean;
        if (agg.lpips.count > 0) v.mean.lpips = agg.lpips.mean;
        if (agg.dice_lung.count > 0) v.mean.dice_lung = agg.dice_lung.mean;
        if (agg.dice_vessel.count > 0) v.mean.dice_vessel = agg.dice_vessel.mean;
        v.psnr3d_mean = agg.psnr3d.mean;
        return v;
    }

    /// Full run: epochs with the schedule, one D step then one G step per
    /// batch in GAN mode, per-epoch validation (PSNR(3D) selects the best
    /// checkpoint), append-only metrics log, best+latest checkpoints.
    TrainResult train(const Corpus& corpus, const std::string& run_dir) {
        DUOLIFT_CHECK(!corpus.train.empty(), "train: empty training corpus");
        DUOLIFT_CHECK(!corpus.val.empty(), "train: empty validation split");
        DUOLIFT_CHECK((corpus.dims == std::array<int, 3>{cfg_.dims, cfg_.dims, cfg_.dims}),
                      "train: corpus dims " << corpus.dims[0] << " do not match configured " << cfg_.dims);

        fs::create_directories(fs::path(run_dir) / "checkpoints");
        io::write_text_file((fs::path(run_dir) / "config.txt").string(), config::to_kv_text(cfg_));
        std::ofstream log((fs::path(run_dir) / "metrics.log").string(), std::ios::app);
        DUOLIFT_REQUIRE(log.good(), "train: cannot open metrics log in " << run_dir);

        TrainResult result;
        result.best = best_;
        result.best_dir = (fs::path(run_dir) / "checkpoints" / "best").string();
        result.latest_dir = (fs::path(run_dir) / "checkpoints" / "latest").string();

        std::vector<int> order(corpus.train.size());
        std::iota(order.begin(), order.end(), 0);

        for (int epoch = start_epoch_; epoch < cfg_.epochs; ++epoch) {
            auto t0 = std::chrono::steady_clock::now();
            current_epoch_ = epoch;
            // Fisher-Yates with the run's data stream.
            for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
                std::swap(order[i], order[data_rng_.uniform_int(0, i)]);

            losses::LossReport loss_sum;
            real d_real_sum = 0, d_fake_sum = 0;
            int d_counted = 0;
            for (int idx : order) {
                const Sample& s = corpus.train[static_cast<size_t>(idx)];
                if (gan()) {
                    ad::Var fake = build_fake(s);
                    Volume fake_vol(cfg_.dims, cfg_.dims, cfg_.dims);
                    fake_vol.data = fake->value.reshaped(Shape{cfg_.dims, cfg_.dims, cfg_.dims});
                    real adv_d_v = d_step(s, fake_vol);
                    losses::LossReport r = g_step(s, &fake);
                    r.adv_d = adv_d_v;
                    r.total_d = weights_.beta * adv_d_v;
                    loss_sum += r;
                    d_real_sum += last_d_real_mean_;
                    d_fake_sum += last_d_fake_mean_;
                    ++d_counted;
                } else {
                    loss_sum += g_step(s);
                }
            }
            // Flush a partial accumulation window so gradients never leak
            // across epochs.
            if (accum_g_ > 0) flush_g();
            if (gan() && accum_d_ > 0) flush_d();

            EpochStats st;
            st.epoch = epoch;
            st.mean_loss = loss_sum;
            st.mean_loss *= 1.0 / static_cast<real>(corpus.train.size());
            if (d_counted > 0) {
                st.d_real_mean = d_real_sum / d_counted;
                st.d_fake_mean = d_fake_sum / d_counted;
            }
            Validation v = validate(corpus.val);
            st.val_mean = v.mean;
            st.val_psnr3d = v.psnr3d_mean;
            st.wall_seconds = std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
            DUOLIFT_REQUIRE(std::isfinite(st.mean_loss.total_g),
                            "train: non-finite epoch loss at epoch " << epoch);
            result.stats.push_back(st);

            log << "epoch " << epoch << " loss " << st.mean_loss.to_line() << " val "
                << st.val_mean.to_line() << " d_real " << st.d_real_mean << " d_fake "
                << st.d_fake_mean << " wall " << st.wall_seconds << "\n";
            log.flush();

            save_checkpoint(result.latest_dir, epoch, v);
            if (v.psnr3d_mean > best_.val_psnr3d) {
                best_.epoch = epoch;
                best_.val_psnr3d = v.psnr3d_mean;
                best_.val_mean = v.mean;
                save_checkpoint(result.best_dir, epoch, v);
            }
        }
        result.best = best_;
        write_final_report(run_dir, result);
        return result;
    }

    /// Restores parameters, optimizer state, RNG streams, and the best-so-far
    /// tracker from a checkpoint directory; training continues at the next
    /// epoch.
    void resume_from(const std::string& checkpoint_dir) {
        nlohmann::json j = nlohmann::json::parse(
            io::read_text_file((fs::path(checkpoint_dir) / "manifest.json").string()));
        RunConfig stored = config::from_kv(config::parse_kv_text(j.at("config").get<std::string>()));
        DUOLIFT_CHECK(stored.mode == cfg_.mode && stored.view == cfg_.view && stored.L == cfg_.L &&
                      stored.DB == cfg_.DB && stored.dims == cfg_.dims &&
                      stored.multiplier == cfg_.multiplier,
                      "resume: checkpoint architecture does not match the configured run");
        nn::load_params((fs::path(checkpoint_dir) / "params_g.bin").string(), gen_.params());
        opt_g_.load((fs::path(checkpoint_dir) / "optim_g.bin").string(), gen_.params());
        if (gan()) {
            nn::load_params((fs::path(checkpoint_dir) / "params_d.bin").string(), disc_->params());
            opt_d_.load((fs::path(checkpoint_dir) / "optim_d.bin").string(), disc_->params());
        }
        data_rng_.load_state(j.at("data_rng").get<std::string>());
        dropout_rng_.load_state(j.at("dropout_rng").get<std::string>());
        start_epoch_ = j.at("epoch").get<int>() + 1;
        current_epoch_ = start_epoch_;
        best_.epoch = j.at("best_epoch").get<int>();
        best_.val_psnr3d = j.at("best_val_psnr3d").get<real>();
        best_.val_mean = metrics::MetricReport::parse_line(j.at("best_val_metrics").get<std::string>());
    }

    void save_checkpoint(const std::string& dir, int epoch, const Validation& v) const {
        fs::create_directories(dir);
        nn::save_params((fs::path(dir) / "params_g.bin").string(), gen_.params());
        opt_g_.save((fs::path(dir) / "optim_g.bin").string(), gen_.params());
        if (gan()) {
            nn::save_params((fs::path(dir) / "params_d.bin").string(), disc_->params());
            opt_d_.save((fs::path(dir) / "optim_d.bin").string(), disc_->params());
        }
        nlohmann::json j;
        j["epoch"] = epoch;
        j["val_psnr3d"] = v.psnr3d_mean;
        j["val_metrics"] = v.mean.to_line();
        j["best_epoch"] = best_.epoch < 0 ? epoch : best_.epoch;
        j["best_val_psnr3d"] = best_.epoch < 0 ? v.psnr3d_mean : best_.val_psnr3d;
        j["best_val_metrics"] = (best_.epoch < 0 ? v.mean : best_.val_mean).to_line();
        j["config"] = config::to_kv_text(cfg_);
        j["data_rng"] = data_rng_.save_state();
        j["dropout_rng"] = dropout_rng_.save_state();
        j["param_count_g"] = nn::param_count(gen_.params());
        if (gan()) j["param_count_d"] = nn::param_count(disc_->params());
        io::write_text_file((fs::path(dir) / "manifest.json").string(), j.dump(2) + "\n");
    }

    int incidents() const { return nonfinite_count_; }

private:
    static RunConfig validated(RunConfig c) {
        c.validate();
        return c;
    }

    void flush_g() {
        opt_g_.step(gen_.params(), lr_base_at(current_epoch_, cfg_.lr_g, cfg_),
                    1.0 / static_cast<real>(accum_g_));
        nn::zero_grads(gen_.params());
        accum_g_ = 0;
    }
    void flush_d() {
        opt_d_.step(disc_->params(), lr_base_at(current_epoch_, cfg_.lr_d, cfg_),
                    1.0 / static_cast<real>(accum_d_));
        nn::zero_grads(disc_->params());
        accum_d_ = 0;
    }

    void record_incident(const char* where, real value) {
        ++nonfinite_count_;
        std::cerr << "[duolift] non-finite loss in " << where << " (epoch " << current_epoch_
                  << ", value " << value << "), step aborted (" << nonfinite_count_ << "/"
                  << cfg_.max_nonfinite << ")\n";
        DUOLIFT_REQUIRE(nonfinite_count_ <= cfg_.max_nonfinite,
                        "train: halting after " << nonfinite_count_ << " non-finite losses");
    }

    void write_final_report(const std::string& run_dir, const TrainResult& r) const {
        nlohmann::json j;
        j["config"] = config::to_kv_text(cfg_);
        j["best_epoch"] = r.best.epoch;
        j["best_val_psnr3d"] = r.best.val_psnr3d;
        j["best_val_metrics"] = r.best.val_mean.to_line();
        j["param_count_g"] = nn::param_count(gen_.params());
        if (gan()) j["param_count_d"] = nn::param_count(disc_->params());
        j["epochs_run"] = r.stats.size();
        nlohmann::json epochs = nlohmann::json::array();
        for (const auto& st : r.stats) {
            epochs.push_back({{"epoch", st.epoch},
                              {"loss", st.mean_loss.to_line()},
                              {"val", st.val_mean.to_line()},
                              {"val_psnr3d", st.val_psnr3d},
                              {"d_real_mean", st.d_real_mean},
                              {"d_fake_mean", st.d_fake_mean},
                              {"wall_seconds", st.wall_seconds}});
        }
        j["epochs"] = epochs;
        io::write_text_file((fs::path(run_dir) / "final_report.json").string(), j.dump(2) + "\n");
    }

    RunConfig cfg_;
    Generator gen_;
    std::unique_ptr<Discriminator> disc_;
    nn::Adam opt_g_, opt_d_;
    losses::LossWeights weights_;
    Rng data_rng_, dropout_rng_;
    int accum_g_ = 0, accum_d_ = 0;
    int current_epoch_ = 0, start_epoch_ = 0;
    int nonfinite_count_ = 0;
    CheckpointInfo best_;
    real last_d_real_mean_ = 0, last_d_fake_mean_ = 0;
};

/// Rebuilds a model (architecture + weights) from a checkpoint directory.
struct LoadedModel {
    RunConfig cfg;
    std::unique_ptr<Generator> gen;
};

inline LoadedModel load_model(const std::string& checkpoint_dir) {
    nlohmann::json j = nlohmann::json::parse(
        io::read_text_file((fs::path(checkpoint_dir) / "manifest.json").string()));
    LoadedModel m;
    m.cfg = config::from_kv(config::parse_kv_text(j.at("config").get<std::string>()));
    m.gen = std::make_unique<Generator>(m.cfg.generator_config(), m.cfg.seed);
    nn::load_params((fs::path(checkpoint_dir) / "params_g.bin").string(), m.gen->params());
    return m;
}

// ---- ablation harness ----

struct AblationRow {
    std::string name;
    losses::TrainMode mode = losses::TrainMode::CNN;
    bool L = true, DB = true, SL = false, DI = false;
};

struct AblationResult {
    AblationRow row;
    int64_t g_param_count = 0;
    real val_psnr3d = 0;
    metrics::MetricReport val_mean;
    std::string run_dir;
};

/// The lifting-module matrix (Table-4 layout): full model, learned conv lift,
/// and the single-branch variant.
inline std::vector<AblationRow> table4_matrix() {
    return {{"L+DB", losses::TrainMode::CNN, true, true, false, false},
            {"convlift+DB", losses::TrainMode::CNN, false, true, false, false},
            {"L+noDB", losses::TrainMode::CNN, true, false, false, false}};
}

/// The masked-volume usage matrix (Table-5 layout).
inline std::vector<AblationRow> table5_matrix() {
    return {{"ablation1", losses::TrainMode::GAN, true, true, false, false},
            {"ablation2", losses::TrainMode::CNN, true, true, true, false},
            {"ablation3", losses::TrainMode::GAN, true, true, false, true},
            {"duolift-gan", losses::TrainMode::GAN, true, true, true, false}};
}

inline RunConfig ablation_config(const RunConfig& base, const AblationRow& row) {
    RunConfig c = base;
    c.mode = row.mode;
    c.L = row.L;
    c.DB = row.DB;
    c.SL = row.SL;
    c.DI = row.DI;
    if (row.mode == losses::TrainMode::GAN && base.mode != losses::TrainMode::GAN) {
        // Mode switched by the row: adopt the paper's GAN learning rate.
        c.lr_g = 1e-4;
        c.lr_d = 1e-4;
    }
    return c;
}

/// Trains/evaluates every row on the shared corpus and seed. All rows are
/// validated before any training starts; results keep matrix order.
inline std::vector<AblationResult> run_ablation(const RunConfig& base,
                                                const std::vector<AblationRow>& matrix,
                                                const Corpus& corpus, const std::string& out_dir) {
    DUOLIFT_CHECK(!matrix.empty(), "run_ablation: empty matrix");
    for (const auto& row : matrix) {
        DUOLIFT_CHECK(!row.name.empty(), "run_ablation: rows need names");
        ablation_config(base, row).validate();  // rejects invalid combos up front
    }
    std::vector<AblationResult> results;
    for (const auto& row : matrix) {
        RunConfig cfg = ablation_config(base, row);
        std::string run_dir = (fs::path(out_dir) / row.name).string();
        Trainer trainer(cfg);
        TrainResult tr = trainer.train(corpus, run_dir);
        AblationResult res;
        res.row = row;
        res.g_param_count = nn::param_count(trainer.generator().params());
        res.val_psnr3d = tr.best.val_psnr3d;
        res.val_mean = tr.best.val_mean;
        res.run_dir = run_dir;
        results.push_back(res);
    }
    return results;
}

}  // namespace duolift
