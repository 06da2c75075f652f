// Subcommand implementations backing the command-line tool. Each command
// writes a manifest capturing its full effective configuration and seed;
// run directories are guarded by a lockfile.
#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "duolift/report.hpp"
#include "duolift/trainer.hpp"

namespace duolift::cli {

/// Owns a run directory for the lifetime of one invocation.
class DirLock {
public:
    explicit DirLock(const std::string& dir) : path_((fs::path(dir) / ".lock").string()) {
        fs::create_directories(dir);
        DUOLIFT_REQUIRE(!fs::exists(path_),
                        "directory " << dir << " is locked by another invocation (remove " << path_
                        << " if that run is dead)");
        std::ofstream os(path_);
        os << "locked\n";
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    std::string path_;
};

inline void write_manifest(const std::string& out_dir, const std::string& command,
                           const nlohmann::json& effective,
                           const std::vector<std::string>& input_files = {}) {
    nlohmann::json j;
    j["command"] = command;
    j["effective"] = effective;
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& f : input_files) {
        try {
            std::ostringstream oss;
            oss << std::hex << io::fnv1a_file(f);
            hashes[f] = oss.str();
        } catch (const std::exception&) {
            hashes[f] = "(unreadable)";
        }
    }
    j["input_hashes"] = hashes;
    io::write_text_file((fs::path(out_dir) / "run_manifest.json").string(), j.dump(2) + "\n");
}

// ---- gen-data ----

inline int gen_data(int count, int dims, uint64_t seed, const std::string& out_dir, int val_count) {
    CorpusManifest man = write_corpus(count, {dims, dims, dims}, seed, out_dir, val_count);
    write_manifest(out_dir, "gen-data",
                   {{"count", count}, {"dims", dims}, {"seed", seed}, {"val_count", val_count}});
    std::cout << "wrote " << man.samples.size() << " samples (" << man.count("train") << " train, "
              << man.count("val") << " val) at " << dims << "^3 under " << out_dir << "\n";
    return 0;
}

// ---- train ----

inline int train(const std::string& config_path, const config::KvMap& overrides, bool resume) {
    RunConfig cfg = config::load(config_path, overrides);
    cfg.validate();
    DUOLIFT_CHECK(!cfg.corpus_dir.empty(), "train: corpus directory required (corpus=...)");
    DUOLIFT_CHECK(!cfg.out_dir.empty(), "train: output directory required (out=...)");

    Corpus corpus = load_corpus(cfg.corpus_dir);
    DirLock lock(cfg.out_dir);
    Trainer trainer(cfg);
    if (resume) trainer.resume_from((fs::path(cfg.out_dir) / "checkpoints" / "latest").string());

    std::vector<std::string> inputs = {corpus_manifest_path(cfg.corpus_dir)};
    if (!config_path.empty()) inputs.push_back(config_path);
    write_manifest(cfg.out_dir, "train",
                   {{"config", config::to_kv_text(cfg)}, {"seed", cfg.seed}, {"resume", resume}},
                   inputs);

    TrainResult res = trainer.train(corpus, cfg.out_dir);
    std::cout << "best epoch " << res.best.epoch << " val_psnr3d "
              << std::fixed << std::setprecision(4) << res.best.val_psnr3d << "\n"
              << "best val metrics [" << metrics::MetricReport::field_order() << "]: "
              << res.best.val_mean.to_line() << "\n"
              << "checkpoints under " << res.best_dir << "\n";
    return 0;
}

// ---- eval ----

/// Evaluates a reconstruction function over samples; shared by the CLI (model
/// from checkpoint) and by tests (stub reconstructors).
template <typename ReconFn>
inline std::vector<metrics::MetricReport> evaluate_samples(const std::vector<Sample>& samples,
                                                           ReconFn&& recon_fn,
                                                           const std::string& out_dir,
                                                           bool plots = true) {
    std::vector<metrics::MetricReport> reports;
    std::ofstream records((fs::path(out_dir) / "records.jsonl").string());
    DUOLIFT_REQUIRE(records.good(), "eval: cannot write records in " << out_dir);
    for (size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        Volume recon = recon_fn(s);
        metrics::MetricReport r = metrics::evaluate(s.target, recon, s.lung, s.vessel);
        reports.push_back(r);
        nlohmann::json rec = {{"sample", i},
                              {"seed", s.seed},
                              {"split", s.split},
                              {"fields", metrics::MetricReport::field_order()},
                              {"metrics", r.to_line()}};
        records << rec.dump() << "\n";
        if (plots)
            report::write_slice_plots((fs::path(out_dir) / "plots").string(),
                                      "sample_" + std::to_string(i), s.target, recon);
    }
    return reports;
}

inline int eval(const std::string& checkpoint_dir, const std::string& corpus_dir,
                const std::string& out_dir, const std::string& split) {
    LoadedModel model = load_model(checkpoint_dir);
    Corpus corpus = load_corpus(corpus_dir);
    DUOLIFT_CHECK((corpus.dims == std::array<int, 3>{model.cfg.dims, model.cfg.dims, model.cfg.dims}),
                  "eval: corpus dims (" << corpus.dims[0] << "," << corpus.dims[1] << ","
                  << corpus.dims[2] << ") do not match checkpoint geometry ("
                  << model.cfg.dims << "," << model.cfg.dims << "," << model.cfg.dims << ")");
    std::vector<Sample> samples;
    if (split == "train" || split == "all")
        for (auto& s : corpus.train) samples.push_back(std::move(s));
    if (split == "val" || split == "all")
        for (auto& s : corpus.val) samples.push_back(std::move(s));
    DUOLIFT_CHECK(!samples.empty(), "eval: no samples in split '" << split << "'");

    fs::create_directories(out_dir);
    const Generator& gen = *model.gen;
    const bool dv = model.cfg.view == ViewMode::double_view;
    auto reports = evaluate_samples(
        samples,
        [&](const Sample& s) { return gen.generator_forward(s.frontal, dv ? &s.lateral : nullptr, false); },
        out_dir);

    report::RenderedTable table = report::metric_table(reports, "evaluation (" + split + ")");
    io::write_text_file((fs::path(out_dir) / "table.txt").string(), table.text);
    io::write_text_file((fs::path(out_dir) / "table.json").string(), table.values.dump(2) + "\n");
    write_manifest(out_dir, "eval",
                   {{"checkpoint", checkpoint_dir}, {"corpus", corpus_dir}, {"split", split}},
                   {corpus_manifest_path(corpus_dir),
                    (fs::path(checkpoint_dir) / "params_g.bin").string()});
    std::cout << table.text;
    return 0;
}

// ---- ablate ----

inline int ablate(const std::string& config_path, const config::KvMap& overrides,
                  const std::string& matrix_arg, const std::string& out_dir) {
    RunConfig base = config::load(config_path, overrides);
    DUOLIFT_CHECK(!base.corpus_dir.empty(), "ablate: corpus directory required (corpus=...)");
    std::vector<AblationRow> rows;
    if (matrix_arg == "table4")
        rows = table4_matrix();
    else if (matrix_arg == "table5")
        rows = table5_matrix();
    else
        rows = report::parse_matrix_text(io::read_text_file(matrix_arg));

    Corpus corpus = load_corpus(base.corpus_dir);
    DirLock lock(out_dir);
    std::vector<std::string> inputs = {corpus_manifest_path(base.corpus_dir)};
    if (matrix_arg != "table4" && matrix_arg != "table5") inputs.push_back(matrix_arg);
    write_manifest(out_dir, "ablate",
                   {{"config", config::to_kv_text(base)},
                    {"matrix", report::matrix_to_text(rows)},
                    {"seed", base.seed}},
                   inputs);

    std::vector<AblationResult> results = run_ablation(base, rows, corpus, out_dir);
    report::RenderedTable table = report::ablation_table(results);
    io::write_text_file((fs::path(out_dir) / "ablation.txt").string(), table.text);
    io::write_text_file((fs::path(out_dir) / "ablation.json").string(), table.values.dump(2) + "\n");
    std::cout << table.text;
    return 0;
}

// ---- report ----

inline int report_cmd(const std::vector<std::string>& run_dirs, const std::string& out_path) {
    DUOLIFT_CHECK(!run_dirs.empty(), "report: need at least one run directory");
    report::RenderedTable merged = report::merge_runs(run_dirs);
    if (!out_path.empty()) {
        io::write_text_file(out_path + ".txt", merged.text);
        io::write_text_file(out_path + ".json", merged.values.dump(2) + "\n");
    }
    std::cout << merged.text;
    return 0;
}

}  // namespace duolift::cli
