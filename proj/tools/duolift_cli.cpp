// duolift command-line tool: data generation, training, evaluation,
// ablation matrices, and report merging.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime failure.

#include <CLI11.hpp>

#include "duolift/duolift.hpp"

namespace dl = duolift;

int main(int argc, char** argv) {
    CLI::App app{"duolift: 2D X-ray to 3D volume reconstruction workbench"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic phantom corpus");
    int count = 10, dims = 32, val_count = 2;
    uint64_t seed = 1;
    std::string out_dir;
    gen->add_option("--count", count, "number of samples")->capture_default_str();
    gen->add_option("--dims", dims, "cube edge of volumes")->capture_default_str();
    gen->add_option("--seed", seed, "corpus seed")->capture_default_str();
    gen->add_option("--val-count", val_count, "samples assigned to the validation split")
        ->capture_default_str();
    gen->add_option("--out", out_dir, "output directory")->required();

    // shared train/ablate config options
    auto add_config_opts = [](CLI::App* cmd, std::string& config_path, dl::config::KvMap& kv) {
        cmd->add_option("--config", config_path, "key=value config file");
        cmd->add_option_function<std::vector<std::string>>(
            "--set", [&kv](const std::vector<std::string>& pairs) {
                for (const auto& p : pairs) {
                    size_t eq = p.find('=');
                    if (eq == std::string::npos) throw CLI::ValidationError("--set expects key=value");
                    kv[p.substr(0, eq)] = p.substr(eq + 1);
                }
            },
            "override config keys (key=value, repeatable)");
        cmd->add_option_function<std::string>(
            "--mode", [&kv](const std::string& v) { kv["mode"] = v; }, "CNN or GAN");
        cmd->add_option_function<std::string>(
            "--view", [&kv](const std::string& v) { kv["view"] = v; }, "single or double");
        cmd->add_option_function<std::string>(
            "--corpus", [&kv](const std::string& v) { kv["corpus"] = v; }, "corpus directory");
        cmd->add_option_function<std::string>(
            "--out", [&kv](const std::string& v) { kv["out"] = v; }, "run directory");
        cmd->add_option_function<std::string>(
            "--epochs", [&kv](const std::string& v) { kv["epochs"] = v; }, "training epochs");
        cmd->add_option_function<std::string>(
            "--lr-g", [&kv](const std::string& v) { kv["lr_g"] = v; }, "generator learning rate");
        cmd->add_option_function<std::string>(
            "--lr-d", [&kv](const std::string& v) { kv["lr_d"] = v; }, "discriminator learning rate");
        cmd->add_option_function<std::string>(
            "--seed", [&kv](const std::string& v) { kv["seed"] = v; }, "run seed");
        cmd->add_option_function<std::string>(
            "--dims", [&kv](const std::string& v) { kv["dims"] = v; }, "volume cube edge");
        cmd->add_option_function<std::string>(
            "--multiplier", [&kv](const std::string& v) { kv["multiplier"] = v; },
            "channel multiplier m (1/8..1)");
    };

    // train
    auto* tr = app.add_subcommand("train", "train a model on a corpus");
    std::string train_config;
    dl::config::KvMap train_kv;
    bool resume = false;
    add_config_opts(tr, train_config, train_kv);
    tr->add_flag("--resume", resume, "resume from the run's latest checkpoint");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint against a corpus");
    std::string ckpt, eval_corpus, eval_out, split = "val";
    ev->add_option("--checkpoint", ckpt, "checkpoint directory")->required();
    ev->add_option("--corpus", eval_corpus, "corpus directory")->required();
    ev->add_option("--out", eval_out, "output directory")->required();
    ev->add_option("--split", split, "val, train, or all")->capture_default_str();

    // ablate
    auto* ab = app.add_subcommand("ablate", "run an ablation matrix");
    std::string ab_config, matrix = "table4", ab_out;
    dl::config::KvMap ab_kv;
    add_config_opts(ab, ab_config, ab_kv);
    ab->add_option("--matrix", matrix, "matrix file, or builtin 'table4' / 'table5'")
        ->capture_default_str();
    ab->add_option("--report-out", ab_out, "ablation output directory")->required();

    // report
    auto* rp = app.add_subcommand("report", "merge metric tables across runs");
    std::vector<std::string> run_dirs;
    std::string report_out;
    rp->add_option("runs", run_dirs, "run directories")->required();
    rp->add_option("--out", report_out, "output path stem (.txt/.json appended)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return dl::cli::gen_data(count, dims, seed, out_dir, val_count);
        if (tr->parsed()) return dl::cli::train(train_config, train_kv, resume);
        if (ev->parsed()) return dl::cli::eval(ckpt, eval_corpus, eval_out, split);
        if (ab->parsed()) return dl::cli::ablate(ab_config, ab_kv, matrix, ab_out);
        if (rp->parsed()) return dl::cli::report_cmd(run_dirs, report_out);
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
