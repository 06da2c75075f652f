// RunConfig: the full experiment description, plus the flat key=value config
// file format (CLI flags override file values).
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "duolift/discriminator.hpp"
#include "duolift/generator.hpp"
#include "duolift/losses.hpp"

namespace duolift {

struct RunConfig {
    losses::TrainMode mode = losses::TrainMode::CNN;
    ViewMode view = ViewMode::double_view;
    bool L = true;      // lift by replication (off = learned conv lift)
    bool DB = true;     // duo branch (image-lifting path)
    bool SL = false;    // masked similarity loss (default on for GAN)
    bool DI = false;    // masked volumes as discriminator input
    real lr_g = 5e-4;
    real lr_d = 5e-4;
    int epochs = 30;
    int schedule_drop_epoch = 70;
    real drop_factor = 0.1;
    int accumulation_steps = 4;
    int batch_size = 1;
    uint64_t seed = 1;
    int dims = 32;            // cube edge of volumes
    real multiplier = 0.125;  // channel multiplier m
    real dropout_p = 0.25;
    int max_nonfinite = 3;
    std::string corpus_dir;
    std::string out_dir;

    /// Paper defaults per mode: CNN trains at 5e-4 without the masked loss,
    /// GAN at 1e-4 with it.
    static RunConfig defaults(losses::TrainMode mode) {
        RunConfig c;
        c.mode = mode;
        if (mode == losses::TrainMode::GAN) {
            c.lr_g = 1e-4;
            c.lr_d = 1e-4;
            c.SL = true;
        }
        return c;
    }

    void validate() const {
        DUOLIFT_CHECK(epochs >= 1, "config: epochs must be >= 1");
        DUOLIFT_CHECK(batch_size >= 1, "config: batch_size must be >= 1");
        DUOLIFT_CHECK(accumulation_steps >= 1, "config: accumulation_steps must be >= 1");
        DUOLIFT_CHECK(lr_g > 0, "config: lr_g must be > 0");
        DUOLIFT_CHECK(schedule_drop_epoch >= 0, "config: schedule_drop_epoch must be >= 0");
        DUOLIFT_CHECK(drop_factor > 0, "config: drop_factor must be > 0");
        DUOLIFT_CHECK(!DI || mode == losses::TrainMode::GAN, "config: DI requires GAN mode");
        if (mode == losses::TrainMode::GAN) {
            DUOLIFT_CHECK(lr_d > 0, "config: GAN mode requires lr_d > 0");
            DiscriminatorConfig::block_count_for(dims);  // throws if 5x5x5 is unreachable
        }
        generator_config().validate();
    }

    GeneratorConfig generator_config() const {
        GeneratorConfig g;
        g.input_hw = dims;
        g.output_dhw = dims;
        g.view = view;
        g.multiplier = multiplier;
        g.dropout_p = dropout_p;
        g.replicate_lift = L;
        g.duo_branch = DB;
        return g;
    }

    DiscriminatorConfig discriminator_config() const {
        DiscriminatorConfig d;
        d.input_size = dims;
        d.multiplier = multiplier;
        return d;
    }
};

namespace config {

using KvMap = std::map<std::string, std::string>;

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    DUOLIFT_CHECK(false, "config: bad boolean '" << v << "' for key " << key);
    return false;
}

inline KvMap parse_kv_text(const std::string& text) {
    KvMap kv;
    std::istringstream iss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(iss, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos) continue;
        size_t eq = line.find('=');
        DUOLIFT_CHECK(eq != std::string::npos, "config: line " << lineno << " is not key=value: '" << line << "'");
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        DUOLIFT_CHECK(!key.empty(), "config: empty key on line " << lineno);
        kv[key] = val;
    }
    return kv;
}

/// Builds a RunConfig from a key=value map. Mode-dependent defaults apply
/// for keys that are not present; lr_d falls back to lr_g.
inline RunConfig from_kv(const KvMap& kv) {
    losses::TrainMode mode = losses::TrainMode::CNN;
    if (auto it = kv.find("mode"); it != kv.end()) {
        if (it->second == "GAN" || it->second == "gan")
            mode = losses::TrainMode::GAN;
        else
            DUOLIFT_CHECK(it->second == "CNN" || it->second == "cnn",
                          "config: mode must be CNN or GAN, got '" << it->second << "'");
    }
    RunConfig c = RunConfig::defaults(mode);
    bool lr_d_set = false;
    std::vector<std::string> errors;
    for (const auto& [key, val] : kv) {
        try {
            if (key == "mode") {
            } else if (key == "view") {
                DUOLIFT_CHECK(val == "single" || val == "double", "config: view must be single|double");
                c.view = val == "single" ? ViewMode::single : ViewMode::double_view;
            } else if (key == "L") c.L = parse_bool(val, key);
            else if (key == "DB") c.DB = parse_bool(val, key);
            else if (key == "SL") c.SL = parse_bool(val, key);
            else if (key == "DI") c.DI = parse_bool(val, key);
            else if (key == "lr_g") c.lr_g = std::stod(val);
            else if (key == "lr_d") { c.lr_d = std::stod(val); lr_d_set = true; }
            else if (key == "epochs") c.epochs = std::stoi(val);
            else if (key == "schedule_drop_epoch") c.schedule_drop_epoch = std::stoi(val);
            else if (key == "drop_factor") c.drop_factor = std::stod(val);
            else if (key == "accumulation_steps") c.accumulation_steps = std::stoi(val);
            else if (key == "batch_size") c.batch_size = std::stoi(val);
            else if (key == "seed") c.seed = std::stoull(val);
            else if (key == "dims") c.dims = std::stoi(val);
            else if (key == "multiplier") c.multiplier = std::stod(val);
            else if (key == "dropout_p") c.dropout_p = std::stod(val);
            else if (key == "max_nonfinite") c.max_nonfinite = std::stoi(val);
            else if (key == "corpus") c.corpus_dir = val;
            else if (key == "out") c.out_dir = val;
            else errors.push_back("unknown key '" + key + "'");
        } catch (const std::invalid_argument& e) {
            errors.push_back(e.what());
        }
    }
    if (!lr_d_set) c.lr_d = c.lr_g;
    if (!errors.empty()) {
        std::ostringstream oss;
        oss << "config: " << errors.size() << " error(s):";
        for (const auto& e : errors) oss << "\n  - " << e;
        throw std::invalid_argument(oss.str());
    }
    return c;
}

inline std::string to_kv_text(const RunConfig& c) {
    std::ostringstream oss;
    oss << std::setprecision(17);
    oss << "mode = " << losses::train_mode_name(c.mode) << "\n";
    oss << "view = " << view_mode_name(c.view) << "\n";
    oss << "L = " << (c.L ? "true" : "false") << "\n";
    oss << "DB = " << (c.DB ? "true" : "false") << "\n";
    oss << "SL = " << (c.SL ? "true" : "false") << "\n";
    oss << "DI = " << (c.DI ? "true" : "false") << "\n";
    oss << "lr_g = " << c.lr_g << "\n";
    oss << "lr_d = " << c.lr_d << "\n";
    oss << "epochs = " << c.epochs << "\n";
    oss << "schedule_drop_epoch = " << c.schedule_drop_epoch << "\n";
    oss << "drop_factor = " << c.drop_factor << "\n";
    oss << "accumulation_steps = " << c.accumulation_steps << "\n";
    oss << "batch_size = " << c.batch_size << "\n";
    oss << "seed = " << c.seed << "\n";
    oss << "dims = " << c.dims << "\n";
    oss << "multiplier = " << c.multiplier << "\n";
    oss << "dropout_p = " << c.dropout_p << "\n";
    oss << "max_nonfinite = " << c.max_nonfinite << "\n";
    oss << "corpus = " << c.corpus_dir << "\n";
    oss << "out = " << c.out_dir << "\n";
    return oss.str();
}

inline RunConfig load(const std::string& config_path, const KvMap& overrides) {
    KvMap kv;
    if (!config_path.empty()) kv = parse_kv_text(io::read_text_file(config_path));
    for (const auto& [k, v] : overrides) kv[k] = v;
    return from_kv(kv);
}

}  // namespace config
}  // namespace duolift
