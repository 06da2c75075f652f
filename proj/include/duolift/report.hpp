// Table rendering (human + machine forms with identical values), ablation
// matrix files, slice plots, and cross-run report merging.
#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "duolift/metrics.hpp"
#include "duolift/trainer.hpp"

namespace duolift::report {

inline std::string fmt_mean_std(real mean, real stddev, int prec = 3) {
    std::ostringstream oss;
    oss << std::fixed << std::setprecision(prec) << mean << " ± " << stddev;
    return oss.str();
}

struct RenderedTable {
    std::string text;      // human-readable
    nlohmann::json values; // machine-readable, same numbers
};

/// Mean +/- std per metric across per-sample reports (Table-1 style).
inline RenderedTable metric_table(const std::vector<metrics::MetricReport>& reports,
                                  const std::string& title) {
    metrics::MetricAggregate agg = metrics::aggregate(reports);
    RenderedTable out;
    std::ostringstream oss;
    oss << title << " (" << reports.size() << " samples, mean ± std)\n";
    auto row = [&](const char* name, const metrics::MetricAggregate::Stat& st) {
        oss << "  " << std::left << std::setw(14) << name;
        if (st.count == 0)
            oss << "-\n";
        else
            oss << fmt_mean_std(st.mean, st.stddev) << "\n";
        out.values[name] = st.count == 0
                               ? nlohmann::json(nullptr)
                               : nlohmann::json({{"mean", st.mean}, {"std", st.stddev}, {"count", st.count}});
    };
    row("psnr2d", agg.psnr2d);
    row("psnr3d", agg.psnr3d);
    row("ssim2d", agg.ssim2d);
    row("ssim3d", agg.ssim3d);
    row("lpips", agg.lpips);
    row("dice_lung", agg.dice_lung);
    row("dice_vessel", agg.dice_vessel);
    out.text = oss.str();
    return out;
}

// ---- ablation matrix files ----
// Line format: <name> [mode=CNN|GAN] [L=on|off] [DB=...] [SL=...] [DI=...]
// '#' starts a comment. SL defaults to on in GAN mode.

inline std::vector<AblationRow> parse_matrix_text(const std::string& text) {
    std::vector<AblationRow> rows;
    std::istringstream iss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(iss, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::istringstream ls(line);
        std::string name;
        if (!(ls >> name)) continue;
        AblationRow row;
        row.name = name;
        bool sl_set = false;
        std::string tok;
        while (ls >> tok) {
            size_t eq = tok.find('=');
            DUOLIFT_CHECK(eq != std::string::npos,
                          "matrix line " << lineno << ": expected key=value, got '" << tok << "'");
            std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "mode") {
                DUOLIFT_CHECK(val == "CNN" || val == "GAN" || val == "cnn" || val == "gan",
                              "matrix line " << lineno << ": mode must be CNN or GAN");
                row.mode = (val == "GAN" || val == "gan") ? losses::TrainMode::GAN : losses::TrainMode::CNN;
            } else if (key == "L") row.L = config::parse_bool(val, key);
            else if (key == "DB") row.DB = config::parse_bool(val, key);
            else if (key == "SL") { row.SL = config::parse_bool(val, key); sl_set = true; }
            else if (key == "DI") row.DI = config::parse_bool(val, key);
            else DUOLIFT_CHECK(false, "matrix line " << lineno << ": unknown key '" << key << "'");
        }
        if (!sl_set) row.SL = row.mode == losses::TrainMode::GAN;
        rows.push_back(row);
    }
    DUOLIFT_CHECK(!rows.empty(), "matrix: no rows found");
    return rows;
}

inline std::string matrix_to_text(const std::vector<AblationRow>& rows) {
    std::ostringstream oss;
    for (const auto& r : rows)
        oss << r.name << " mode=" << losses::train_mode_name(r.mode) << " L=" << (r.L ? "on" : "off")
            << " DB=" << (r.DB ? "on" : "off") << " SL=" << (r.SL ? "on" : "off")
            << " DI=" << (r.DI ? "on" : "off") << "\n";
    return oss.str();
}

/// Flag-columned comparison (check/cross layout) plus headline metrics.
inline RenderedTable ablation_table(const std::vector<AblationResult>& results) {
    RenderedTable out;
    std::ostringstream oss;
    auto mark = [](bool b) { return b ? "✓" : "✗"; };
    oss << std::left << std::setw(16) << "row" << std::setw(6) << "mode" << std::setw(3) << "L"
        << std::setw(4) << "DB" << std::setw(4) << "SL" << std::setw(4) << "DI"
        << std::setw(12) << "params(G)" << std::setw(11) << "psnr3d" << std::setw(11) << "ssim3d"
        << std::setw(11) << "dice_lung" << "\n";
    out.values = nlohmann::json::array();
    for (const auto& r : results) {
        oss << std::left << std::setw(16) << r.row.name
            << std::setw(6) << losses::train_mode_name(r.row.mode);
        // The check/cross marks are 3-byte UTF-8; pad manually.
        oss << mark(r.row.L) << "  " << mark(r.row.DB) << "   " << mark(r.row.SL) << "   "
            << mark(r.row.DI) << "   ";
        oss << std::left << std::setw(12) << r.g_param_count << std::fixed << std::setprecision(3)
            << std::setw(11) << r.val_psnr3d << std::setw(11) << r.val_mean.ssim3d << std::setw(11)
            << (r.val_mean.dice_lung ? *r.val_mean.dice_lung : 0.0) << "\n";
        out.values.push_back({{"name", r.row.name},
                              {"mode", losses::train_mode_name(r.row.mode)},
                              {"L", r.row.L},
                              {"DB", r.row.DB},
                              {"SL", r.row.SL},
                              {"DI", r.row.DI},
                              {"param_count_g", r.g_param_count},
                              {"val_psnr3d", r.val_psnr3d},
                              {"val_metrics", r.val_mean.to_line()},
                              {"run_dir", r.run_dir}});
    }
    out.text = oss.str();
    return out;
}

// ---- slice plots ----

namespace detail {

inline std::vector<real> montage(const Tensor& left, const Tensor& right) {
    const int R = left.shape()[0], C = left.shape()[1];
    const int gap = 2;
    std::vector<real> img(static_cast<size_t>(R) * (2 * C + gap), 1.0);
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < C; ++c) {
            img[static_cast<size_t>(r) * (2 * C + gap) + c] = left[int64_t(r) * C + c];
            img[static_cast<size_t>(r) * (2 * C + gap) + C + gap + c] = right[int64_t(r) * C + c];
        }
    }
    return img;
}

}  // namespace detail

/// Writes coronal/axial/sagittal mid-slice montages (target | reconstruction)
/// as PGM files; returns the three paths.
inline std::vector<std::string> write_slice_plots(const std::string& dir, const std::string& stem,
                                                  const Volume& target, const Volume& recon) {
    fs::create_directories(dir);
    std::vector<std::string> paths;
    struct Plane {
        const char* name;
        metrics::SliceAxis axis;
    };
    const Plane planes[3] = {{"coronal", metrics::SliceAxis::depth},
                             {"axial", metrics::SliceAxis::height},
                             {"sagittal", metrics::SliceAxis::width}};
    for (const auto& p : planes) {
        int mid = metrics::slice_count(target, p.axis) / 2;
        Tensor a = metrics::slice_at(target, p.axis, mid);
        Tensor b = metrics::slice_at(recon, p.axis, mid);
        std::vector<real> img = detail::montage(a, b);
        std::string path = (fs::path(dir) / (stem + "_" + p.name + ".pgm")).string();
        io::write_pgm(path, img, a.shape()[0], 2 * a.shape()[1] + 2);
        paths.push_back(path);
    }
    return paths;
}

// ---- cross-run merge ----

/// Side-by-side merge of run final reports. Missing runs or metrics are
/// flagged per cell rather than failing the merge.
inline RenderedTable merge_runs(const std::vector<std::string>& run_dirs) {
    RenderedTable out;
    out.values = nlohmann::json::array();
    std::vector<std::string> names;
    std::vector<nlohmann::json> reports;
    for (const auto& dir : run_dirs) {
        nlohmann::json j;
        std::string path = (fs::path(dir) / "final_report.json").string();
        try {
            j = nlohmann::json::parse(io::read_text_file(path));
        } catch (const std::exception& e) {
            j = nlohmann::json{{"error", std::string("unreadable: ") + e.what()}};
        }
        names.push_back(fs::path(dir).filename().string());
        reports.push_back(j);
    }
    std::ostringstream oss;
    oss << std::left << std::setw(20) << "field";
    for (const auto& n : names) oss << std::setw(24) << n;
    oss << "\n";
    auto cell = [](const nlohmann::json& j, const char* key) -> std::string {
        if (j.contains("error")) return "(missing)";
        if (!j.contains(key)) return "(missing)";
        std::ostringstream c;
        if (j[key].is_number())
            c << std::fixed << std::setprecision(4) << j[key].get<real>();
        else
            c << j[key].get<std::string>();
        return c.str();
    };
    for (const char* key : {"best_epoch", "best_val_psnr3d", "best_val_metrics", "param_count_g"}) {
        oss << std::left << std::setw(20) << key;
        for (const auto& j : reports) oss << std::setw(24) << cell(j, key);
        oss << "\n";
    }
    for (size_t i = 0; i < names.size(); ++i)
        out.values.push_back({{"run", names[i]}, {"report", reports[i]}});
    out.text = oss.str();
    return out;
}

}  // namespace duolift::report
