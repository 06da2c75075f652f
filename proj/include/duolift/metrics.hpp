// Evaluation suite: PSNR(2D/3D), SSIM(2D/3D), DICE, pluggable per-slice
// perceptual distance, and the combined per-sample evaluator.
#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "duolift/phantom.hpp"
#include "duolift/volume.hpp"

namespace duolift::metrics {

constexpr real kPsnrCap = 100.0;  // dB reported for zero MSE

/// Slice axis for the 2D metric protocols. Axial (fixed height index) is the
/// default: the height axis is the patient's head-to-foot direction.
enum class SliceAxis { depth, height, width };

inline int slice_count(const Volume& v, SliceAxis axis) {
    switch (axis) {
        case SliceAxis::depth: return v.depth();
        case SliceAxis::height: return v.height();
        default: return v.width();
    }
}

/// Extracts one slice as a rank-2 tensor.
inline Tensor slice_at(const Volume& v, SliceAxis axis, int idx) {
    const int D = v.depth(), H = v.height(), W = v.width();
    if (axis == SliceAxis::depth) {
        Tensor t(Shape{H, W});
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) t[int64_t(h) * W + w] = v.at(idx, h, w);
        return t;
    }
    if (axis == SliceAxis::height) {
        Tensor t(Shape{D, W});
        for (int d = 0; d < D; ++d)
            for (int w = 0; w < W; ++w) t[int64_t(d) * W + w] = v.at(d, idx, w);
        return t;
    }
    Tensor t(Shape{D, H});
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h) t[int64_t(d) * H + h] = v.at(d, h, idx);
    return t;
}

// ---- PSNR ----

inline real psnr_from_mse(real mse, real max_val) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(max_val * max_val / mse));
}

inline real psnr3d(const Volume& target, const Volume& recon, real max_val = 1.0) {
    DUOLIFT_CHECK(target.data.same_shape(recon.data), "psnr3d: dim mismatch "
                  << shape_str(target.data.shape()) << " vs " << shape_str(recon.data.shape()));
    DUOLIFT_CHECK(max_val > 0.0, "psnr3d: max_val must be > 0");
    real acc = 0;
    for (int64_t i = 0; i < target.data.size(); ++i) {
        real d = target.data[i] - recon.data[i];
        acc += d * d;
    }
    return psnr_from_mse(acc / static_cast<real>(target.data.size()), max_val);
}

/// Mean over slices of per-slice PSNR (per-slice zero MSE capped).
inline real psnr2d(const Volume& target, const Volume& recon, real max_val = 1.0,
                   SliceAxis axis = SliceAxis::height) {
    DUOLIFT_CHECK(target.data.same_shape(recon.data), "psnr2d: dim mismatch "
                  << shape_str(target.data.shape()) << " vs " << shape_str(recon.data.shape()));
    DUOLIFT_CHECK(max_val > 0.0, "psnr2d: max_val must be > 0");
    const int n = slice_count(target, axis);
    real acc = 0;
    for (int s = 0; s < n; ++s) {
        Tensor a = slice_at(target, axis, s), b = slice_at(recon, axis, s);
        real mse = 0;
        for (int64_t i = 0; i < a.size(); ++i) {
            real d = a[i] - b[i];
            mse += d * d;
        }
        acc += psnr_from_mse(mse / static_cast<real>(a.size()), max_val);
    }
    return acc / static_cast<real>(n);
}

// ---- SSIM ----

struct SsimParams {
    int window = 11;
    real sigma = 1.5;
    real k1 = 0.01, k2 = 0.03;
    real dynamic_range = 1.0;
};

namespace detail {

inline std::vector<real> gaussian_taps(int window, real sigma) {
    std::vector<real> g(static_cast<size_t>(window));
    const real c = (window - 1) / 2.0;
    real sum = 0;
    for (int i = 0; i < window; ++i) {
        g[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += g[i];
    }
    for (real& v : g) v /= sum;
    return g;
}

/// Valid-mode separable 1D filtering along the last axis of a rank-2 map.
inline Tensor filter_cols(const Tensor& x, const std::vector<real>& taps) {
    const int R = x.shape()[0], C = x.shape()[1];
    const int K = static_cast<int>(taps.size());
    const int OC = C - K + 1;
    Tensor out(Shape{R, OC});
    for (int r = 0; r < R; ++r)
        for (int c = 0; c < OC; ++c) {
            real acc = 0;
            for (int k = 0; k < K; ++k) acc += taps[k] * x[int64_t(r) * C + c + k];
            out[int64_t(r) * OC + c] = acc;
        }
    return out;
}

inline Tensor filter_rows(const Tensor& x, const std::vector<real>& taps) {
    const int R = x.shape()[0], C = x.shape()[1];
    const int K = static_cast<int>(taps.size());
    const int OR = R - K + 1;
    Tensor out(Shape{OR, C});
    for (int r = 0; r < OR; ++r)
        for (int c = 0; c < C; ++c) {
            real acc = 0;
            for (int k = 0; k < K; ++k) acc += taps[k] * x[int64_t(r + k) * C + c];
            out[int64_t(r) * C + c] = acc;
        }
    return out;
}

inline Tensor gauss2(const Tensor& x, const std::vector<real>& taps) {
    return filter_rows(filter_cols(x, taps), taps);
}

/// Separable valid-mode Gaussian over a rank-3 grid.
inline Tensor gauss3(const Tensor& x, const std::vector<real>& taps) {
    const int D = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
    const int K = static_cast<int>(taps.size());
    const int OW = W - K + 1, OH = H - K + 1, OD = D - K + 1;
    Tensor a(Shape{D, H, OW});
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < OW; ++w) {
                real acc = 0;
                for (int k = 0; k < K; ++k) acc += taps[k] * x[(int64_t(d) * H + h) * W + w + k];
                a[(int64_t(d) * H + h) * OW + w] = acc;
            }
    Tensor b(Shape{D, OH, OW});
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < OH; ++h)
            for (int w = 0; w < OW; ++w) {
                real acc = 0;
                for (int k = 0; k < K; ++k) acc += taps[k] * a[(int64_t(d) * H + h + k) * OW + w];
                b[(int64_t(d) * OH + h) * OW + w] = acc;
            }
    Tensor c(Shape{OD, OH, OW});
    for (int d = 0; d < OD; ++d)
        for (int h = 0; h < OH; ++h)
            for (int w = 0; w < OW; ++w) {
                real acc = 0;
                for (int k = 0; k < K; ++k) acc += taps[k] * b[(int64_t(d + k) * OH + h) * OW + w];
                c[(int64_t(d) * OH + h) * OW + w] = acc;
            }
    return c;
}

inline real ssim_from_moments(real mx, real my, real mxx, real myy, real mxy, const SsimParams& p) {
    const real c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
    const real c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
    const real vx = mxx - mx * mx;
    const real vy = myy - my * my;
    const real cxy = mxy - mx * my;
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

template <typename FilterFn>
inline real ssim_mean(const Tensor& x, const Tensor& y, const std::vector<real>& taps,
                      const SsimParams& p, FilterFn&& filt) {
    Tensor xx(x.shape()), yy(x.shape()), xy(x.shape());
    for (int64_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    Tensor mx = filt(x, taps), my = filt(y, taps);
    Tensor mxx = filt(xx, taps), myy = filt(yy, taps), mxy = filt(xy, taps);
    real acc = 0;
    for (int64_t i = 0; i < mx.size(); ++i)
        acc += ssim_from_moments(mx[i], my[i], mxx[i], myy[i], mxy[i], p);
    return acc / static_cast<real>(mx.size());
}

}  // namespace detail

/// Per-slice SSIM with an 11x11 Gaussian window, averaged across slices.
inline real ssim2d(const Volume& target, const Volume& recon, SliceAxis axis = SliceAxis::height,
                   const SsimParams& p = {}) {
    DUOLIFT_CHECK(target.data.same_shape(recon.data), "ssim2d: dim mismatch "
                  << shape_str(target.data.shape()) << " vs " << shape_str(recon.data.shape()));
    std::vector<real> taps = detail::gaussian_taps(p.window, p.sigma);
    const int n = slice_count(target, axis);
    real acc = 0;
    for (int s = 0; s < n; ++s) {
        Tensor a = slice_at(target, axis, s), b = slice_at(recon, axis, s);
        DUOLIFT_CHECK(a.shape()[0] >= p.window && a.shape()[1] >= p.window,
                      "ssim2d: slice " << shape_str(a.shape()) << " smaller than the "
                      << p.window << "x" << p.window << " window");
        acc += detail::ssim_mean(a, b, taps, p,
                                 [](const Tensor& t, const std::vector<real>& tp) { return detail::gauss2(t, tp); });
    }
    return acc / static_cast<real>(n);
}

/// SSIM with an 11^3 Gaussian window averaged over all valid window positions.
inline real ssim3d(const Volume& target, const Volume& recon, const SsimParams& p = {}) {
    DUOLIFT_CHECK(target.data.same_shape(recon.data), "ssim3d: dim mismatch "
                  << shape_str(target.data.shape()) << " vs " << shape_str(recon.data.shape()));
    for (int a = 0; a < 3; ++a)
        DUOLIFT_CHECK(target.data.shape()[a] >= p.window,
                      "ssim3d: volume " << shape_str(target.data.shape()) << " smaller than the window");
    std::vector<real> taps = detail::gaussian_taps(p.window, p.sigma);
    return detail::ssim_mean(target.data, recon.data, taps, p,
                             [](const Tensor& t, const std::vector<real>& tp) { return detail::gauss3(t, tp); });
}

// ---- DICE ----

/// 2|A .. B| / (|A| + |B|); two empty masks count as a perfect match.
inline real dice(const MaskVolume& a, const MaskVolume& b) {
    DUOLIFT_CHECK(a.data.same_shape(b.data), "dice: dim mismatch "
                  << shape_str(a.data.shape()) << " vs " << shape_str(b.data.shape()));
    int64_t inter = 0, ca = 0, cb = 0;
    for (int64_t i = 0; i < a.data.size(); ++i) {
        bool va = a.data[i] != 0.0, vb = b.data[i] != 0.0;
        inter += (va && vb);
        ca += va;
        cb += vb;
    }
    if (ca + cb == 0) return 1.0;
    return 2.0 * static_cast<real>(inter) / static_cast<real>(ca + cb);
}

// ---- perceptual backend ----

/// Per-slice distance; distance(x,x) must be 0. The pretrained-network
/// metric of the evaluation protocol plugs in here; the built-in backends
/// are trivially computable stand-ins.
struct PerceptualBackend {
    std::string name;
    std::function<real(const Tensor&, const Tensor&)> distance;
};

/// Root-mean-square intensity distance per slice.
inline PerceptualBackend rms_backend() {
    return {"slice-rms", [](const Tensor& a, const Tensor& b) {
                DUOLIFT_CHECK(a.same_shape(b), "slice-rms: shape mismatch");
                real acc = 0;
                for (int64_t i = 0; i < a.size(); ++i) {
                    real d = a[i] - b[i];
                    acc += d * d;
                }
                return std::sqrt(acc / static_cast<real>(a.size()));
            }};
}

/// Mean over slices of the backend distance. Backend failures mark the
/// metric absent instead of aborting the evaluation.
inline std::optional<real> lpips_mean(const Volume& target, const Volume& recon,
                                      const PerceptualBackend* backend,
                                      SliceAxis axis = SliceAxis::height) {
    if (!backend || !backend->distance) return std::nullopt;
    DUOLIFT_CHECK(target.data.same_shape(recon.data), "lpips_mean: dim mismatch");
    try {
        const int n = slice_count(target, axis);
        real acc = 0;
        for (int s = 0; s < n; ++s)
            acc += backend->distance(slice_at(target, axis, s), slice_at(recon, axis, s));
        return acc / static_cast<real>(n);
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// ---- combined report ----

struct MetricReport {
    real psnr2d = 0, psnr3d = 0;
    real ssim2d = 0, ssim3d = 0;
    std::optional<real> lpips;
    std::optional<real> dice_lung, dice_vessel;

    static std::string field_order() {
        return "psnr2d psnr3d ssim2d ssim3d lpips dice_lung dice_vessel";
    }

    /// Exact (round-trip safe) key=value serialization; absent fields are "-".
    std::string to_line() const {
        std::ostringstream oss;
        oss << std::setprecision(17);
        auto emit = [&oss](const std::optional<real>& v) {
            if (v)
                oss << *v;
            else
                oss << "-";
        };
        oss << psnr2d << " " << psnr3d << " " << ssim2d << " " << ssim3d << " ";
        emit(lpips);
        oss << " ";
        emit(dice_lung);
        oss << " ";
        emit(dice_vessel);
        return oss.str();
    }

    static MetricReport parse_line(const std::string& line) {
        MetricReport r;
        std::istringstream iss(line);
        auto next_opt = [&iss]() -> std::optional<real> {
            std::string tok;
            iss >> tok;
            DUOLIFT_REQUIRE(!tok.empty(), "MetricReport: truncated line");
            if (tok == "-") return std::nullopt;
            return std::stod(tok);
        };
        iss >> r.psnr2d >> r.psnr3d >> r.ssim2d >> r.ssim3d;
        DUOLIFT_REQUIRE(!iss.fail(), "MetricReport: malformed line '" << line << "'");
        r.lpips = next_opt();
        r.dice_lung = next_opt();
        r.dice_vessel = next_opt();
        return r;
    }
};

/// Thresholds used to derive reconstruction-side masks. The lung airspace is
/// the above-air, below-tissue intensity band; vessels are the
/// high-intensity voxels inside the reference lung region. The full lung
/// mask is the band plus those vessel voxels (vessels live inside the lung,
/// so thresholding alone would punch holes into it).
struct SegThresholds {
    real air = 0.05;
    real lung_hi = 0.35;
    real vessel = 0.70;
};

inline MaskVolume segment_vessel(const Volume& v, const MaskVolume& lung_region, const SegThresholds& t) {
    MaskVolume high = threshold_segment(v, t.vessel, MaskLabel::vessel);
    for (int64_t i = 0; i < high.data.size(); ++i) high.data[i] *= lung_region.data[i];
    return high;
}

inline MaskVolume segment_lung(const Volume& v, const MaskVolume& lung_region, const SegThresholds& t) {
    MaskVolume band = threshold_segment(v, t.air, MaskLabel::lung);
    MaskVolume above_tissue = threshold_segment(v, t.lung_hi, MaskLabel::lung);
    MaskVolume vessels = segment_vessel(v, lung_region, t);
    for (int64_t i = 0; i < band.data.size(); ++i) {
        real b = band.data[i] * (1.0 - above_tissue.data[i]);
        band.data[i] = std::max(b, vessels.data[i]);
    }
    return band;
}

inline MetricReport evaluate(const Volume& target, const Volume& recon, const MaskVolume& lung_gt,
                             const MaskVolume& vessel_gt, const SegThresholds& thresholds = {},
                             const PerceptualBackend* backend = nullptr,
                             SliceAxis axis = SliceAxis::height) {
    DUOLIFT_CHECK(target.data.same_shape(recon.data) && target.data.same_shape(lung_gt.data) &&
                  target.data.same_shape(vessel_gt.data),
                  "evaluate: dims must be aligned");
    MetricReport r;
    r.psnr2d = psnr2d(target, recon, 1.0, axis);
    r.psnr3d = psnr3d(target, recon, 1.0);
    r.ssim2d = ssim2d(target, recon, axis);
    r.ssim3d = ssim3d(target, recon);
    r.lpips = lpips_mean(target, recon, backend, axis);
    MaskVolume lung_recon = segment_lung(recon, lung_gt, thresholds);
    MaskVolume vessel_recon = segment_vessel(recon, lung_gt, thresholds);
    r.dice_lung = dice(lung_gt, lung_recon);
    r.dice_vessel = dice(vessel_gt, vessel_recon);
    return r;
}

/// Mean and population standard deviation per metric across samples; absent
/// per-sample values are skipped and tracked via counts.
struct MetricAggregate {
    struct Stat {
        real mean = 0, stddev = 0;
        int count = 0;
    };
    Stat psnr2d, psnr3d, ssim2d, ssim3d, lpips, dice_lung, dice_vessel;
};

inline MetricAggregate aggregate(const std::vector<MetricReport>& reports) {
    MetricAggregate agg;
    auto fold = [](MetricAggregate::Stat& st, const std::vector<real>& xs) {
        st.count = static_cast<int>(xs.size());
        if (xs.empty()) return;
        real m = 0;
        for (real x : xs) m += x;
        m /= static_cast<real>(xs.size());
        real v = 0;
        for (real x : xs) v += (x - m) * (x - m);
        st.mean = m;
        st.stddev = std::sqrt(v / static_cast<real>(xs.size()));
    };
    std::vector<real> a, b, c, d, e, f, g;
    for (const auto& r : reports) {
        a.push_back(r.psnr2d);
        b.push_back(r.psnr3d);
        c.push_back(r.ssim2d);
        d.push_back(r.ssim3d);
        if (r.lpips) e.push_back(*r.lpips);
        if (r.dice_lung) f.push_back(*r.dice_lung);
        if (r.dice_vessel) g.push_back(*r.dice_vessel);
    }
    fold(agg.psnr2d, a);
    fold(agg.psnr3d, b);
    fold(agg.ssim2d, c);
    fold(agg.ssim3d, d);
    fold(agg.lpips, e);
    fold(agg.dice_lung, f);
    fold(agg.dice_vessel, g);
    return agg;
}

}  // namespace duolift::metrics
