// Synthetic chest phantoms: ellipsoid body/lungs, recursive vessel trees,
// parallel projections, trilinear resampling, threshold segmentation.
#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "duolift/core.hpp"
#include "duolift/volume.hpp"

namespace duolift {

/// Axis-aligned ellipsoid. Center and semi-axes are fractions of the volume
/// extent along (depth, height, width).
struct Ellipsoid {
    std::array<real, 3> center{0.5, 0.5, 0.5};
    std::array<real, 3> semi_axes{0.25, 0.25, 0.25};
    real intensity = 0.5;
};

struct VesselTreeParams {
    int branch_count = 3;  // root branches per lung; 0 disables vessels
    int depth = 3;         // binary splits below each root
    real radius_min = 0.8; // voxels
    real radius_max = 1.6; // voxels
    real intensity = 0.85;
    real radius_decay = 0.7;
    real length_decay = 0.75;
};

struct Nodule {
    std::array<real, 3> center{0.5, 0.5, 0.5};  // fractions
    real radius = 1.5;                          // voxels
    real intensity = 0.7;
};

struct PhantomSpec {
    uint64_t seed = 0;
    std::array<int, 3> dims{32, 32, 32};  // D, H, W
    Ellipsoid body{{0.5, 0.5, 0.5}, {0.42, 0.46, 0.44}, 0.55};
    std::array<Ellipsoid, 2> lungs{
        Ellipsoid{{0.5, 0.47, 0.30}, {0.22, 0.30, 0.15}, 0.15},
        Ellipsoid{{0.5, 0.47, 0.70}, {0.22, 0.30, 0.15}, 0.15}};
    VesselTreeParams vessels;
    std::vector<Nodule> nodules;
    std::array<real, 3> spacing{1, 1, 1};

    void validate() const {
        for (int i = 0; i < 3; ++i) {
            DUOLIFT_CHECK(dims[i] >= 4 && dims[i] % 4 == 0,
                          "PhantomSpec: dims must be >= 4 and divisible by 4, got " << dims[i]);
        }
        auto check_ellipsoid = [](const Ellipsoid& e, const char* what) {
            for (int a = 0; a < 3; ++a) {
                DUOLIFT_CHECK(e.semi_axes[a] > 0.0, "PhantomSpec: " << what << " semi-axis " << a << " must be > 0");
                DUOLIFT_CHECK(e.center[a] - e.semi_axes[a] >= 0.0 && e.center[a] + e.semi_axes[a] <= 1.0,
                              "PhantomSpec: " << what << " exceeds volume bounds along axis " << a);
            }
            DUOLIFT_CHECK(e.intensity >= 0.0 && e.intensity <= 1.0,
                          "PhantomSpec: " << what << " intensity outside [0,1]");
        };
        check_ellipsoid(body, "body");
        check_ellipsoid(lungs[0], "lung[0]");
        check_ellipsoid(lungs[1], "lung[1]");
        DUOLIFT_CHECK(vessels.branch_count >= 0 && vessels.depth >= 0, "PhantomSpec: negative vessel parameters");
        if (vessels.branch_count > 0) {
            DUOLIFT_CHECK(vessels.radius_min > 0.0 && vessels.radius_max >= vessels.radius_min,
                          "PhantomSpec: vessel radius range invalid");
        }
        for (const Nodule& n : nodules) {
            DUOLIFT_CHECK(n.radius > 0.0, "PhantomSpec: nodule radius must be > 0");
            for (int a = 0; a < 3; ++a) {
                real r_frac = n.radius / static_cast<real>(dims[a]);
                DUOLIFT_CHECK(n.center[a] - r_frac >= 0.0 && n.center[a] + r_frac <= 1.0,
                              "PhantomSpec: nodule exceeds volume bounds along axis " << a);
            }
        }
    }

    /// Canonical chest-like spec with seeded geometric jitter; used by the
    /// corpus generator so every sample differs in shape and vasculature.
    static PhantomSpec randomized(std::array<int, 3> dims, uint64_t seed) {
        PhantomSpec s;
        s.dims = dims;
        s.seed = seed;
        Rng rng(seed);
        auto jitter = [&](real base, real amp) { return base + rng.uniform(-amp, amp); };
        s.body.semi_axes = {jitter(0.40, 0.02), jitter(0.44, 0.02), jitter(0.42, 0.02)};
        for (int k = 0; k < 2; ++k) {
            Ellipsoid& lung = s.lungs[static_cast<size_t>(k)];
            real wc = k == 0 ? 0.31 : 0.69;
            lung.center = {jitter(0.50, 0.02), jitter(0.47, 0.02), jitter(wc, 0.015)};
            lung.semi_axes = {jitter(0.21, 0.015), jitter(0.29, 0.02), jitter(0.145, 0.01)};
            lung.intensity = 0.15;
        }
        real vox_scale = static_cast<real>(dims[0]) / 32.0;
        s.vessels.branch_count = 3;
        s.vessels.depth = 3;
        s.vessels.radius_min = 0.8 * vox_scale;
        s.vessels.radius_max = 1.5 * vox_scale;
        // No nodules in the default corpus: the body/lung/vessel intensity
        // bands stay exactly recoverable by threshold segmentation.
        return s;
    }
};

/// One cylinder (with spherical caps) of the vessel tree; coordinates are
/// voxel-center coordinates in (d,h,w) order.
struct VesselSegment {
    std::array<real, 3> a{}, b{};
    real radius = 0;
};

struct Phantom {
    Volume volume;
    MaskVolume body;
    MaskVolume lung;
    MaskVolume vessel;
    std::vector<VesselSegment> segments;
};

namespace detail {

inline bool inside_ellipsoid(const Ellipsoid& e, const std::array<int, 3>& dims, real d, real h, real w) {
    real dd = (d - e.center[0] * dims[0]) / (e.semi_axes[0] * dims[0]);
    real hh = (h - e.center[1] * dims[1]) / (e.semi_axes[1] * dims[1]);
    real ww = (w - e.center[2] * dims[2]) / (e.semi_axes[2] * dims[2]);
    return dd * dd + hh * hh + ww * ww <= 1.0;
}

inline real point_segment_dist2(const std::array<real, 3>& p, const VesselSegment& s) {
    real vx = s.b[0] - s.a[0], vy = s.b[1] - s.a[1], vz = s.b[2] - s.a[2];
    real wx = p[0] - s.a[0], wy = p[1] - s.a[1], wz = p[2] - s.a[2];
    real vv = vx * vx + vy * vy + vz * vz;
    real t = vv > 0 ? (wx * vx + wy * vy + wz * vz) / vv : 0.0;
    t = std::clamp(t, real(0), real(1));
    real dx = wx - t * vx, dy = wy - t * vy, dz = wz - t * vz;
    return dx * dx + dy * dy + dz * dz;
}

inline void grow_branch(std::vector<VesselSegment>& out, Rng& rng, std::array<real, 3> start,
                        std::array<real, 3> dir, real length, real radius, int depth,
                        real radius_decay, real length_decay) {
    real norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    if (norm < 1e-9) return;
    for (auto& c : dir) c /= norm;
    std::array<real, 3> end = {start[0] + dir[0] * length, start[1] + dir[1] * length,
                               start[2] + dir[2] * length};
    out.push_back(VesselSegment{start, end, radius});
    if (depth <= 0) return;
    for (int child = 0; child < 2; ++child) {
        std::array<real, 3> cdir;
        for (int a = 0; a < 3; ++a) cdir[a] = dir[a] + rng.uniform(-0.6, 0.6);
        grow_branch(out, rng, end, cdir, length * length_decay, radius * radius_decay,
                    depth - 1, radius_decay, length_decay);
    }
}

}  // namespace detail

/// Rasterizes tube segments into `vessel`/`volume`, restricted to the lung
/// mask. Shared by the generator and (re-implemented independently) by the
/// test oracle, which sweeps all voxels instead of segment bounding boxes.
inline void rasterize_vessels(const std::vector<VesselSegment>& segments, const MaskVolume& lung,
                              real intensity, Volume* volume, MaskVolume* vessel) {
    const int D = lung.depth(), H = lung.height(), W = lung.width();
    for (const VesselSegment& s : segments) {
        int d0 = std::max(0, static_cast<int>(std::floor(std::min(s.a[0], s.b[0]) - s.radius - 1)));
        int d1 = std::min(D - 1, static_cast<int>(std::ceil(std::max(s.a[0], s.b[0]) + s.radius + 1)));
        int h0 = std::max(0, static_cast<int>(std::floor(std::min(s.a[1], s.b[1]) - s.radius - 1)));
        int h1 = std::min(H - 1, static_cast<int>(std::ceil(std::max(s.a[1], s.b[1]) + s.radius + 1)));
        int w0 = std::max(0, static_cast<int>(std::floor(std::min(s.a[2], s.b[2]) - s.radius - 1)));
        int w1 = std::min(W - 1, static_cast<int>(std::ceil(std::max(s.a[2], s.b[2]) + s.radius + 1)));
        real r2 = s.radius * s.radius;
        for (int d = d0; d <= d1; ++d)
            for (int h = h0; h <= h1; ++h)
                for (int w = w0; w <= w1; ++w) {
                    if (lung.at(d, h, w) == 0.0) continue;
                    std::array<real, 3> p = {static_cast<real>(d) + 0.5, static_cast<real>(h) + 0.5,
                                             static_cast<real>(w) + 0.5};
                    if (detail::point_segment_dist2(p, s) <= r2) {
                        if (vessel) vessel->at(d, h, w) = 1.0;
                        if (volume) volume->at(d, h, w) = intensity;
                    }
                }
    }
}

/// Deterministic for a fixed spec/seed. Mask nesting holds by construction:
/// vessels are clipped to the lung mask and lungs to the body mask.
inline Phantom generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const int D = spec.dims[0], H = spec.dims[1], W = spec.dims[2];
    Phantom ph;
    ph.volume = Volume(D, H, W, 0.0);
    ph.volume.spacing = spec.spacing;
    ph.body = MaskVolume(D, H, W, MaskLabel::body);
    ph.lung = MaskVolume(D, H, W, MaskLabel::lung);
    ph.vessel = MaskVolume(D, H, W, MaskLabel::vessel);

    parallel_for(int64_t(D) * H * W, [&](int64_t i) {
        int w = static_cast<int>(i % W);
        int h = static_cast<int>((i / W) % H);
        int d = static_cast<int>(i / (int64_t(W) * H));
        real pd = d + 0.5, phh = h + 0.5, pw = w + 0.5;
        if (!detail::inside_ellipsoid(spec.body, spec.dims, pd, phh, pw)) return;
        ph.body.data[i] = 1.0;
        ph.volume.data[i] = spec.body.intensity;
        for (const Ellipsoid& lung : spec.lungs) {
            if (detail::inside_ellipsoid(lung, spec.dims, pd, phh, pw)) {
                ph.lung.data[i] = 1.0;
                ph.volume.data[i] = lung.intensity;
                break;
            }
        }
    });

    // Nodules: spheres painted inside the lungs only.
    for (const Nodule& n : spec.nodules) {
        real cd = n.center[0] * D, ch = n.center[1] * H, cw = n.center[2] * W;
        real r2 = n.radius * n.radius;
        int d0 = std::max(0, static_cast<int>(cd - n.radius - 1)), d1 = std::min(D - 1, static_cast<int>(cd + n.radius + 1));
        int h0 = std::max(0, static_cast<int>(ch - n.radius - 1)), h1 = std::min(H - 1, static_cast<int>(ch + n.radius + 1));
        int w0 = std::max(0, static_cast<int>(cw - n.radius - 1)), w1 = std::min(W - 1, static_cast<int>(cw + n.radius + 1));
        for (int d = d0; d <= d1; ++d)
            for (int h = h0; h <= h1; ++h)
                for (int w = w0; w <= w1; ++w) {
                    if (ph.lung.at(d, h, w) == 0.0) continue;
                    real dd = d + 0.5 - cd, dh = h + 0.5 - ch, dw = w + 0.5 - cw;
                    if (dd * dd + dh * dh + dw * dw <= r2) ph.volume.at(d, h, w) = n.intensity;
                }
    }

    // Vessel trees: roots start near each lung's hilum (inner face) and grow
    // outward/downward with seeded jitter.
    if (spec.vessels.branch_count > 0) {
        Rng rng(spec.seed);
        for (int side = 0; side < 2; ++side) {
            const Ellipsoid& lung = spec.lungs[static_cast<size_t>(side)];
            std::array<real, 3> lung_c = {lung.center[0] * D, lung.center[1] * H, lung.center[2] * W};
            real toward_mid = side == 0 ? 1.0 : -1.0;  // +w for left lung, -w for right
            for (int b = 0; b < spec.vessels.branch_count; ++b) {
                std::array<real, 3> start = {
                    lung_c[0] + rng.uniform(-0.2, 0.2) * lung.semi_axes[0] * D,
                    lung_c[1] + rng.uniform(-0.3, 0.0) * lung.semi_axes[1] * H,
                    lung_c[2] - toward_mid * 0.6 * lung.semi_axes[2] * W};
                std::array<real, 3> dir = {rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.9),
                                           toward_mid * rng.uniform(0.4, 1.0)};
                real length = 0.45 * lung.semi_axes[1] * H * rng.uniform(0.8, 1.2);
                real radius = rng.uniform(spec.vessels.radius_min, spec.vessels.radius_max);
                detail::grow_branch(ph.segments, rng, start, dir, length, radius, spec.vessels.depth,
                                    spec.vessels.radius_decay, spec.vessels.length_decay);
            }
        }
        rasterize_vessels(ph.segments, ph.lung, spec.vessels.intensity, &ph.volume, &ph.vessel);
    }

    return ph;
}

/// Parallel-beam projection: mean of voxel values along the view axis, then
/// min-max normalized to [0,1]. A constant image normalizes to all zeros.
/// Frontal collapses depth (H x W image); lateral collapses width (H x D).
inline Projection project(const Volume& volume, View view) {
    const int D = volume.depth(), H = volume.height(), W = volume.width();
    Projection p;
    if (view == View::frontal) {
        p = Projection(H, W, View::frontal);
        parallel_for(int64_t(H) * W, [&](int64_t i) {
            int w = static_cast<int>(i % W), h = static_cast<int>(i / W);
            real acc = 0;
            for (int d = 0; d < D; ++d) acc += volume.at(d, h, w);
            p.data[i] = acc / static_cast<real>(D);
        });
    } else {
        p = Projection(H, D, View::lateral);
        parallel_for(int64_t(H) * D, [&](int64_t i) {
            int d = static_cast<int>(i % D), h = static_cast<int>(i / D);
            real acc = 0;
            for (int w = 0; w < W; ++w) acc += volume.at(d, h, w);
            p.data[i] = acc / static_cast<real>(W);
        });
    }
    real lo = p.data.min(), hi = p.data.max();
    if (hi > lo) {
        real inv = 1.0 / (hi - lo);
        for (int64_t i = 0; i < p.data.size(); ++i) p.data[i] = (p.data[i] - lo) * inv;
    } else {
        p.data.fill(0.0);
    }
    return p;
}

/// Unnormalized line integral (mean along the axis); exposed for the
/// projection-linearity property.
inline Projection project_raw(const Volume& volume, View view) {
    const int D = volume.depth(), H = volume.height(), W = volume.width();
    Projection p(H, view == View::frontal ? W : D, view);
    if (view == View::frontal) {
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                real acc = 0;
                for (int d = 0; d < D; ++d) acc += volume.at(d, h, w);
                p.at(h, w) = acc / static_cast<real>(D);
            }
    } else {
        for (int h = 0; h < H; ++h)
            for (int d = 0; d < D; ++d) {
                real acc = 0;
                for (int w = 0; w < W; ++w) acc += volume.at(d, h, w);
                p.at(h, d) = acc / static_cast<real>(W);
            }
    }
    return p;
}

/// Trilinear resampling with half-pixel centers and edge clamping. Identity
/// when dims are unchanged; output stays within [min,max] of the input.
inline Volume resample(const Volume& volume, std::array<int, 3> dims) {
    for (int i = 0; i < 3; ++i)
        DUOLIFT_CHECK(dims[i] >= 2, "resample: target dims must be >= 2 per axis, got " << dims[i]);
    const int D = volume.depth(), H = volume.height(), W = volume.width();
    LinearAxisMap md = linear_axis_map(D, dims[0]);
    LinearAxisMap mh = linear_axis_map(H, dims[1]);
    LinearAxisMap mw = linear_axis_map(W, dims[2]);
    Volume out(dims[0], dims[1], dims[2]);
    out.spacing = {volume.spacing[0] * D / dims[0], volume.spacing[1] * H / dims[1],
                   volume.spacing[2] * W / dims[2]};
    parallel_for(int64_t(dims[0]) * dims[1] * dims[2], [&](int64_t i) {
        int w = static_cast<int>(i % dims[2]);
        int h = static_cast<int>((i / dims[2]) % dims[1]);
        int d = static_cast<int>(i / (int64_t(dims[2]) * dims[1]));
        real wd = md.w1[d], wh = mh.w1[h], ww = mw.w1[w];
        real v = 0;
        for (int cd = 0; cd < 2; ++cd)
            for (int ch = 0; ch < 2; ++ch)
                for (int cw = 0; cw < 2; ++cw) {
                    real wt = (cd ? wd : 1 - wd) * (ch ? wh : 1 - wh) * (cw ? ww : 1 - ww);
                    if (wt == 0.0) continue;
                    v += wt * volume.at(cd ? md.i1[d] : md.i0[d], ch ? mh.i1[h] : mh.i0[h],
                                        cw ? mw.i1[w] : mw.i0[w]);
                }
        out.data[i] = v;
    });
    return out;
}

inline Projection resample2d(const Projection& p, int rows, int cols) {
    DUOLIFT_CHECK(rows >= 2 && cols >= 2, "resample2d: target dims must be >= 2");
    LinearAxisMap mr = linear_axis_map(p.rows(), rows);
    LinearAxisMap mc = linear_axis_map(p.cols(), cols);
    Projection out(rows, cols, p.view);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            real wr = mr.w1[r], wc = mc.w1[c];
            out.at(r, c) = (1 - wr) * (1 - wc) * p.at(mr.i0[r], mc.i0[c]) +
                           (1 - wr) * wc * p.at(mr.i0[r], mc.i1[c]) +
                           wr * (1 - wc) * p.at(mr.i1[r], mc.i0[c]) +
                           wr * wc * p.at(mr.i1[r], mc.i1[c]);
        }
    return out;
}

/// mask = (value >= t). Used to derive lung/vessel masks from reconstructions.
inline MaskVolume threshold_segment(const Volume& volume, real t, MaskLabel label = MaskLabel::body) {
    DUOLIFT_CHECK(t > 0.0 && t < 1.0, "threshold_segment: t must lie in (0,1), got " << t);
    MaskVolume m(volume.depth(), volume.height(), volume.width(), label);
    for (int64_t i = 0; i < volume.data.size(); ++i) m.data[i] = volume.data[i] >= t ? 1.0 : 0.0;
    return m;
}

}  // namespace duolift
