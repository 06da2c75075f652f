// Phantom generation, projection, resampling, segmentation, and file IO.
#include <gtest/gtest.h>

#include <filesystem>

#include "duolift/phantom.hpp"
#include "duolift/volume.hpp"
#include "test_util.hpp"

using namespace duolift;

namespace {

// Independent full-sweep re-rasterization of the emitted segments (the
// library walks per-segment bounding boxes instead).
MaskVolume rerasterize(const std::vector<VesselSegment>& segments, const MaskVolume& lung) {
    MaskVolume out(lung.depth(), lung.height(), lung.width(), MaskLabel::vessel);
    for (int d = 0; d < lung.depth(); ++d)
        for (int h = 0; h < lung.height(); ++h)
            for (int w = 0; w < lung.width(); ++w) {
                if (lung.at(d, h, w) == 0.0) continue;
                real pd = d + 0.5, ph = h + 0.5, pw = w + 0.5;
                for (const VesselSegment& s : segments) {
                    real vx = s.b[0] - s.a[0], vy = s.b[1] - s.a[1], vz = s.b[2] - s.a[2];
                    real wx = pd - s.a[0], wy = ph - s.a[1], wz = pw - s.a[2];
                    real vv = vx * vx + vy * vy + vz * vz;
                    real t = vv > 0 ? (wx * vx + wy * vy + wz * vz) / vv : 0.0;
                    t = std::clamp(t, real(0), real(1));
                    real dx = wx - t * vx, dy = wy - t * vy, dz = wz - t * vz;
                    if (dx * dx + dy * dy + dz * dz <= s.radius * s.radius) {
                        out.at(d, h, w) = 1.0;
                        break;
                    }
                }
            }
    return out;
}

}  // namespace

TEST(Phantom, DeterministicForFixedSeed) {
    PhantomSpec spec = PhantomSpec::randomized({32, 32, 32}, 42);
    Phantom a = generate_phantom(spec);
    Phantom b = generate_phantom(spec);
    EXPECT_TRUE(a.volume.data == b.volume.data);
    EXPECT_TRUE(a.lung.data == b.lung.data);
    EXPECT_TRUE(a.vessel.data == b.vessel.data);
    ASSERT_EQ(a.segments.size(), b.segments.size());
    for (size_t i = 0; i < a.segments.size(); ++i) {
        EXPECT_EQ(a.segments[i].a, b.segments[i].a);
        EXPECT_EQ(a.segments[i].radius, b.segments[i].radius);
    }
}

TEST(Phantom, ZeroVesselSpecGivesEmptyVesselMask) {
    PhantomSpec spec = PhantomSpec::randomized({16, 16, 16}, 3);
    spec.vessels.branch_count = 0;
    Phantom ph = generate_phantom(spec);
    EXPECT_EQ(ph.vessel.count(), 0);
    EXPECT_TRUE(ph.segments.empty());
    // lung mask equals the plain ellipsoid rasterization
    for (int d = 0; d < 16; ++d)
        for (int h = 0; h < 16; ++h)
            for (int w = 0; w < 16; ++w) {
                bool inside = false;
                for (const Ellipsoid& e : spec.lungs) {
                    real dd = (d + 0.5 - e.center[0] * 16) / (e.semi_axes[0] * 16);
                    real hh = (h + 0.5 - e.center[1] * 16) / (e.semi_axes[1] * 16);
                    real ww = (w + 0.5 - e.center[2] * 16) / (e.semi_axes[2] * 16);
                    // only voxels inside the body can be lung
                    real bd = (d + 0.5 - spec.body.center[0] * 16) / (spec.body.semi_axes[0] * 16);
                    real bh = (h + 0.5 - spec.body.center[1] * 16) / (spec.body.semi_axes[1] * 16);
                    real bw = (w + 0.5 - spec.body.center[2] * 16) / (spec.body.semi_axes[2] * 16);
                    if (dd * dd + hh * hh + ww * ww <= 1.0 && bd * bd + bh * bh + bw * bw <= 1.0)
                        inside = true;
                }
                EXPECT_EQ(ph.lung.at(d, h, w), inside ? 1.0 : 0.0);
            }
}

TEST(Phantom, VesselMaskMatchesIndependentRerasterization) {
    PhantomSpec spec = PhantomSpec::randomized({32, 32, 32}, 7);
    spec.vessels.branch_count = 3;
    spec.vessels.depth = 2;
    Phantom ph = generate_phantom(spec);
    ASSERT_GT(ph.segments.size(), 0u);
    MaskVolume oracle = rerasterize(ph.segments, ph.lung);
    EXPECT_EQ(oracle.count(), ph.vessel.count());
    EXPECT_TRUE(oracle.data == ph.vessel.data);
}

TEST(Phantom, MaskNestingInvariant) {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
        Phantom ph = generate_phantom(PhantomSpec::randomized({16, 16, 16}, seed));
        EXPECT_TRUE(ph.vessel.subset_of(ph.lung)) << "seed " << seed;
        EXPECT_TRUE(ph.lung.subset_of(ph.body)) << "seed " << seed;
        ph.volume.validate_range();
        ph.lung.validate_binary();
    }
}

TEST(Phantom, InvalidSpecsRejected) {
    PhantomSpec bad_dims = PhantomSpec::randomized({32, 32, 32}, 1);
    bad_dims.dims = {30, 32, 32};  // not divisible by 4
    EXPECT_THROW(generate_phantom(bad_dims), std::invalid_argument);

    PhantomSpec out_of_bounds = PhantomSpec::randomized({32, 32, 32}, 1);
    out_of_bounds.lungs[0].center = {0.9, 0.5, 0.5};
    out_of_bounds.lungs[0].semi_axes = {0.3, 0.3, 0.3};
    EXPECT_THROW(generate_phantom(out_of_bounds), std::invalid_argument);

    PhantomSpec bad_radius = PhantomSpec::randomized({32, 32, 32}, 1);
    bad_radius.vessels.radius_min = -1;
    EXPECT_THROW(generate_phantom(bad_radius), std::invalid_argument);

    PhantomSpec bad_nodule = PhantomSpec::randomized({32, 32, 32}, 1);
    bad_nodule.nodules.push_back({{0.01, 0.5, 0.5}, 3.0, 0.65});
    EXPECT_THROW(generate_phantom(bad_nodule), std::invalid_argument);
}

TEST(Phantom, NodulesPaintOnlyInsideLungs) {
    PhantomSpec spec = PhantomSpec::randomized({32, 32, 32}, 9);
    Nodule n;
    n.center = spec.lungs[0].center;
    n.radius = 2.0;
    n.intensity = 0.65;
    spec.nodules.push_back(n);
    Phantom with = generate_phantom(spec);
    int64_t painted = 0;
    for (int64_t i = 0; i < with.volume.data.size(); ++i)
        if (with.volume.data[i] == 0.65) {
            ++painted;
            EXPECT_EQ(with.lung.data[i], 1.0);
        }
    EXPECT_GT(painted, 0);
}

TEST(Project, ConstantVolumeNormalizesToZeros) {
    Volume v(8, 8, 8, 0.5);
    Projection p = project(v, View::frontal);
    for (int64_t i = 0; i < p.data.size(); ++i) EXPECT_EQ(p.data[i], 0.0);
}

TEST(Project, ImpulseGeometry) {
    Volume v(6, 8, 10);
    v.at(3, 2, 7) = 1.0;
    Projection pf = project(v, View::frontal);
    ASSERT_EQ(pf.rows(), 8);
    ASSERT_EQ(pf.cols(), 10);
    for (int h = 0; h < 8; ++h)
        for (int w = 0; w < 10; ++w)
            EXPECT_EQ(pf.at(h, w), (h == 2 && w == 7) ? 1.0 : 0.0);
    Projection pl = project(v, View::lateral);
    ASSERT_EQ(pl.rows(), 8);
    ASSERT_EQ(pl.cols(), 6);  // lateral collapses width into an H x D image
    for (int h = 0; h < 8; ++h)
        for (int d = 0; d < 6; ++d)
            EXPECT_EQ(pl.at(h, d), (h == 2 && d == 3) ? 1.0 : 0.0);
}

TEST(Project, MatchesAxisMeanOracle) {
    Rng rng(21);
    Volume v = testutil::random_volume(8, 8, 8, rng);
    for (View view : {View::frontal, View::lateral}) {
        Projection p = project(v, view);
        // independent oracle: axis mean then min-max
        Tensor raw(Shape{8, 8});
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) {
                real acc = 0;
                for (int k = 0; k < 8; ++k)
                    acc += view == View::frontal ? v.at(k, r, c) : v.at(c, r, k);
                raw[r * 8 + c] = acc / 8.0;
            }
        real lo = raw.min(), hi = raw.max();
        for (int64_t i = 0; i < raw.size(); ++i) {
            real expect = hi > lo ? (raw[i] - lo) / (hi - lo) : 0.0;
            EXPECT_NEAR(p.data[i], expect, 1e-6);
        }
    }
}

TEST(Project, RawLineIntegralIsLinear) {
    Rng rng(22);
    Volume a = testutil::random_volume(6, 6, 6, rng);
    Volume b = testutil::random_volume(6, 6, 6, rng);
    Volume combo(6, 6, 6);
    const real ka = 0.3, kb = 0.6;
    for (int64_t i = 0; i < combo.data.size(); ++i)
        combo.data[i] = ka * a.data[i] + kb * b.data[i];
    for (View view : {View::frontal, View::lateral}) {
        Projection pc = project_raw(combo, view);
        Projection pa = project_raw(a, view);
        Projection pb = project_raw(b, view);
        for (int64_t i = 0; i < pc.data.size(); ++i)
            EXPECT_NEAR(pc.data[i], ka * pa.data[i] + kb * pb.data[i], 1e-6);
    }
}

TEST(Resample, IdentityAtSameDims) {
    Rng rng(23);
    Volume v = testutil::random_volume(8, 6, 4, rng);
    Volume r = resample(v, {8, 6, 4});
    EXPECT_TRUE(r.data == v.data);
}

TEST(Resample, ConstantStaysConstant) {
    Volume v(4, 4, 4, 0.37);
    for (auto dims : {std::array<int, 3>{8, 8, 8}, {5, 7, 3}, {2, 2, 2}}) {
        Volume r = resample(v, dims);
        for (int64_t i = 0; i < r.data.size(); ++i) EXPECT_NEAR(r.data[i], 0.37, 1e-12);
    }
}

TEST(Resample, LinearRampMatchesClosedForm) {
    const int D = 8;
    Volume v(D, 4, 4);
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < 4; ++h)
            for (int w = 0; w < 4; ++w) v.at(d, h, w) = static_cast<real>(d) / (D - 1);
    Volume r = resample(v, {2 * D, 4, 4});
    for (int d = 0; d < 2 * D; ++d) {
        // half-pixel-center source coordinate with edge clamping
        real src = (d + 0.5) * 0.5 - 0.5;
        src = std::clamp(src, real(0), real(D - 1));
        EXPECT_NEAR(r.at(d, 2, 2), src / (D - 1), 1e-6) << "d=" << d;
    }
}

TEST(Resample, StaysWithinInputRange) {
    Rng rng(24);
    Volume v = testutil::random_volume(6, 6, 6, rng);
    Volume r = resample(v, {13, 5, 9});
    EXPECT_GE(r.data.min(), v.data.min() - 1e-12);
    EXPECT_LE(r.data.max(), v.data.max() + 1e-12);
    EXPECT_THROW(resample(v, {1, 4, 4}), std::invalid_argument);
}

TEST(ThresholdSegment, BasicAndOracle) {
    Volume zeros(4, 4, 4, 0.0);
    EXPECT_EQ(threshold_segment(zeros, 0.5).count(), 0);

    Rng rng(25);
    Volume v = testutil::random_volume(4, 4, 4, rng);
    MaskVolume m = threshold_segment(v, 0.3);
    for (int64_t i = 0; i < v.data.size(); ++i)
        EXPECT_EQ(m.data[i], v.data[i] >= 0.3 ? 1.0 : 0.0);

    // idempotence on binary input
    Volume as_vol(4, 4, 4);
    as_vol.data = m.data;
    EXPECT_TRUE(threshold_segment(as_vol, 0.5).data == m.data);

    EXPECT_THROW(threshold_segment(v, 0.0), std::invalid_argument);
    EXPECT_THROW(threshold_segment(v, 1.0), std::invalid_argument);
}

TEST(VolumeIO, RoundTripBitExact) {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "duolift_io_test";
    fs::create_directories(dir);
    Rng rng(26);
    Volume v = testutil::random_volume(6, 4, 8, rng);
    v.spacing = {0.5, 1.25, 2.0};
    std::string p1 = (dir / "a.dlvol").string(), p2 = (dir / "b.dlvol").string();
    save_volume(p1, v);
    Volume loaded = load_volume(p1);
    EXPECT_EQ(loaded.spacing, v.spacing);
    save_volume(p2, loaded);
    EXPECT_EQ(io::read_text_file(p1), io::read_text_file(p2));  // byte-identical files

    Phantom ph = generate_phantom(PhantomSpec::randomized({16, 16, 16}, 4));
    std::string m1 = (dir / "m.dlvol").string();
    save_mask(m1, ph.lung);
    MaskVolume mloaded = load_mask(m1, MaskLabel::lung);
    EXPECT_TRUE(mloaded.data == ph.lung.data);

    // f32 quantization is idempotent: one more round trip is exact
    Volume requantized = load_volume(p2);
    EXPECT_TRUE(requantized.data == loaded.data);

    EXPECT_THROW(load_mask(p1, MaskLabel::lung), std::runtime_error);  // wrong dtype
    fs::remove_all(dir);
}
