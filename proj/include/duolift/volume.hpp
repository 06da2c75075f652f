// Domain grids: Volume, MaskVolume, Projection, and their file round-trips.
#pragma once

#include <array>
#include <string>

#include "duolift/core.hpp"
#include "duolift/io.hpp"

namespace duolift {

enum class View { frontal, lateral };

inline const char* view_name(View v) { return v == View::frontal ? "frontal" : "lateral"; }

enum class MaskLabel { lung, vessel, body };

inline const char* mask_label_name(MaskLabel l) {
    switch (l) {
        case MaskLabel::lung: return "lung";
        case MaskLabel::vessel: return "vessel";
        default: return "body";
    }
}

/// D x H x W scalar grid with values in [0,1]. Axis convention: depth is the
/// patient front-to-back axis, height head-to-foot, width left-to-right.
struct Volume {
    Tensor data;                           // rank 3: (D,H,W)
    std::array<real, 3> spacing{1, 1, 1};  // mm/voxel, metadata only

    Volume() = default;
    explicit Volume(int d, int h, int w, real fill = 0.0) : data(Shape{d, h, w}, fill) {}

    int depth() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }

    real& at(int d, int h, int w) {
        return data[(int64_t(d) * height() + h) * width() + w];
    }
    real at(int d, int h, int w) const {
        return data[(int64_t(d) * height() + h) * width() + w];
    }

    void validate_range() const {
        DUOLIFT_CHECK(data.rank() == 3, "Volume: expected rank 3, got " << shape_str(data.shape()));
        for (int64_t i = 0; i < data.size(); ++i) {
            real v = data[i];
            DUOLIFT_CHECK(std::isfinite(v) && v >= 0.0 && v <= 1.0,
                          "Volume: value " << v << " at flat index " << i << " outside [0,1]");
        }
    }
};

/// Binary grid stored as 0/1 doubles so it can feed straight into arithmetic.
struct MaskVolume {
    Tensor data;  // rank 3, values in {0,1}
    MaskLabel label = MaskLabel::body;

    MaskVolume() = default;
    MaskVolume(int d, int h, int w, MaskLabel l) : data(Shape{d, h, w}, 0.0), label(l) {}

    int depth() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int width() const { return data.dim(2); }

    real& at(int d, int h, int w) {
        return data[(int64_t(d) * height() + h) * width() + w];
    }
    real at(int d, int h, int w) const {
        return data[(int64_t(d) * height() + h) * width() + w];
    }

    int64_t count() const {
        int64_t c = 0;
        for (int64_t i = 0; i < data.size(); ++i) c += (data[i] != 0.0);
        return c;
    }

    void validate_binary() const {
        DUOLIFT_CHECK(data.rank() == 3, "MaskVolume: expected rank 3, got " << shape_str(data.shape()));
        for (int64_t i = 0; i < data.size(); ++i)
            DUOLIFT_CHECK(data[i] == 0.0 || data[i] == 1.0,
                          "MaskVolume: non-binary value " << data[i] << " at flat index " << i);
    }

    /// Voxelwise implication: every set voxel of *this is set in `outer`.
    bool subset_of(const MaskVolume& outer) const {
        if (!data.same_shape(outer.data)) return false;
        for (int64_t i = 0; i < data.size(); ++i)
            if (data[i] != 0.0 && outer.data[i] == 0.0) return false;
        return true;
    }
};

/// H x W scalar grid in [0,1] tagged with its view axis. A frontal projection
/// collapses depth (rows = height, cols = width); a lateral projection
/// collapses width (rows = height, cols = depth).
struct Projection {
    Tensor data;  // rank 2: (rows, cols)
    View view = View::frontal;

    Projection() = default;
    Projection(int rows, int cols, View v) : data(Shape{rows, cols}, 0.0), view(v) {}

    int rows() const { return data.dim(0); }
    int cols() const { return data.dim(1); }
    real& at(int r, int c) { return data[int64_t(r) * cols() + c]; }
    real at(int r, int c) const { return data[int64_t(r) * cols() + c]; }
};

// ---- file round-trips (DLVOL1) ----

inline void save_volume(const std::string& path, const Volume& v) {
    io::VolumeFile vf;
    vf.dtype = io::kDtypeF32;
    vf.dims[0] = v.depth();
    vf.dims[1] = v.height();
    vf.dims[2] = v.width();
    for (int i = 0; i < 3; ++i) vf.spacing[i] = v.spacing[static_cast<size_t>(i)];
    vf.f32.resize(static_cast<size_t>(v.data.size()));
    for (int64_t i = 0; i < v.data.size(); ++i) vf.f32[static_cast<size_t>(i)] = static_cast<float>(v.data[i]);
    io::write_volume_file(path, vf);
}

inline Volume load_volume(const std::string& path) {
    io::VolumeFile vf = io::read_volume_file(path);
    DUOLIFT_REQUIRE(vf.dtype == io::kDtypeF32, "expected f32 volume in " << path);
    Volume v(vf.dims[0], vf.dims[1], vf.dims[2]);
    for (int i = 0; i < 3; ++i) v.spacing[static_cast<size_t>(i)] = vf.spacing[i];
    for (int64_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<real>(vf.f32[static_cast<size_t>(i)]);
    return v;
}

inline void save_mask(const std::string& path, const MaskVolume& m) {
    io::VolumeFile vf;
    vf.dtype = io::kDtypeU8;
    vf.dims[0] = m.depth();
    vf.dims[1] = m.height();
    vf.dims[2] = m.width();
    vf.u8.resize(static_cast<size_t>(m.data.size()));
    for (int64_t i = 0; i < m.data.size(); ++i) vf.u8[static_cast<size_t>(i)] = m.data[i] != 0.0 ? 1 : 0;
    io::write_volume_file(path, vf);
}

inline MaskVolume load_mask(const std::string& path, MaskLabel label) {
    io::VolumeFile vf = io::read_volume_file(path);
    DUOLIFT_REQUIRE(vf.dtype == io::kDtypeU8, "expected u8 mask in " << path);
    MaskVolume m(vf.dims[0], vf.dims[1], vf.dims[2], label);
    for (int64_t i = 0; i < m.data.size(); ++i) m.data[i] = vf.u8[static_cast<size_t>(i)] ? 1.0 : 0.0;
    return m;
}

inline void save_projection(const std::string& path, const Projection& p) {
    io::VolumeFile vf;
    vf.dtype = io::kDtypeF32;
    vf.dims[0] = 1;
    vf.dims[1] = p.rows();
    vf.dims[2] = p.cols();
    vf.f32.resize(static_cast<size_t>(p.data.size()));
    for (int64_t i = 0; i < p.data.size(); ++i) vf.f32[static_cast<size_t>(i)] = static_cast<float>(p.data[i]);
    io::write_volume_file(path, vf);
}

inline Projection load_projection(const std::string& path, View view) {
    io::VolumeFile vf = io::read_volume_file(path);
    DUOLIFT_REQUIRE(vf.dtype == io::kDtypeF32 && vf.dims[0] == 1, "expected 1xHxW f32 projection in " << path);
    Projection p(vf.dims[1], vf.dims[2], view);
    for (int64_t i = 0; i < p.data.size(); ++i) p.data[i] = static_cast<real>(vf.f32[static_cast<size_t>(i)]);
    return p;
}

}  // namespace duolift
