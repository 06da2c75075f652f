// Binary file formats: DLVOL1 volumes/masks, PGM images, small helpers.
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "duolift/core.hpp"

namespace duolift::io {

// DLVOL1 layout (all little-endian):
//   bytes 0..5   magic "DLVOL1"
//   bytes 6..7   dtype code, u16: 1 = float32, 2 = uint8
//   bytes 8..19  D, H, W as u32
//   bytes 20..43 spacing (mm/voxel) as 3 x f64
//   bytes 44..   voxels in depth-major order (d slowest, w fastest)

constexpr uint16_t kDtypeF32 = 1;
constexpr uint16_t kDtypeU8 = 2;

namespace detail {

inline void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}
inline void put_f64(std::ostream& os, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}
inline float get_f32(std::istream& is) {
    uint32_t u = get_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}
inline double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace detail

struct VolumeFile {
    uint16_t dtype = kDtypeF32;
    int dims[3] = {0, 0, 0};              // D, H, W
    double spacing[3] = {1.0, 1.0, 1.0};  // mm/voxel
    std::vector<float> f32;               // used when dtype == kDtypeF32
    std::vector<uint8_t> u8;              // used when dtype == kDtypeU8
};

inline void write_volume_file(const std::string& path, const VolumeFile& vf) {
    std::ofstream os(path, std::ios::binary);
    DUOLIFT_REQUIRE(os.good(), "cannot open for write: " << path);
    os.write("DLVOL1", 6);
    detail::put_u16(os, vf.dtype);
    for (int i = 0; i < 3; ++i) detail::put_u32(os, static_cast<uint32_t>(vf.dims[i]));
    for (int i = 0; i < 3; ++i) detail::put_f64(os, vf.spacing[i]);
    int64_t n = int64_t(vf.dims[0]) * vf.dims[1] * vf.dims[2];
    if (vf.dtype == kDtypeF32) {
        DUOLIFT_REQUIRE(static_cast<int64_t>(vf.f32.size()) == n, "f32 payload size mismatch for " << path);
        for (float v : vf.f32) detail::put_f32(os, v);
    } else {
        DUOLIFT_REQUIRE(static_cast<int64_t>(vf.u8.size()) == n, "u8 payload size mismatch for " << path);
        os.write(reinterpret_cast<const char*>(vf.u8.data()), static_cast<std::streamsize>(vf.u8.size()));
    }
    DUOLIFT_REQUIRE(os.good(), "write failed: " << path);
}

inline VolumeFile read_volume_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    DUOLIFT_REQUIRE(is.good(), "cannot open for read: " << path);
    char magic[6];
    is.read(magic, 6);
    DUOLIFT_REQUIRE(is.good() && std::memcmp(magic, "DLVOL1", 6) == 0, "bad magic in " << path);
    VolumeFile vf;
    vf.dtype = detail::get_u16(is);
    DUOLIFT_REQUIRE(vf.dtype == kDtypeF32 || vf.dtype == kDtypeU8, "unknown dtype code " << vf.dtype << " in " << path);
    for (int i = 0; i < 3; ++i) vf.dims[i] = static_cast<int>(detail::get_u32(is));
    for (int i = 0; i < 3; ++i) vf.spacing[i] = detail::get_f64(is);
    int64_t n = int64_t(vf.dims[0]) * vf.dims[1] * vf.dims[2];
    if (vf.dtype == kDtypeF32) {
        vf.f32.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) vf.f32[static_cast<size_t>(i)] = detail::get_f32(is);
    } else {
        vf.u8.resize(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(vf.u8.data()), static_cast<std::streamsize>(n));
    }
    DUOLIFT_REQUIRE(is.good(), "truncated file: " << path);
    return vf;
}

/// 8-bit binary PGM. `pixels` are row-major in [0,1].
inline void write_pgm(const std::string& path, const std::vector<real>& pixels, int rows, int cols) {
    DUOLIFT_REQUIRE(static_cast<int64_t>(pixels.size()) == int64_t(rows) * cols, "pgm size mismatch: " << path);
    std::ofstream os(path, std::ios::binary);
    DUOLIFT_REQUIRE(os.good(), "cannot open for write: " << path);
    os << "P5\n" << cols << " " << rows << "\n255\n";
    std::vector<unsigned char> bytes(pixels.size());
    for (size_t i = 0; i < pixels.size(); ++i) {
        real v = std::clamp(pixels[i], real(0), real(1));
        bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

/// FNV-1a over a file's bytes; used to fingerprint inputs in run manifests.
inline uint64_t fnv1a_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    DUOLIFT_REQUIRE(is.good(), "cannot open for hashing: " << path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        std::streamsize got = is.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream is(path);
    DUOLIFT_REQUIRE(is.good(), "cannot open for read: " << path);
    std::ostringstream oss;
    oss << is.rdbuf();
    return oss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    DUOLIFT_REQUIRE(os.good(), "cannot open for write: " << path);
    os << text;
    DUOLIFT_REQUIRE(os.good(), "write failed: " << path);
}

}  // namespace duolift::io
