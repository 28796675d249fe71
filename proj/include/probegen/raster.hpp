#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "probegen/common.hpp"
#include "probegen/geo.hpp"

namespace probegen {

enum class Space : std::uint8_t { count = 0, lognorm = 1 };

// Dense raster, row-major (h, w, c) with the channel innermost, matching the
// GRD1 payload order. Count-space values are whole numbers when persisted;
// lognorm-space values are stored on disk as binary32.
struct RasterImage {
    int h = 0;
    int w = 0;
    int c = 0;
    Space space = Space::count;
    std::optional<TileCoord> georef;
    std::vector<double> data;

    RasterImage() = default;
    RasterImage(int h_, int w_, int c_, Space s)
        : h(h_), w(w_), c(c_), space(s), data(static_cast<std::size_t>(h_) * w_ * c_, 0.0) {
        check_contract(h_ > 0 && w_ > 0 && c_ > 0, "RasterImage: dimensions must be positive");
    }

    double& at(int i, int j, int k) {
        return data[(static_cast<std::size_t>(i) * w + j) * c + k];
    }
    double at(int i, int j, int k) const {
        return data[(static_cast<std::size_t>(i) * w + j) * c + k];
    }
    std::size_t size() const { return data.size(); }
};

// log(1 + x); operates in double so forward/inverse stay mutually inverse.
inline double lognorm_forward(double v) {
    check_domain(std::isfinite(v) && v >= 0.0, "lognorm_forward: value must be finite and >= 0");
    return std::log1p(v);
}

// exp(x) - 1, clamped to be non-negative.
inline double lognorm_inverse(double v) {
    check_domain(std::isfinite(v), "lognorm_inverse: non-finite value");
    double r = std::expm1(v);
    return r < 0.0 ? 0.0 : r;
}

inline RasterImage lognorm_forward(const RasterImage& img) {
    check_contract(img.space == Space::count, "lognorm_forward: raster already in lognorm space");
    RasterImage out = img;
    out.space = Space::lognorm;
    for (auto& v : out.data) v = lognorm_forward(v);
    return out;
}

inline RasterImage lognorm_inverse(const RasterImage& img) {
    check_contract(img.space == Space::lognorm, "lognorm_inverse: raster already in count space");
    RasterImage out = img;
    out.space = Space::count;
    for (auto& v : out.data) v = lognorm_inverse(v);
    return out;
}

// Collapses heading channels by summation; recovers the CRM from an HCRM.
inline RasterImage hcrm_to_crm(const RasterImage& img) {
    check_contract(img.c > 1, "hcrm_to_crm: input must be multi-channel");
    RasterImage out(img.h, img.w, 1, img.space);
    out.georef = img.georef;
    for (int i = 0; i < img.h; ++i)
        for (int j = 0; j < img.w; ++j) {
            double s = 0.0;
            for (int k = 0; k < img.c; ++k) s += img.at(i, j, k);
            out.at(i, j, 0) = s;
        }
    return out;
}

namespace detail {

inline void put_u8(std::string& b, std::uint8_t v) { b.push_back(static_cast<char>(v)); }
inline void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& b, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(b, bits);
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;
    explicit ByteReader(const std::string& b) : buf(b) {}

    void need(std::size_t n, const char* what) {
        check_format(pos + n <= buf.size(), std::string("grd: truncated ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

} // namespace detail

// GRD1 container. dtype is implied by space: count rasters hold u32 payloads,
// lognorm rasters hold binary32 payloads. All fields little-endian.
inline std::string grid_serialize(const RasterImage& img) {
    check_contract(img.h > 0 && img.w > 0 && img.c > 0, "grd: raster has no payload");
    check_contract(img.data.size() == static_cast<std::size_t>(img.h) * img.w * img.c,
                   "grd: data size does not match dimensions");
    const bool counts = img.space == Space::count;
    for (double v : img.data) {
        check_contract(std::isfinite(v) && v >= 0.0, "grd: values must be finite and >= 0");
        if (counts) {
            check_contract(v == std::floor(v), "grd: count raster holds a non-integral value");
            if (v > 4294967295.0) throw NumericError("grd: count exceeds the u32 range");
        }
    }
    std::string b;
    b.reserve(40 + img.data.size() * 4);
    b += "GRD1";
    detail::put_u8(b, 1);
    detail::put_u8(b, counts ? 0 : 1);
    detail::put_u8(b, img.georef ? 1 : 0);
    detail::put_u8(b, static_cast<std::uint8_t>(img.space));
    detail::put_u32(b, static_cast<std::uint32_t>(img.h));
    detail::put_u32(b, static_cast<std::uint32_t>(img.w));
    detail::put_u32(b, static_cast<std::uint32_t>(img.c));
    if (img.georef) {
        detail::put_u8(b, static_cast<std::uint8_t>(img.georef->zoom));
        detail::put_u8(b, 0);
        detail::put_u8(b, 0);
        detail::put_u8(b, 0);
        detail::put_u64(b, img.georef->x);
        detail::put_u64(b, img.georef->y);
    }
    if (counts) {
        for (double v : img.data) detail::put_u32(b, static_cast<std::uint32_t>(v));
    } else {
        for (double v : img.data) detail::put_f32(b, static_cast<float>(v));
    }
    return b;
}

inline RasterImage grid_deserialize(const std::string& buf) {
    detail::ByteReader r(buf);
    r.need(4, "magic");
    check_format(buf.compare(0, 4, "GRD1") == 0, "grd: bad magic");
    r.pos = 4;
    const std::uint8_t version = r.u8("version");
    check_format(version == 1, "grd: unsupported version " + std::to_string(version));
    const std::uint8_t dtype = r.u8("dtype");
    check_format(dtype <= 1, "grd: unsupported dtype " + std::to_string(dtype));
    const std::uint8_t has_georef = r.u8("georef flag");
    check_format(has_georef <= 1, "grd: bad georef flag");
    const std::uint8_t space = r.u8("space");
    check_format(space <= 1, "grd: bad space flag");
    check_format((space == 0) == (dtype == 0), "grd: dtype/space mismatch");
    const std::uint32_t h = r.u32("height");
    const std::uint32_t w = r.u32("width");
    const std::uint32_t c = r.u32("channels");
    check_format(h > 0 && w > 0 && c > 0, "grd: zero dimension");
    check_format(std::uint64_t(h) * w * c <= (std::uint64_t(1) << 32), "grd: implausible dimensions");
    RasterImage img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c),
                    static_cast<Space>(space));
    if (has_georef) {
        TileCoord t;
        t.zoom = r.u8("georef zoom");
        check_format(r.u8("georef pad") == 0 && r.u8("georef pad") == 0 && r.u8("georef pad") == 0,
                     "grd: nonzero georef padding");
        t.x = r.u64("georef x");
        t.y = r.u64("georef y");
        img.georef = t;
    }
    for (auto& v : img.data) {
        if (dtype == 0)
            v = static_cast<double>(r.u32("payload"));
        else
            v = static_cast<double>(r.f32("payload"));
    }
    check_format(r.pos == buf.size(), "grd: trailing bytes after payload");
    return img;
}

inline void grid_write(const std::string& path, const RasterImage& img) {
    std::string bytes = grid_serialize(img);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check_format(f.good(), "grd: cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    check_format(f.good(), "grd: write failed: " + path);
}

inline RasterImage grid_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check_format(f.good(), "grd: cannot open for reading: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return grid_deserialize(buf);
}

// 8-bit PGM preview with per-image max normalization: 255 * v / max(v),
// rounded to nearest; an all-zero image stays all zeros. Multi-channel
// rasters are collapsed by channel sum first.
inline void write_pgm(const std::string& path, const RasterImage& img) {
    const RasterImage flat = img.c == 1 ? img : hcrm_to_crm(img);
    double mx = 0.0;
    for (double v : flat.data) mx = std::max(mx, v);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check_format(f.good(), "pgm: cannot open for writing: " + path);
    f << "P5\n" << flat.w << " " << flat.h << "\n255\n";
    for (double v : flat.data) {
        int g = mx > 0.0 ? static_cast<int>(std::lround(255.0 * v / mx)) : 0;
        if (g < 0) g = 0;
        if (g > 255) g = 255;
        f.put(static_cast<char>(g));
    }
    check_format(f.good(), "pgm: write failed: " + path);
}

} // namespace probegen
