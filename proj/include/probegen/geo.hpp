#pragma once

#include <cmath>
#include <cstdint>

#include "probegen/common.hpp"

namespace probegen {

inline constexpr double kMaxMercatorLat = 85.05112878;
inline constexpr int kPixelZoom = 24;

struct GeoPoint {
    double lon = 0.0;
    double lat = 0.0;
};

struct TileCoord {
    int zoom = 0;
    std::uint64_t x = 0;
    std::uint64_t y = 0;

    bool operator==(const TileCoord&) const = default;
};

// Wraps longitude into [-180, 180).
inline double normalize_lon(double lon) {
    double l = std::fmod(lon + 180.0, 360.0);
    if (l < 0.0) l += 360.0;
    return l - 180.0;
}

// Web Mercator tile containing the point at the given zoom.
inline TileCoord lonlat_to_tile(GeoPoint p, int zoom) {
    check_domain(zoom >= 0 && zoom <= 24, "lonlat_to_tile: zoom must be in [0, 24]");
    check_domain(std::isfinite(p.lon) && std::isfinite(p.lat), "lonlat_to_tile: non-finite coordinate");
    check_domain(std::abs(p.lat) <= kMaxMercatorLat, "lonlat_to_tile: latitude outside Mercator band");
    const double n = std::ldexp(1.0, zoom);
    double lon = normalize_lon(p.lon);
    double xf = (lon + 180.0) / 360.0 * n;
    double lat_rad = p.lat * M_PI / 180.0;
    double yf = (1.0 - std::asinh(std::tan(lat_rad)) / M_PI) / 2.0 * n;
    auto clamp_idx = [&](double v) {
        double f = std::floor(v);
        if (f < 0.0) f = 0.0;
        if (f > n - 1.0) f = n - 1.0;
        return static_cast<std::uint64_t>(f);
    };
    return TileCoord{zoom, clamp_idx(xf), clamp_idx(yf)};
}

// Geographic position of a fractional tile coordinate (x, y at the given zoom).
inline GeoPoint tile_to_lonlat(double xf, double yf, int zoom) {
    check_domain(zoom >= 0 && zoom <= 24, "tile_to_lonlat: zoom must be in [0, 24]");
    const double n = std::ldexp(1.0, zoom);
    double lon = xf / n * 360.0 - 180.0;
    double lat = std::atan(std::sinh(M_PI * (1.0 - 2.0 * yf / n))) * 180.0 / M_PI;
    return GeoPoint{lon, lat};
}

// 30-degree heading buckets; 0 = [0, 30), ..., 11 = [330, 360).
inline int heading_to_bucket(double heading_deg) {
    check_domain(std::isfinite(heading_deg), "heading_to_bucket: non-finite heading");
    double h = std::fmod(heading_deg, 360.0);
    if (h < 0.0) h += 360.0;
    int b = static_cast<int>(h / 30.0);
    return b > 11 ? 11 : b;
}

// Compass bearing of the direction (dx, dy) in raster pixel axes
// (x grows east, y grows south): north = 0, east = 90.
inline double bearing_of_delta(double dx, double dy) {
    double deg = std::atan2(dx, -dy) * 180.0 / M_PI;
    if (deg < 0.0) deg += 360.0;
    if (deg >= 360.0) deg = 0.0;
    return deg;
}

} // namespace probegen
