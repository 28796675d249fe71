#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probegen/common.hpp"
#include "probegen/geo.hpp"
#include "probegen/raster.hpp"

namespace probegen {

enum class RasterMode { crm, hcrm };

inline RasterMode raster_mode_from_string(const std::string& s) {
    if (s == "crm") return RasterMode::crm;
    if (s == "hcrm") return RasterMode::hcrm;
    throw DomainError("unknown raster mode: " + s + " (expected crm or hcrm)");
}

struct ProbeRecord {
    std::string trace_id;
    double t = 0.0;
    double lon = 0.0;
    double lat = 0.0;
    double heading = 0.0;
    std::string modality;

    bool operator==(const ProbeRecord&) const = default;
};

inline void probes_write_jsonl(const std::string& path, const std::vector<ProbeRecord>& probes) {
    std::ofstream f(path, std::ios::trunc);
    check_format(f.good(), "probes: cannot open for writing: " + path);
    for (const auto& p : probes) {
        nlohmann::json j;
        j["trace_id"] = p.trace_id;
        j["t"] = p.t;
        j["lon"] = p.lon;
        j["lat"] = p.lat;
        j["heading"] = p.heading;
        j["modality"] = p.modality;
        f << j.dump() << "\n";
    }
    check_format(f.good(), "probes: write failed: " + path);
}

inline std::vector<ProbeRecord> probes_read_jsonl(const std::string& path) {
    std::ifstream f(path);
    check_format(f.good(), "probes: cannot open for reading: " + path);
    std::vector<ProbeRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        check_format(!j.is_discarded(), "probes: bad JSON on line " + std::to_string(lineno));
        ProbeRecord p;
        try {
            p.trace_id = j.at("trace_id").get<std::string>();
            p.t = j.at("t").get<double>();
            p.lon = j.at("lon").get<double>();
            p.lat = j.at("lat").get<double>();
            p.heading = j.at("heading").get<double>();
            p.modality = j.at("modality").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("probes: line " + std::to_string(lineno) + ": " + e.what());
        }
        out.push_back(std::move(p));
    }
    return out;
}

// Pixel extent of a window tile: one pixel is one zoom-24 tile.
inline int window_extent(const TileCoord& window) {
    check_domain(window.zoom >= 12 && window.zoom <= kPixelZoom,
                 "window zoom must be in [12, 24]");
    return 1 << (kPixelZoom - window.zoom);
}

// Accumulates probes into a count raster over the window. CRM counts every
// retained probe in one channel; HCRM splits counts into twelve 30-degree
// heading channels. Probes outside the window or not matching the modality
// filter (empty filter keeps everything) are dropped.
inline RasterImage rasterize_probes(const std::vector<ProbeRecord>& probes,
                                    const TileCoord& window, RasterMode mode,
                                    const std::string& modality_filter = "driving") {
    const int extent = window_extent(window);
    const int channels = mode == RasterMode::hcrm ? 12 : 1;
    RasterImage img(extent, extent, channels, Space::count);
    img.georef = window;
    const std::uint64_t px0 = window.x * static_cast<std::uint64_t>(extent);
    const std::uint64_t py0 = window.y * static_cast<std::uint64_t>(extent);
    for (const auto& p : probes) {
        if (!modality_filter.empty() && p.modality != modality_filter) continue;
        TileCoord px = lonlat_to_tile(GeoPoint{p.lon, p.lat}, kPixelZoom);
        if (px.x < px0 || px.x >= px0 + extent) continue;
        if (px.y < py0 || px.y >= py0 + extent) continue;
        const int j = static_cast<int>(px.x - px0);
        const int i = static_cast<int>(px.y - py0);
        const int k = mode == RasterMode::hcrm ? heading_to_bucket(p.heading) : 0;
        img.at(i, j, k) += 1.0;
    }
    return img;
}

} // namespace probegen
