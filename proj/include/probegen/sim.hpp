#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probegen/common.hpp"
#include "probegen/roadgraph.hpp"

namespace probegen {

// Probe emission model: every road pixel sheds Poisson(probe_rate * delta_t)
// probes per traversal direction, timestamped within the aggregation interval,
// with Gaussian GPS and heading noise around the pixel center and edge bearing.
struct SimConfig {
    double delta_t = 60.0;
    double probe_rate = 0.05;
    double gps_noise_sigma_px = 0.5;
    double heading_noise_sigma_deg = 8.0;
    std::map<std::string, double> modality_mix{{"driving", 0.85}, {"walking", 0.15}};
    int trace_len = 20;
};

inline std::vector<ProbeRecord> simulate_probes(const RoadGraph& g, const SimConfig& cfg,
                                                std::uint64_t seed) {
    check_domain(cfg.delta_t > 0.0, "simulate_probes: delta_t must be positive");
    check_domain(cfg.probe_rate >= 0.0, "simulate_probes: probe_rate must be >= 0");
    check_domain(cfg.gps_noise_sigma_px >= 0.0, "simulate_probes: gps noise must be >= 0");
    check_domain(cfg.heading_noise_sigma_deg >= 0.0, "simulate_probes: heading noise must be >= 0");
    check_domain(!cfg.modality_mix.empty(), "simulate_probes: empty modality mix");
    check_domain(cfg.trace_len > 0, "simulate_probes: trace_len must be positive");

    Rng rng(seed, "sim/probes");
    std::vector<std::string> modalities;
    std::vector<double> weights;
    for (const auto& [name, w] : cfg.modality_mix) {
        check_domain(w >= 0.0, "simulate_probes: negative modality weight");
        modalities.push_back(name);
        weights.push_back(w);
    }

    struct Event {
        double t;
        double x, y;
        double heading;
    };
    const double px0 = static_cast<double>(g.window.x) * g.size;
    const double py0 = static_cast<double>(g.window.y) * g.size;
    const double mean = cfg.probe_rate * cfg.delta_t;

    std::vector<ProbeRecord> out;
    for (std::size_t ei = 0; ei < g.edges.size(); ++ei) {
        const auto& e = g.edges[ei];
        const auto& a = g.vertices[static_cast<std::size_t>(e[0])];
        const auto& b = g.vertices[static_cast<std::size_t>(e[1])];
        const double fwd = bearing_of_delta(b[0] - a[0], b[1] - a[1]);
        const double bwd = std::fmod(fwd + 180.0, 360.0);
        const auto pixels = detail::bresenham(a[0], a[1], b[0], b[1], g.size);
        for (int dir = 0; dir < 2; ++dir) {
            std::vector<Event> events;
            const double bearing = dir == 0 ? fwd : bwd;
            for (const auto& px : pixels) {
                const auto n = rng.poisson(mean);
                for (std::uint64_t k = 0; k < n; ++k) {
                    Event ev;
                    ev.t = rng.uniform(0.0, cfg.delta_t);
                    ev.x = px[0] + 0.5 + rng.normal(0.0, cfg.gps_noise_sigma_px);
                    ev.y = px[1] + 0.5 + rng.normal(0.0, cfg.gps_noise_sigma_px);
                    double h = std::fmod(bearing + rng.normal(0.0, cfg.heading_noise_sigma_deg), 360.0);
                    if (h < 0.0) h += 360.0;
                    ev.heading = h;
                    events.push_back(ev);
                }
            }
            std::sort(events.begin(), events.end(), [](const Event& l, const Event& r) { return l.t < r.t; });
            // One traveler per trace: events are chunked in time order and the
            // whole chunk shares a modality.
            const std::size_t chunk = static_cast<std::size_t>(cfg.trace_len);
            std::string modality;
            for (std::size_t i = 0; i < events.size(); ++i) {
                if (i % chunk == 0) modality = modalities[rng.categorical(weights)];
                const Event& ev = events[i];
                GeoPoint p = tile_to_lonlat(px0 + ev.x, py0 + ev.y, kPixelZoom);
                ProbeRecord rec;
                rec.trace_id = "e" + std::to_string(ei) + (dir == 0 ? "f" : "b") +
                               std::to_string(i / chunk);
                rec.t = ev.t;
                rec.lon = p.lon;
                rec.lat = p.lat;
                rec.heading = ev.heading;
                rec.modality = modality;
                out.push_back(std::move(rec));
            }
        }
    }
    return out;
}

struct DatasetConfig {
    int n_tiles = 500;
    int tile_size = 32;
    std::vector<std::string> styles{"grid", "radial", "organic"};
    double density_min = 0.45;
    double density_max = 0.95;
    double delta_t_jitter_min = 0.5;
    double delta_t_jitter_max = 2.0;
    SimConfig sim;
    std::string modality_filter = "driving";
};

struct Example {
    int index = 0;
    std::string split;
    std::string style;
    RasterImage road;
    RasterImage crm;
    RasterImage hcrm;
};

struct Dataset {
    DatasetConfig config;
    std::uint64_t seed = 0;
    std::vector<Example> examples;

    std::vector<const Example*> split(const std::string& name) const {
        std::vector<const Example*> out;
        for (const auto& e : examples)
            if (e.split == name) out.push_back(&e);
        return out;
    }
};

inline int zoom_for_tile_size(int size) {
    check_domain(size >= 16 && (size & (size - 1)) == 0 && size <= 4096,
                 "tile size must be a power of two in [16, 4096]");
    int z = kPixelZoom;
    for (int s = size; s > 1; s >>= 1) --z;
    return z;
}

// Deterministic 70/20/10 split by shuffled index.
inline std::vector<std::string> assign_splits(int n, std::uint64_t seed) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, "data/split");
    rng.shuffle(order);
    const int n_train = static_cast<int>(std::floor(0.7 * n));
    const int n_val = static_cast<int>(std::floor(0.2 * n));
    std::vector<std::string> splits(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const char* s = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        splits[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = s;
    }
    return splits;
}

// Synthesizes the full corpus: per tile, a road network, its probe swarm, and
// the count rasters. Tiles vary in style, density, window, and interval
// length so conditions and attributes both carry signal.
inline Dataset build_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    check_domain(cfg.n_tiles > 0, "build_dataset: n_tiles must be positive");
    check_domain(!cfg.styles.empty(), "build_dataset: styles must be non-empty");
    check_domain(cfg.density_min > 0.0 && cfg.density_min <= cfg.density_max && cfg.density_max <= 1.0,
                 "build_dataset: bad density range");
    check_domain(cfg.delta_t_jitter_min > 0.0 && cfg.delta_t_jitter_min <= cfg.delta_t_jitter_max,
                 "build_dataset: bad delta_t jitter range");
    const int zoom = zoom_for_tile_size(cfg.tile_size);
    Dataset ds;
    ds.config = cfg;
    ds.seed = seed;
    auto splits = assign_splits(cfg.n_tiles, seed);
    for (int i = 0; i < cfg.n_tiles; ++i) {
        Rng rng(seed, "data/tile" + std::to_string(i));
        const std::uint64_t n = std::uint64_t(1) << zoom;
        TileCoord window{zoom, rng.uniform_int(n),
                         n / 4 + rng.uniform_int(n / 2 > 0 ? n / 2 : 1)};
        RoadStyle style = road_style_from_string(cfg.styles[static_cast<std::size_t>(i) % cfg.styles.size()]);
        double density = rng.uniform(cfg.density_min, cfg.density_max);
        SimConfig sim = cfg.sim;
        sim.delta_t *= std::exp(rng.uniform(std::log(cfg.delta_t_jitter_min), std::log(cfg.delta_t_jitter_max)));
        std::uint64_t tile_seed = rng.next_u64();
        RoadGraph g = synth_road_graph(style, cfg.tile_size, density, tile_seed, window);
        auto probes = simulate_probes(g, sim, tile_seed);
        Example ex;
        ex.index = i;
        ex.split = splits[static_cast<std::size_t>(i)];
        ex.style = to_string(style);
        ex.road = rasterize_road_graph(g);
        ex.crm = rasterize_probes(probes, window, RasterMode::crm, cfg.modality_filter);
        ex.hcrm = rasterize_probes(probes, window, RasterMode::hcrm, cfg.modality_filter);
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

namespace detail {

inline std::string tile_stem(int index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%06d", index);
    return buf;
}

} // namespace detail

// Persists a dataset as a manifest plus GRD1 tiles (and probe JSONL when the
// corpus was built with emit_probes).
inline void dataset_write(const std::string& dir, const Dataset& ds) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "tiles");
    nlohmann::json man;
    man["version"] = 1;
    man["n"] = ds.examples.size();
    man["tile_size"] = ds.config.tile_size;
    man["seed"] = ds.seed;
    man["examples"] = nlohmann::json::array();
    for (const auto& ex : ds.examples) {
        const std::string stem = detail::tile_stem(ex.index);
        grid_write((fs::path(dir) / "tiles" / (stem + "_road.grd")).string(), ex.road);
        grid_write((fs::path(dir) / "tiles" / (stem + "_crm.grd")).string(), ex.crm);
        grid_write((fs::path(dir) / "tiles" / (stem + "_hcrm.grd")).string(), ex.hcrm);
        nlohmann::json j;
        j["index"] = ex.index;
        j["split"] = ex.split;
        j["style"] = ex.style;
        j["road"] = "tiles/" + stem + "_road.grd";
        j["crm"] = "tiles/" + stem + "_crm.grd";
        j["hcrm"] = "tiles/" + stem + "_hcrm.grd";
        man["examples"].push_back(j);
    }
    std::ofstream f(fs::path(dir) / "manifest.json", std::ios::trunc);
    check_format(f.good(), "dataset: cannot write manifest in " + dir);
    f << man.dump(2) << "\n";
    check_format(f.good(), "dataset: manifest write failed in " + dir);
}

inline Dataset dataset_read(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream f(fs::path(dir) / "manifest.json");
    check_format(f.good(), "dataset: cannot open manifest in " + dir);
    nlohmann::json man = nlohmann::json::parse(f, nullptr, false);
    check_format(!man.is_discarded(), "dataset: manifest is not valid JSON");
    check_format(man.value("version", 0) == 1, "dataset: unsupported manifest version");
    Dataset ds;
    ds.seed = man.value("seed", std::uint64_t{0});
    ds.config.tile_size = man.value("tile_size", 0);
    ds.config.n_tiles = static_cast<int>(man.value("n", std::size_t{0}));
    try {
        for (const auto& j : man.at("examples")) {
            Example ex;
            ex.index = j.at("index").get<int>();
            ex.split = j.at("split").get<std::string>();
            ex.style = j.value("style", "");
            ex.road = grid_read((fs::path(dir) / j.at("road").get<std::string>()).string());
            ex.crm = grid_read((fs::path(dir) / j.at("crm").get<std::string>()).string());
            ex.hcrm = grid_read((fs::path(dir) / j.at("hcrm").get<std::string>()).string());
            ds.examples.push_back(std::move(ex));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset: bad manifest: ") + e.what());
    }
    return ds;
}

struct ChangeTriple {
    int base_index = 0;
    int variant = 0;
    RoadGraph before_graph;
    RoadGraph after_graph;
    RasterImage before;
    RasterImage after;
    RasterImage mask;
    std::vector<std::string> applied;
    std::vector<std::string> skipped;
};

// Emits N*k (before, after, change-mask) triples from freshly synthesized
// networks. The identity perturbation produces no triples, only skips.
inline std::vector<ChangeTriple> emit_change_dataset(int n_base, int k, int tile_size,
                                                     const PerturbSpec& spec, std::uint64_t seed) {
    check_domain(n_base > 0 && k > 0, "emit_change_dataset: N and k must be positive");
    std::vector<ChangeTriple> out;
    const int zoom = zoom_for_tile_size(tile_size);
    const std::vector<RoadStyle> styles{RoadStyle::grid, RoadStyle::radial, RoadStyle::organic};
    for (int i = 0; i < n_base; ++i) {
        Rng rng(seed, "change/base" + std::to_string(i));
        const std::uint64_t n = std::uint64_t(1) << zoom;
        TileCoord window{zoom, rng.uniform_int(n), n / 4 + rng.uniform_int(n / 2 > 0 ? n / 2 : 1)};
        RoadGraph base = synth_road_graph(styles[static_cast<std::size_t>(i) % styles.size()], tile_size,
                                          rng.uniform(0.6, 0.95), rng.next_u64(), window);
        RasterImage before = rasterize_road_graph(base);
        for (int j = 0; j < k; ++j) {
            PerturbResult pr = perturb_road_graph(base, spec, rng.next_u64());
            if (pr.applied.empty()) continue;
            ChangeTriple tr;
            tr.base_index = i;
            tr.variant = j;
            tr.before_graph = base;
            tr.after_graph = pr.graph;
            tr.before = before;
            tr.after = rasterize_road_graph(pr.graph);
            tr.mask = change_mask(tr.before, tr.after);
            tr.applied = pr.applied;
            tr.skipped = pr.skipped;
            out.push_back(std::move(tr));
        }
    }
    return out;
}

} // namespace probegen
