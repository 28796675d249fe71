#include <catch2/catch_amalgamated.hpp>

#include "probegen/sim.hpp"

#include "helpers.hpp"

#include <map>
#include <set>

using namespace probegen;

namespace {

TileCoord window_for(int size) {
    int zoom = zoom_for_tile_size(size);
    return TileCoord{zoom, std::uint64_t(3) << (zoom - 4), std::uint64_t(5) << (zoom - 4)};
}

RoadGraph horizontal_edge_graph(int size = 32) {
    RoadGraph g;
    g.window = window_for(size);
    g.size = size;
    g.vertices = {{5.0, 5.0}, {9.0, 5.0}};
    g.edges = {{0, 1}};
    return g;
}

} // namespace

TEST_CASE("roadgraph: synthesis is deterministic in the seed") {
    auto w = window_for(32);
    for (auto style : {RoadStyle::grid, RoadStyle::radial, RoadStyle::organic}) {
        RoadGraph a = synth_road_graph(style, 32, 0.7, 99, w);
        RoadGraph b = synth_road_graph(style, 32, 0.7, 99, w);
        REQUIRE(a.vertices == b.vertices);
        REQUIRE(a.edges == b.edges);
        RoadGraph c = synth_road_graph(style, 32, 0.7, 100, w);
        REQUIRE((a.vertices != c.vertices || a.edges != c.edges));
    }
}

TEST_CASE("roadgraph: grid at density 1 is the full lattice") {
    RoadGraph g = synth_road_graph(RoadStyle::grid, 64, 1.0, 7, window_for(64));
    const int lines = 6;
    REQUIRE(g.vertices.size() == static_cast<std::size_t>(lines * lines));
    REQUIRE(g.edges.size() == static_cast<std::size_t>(2 * lines * (lines - 1)));
}

TEST_CASE("roadgraph: all styles stay connected across densities and seeds") {
    for (auto style : {RoadStyle::grid, RoadStyle::radial, RoadStyle::organic})
        for (double density : {0.4, 0.7, 1.0})
            for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
                RoadGraph g = synth_road_graph(style, 32, density, seed, window_for(32));
                REQUIRE(detail::graph_connected(g));
                REQUIRE(!g.edges.empty());
            }
}

TEST_CASE("roadgraph: rasterization marks exactly the traced pixels") {
    RoadGraph g = horizontal_edge_graph();
    RasterImage img = rasterize_road_graph(g);
    REQUIRE(img.space == Space::count);
    REQUIRE(img.georef == g.window);
    double total = 0.0;
    for (double v : img.data) {
        REQUIRE((v == 0.0 || v == 1.0));
        total += v;
    }
    REQUIRE(total == 5.0);
    for (int j = 5; j <= 9; ++j) REQUIRE(img.at(5, j, 0) == 1.0);
}

TEST_CASE("roadgraph: domain checks") {
    auto w = window_for(32);
    REQUIRE_THROWS_AS(synth_road_graph(RoadStyle::grid, 33, 0.5, 1, w), DomainError);
    REQUIRE_THROWS_AS(synth_road_graph(RoadStyle::grid, 32, 0.0, 1, w), DomainError);
    REQUIRE_THROWS_AS(synth_road_graph(RoadStyle::grid, 64, 0.5, 1, w), DomainError);
    REQUIRE_THROWS_AS(road_style_from_string("spiral"), DomainError);
}

TEST_CASE("sim: zero-noise probes sit on road pixels with edge bearings") {
    RoadGraph g = horizontal_edge_graph();
    SimConfig cfg;
    cfg.gps_noise_sigma_px = 0.0;
    cfg.heading_noise_sigma_deg = 0.0;
    cfg.probe_rate = 0.05;
    cfg.modality_mix = {{"driving", 1.0}};
    auto probes = simulate_probes(g, cfg, 5);
    REQUIRE(!probes.empty());
    RasterImage road = rasterize_road_graph(g);
    for (const auto& p : probes) {
        REQUIRE((p.heading == 90.0 || p.heading == 270.0));
        REQUIRE(p.t >= 0.0);
        REQUIRE(p.t < cfg.delta_t);
        REQUIRE(p.modality == "driving");
        TileCoord px = lonlat_to_tile({p.lon, p.lat}, kPixelZoom);
        int j = static_cast<int>(px.x - g.window.x * 32);
        int i = static_cast<int>(px.y - g.window.y * 32);
        REQUIRE(road.at(i, j, 0) == 1.0);
    }
}

TEST_CASE("sim: hcrm channels reflect edge bearings") {
    RoadGraph g = horizontal_edge_graph();
    SimConfig cfg;
    cfg.gps_noise_sigma_px = 0.0;
    cfg.heading_noise_sigma_deg = 0.0;
    cfg.modality_mix = {{"driving", 1.0}};
    auto probes = simulate_probes(g, cfg, 5);
    RasterImage h = rasterize_probes(probes, g.window, RasterMode::hcrm);
    double total = 0.0, in_bearing_buckets = 0.0;
    for (int i = 0; i < h.h; ++i)
        for (int j = 0; j < h.w; ++j)
            for (int k = 0; k < 12; ++k) {
                total += h.at(i, j, k);
                if (k == 3 || k == 9) in_bearing_buckets += h.at(i, j, k);
            }
    REQUIRE(total == in_bearing_buckets);
    REQUIRE(total == static_cast<double>(probes.size()));
}

TEST_CASE("sim: zero rate emits nothing, traces are time-ordered") {
    RoadGraph g = horizontal_edge_graph();
    SimConfig cfg;
    cfg.probe_rate = 0.0;
    REQUIRE(simulate_probes(g, cfg, 1).empty());

    cfg.probe_rate = 0.2;
    auto probes = simulate_probes(g, cfg, 2);
    std::map<std::string, double> last_t;
    std::map<std::string, std::string> trace_modality;
    for (const auto& p : probes) {
        auto it = last_t.find(p.trace_id);
        if (it != last_t.end()) {
            REQUIRE(p.t >= it->second);
            REQUIRE(trace_modality[p.trace_id] == p.modality);
        }
        last_t[p.trace_id] = p.t;
        trace_modality[p.trace_id] = p.modality;
    }
}

TEST_CASE("sim: counts scale linearly in delta_t and probe_rate") {
    RoadGraph g = synth_road_graph(RoadStyle::grid, 32, 1.0, 3, window_for(32));
    auto total_count = [&](double delta_t, double rate, std::uint64_t seed) {
        SimConfig cfg;
        cfg.delta_t = delta_t;
        cfg.probe_rate = rate;
        cfg.modality_mix = {{"driving", 1.0}};
        auto probes = simulate_probes(g, cfg, seed);
        RasterImage img = rasterize_probes(probes, g.window, RasterMode::crm);
        double s = 0.0;
        for (double v : img.data) s += v;
        return s;
    };
    double base = 0.0, double_dt = 0.0, double_rate = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        base += total_count(60.0, 0.05, seed);
        double_dt += total_count(120.0, 0.05, seed + 100);
        double_rate += total_count(60.0, 0.10, seed + 200);
    }
    REQUIRE(double_dt / base > 1.8);
    REQUIRE(double_dt / base < 2.2);
    REQUIRE(double_rate / base > 1.8);
    REQUIRE(double_rate / base < 2.2);
}

TEST_CASE("sim: perturbations keep connectivity and report skips") {
    RoadGraph g = synth_road_graph(RoadStyle::grid, 32, 1.0, 11, window_for(32));

    PerturbSpec none;
    PerturbResult same = perturb_road_graph(g, none, 1);
    REQUIRE(same.applied.empty());
    REQUIRE(same.graph.edges == g.edges);

    PerturbSpec spec;
    spec.remove_edges = 2;
    spec.add_edges = 1;
    spec.roundabouts = 1;
    PerturbResult pr = perturb_road_graph(g, spec, 17);
    REQUIRE(detail::graph_connected(pr.graph));
    REQUIRE(pr.applied.size() + pr.skipped.size() == 4);
    REQUIRE(!pr.applied.empty());

    RasterImage before = rasterize_road_graph(g);
    RasterImage after = rasterize_road_graph(pr.graph);
    RasterImage mask = change_mask(before, after);
    for (std::size_t i = 0; i < mask.data.size(); ++i) {
        double expect = (before.data[i] != 0.0) != (after.data[i] != 0.0) ? 1.0 : 0.0;
        REQUIRE(mask.data[i] == expect);
    }
}

TEST_CASE("sim: a two-vertex path refuses edge removal") {
    RoadGraph g = horizontal_edge_graph();
    PerturbSpec spec;
    spec.remove_edges = 1;
    PerturbResult pr = perturb_road_graph(g, spec, 3);
    REQUIRE(pr.applied.empty());
    REQUIRE(pr.skipped.size() == 1);
    REQUIRE(pr.graph.edges == g.edges);
}

TEST_CASE("sim: split assignment partitions 70/20/10") {
    auto splits = assign_splits(10, 42);
    int tr = 0, va = 0, te = 0;
    for (const auto& s : splits) {
        tr += s == "train";
        va += s == "val";
        te += s == "test";
    }
    REQUIRE(tr == 7);
    REQUIRE(va == 2);
    REQUIRE(te == 1);

    auto splits2 = assign_splits(10, 42);
    REQUIRE(splits == splits2);

    auto big = assign_splits(500, 7);
    int btr = 0, bva = 0, bte = 0;
    for (const auto& s : big) {
        btr += s == "train";
        bva += s == "val";
        bte += s == "test";
    }
    REQUIRE(btr == 350);
    REQUIRE(bva == 100);
    REQUIRE(bte == 50);
}

TEST_CASE("sim: dataset build is deterministic and internally consistent") {
    DatasetConfig cfg;
    cfg.n_tiles = 12;
    cfg.tile_size = 32;
    Dataset a = build_dataset(cfg, 2024);
    Dataset b = build_dataset(cfg, 2024);
    REQUIRE(a.examples.size() == 12);
    for (std::size_t i = 0; i < a.examples.size(); ++i) {
        REQUIRE(a.examples[i].crm.data == b.examples[i].crm.data);
        REQUIRE(a.examples[i].hcrm.data == b.examples[i].hcrm.data);
        REQUIRE(a.examples[i].road.data == b.examples[i].road.data);
        RasterImage collapsed = hcrm_to_crm(a.examples[i].hcrm);
        REQUIRE(collapsed.data == a.examples[i].crm.data);
        REQUIRE(a.examples[i].crm.georef == a.examples[i].road.georef);
    }
}

TEST_CASE("sim: dataset write/read roundtrip") {
    auto dir = testutil::temp_dir("sim_dataset");
    DatasetConfig cfg;
    cfg.n_tiles = 6;
    cfg.tile_size = 32;
    Dataset ds = build_dataset(cfg, 5);
    dataset_write(dir.string(), ds);
    Dataset back = dataset_read(dir.string());
    REQUIRE(back.examples.size() == ds.examples.size());
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        REQUIRE(back.examples[i].split == ds.examples[i].split);
        REQUIRE(back.examples[i].road.data == ds.examples[i].road.data);
        REQUIRE(back.examples[i].crm.data == ds.examples[i].crm.data);
        REQUIRE(back.examples[i].hcrm.data == ds.examples[i].hcrm.data);
        REQUIRE(back.examples[i].hcrm.georef == ds.examples[i].hcrm.georef);
    }
}

TEST_CASE("sim: change dataset emits N*k triples with exact masks") {
    PerturbSpec spec;
    spec.remove_edges = 1;
    spec.add_edges = 1;
    auto triples = emit_change_dataset(2, 3, 32, spec, 77);
    REQUIRE(triples.size() == 6);
    for (const auto& tr : triples) {
        RasterImage expect = change_mask(rasterize_road_graph(tr.before_graph),
                                         rasterize_road_graph(tr.after_graph));
        REQUIRE(tr.mask.data == expect.data);
    }

    PerturbSpec identity;
    REQUIRE(emit_change_dataset(2, 3, 32, identity, 77).empty());
}
