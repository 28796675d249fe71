#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "probegen/common.hpp"
#include "probegen/geo.hpp"
#include "probegen/probes.hpp"
#include "probegen/raster.hpp"
#include "probegen/rng.hpp"

namespace probegen {

enum class RoadStyle { grid, radial, organic };

inline RoadStyle road_style_from_string(const std::string& s) {
    if (s == "grid") return RoadStyle::grid;
    if (s == "radial") return RoadStyle::radial;
    if (s == "organic") return RoadStyle::organic;
    throw DomainError("unknown road style: " + s);
}

inline std::string to_string(RoadStyle s) {
    switch (s) {
        case RoadStyle::grid: return "grid";
        case RoadStyle::radial: return "radial";
        default: return "organic";
    }
}

// Planar road network in pixel coordinates (x = column, y = row) of a square
// window; the window tile georeferences the graph on the map.
struct RoadGraph {
    TileCoord window;
    int size = 0;
    std::vector<std::array<double, 2>> vertices;
    std::vector<std::array<int, 2>> edges;
};

namespace detail {

// 8-connected Bresenham between rounded endpoints, clipped to [0, size).
inline std::vector<std::array<int, 2>> bresenham(double x0d, double y0d, double x1d, double y1d,
                                                 int size) {
    int x0 = static_cast<int>(std::lround(x0d));
    int y0 = static_cast<int>(std::lround(y0d));
    int x1 = static_cast<int>(std::lround(x1d));
    int y1 = static_cast<int>(std::lround(y1d));
    std::vector<std::array<int, 2>> px;
    int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        if (x0 >= 0 && x0 < size && y0 >= 0 && y0 < size) px.push_back({x0, y0});
        if (x0 == x1 && y0 == y1) break;
        int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
    return px;
}

inline bool connected(int n_vertices, const std::vector<std::array<int, 2>>& edges,
                      const std::vector<bool>& vertex_alive) {
    int start = -1;
    int alive = 0;
    for (int v = 0; v < n_vertices; ++v)
        if (vertex_alive[static_cast<std::size_t>(v)]) {
            if (start < 0) start = v;
            ++alive;
        }
    if (alive <= 1) return true;
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n_vertices));
    for (const auto& e : edges) {
        adj[static_cast<std::size_t>(e[0])].push_back(e[1]);
        adj[static_cast<std::size_t>(e[1])].push_back(e[0]);
    }
    std::vector<bool> seen(static_cast<std::size_t>(n_vertices), false);
    std::vector<int> stack{start};
    seen[static_cast<std::size_t>(start)] = true;
    int found = 1;
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        for (int u : adj[static_cast<std::size_t>(v)])
            if (!seen[static_cast<std::size_t>(u)]) {
                seen[static_cast<std::size_t>(u)] = true;
                ++found;
                stack.push_back(u);
            }
    }
    return found == alive;
}

inline bool graph_connected(const RoadGraph& g) {
    std::vector<bool> alive(g.vertices.size(), false);
    for (const auto& e : g.edges) {
        alive[static_cast<std::size_t>(e[0])] = true;
        alive[static_cast<std::size_t>(e[1])] = true;
    }
    return connected(static_cast<int>(g.vertices.size()), g.edges, alive);
}

// Removes roughly (1 - density) of the edges, refusing removals that would
// disconnect the network.
inline void thin_edges(RoadGraph& g, double density, Rng& rng) {
    if (density >= 1.0) return;
    std::vector<std::size_t> order(g.edges.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::size_t target_removals =
        static_cast<std::size_t>(std::floor((1.0 - density) * static_cast<double>(g.edges.size())));
    std::vector<bool> removed(g.edges.size(), false);
    std::size_t done = 0;
    for (std::size_t cand : order) {
        if (done >= target_removals) break;
        removed[cand] = true;
        std::vector<std::array<int, 2>> rest;
        for (std::size_t i = 0; i < g.edges.size(); ++i)
            if (!removed[i]) rest.push_back(g.edges[i]);
        std::vector<bool> alive(g.vertices.size(), true);
        if (connected(static_cast<int>(g.vertices.size()), rest, alive) && !rest.empty())
            ++done;
        else
            removed[cand] = false;
    }
    std::vector<std::array<int, 2>> kept;
    for (std::size_t i = 0; i < g.edges.size(); ++i)
        if (!removed[i]) kept.push_back(g.edges[i]);
    g.edges = std::move(kept);
}

inline void synth_grid(RoadGraph& g, double density, Rng& rng) {
    const int size = g.size;
    const double margin = std::max(1.0, size / 16.0);
    const int lines = std::max(3, size / 10);
    std::vector<double> pos(static_cast<std::size_t>(lines));
    for (int i = 0; i < lines; ++i)
        pos[static_cast<std::size_t>(i)] =
            margin + (size - 1.0 - 2.0 * margin) * i / (lines - 1.0);
    for (int r = 0; r < lines; ++r)
        for (int c = 0; c < lines; ++c)
            g.vertices.push_back({pos[static_cast<std::size_t>(c)], pos[static_cast<std::size_t>(r)]});
    auto idx = [&](int r, int c) { return r * lines + c; };
    for (int r = 0; r < lines; ++r)
        for (int c = 0; c < lines; ++c) {
            if (c + 1 < lines) g.edges.push_back({idx(r, c), idx(r, c + 1)});
            if (r + 1 < lines) g.edges.push_back({idx(r, c), idx(r + 1, c)});
        }
    thin_edges(g, density, rng);
}

inline void synth_radial(RoadGraph& g, double density, Rng& rng) {
    const double cx = (g.size - 1.0) / 2.0;
    const int spokes = 5 + static_cast<int>(rng.uniform_int(4));
    const int rings = 2 + static_cast<int>(rng.uniform_int(2));
    const double rot = rng.uniform(0.0, 2.0 * M_PI);
    const double rmax = cx - std::max(1.0, g.size / 16.0);
    g.vertices.push_back({cx, cx});
    for (int k = 1; k <= rings; ++k) {
        double radius = rmax * k / rings;
        for (int i = 0; i < spokes; ++i) {
            double th = rot + 2.0 * M_PI * i / spokes;
            g.vertices.push_back({cx + radius * std::cos(th), cx + radius * std::sin(th)});
        }
    }
    auto ring_vertex = [&](int k, int i) { return 1 + (k - 1) * spokes + i; };
    for (int i = 0; i < spokes; ++i) {
        g.edges.push_back({0, ring_vertex(1, i)});
        for (int k = 1; k < rings; ++k) g.edges.push_back({ring_vertex(k, i), ring_vertex(k + 1, i)});
    }
    for (int k = 1; k <= rings; ++k)
        for (int i = 0; i < spokes; ++i) g.edges.push_back({ring_vertex(k, i), ring_vertex(k, (i + 1) % spokes)});
    thin_edges(g, density, rng);
}

inline void synth_organic(RoadGraph& g, double density, Rng& rng) {
    const int size = g.size;
    const int target = 8 + static_cast<int>(std::lround(density * 8.0));
    const double min_gap = size / 8.0;
    const double margin = std::max(1.0, size / 16.0);
    int attempts = 0;
    while (static_cast<int>(g.vertices.size()) < target && attempts < 400) {
        ++attempts;
        double x = rng.uniform(margin, size - 1.0 - margin);
        double y = rng.uniform(margin, size - 1.0 - margin);
        bool ok = true;
        for (const auto& v : g.vertices)
            ok &= std::hypot(v[0] - x, v[1] - y) >= min_gap;
        if (ok) g.vertices.push_back({x, y});
    }
    const int n = static_cast<int>(g.vertices.size());
    auto dist = [&](int a, int b) {
        return std::hypot(g.vertices[static_cast<std::size_t>(a)][0] - g.vertices[static_cast<std::size_t>(b)][0],
                          g.vertices[static_cast<std::size_t>(a)][1] - g.vertices[static_cast<std::size_t>(b)][1]);
    };
    std::vector<bool> in_tree(static_cast<std::size_t>(n), false);
    std::vector<double> best(static_cast<std::size_t>(n), 1e18);
    std::vector<int> parent(static_cast<std::size_t>(n), -1);
    in_tree[0] = true;
    for (int v = 1; v < n; ++v) {
        best[static_cast<std::size_t>(v)] = dist(0, v);
        parent[static_cast<std::size_t>(v)] = 0;
    }
    for (int step = 1; step < n; ++step) {
        int pick = -1;
        for (int v = 0; v < n; ++v)
            if (!in_tree[static_cast<std::size_t>(v)] &&
                (pick < 0 || best[static_cast<std::size_t>(v)] < best[static_cast<std::size_t>(pick)]))
                pick = v;
        in_tree[static_cast<std::size_t>(pick)] = true;
        g.edges.push_back({parent[static_cast<std::size_t>(pick)], pick});
        for (int v = 0; v < n; ++v)
            if (!in_tree[static_cast<std::size_t>(v)] && dist(pick, v) < best[static_cast<std::size_t>(v)]) {
                best[static_cast<std::size_t>(v)] = dist(pick, v);
                parent[static_cast<std::size_t>(v)] = pick;
            }
    }
    auto adjacent = [&](int a, int b) {
        for (const auto& e : g.edges)
            if ((e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)) return true;
        return false;
    };
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b)
            if (!adjacent(a, b) && dist(a, b) < size / 3.0 && rng.uniform() < 0.35 * density)
                g.edges.push_back({a, b});
}

} // namespace detail

// Synthesizes a connected road network of the given style. density in (0, 1]
// scales how much of the candidate network is kept.
inline RoadGraph synth_road_graph(RoadStyle style, int size, double density, std::uint64_t seed,
                                  const TileCoord& window) {
    check_domain(size >= 16 && (size & (size - 1)) == 0, "synth_road_graph: size must be a power of two >= 16");
    check_domain(density > 0.0 && density <= 1.0, "synth_road_graph: density must be in (0, 1]");
    check_domain(window_extent(window) == size, "synth_road_graph: window zoom does not match size");
    RoadGraph g;
    g.window = window;
    g.size = size;
    Rng rng(seed, "roadgraph/" + to_string(style));
    switch (style) {
        case RoadStyle::grid: detail::synth_grid(g, density, rng); break;
        case RoadStyle::radial: detail::synth_radial(g, density, rng); break;
        case RoadStyle::organic: detail::synth_organic(g, density, rng); break;
    }
    check_contract(!g.edges.empty(), "synth_road_graph: produced an empty network");
    check_contract(detail::graph_connected(g), "synth_road_graph: produced a disconnected network");
    return g;
}

// Binary road-pixel raster (1 where a road passes through the pixel).
inline RasterImage rasterize_road_graph(const RoadGraph& g) {
    RasterImage img(g.size, g.size, 1, Space::count);
    img.georef = g.window;
    for (const auto& e : g.edges) {
        const auto& a = g.vertices[static_cast<std::size_t>(e[0])];
        const auto& b = g.vertices[static_cast<std::size_t>(e[1])];
        for (const auto& px : detail::bresenham(a[0], a[1], b[0], b[1], g.size))
            img.at(px[1], px[0], 0) = 1.0;
    }
    return img;
}

struct PerturbSpec {
    int remove_edges = 0;
    int add_edges = 0;
    int roundabouts = 0;
};

struct PerturbResult {
    RoadGraph graph;
    std::vector<std::string> applied;
    std::vector<std::string> skipped;
};

// Applies structural edits while keeping the network connected. Edits that
// cannot be applied safely are skipped and reported rather than forced.
inline PerturbResult perturb_road_graph(const RoadGraph& g, const PerturbSpec& spec,
                                        std::uint64_t seed) {
    check_domain(spec.remove_edges >= 0 && spec.add_edges >= 0 && spec.roundabouts >= 0,
                 "perturb_road_graph: negative op count");
    PerturbResult res;
    res.graph = g;
    Rng rng(seed, "perturb");
    RoadGraph& out = res.graph;

    for (int n = 0; n < spec.remove_edges; ++n) {
        std::vector<std::size_t> order(out.edges.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order);
        bool done = false;
        for (std::size_t cand : order) {
            auto trial = out.edges;
            trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(cand));
            if (trial.empty()) continue;
            std::vector<bool> alive(out.vertices.size(), false);
            for (const auto& e : trial) {
                alive[static_cast<std::size_t>(e[0])] = true;
                alive[static_cast<std::size_t>(e[1])] = true;
            }
            if (detail::connected(static_cast<int>(out.vertices.size()), trial, alive)) {
                res.applied.push_back("remove_edge " + std::to_string(out.edges[cand][0]) + "-" +
                                      std::to_string(out.edges[cand][1]));
                out.edges = std::move(trial);
                done = true;
                break;
            }
        }
        if (!done) res.skipped.push_back("remove_edge: no removable edge keeps the network connected");
    }

    auto adjacent = [&](int a, int b) {
        for (const auto& e : out.edges)
            if ((e[0] == a && e[1] == b) || (e[0] == b && e[1] == a)) return true;
        return false;
    };
    for (int n = 0; n < spec.add_edges; ++n) {
        bool done = false;
        for (int attempt = 0; attempt < 200 && !done; ++attempt) {
            int a = static_cast<int>(rng.uniform_int(out.vertices.size()));
            int b = static_cast<int>(rng.uniform_int(out.vertices.size()));
            if (a == b || adjacent(a, b)) continue;
            double d = std::hypot(out.vertices[static_cast<std::size_t>(a)][0] - out.vertices[static_cast<std::size_t>(b)][0],
                                  out.vertices[static_cast<std::size_t>(a)][1] - out.vertices[static_cast<std::size_t>(b)][1]);
            if (d < out.size / 8.0 || d > out.size / 2.0) continue;
            out.edges.push_back({a, b});
            res.applied.push_back("add_edge " + std::to_string(a) + "-" + std::to_string(b));
            done = true;
        }
        if (!done) res.skipped.push_back("add_edge: no suitable vertex pair found");
    }

    for (int n = 0; n < spec.roundabouts; ++n) {
        std::vector<int> degree(out.vertices.size(), 0);
        for (const auto& e : out.edges) {
            ++degree[static_cast<std::size_t>(e[0])];
            ++degree[static_cast<std::size_t>(e[1])];
        }
        const double radius = std::max(2.0, out.size / 12.0);
        std::vector<int> candidates;
        for (std::size_t v = 0; v < out.vertices.size(); ++v) {
            const auto& p = out.vertices[v];
            bool inside = p[0] > radius + 1.0 && p[0] < out.size - 2.0 - radius && p[1] > radius + 1.0 &&
                          p[1] < out.size - 2.0 - radius;
            if (degree[v] >= 3 && inside) candidates.push_back(static_cast<int>(v));
        }
        if (candidates.empty()) {
            res.skipped.push_back("junction_to_roundabout: no interior junction of degree >= 3");
            continue;
        }
        int center = candidates[rng.uniform_int(candidates.size())];
        const auto cp = out.vertices[static_cast<std::size_t>(center)];
        const int ring_n = 6;
        std::vector<int> ring;
        for (int i = 0; i < ring_n; ++i) {
            double th = 2.0 * M_PI * i / ring_n;
            out.vertices.push_back({cp[0] + radius * std::cos(th), cp[1] + radius * std::sin(th)});
            ring.push_back(static_cast<int>(out.vertices.size()) - 1);
        }
        std::vector<std::array<int, 2>> kept;
        std::vector<int> far_ends;
        for (const auto& e : out.edges) {
            if (e[0] == center)
                far_ends.push_back(e[1]);
            else if (e[1] == center)
                far_ends.push_back(e[0]);
            else
                kept.push_back(e);
        }
        out.edges = std::move(kept);
        for (int i = 0; i < ring_n; ++i) out.edges.push_back({ring[static_cast<std::size_t>(i)], ring[static_cast<std::size_t>((i + 1) % ring_n)]});
        for (int far : far_ends) {
            const auto& fp = out.vertices[static_cast<std::size_t>(far)];
            int best = ring[0];
            double bd = 1e18;
            for (int rv : ring) {
                const auto& rp = out.vertices[static_cast<std::size_t>(rv)];
                double d = std::hypot(rp[0] - fp[0], rp[1] - fp[1]);
                if (d < bd) {
                    bd = d;
                    best = rv;
                }
            }
            out.edges.push_back({far, best});
        }
        res.applied.push_back("junction_to_roundabout at vertex " + std::to_string(center));
    }

    check_contract(detail::graph_connected(out), "perturb_road_graph: connectivity lost");
    return res;
}

// Binary change mask: pixels whose road membership differs between two
// rasterized networks.
inline RasterImage change_mask(const RasterImage& before, const RasterImage& after) {
    check_contract(before.h == after.h && before.w == after.w && before.c == 1 && after.c == 1,
                   "change_mask: shape mismatch");
    RasterImage mask(before.h, before.w, 1, Space::count);
    mask.georef = before.georef;
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        mask.data[i] = (before.data[i] != 0.0) != (after.data[i] != 0.0) ? 1.0 : 0.0;
    return mask;
}

} // namespace probegen
