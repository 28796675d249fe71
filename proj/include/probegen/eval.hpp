#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "probegen/common.hpp"
#include "probegen/model.hpp"
#include "probegen/sim.hpp"

namespace probegen {

// ---- deviation metric ----

struct ApndResult {
    double mean_percent = 0.0;
    double ci95_percent = 0.0;
    std::int64_t n = 0;         // examples entering the mean
    std::int64_t excluded = 0;  // zero-norm references the ratio is undefined for
};

// Percentage normalized deviation of one pair, count space.
inline double pnd_percent(const RasterImage& x, const RasterImage& xt) {
    check_contract(x.space == Space::count && xt.space == Space::count,
                   "pnd: rasters must be in count space");
    check_contract(x.h == xt.h && x.w == xt.w && x.c == xt.c, "pnd: raster extents differ");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double d = x.data[i] - xt.data[i];
        num += d * d;
        den += x.data[i] * x.data[i];
    }
    check_domain(den > 0.0, "pnd: reference raster is identically zero");
    return 100.0 * std::sqrt(num) / std::sqrt(den);
}

// Mean of 100 * |x - xt| / |x| over examples, normal-approximation 95% CI.
// Zero-norm references are excluded from the mean and counted instead.
inline ApndResult apnd(const std::vector<RasterImage>& x, const std::vector<RasterImage>& xt) {
    check_contract(x.size() == xt.size(), "apnd: pair lists differ in length");
    check_domain(!x.empty(), "apnd: empty example set");
    ApndResult r;
    std::vector<double> pct;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double den = 0.0;
        for (double v : x[i].data) den += v * v;
        if (den == 0.0) {
            ++r.excluded;
            continue;
        }
        pct.push_back(pnd_percent(x[i], xt[i]));
    }
    check_domain(!pct.empty(), "apnd: every reference raster was identically zero");
    r.n = static_cast<std::int64_t>(pct.size());
    r.mean_percent = std::accumulate(pct.begin(), pct.end(), 0.0) / static_cast<double>(r.n);
    if (r.n > 1) {
        double ss = 0.0;
        for (double v : pct) ss += (v - r.mean_percent) * (v - r.mean_percent);
        const double sd = std::sqrt(ss / static_cast<double>(r.n - 1));
        r.ci95_percent = 1.96 * sd / std::sqrt(static_cast<double>(r.n));
    }
    return r;
}

// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    check_contract(a.size() == b.size() && a.size() >= 2, "spearman: need two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&v](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> rk(n);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) rk[order[k]] = avg;
            i = j + 1;
        }
        return rk;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    check_domain(va > 0 && vb > 0, "spearman: a series is constant");
    return num / std::sqrt(va * vb);
}

// ---- attribute calibration ----

// Mean attribute encoding over a validation split; the fixed a used when
// comparing attribute-bearing models on held-out data.
inline std::vector<double> calibrate_attribute(ParamStore<double>& params, const ModelConfig& cfg,
                                               const std::vector<const Example*>& split,
                                               RasterMode task) {
    check_domain(!split.empty(), "calibrate_attribute: empty validation split");
    std::vector<double> acc(static_cast<std::size_t>(cfg.d_a), 0.0);
    for (const Example* e : split) {
        const RasterImage& x = task == RasterMode::crm ? e->crm : e->hcrm;
        const auto a = encode_attribute(lognorm_forward(x), params, cfg);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += a[i];
    }
    for (auto& v : acc) v /= static_cast<double>(split.size());
    return acc;
}

// ---- model comparison report ----

inline const char* model_kind_label(ModelKind k) {
    switch (k) {
        case ModelKind::cvae_plc: return "cVAE (only PLC)";
        case ModelKind::cvae_plc_flc: return "cVAE (PLC and FLC)";
        case ModelKind::cgan_plc: return "cGAN (only PLC)";
        case ModelKind::cgan_plc_flc: return "cGAN (PLC and FLC)";
        case ModelKind::vae_info_cgan: return "VAE-Info-cGAN";
    }
    throw DomainError("model kind: unknown enum value");
}

struct EvalRow {
    ModelKind kind = ModelKind::vae_info_cgan;
    std::string label;
    std::string checkpoint;
    bool present = false;
    ApndResult apnd;
};

struct EvalReport {
    std::string task;
    std::int64_t n_test = 0;
    std::vector<EvalRow> rows;
};

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["task"] = r.task;
    j["n_test"] = r.n_test;
    j["rows"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json e;
        e["label"] = row.label;
        e["kind"] = model_kind_to_string(row.kind);
        e["checkpoint"] = row.checkpoint;
        e["present"] = row.present;
        if (row.present) {
            e["apnd_mean_percent"] = row.apnd.mean_percent;
            e["apnd_ci95_percent"] = row.apnd.ci95_percent;
            e["n"] = row.apnd.n;
            e["excluded"] = row.apnd.excluded;
        }
        j["rows"].push_back(e);
    }
    return j;
}

inline std::string eval_report_to_text(const EvalReport& r) {
    std::string out = "Model comparison (" + r.task + ", lower APND is better)\n";
    out += "--------------------------------------------------------\n";
    char buf[128];
    for (const auto& row : r.rows) {
        if (row.present) {
            std::snprintf(buf, sizeof buf, "%-20s  %6.2f +/- %.2f %%  (n=%lld)\n", row.label.c_str(),
                          row.apnd.mean_percent, row.apnd.ci95_percent,
                          static_cast<long long>(row.apnd.n));
        } else {
            std::snprintf(buf, sizeof buf, "%-20s  absent\n", row.label.c_str());
        }
        out += buf;
    }
    return out;
}

namespace detail {

// 8-bit P5 preview with per-image max normalization (display only).
inline void write_pgm(const std::string& path, int h, int w, const std::vector<double>& gray) {
    double mx = 0.0;
    for (double v : gray) mx = std::max(mx, v);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    check_format(f.good(), "pgm: cannot open for writing: " + path);
    f << "P5\n" << w << " " << h << "\n255\n";
    for (double v : gray) {
        const double n = mx > 0.0 ? v / mx : 0.0;
        f.put(static_cast<char>(std::lround(255.0 * std::clamp(n, 0.0, 1.0))));
    }
    check_format(f.good(), "pgm: write failed: " + path);
}

// road | ground truth | generated strip, single channel, 2-px separators.
inline void write_triptych_pgm(const std::string& path, const RasterImage& road,
                               const RasterImage& truth, const RasterImage& gen) {
    auto flat = [](const RasterImage& img) { return img.c == 1 ? img : hcrm_to_crm(img); };
    const RasterImage t = flat(truth), g = flat(gen);
    auto norm = [](const RasterImage& img) {
        double mx = 0.0;
        for (double v : img.data) mx = std::max(mx, v);
        std::vector<double> out(img.data.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = mx > 0.0 ? img.data[i] / mx : 0.0;
        return out;
    };
    const auto pr = norm(road), pt = norm(t), pg = norm(g);
    const int h = road.h, w = road.w, gap = 2;
    const int W = 3 * w + 2 * gap;
    std::vector<double> strip(static_cast<std::size_t>(h) * W, 1.0);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            strip[static_cast<std::size_t>(i) * W + j] = pr[static_cast<std::size_t>(i) * w + j];
            strip[static_cast<std::size_t>(i) * W + w + gap + j] = pt[static_cast<std::size_t>(i) * w + j];
            strip[static_cast<std::size_t>(i) * W + 2 * (w + gap) + j] = pg[static_cast<std::size_t>(i) * w + j];
        }
    write_pgm(path, h, W, strip);
}

} // namespace detail

// Runs each present checkpoint over the test split and assembles the fixed
// five-row comparison. Attribute-bearing kinds generate at the validation-mean
// attribute; sample grids land under grid_dir/<kind>/ when grid_dir is set.
inline EvalReport evaluate_models(const std::map<ModelKind, std::string>& checkpoints,
                                  const Dataset& ds, RasterMode task, std::uint64_t seed,
                                  const std::string& grid_dir = "", int grid_examples = 8) {
    namespace fs = std::filesystem;
    const auto test = ds.split("test");
    const auto val = ds.split("val");
    check_domain(!test.empty(), "evaluate_models: dataset has no test split");
    EvalReport report;
    report.task = task == RasterMode::crm ? "crm" : "hcrm";
    report.n_test = static_cast<std::int64_t>(test.size());
    for (ModelKind kind : kAllModelKinds) {
        EvalRow row;
        row.kind = kind;
        row.label = model_kind_label(kind);
        auto it = checkpoints.find(kind);
        row.checkpoint = it == checkpoints.end() ? "" : it->second;
        if (row.checkpoint.empty() || !fs::exists(row.checkpoint)) {
            report.rows.push_back(std::move(row));
            continue;
        }
        Checkpoint ck = checkpoint_read(row.checkpoint);
        if (ck.has_train_state) {
            const auto j = nlohmann::json::parse(ck.train.train_config_json);
            if (j.contains("model_kind"))
                check_contract(j["model_kind"].get<std::string>() == model_kind_to_string(kind),
                               "evaluate_models: checkpoint was trained as a different model kind");
        }
        const std::string kname = model_kind_to_string(kind);
        std::vector<double> a_cal;
        if (kind_has_attribute_encoder(kind))
            a_cal = calibrate_attribute(ck.params, ck.config, val, task);
        std::vector<RasterImage> xs, xts;
        xs.reserve(test.size());
        xts.reserve(test.size());
        for (const Example* e : test) {
            Rng rng(seed, "eval/" + kname + "/" + std::to_string(e->index));
            RasterImage gen = generate_for_kind(e->road, ck.params, ck.config, kind, a_cal, rng);
            xs.push_back(task == RasterMode::crm ? e->crm : e->hcrm);
            xts.push_back(lognorm_inverse(gen));
        }
        row.apnd = apnd(xs, xts);
        row.present = true;
        if (!grid_dir.empty()) {
            const fs::path dir = fs::path(grid_dir) / kname;
            fs::create_directories(dir);
            const int n_grid = std::min<int>(grid_examples, static_cast<int>(test.size()));
            for (int i = 0; i < n_grid; ++i) {
                char stem[32];
                std::snprintf(stem, sizeof stem, "%04d", test[static_cast<std::size_t>(i)]->index);
                grid_write((dir / (std::string(stem) + "_road.grd")).string(),
                           test[static_cast<std::size_t>(i)]->road);
                grid_write((dir / (std::string(stem) + "_truth.grd")).string(),
                           xs[static_cast<std::size_t>(i)]);
                grid_write((dir / (std::string(stem) + "_gen.grd")).string(),
                           lognorm_forward(xts[static_cast<std::size_t>(i)]));
                detail::write_triptych_pgm((dir / (std::string(stem) + "_strip.pgm")).string(),
                                           test[static_cast<std::size_t>(i)]->road,
                                           xs[static_cast<std::size_t>(i)],
                                           xts[static_cast<std::size_t>(i)]);
            }
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

} // namespace probegen
