#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "probegen/config.hpp"
#include "probegen/eval.hpp"
#include "probegen/latentedit.hpp"
#include "probegen/trainer.hpp"

namespace fs = std::filesystem;
using namespace probegen;

namespace {

// Compute backend selector; this build ships the portable CPU path only.
void require_supported_device() {
    const char* dev = std::getenv("PROBEGEN_DEVICE");
    if (dev && *dev && std::string(dev) != "cpu")
        throw DomainError(std::string("unsupported PROBEGEN_DEVICE '") + dev +
                          "' (this build supports: cpu)");
}

RunConfig load_config_or_default(const std::string& path) {
    return path.empty() ? RunConfig{} : load_run_config(path);
}

// "start:stop:count" inclusive linspace, e.g. "-10:10:9".
std::vector<double> parse_alphas(const std::string& s) {
    const auto bad = [&] {
        return CLI::ValidationError("--alphas expects start:stop:count, got '" + s + "'");
    };
    const auto c1 = s.find(':'), c2 = s.rfind(':');
    if (c1 == std::string::npos || c2 == c1) throw bad();
    double start = 0.0, stop = 0.0;
    long count = 0;
    try {
        std::size_t used = 0;
        start = std::stod(s.substr(0, c1), &used);
        if (used != c1) throw bad();
        stop = std::stod(s.substr(c1 + 1, c2 - c1 - 1), &used);
        if (used != c2 - c1 - 1) throw bad();
        count = std::stol(s.substr(c2 + 1), &used);
        if (used != s.size() - c2 - 1) throw bad();
    } catch (const std::logic_error&) {
        throw bad();
    }
    if (count < 1) throw bad();
    if (count == 1) {
        if (start != stop) throw bad();
        return {start};
    }
    std::vector<double> out(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i)
        out[static_cast<std::size_t>(i)] =
            start + static_cast<double>(i) * (stop - start) / static_cast<double>(count - 1);
    return out;
}

// "zoom/x/y" window address.
TileCoord parse_window(const std::string& s) {
    const auto bad = [&] {
        return CLI::ValidationError("--window expects zoom/x/y, got '" + s + "'");
    };
    const auto s1 = s.find('/'), s2 = s.rfind('/');
    if (s1 == std::string::npos || s2 == s1) throw bad();
    try {
        std::size_t used = 0;
        const int zoom = std::stoi(s.substr(0, s1), &used);
        if (used != s1) throw bad();
        const auto xs = s.substr(s1 + 1, s2 - s1 - 1), ys = s.substr(s2 + 1);
        const std::uint64_t x = std::stoull(xs, &used);
        if (used != xs.size()) throw bad();
        const std::uint64_t y = std::stoull(ys, &used);
        if (used != ys.size()) throw bad();
        return TileCoord{zoom, x, y};
    } catch (const std::logic_error&) {
        throw bad();
    }
}

bool file_starts_with(const std::string& path, const std::string& magic) {
    std::ifstream f(path, std::ios::binary);
    check_format(f.good(), "cannot open '" + path + "'");
    std::string head(magic.size(), '\0');
    f.read(head.data(), static_cast<std::streamsize>(head.size()));
    return f.gcount() == static_cast<std::streamsize>(magic.size()) && head == magic;
}

ModelKind kind_of_checkpoint(const Checkpoint& ck, const std::string& model_flag) {
    if (!model_flag.empty()) return model_kind_from_string(model_flag);
    check_domain(ck.has_train_state,
                 "checkpoint carries no training metadata; pass --model to name its kind");
    nlohmann::json j = nlohmann::json::parse(ck.train.train_config_json, nullptr, false);
    check_format(!j.is_discarded(), "checkpoint train config is not valid JSON");
    return train_config_from_json(j).model_kind;
}

std::vector<double> uniform_attribute(const ModelConfig& cfg, Rng& rng) {
    std::vector<double> a(static_cast<std::size_t>(cfg.d_a));
    for (double& v : a) v = rng.uniform();
    return a;
}

void emit(const nlohmann::json& j) { std::cout << j.dump() << "\n"; }

// ---- subcommand options ----

struct Cli {
    std::string config, data, out, ckpt, roads, model, modality = "driving";
    std::string mode = "crm", alphas = "-10:10:9", window;
    std::vector<std::string> ckpts;
    std::uint64_t seed = 0;
    int k = 5, n_base = 10, count = 10000, grid_examples = 8;
    int remove_edges = 1, add_edges = 1, roundabouts = 0;
    double train_fraction = 0.9;
};

void run_simulate(const Cli& o, const CLI::App& sub) {
    require_supported_device();
    RunConfig cfg = load_config_or_default(o.config);
    const std::uint64_t seed = sub.count("--seed") ? o.seed : cfg.seed;
    const std::string out = !o.out.empty() ? o.out : cfg.data_dir;
    check_domain(!out.empty(), "simulate: no output directory (--out or paths.data in the config)");
    Dataset ds = build_dataset(cfg.dataset, seed);
    dataset_write(out, ds);
    nlohmann::json j;
    j["dir"] = out;
    j["examples"] = ds.examples.size();
    for (const char* split : {"train", "val", "test"})
        j[split] = ds.split(split).size();
    emit(j);
}

void run_rasterize(const Cli& o) {
    require_supported_device();
    const RasterMode mode = raster_mode_from_string(o.mode);
    std::optional<TileCoord> window;
    if (!o.window.empty()) window = parse_window(o.window);  // syntax first, exit 2 on garbage
    RasterImage img;
    if (file_starts_with(o.data, "GRD1")) {
        RasterImage in = grid_read(o.data);
        if (in.c == 1 && mode == RasterMode::hcrm)
            throw CLI::ValidationError(
                "--mode hcrm cannot reconstruct heading channels from a single-channel raster");
        img = (in.c > 1 && mode == RasterMode::crm) ? hcrm_to_crm(in) : std::move(in);
    } else {
        if (!window) throw CLI::ValidationError("probe rasterization needs --window zoom/x/y");
        img = rasterize_probes(probes_read_jsonl(o.data), *window, mode, o.modality);
    }
    grid_write(o.out, img);
    double total = 0.0;
    for (double v : img.data) total += v;
    emit({{"out", o.out}, {"h", img.h}, {"w", img.w}, {"c", img.c}, {"total", total}});
}

void run_train(const Cli& o, const CLI::App& sub) {
    require_supported_device();
    RunConfig cfg = load_config_or_default(o.config);
    TrainConfig tc = cfg.train;
    ModelConfig mc = cfg.model;
    if (sub.count("--seed")) tc.seed = o.seed;
    if (sub.count("--model")) tc.model_kind = model_kind_from_string(o.model);
    if (sub.count("--mode")) {
        tc.task = raster_mode_from_string(o.mode);
        mc.channels = tc.task == RasterMode::hcrm ? 12 : 1;
    }
    const std::string data = !o.data.empty() ? o.data : cfg.data_dir;
    const std::string out = !o.out.empty() ? o.out : cfg.out_dir;
    check_domain(!data.empty(), "train: no dataset directory (--data or paths.data in the config)");
    check_domain(!out.empty(), "train: no output directory (--out or paths.out in the config)");
    Dataset ds = dataset_read(data);
    fs::create_directories(out);

    const bool resuming = !o.ckpt.empty();
    Trainer tr = resuming ? Trainer::from_checkpoint(o.ckpt) : Trainer(mc, tc);
    std::ofstream log((fs::path(out) / "train_log.jsonl").string(),
                      resuming ? std::ios::app : std::ios::trunc);
    check_format(log.good(), "train: cannot open the log file under '" + out + "'");
    TrainOutput res = train_model(tr, ds, out, &log);
    nlohmann::json j;
    j["final_checkpoint"] = res.final_checkpoint;
    j["epochs_run"] = res.epoch_checkpoints.size();
    j["val_apnd"] = nlohmann::json::array();
    for (double v : res.val_apnd)
        j["val_apnd"].push_back(std::isnan(v) ? nlohmann::json() : nlohmann::json(v));
    emit(j);
}

void run_generate(const Cli& o, const CLI::App& sub) {
    require_supported_device();
    RunConfig cfg = load_config_or_default(o.config);
    const std::uint64_t seed = sub.count("--seed") ? o.seed : cfg.seed;
    Checkpoint ck = checkpoint_read(o.ckpt);
    const ModelKind kind = kind_of_checkpoint(ck, o.model);
    RasterImage road = grid_read(o.roads);
    Rng zrng(seed, "sample/zc");
    std::vector<double> a;
    if (kind_has_attribute_encoder(kind)) {
        Rng arng(seed, "sample/a");
        a = uniform_attribute(ck.config, arng);
    }
    RasterImage gen = generate_for_kind(road, ck.params, ck.config, kind, a, zrng);
    grid_write(o.out, gen);  // lognorm space; exp(v)-1 recovers expected counts
    double total = 0.0;
    for (double v : gen.data) total += lognorm_inverse(v);
    emit({{"out", o.out},
          {"model", model_kind_to_string(kind)},
          {"pixel_sum", total},
          {"h", gen.h},
          {"w", gen.w},
          {"c", gen.c}});
}

void run_evaluate(const Cli& o, const CLI::App& sub) {
    require_supported_device();
    RunConfig cfg = load_config_or_default(o.config);
    const std::uint64_t seed = sub.count("--seed") ? o.seed : cfg.seed;
    const std::string data = !o.data.empty() ? o.data : cfg.data_dir;
    const std::string out = !o.out.empty() ? o.out : cfg.out_dir;
    check_domain(!data.empty(), "evaluate: no dataset directory (--data or paths.data)");
    const RasterMode task =
        sub.count("--mode") ? raster_mode_from_string(o.mode) : cfg.train.task;

    std::map<ModelKind, std::string> ckpts;
    for (const std::string& spec : o.ckpts) {
        ModelKind kind;
        std::string path;
        const auto eq = spec.find('=');
        if (eq != std::string::npos) {
            kind = model_kind_from_string(spec.substr(0, eq));
            path = spec.substr(eq + 1);
        } else {
            path = spec;
            kind = kind_of_checkpoint(checkpoint_read(path), "");
        }
        check_domain(!ckpts.count(kind), "evaluate: duplicate checkpoint for model kind '" +
                                             model_kind_to_string(kind) + "'");
        ckpts[kind] = path;
    }
    check_domain(!ckpts.empty(), "evaluate: no checkpoints given (--ckpt kind=path)");

    Dataset ds = dataset_read(data);
    std::string grid_dir;
    if (!out.empty()) {
        fs::create_directories(out);
        grid_dir = (fs::path(out) / "grids").string();
    }
    EvalReport rep = evaluate_models(ckpts, ds, task, seed, grid_dir, o.grid_examples);
    const std::string text = eval_report_to_text(rep);
    std::cout << text;
    if (!out.empty()) {
        std::ofstream jf((fs::path(out) / "report.json").string(), std::ios::trunc);
        jf << eval_report_to_json(rep).dump(2) << "\n";
        std::ofstream tf((fs::path(out) / "report.txt").string(), std::ios::trunc);
        tf << text;
        check_format(jf.good() && tf.good(), "evaluate: cannot write reports under '" + out + "'");
    }
}

void run_edit(const Cli& o, const CLI::App& sub) {
    require_supported_device();
    const std::vector<double> alphas = parse_alphas(o.alphas);  // syntax first, exit 2 on garbage
    RunConfig cfg = load_config_or_default(o.config);
    const std::uint64_t seed = sub.count("--seed") ? o.seed : cfg.seed;
    Checkpoint ck = checkpoint_read(o.ckpt);
    const ModelKind kind = kind_of_checkpoint(ck, o.model);
    RasterImage road = grid_read(o.roads);

    LabeledAttributeSet set =
        collect_attribute_samples(road, ck.params, ck.config, kind, o.count, seed);
    auto [h, val_acc] = fit_linear_svm(set, o.train_fraction, seed);
    const std::size_t b = select_boundary_sample(
        set, h, svm_train_indices(set.samples.size(), o.train_fraction, seed));
    std::vector<AlphaPoint> pts =
        alpha_sweep(road, ck.params, ck.config, kind, h, set.samples[b], alphas, seed);
    fs::create_directories(o.out);
    nlohmann::json sweep;
    sweep["model"] = model_kind_to_string(kind);
    sweep["samples"] = set.samples.size();
    sweep["val_accuracy"] = val_acc;
    sweep["hyperplane"] = {{"weights", h.weights}, {"bias", h.bias}};
    sweep["boundary_index"] = b;
    sweep["boundary_score"] = svm_score(h, set.samples[b]);
    sweep["points"] = alpha_sweep_to_json(pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "alpha_%04zu.grd", i);
        const std::string p = (fs::path(o.out) / name).string();
        grid_write(p, lognorm_forward(pts[i].image));
        sweep["points"][i]["image"] = p;
    }
    {
        std::ofstream f((fs::path(o.out) / "sweep.json").string(), std::ios::trunc);
        f << sweep.dump(2) << "\n";
        check_format(f.good(), "edit: cannot write sweep.json under '" + o.out + "'");
    }
    emit({{"out", o.out},
          {"val_accuracy", val_acc},
          {"boundary_index", b},
          {"points", pts.size()}});
}

void run_change_dataset(const Cli& o, const CLI::App& sub) {
    require_supported_device();
    RunConfig cfg = load_config_or_default(o.config);
    const std::uint64_t seed = sub.count("--seed") ? o.seed : cfg.seed;
    Checkpoint ck = checkpoint_read(o.ckpt);
    const ModelKind kind = kind_of_checkpoint(ck, o.model);
    const int tile = static_cast<int>(ck.config.image_h);
    const RasterMode task = ck.config.channels == 12 ? RasterMode::hcrm : RasterMode::crm;
    const PerturbSpec spec{o.remove_edges, o.add_edges, o.roundabouts};

    std::vector<ChangeTriple> triples = emit_change_dataset(o.n_base, o.k, tile, spec, seed);
    fs::create_directories(o.out);
    nlohmann::json man;
    man["n_base"] = o.n_base;
    man["k"] = o.k;
    man["requested"] = o.n_base * o.k;
    man["emitted"] = triples.size();
    man["skipped"] = static_cast<std::size_t>(o.n_base) * o.k - triples.size();
    man["model"] = model_kind_to_string(kind);
    man["task"] = task == RasterMode::hcrm ? "hcrm" : "crm";
    man["triples"] = nlohmann::json::array();
    for (std::size_t i = 0; i < triples.size(); ++i) {
        const ChangeTriple& tr = triples[i];
        const std::string tag = std::to_string(i);
        Rng prng(seed, "change/probes/" + tag);
        std::vector<ProbeRecord> probes =
            simulate_probes(tr.before_graph, cfg.dataset.sim, prng.next_u64());
        check_contract(tr.before.georef.has_value(), "change-dataset: road raster lacks a georef");
        RasterImage x =
            rasterize_probes(probes, *tr.before.georef, task, cfg.dataset.modality_filter);
        Rng zrng(seed, "change/zc/" + tag);
        std::vector<double> a;
        if (kind_has_attribute_encoder(kind)) {
            Rng arng(seed, "change/a/" + tag);
            a = uniform_attribute(ck.config, arng);
        }
        RasterImage gen = generate_for_kind(tr.after, ck.params, ck.config, kind, a, zrng);

        char stem[32];
        std::snprintf(stem, sizeof stem, "%06zu", i);
        const auto path_of = [&](const char* suffix) {
            return (fs::path(o.out) / (std::string(stem) + suffix)).string();
        };
        grid_write(path_of("_before_road.grd"), tr.before);
        grid_write(path_of("_after_road.grd"), tr.after);
        grid_write(path_of("_x.grd"), x);
        grid_write(path_of("_xgen.grd"), gen);  // lognorm-space model output
        grid_write(path_of("_mask.grd"), tr.mask);
        nlohmann::json t;
        t["index"] = i;
        t["base"] = tr.base_index;
        t["variant"] = tr.variant;
        t["applied"] = tr.applied;
        t["files"] = {{"before_road", path_of("_before_road.grd")},
                      {"after_road", path_of("_after_road.grd")},
                      {"x", path_of("_x.grd")},
                      {"xgen", path_of("_xgen.grd")},
                      {"mask", path_of("_mask.grd")}};
        man["triples"].push_back(t);
    }
    {
        std::ofstream f((fs::path(o.out) / "manifest.json").string(), std::ios::trunc);
        f << man.dump(2) << "\n";
        check_format(f.good(), "change-dataset: cannot write manifest under '" + o.out + "'");
    }
    emit({{"out", o.out}, {"emitted", triples.size()}, {"skipped", man["skipped"]}});
}

int fail(const char* type, const std::string& message) {
    std::cerr << nlohmann::json{{"error", type}, {"message", message}}.dump() << "\n";
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional generative modeling of GPS-probe raster maps"};
    app.require_subcommand(1);
    Cli o;
    const std::vector<std::string> kind_names = {"vae-info-cgan", "cvae-plc", "cvae-plc-flc",
                                                 "cgan-plc", "cgan-plc-flc"};

    auto* sim = app.add_subcommand("simulate", "synthesize a road/probe dataset as GRD tiles");
    sim->add_option("--config", o.config, "run config JSON path");
    sim->add_option("--seed", o.seed, "master seed (overrides the config)");
    sim->add_option("--out", o.out, "dataset output directory");
    sim->callback([&] { run_simulate(o, *sim); });

    auto* ras = app.add_subcommand("rasterize", "rasterize probe records or convert rasters");
    ras->add_option("--data", o.data, "probe JSONL file or GRD raster")->required();
    ras->add_option("--out", o.out, "output GRD path")->required();
    ras->add_option("--mode", o.mode, "crm|hcrm")->check(CLI::IsMember({"crm", "hcrm"}));
    ras->add_option("--window", o.window, "zoom/x/y tile window for probe input");
    ras->add_option("--modality", o.modality, "probe modality filter (default driving)");
    ras->callback([&] { run_rasterize(o); });

    auto* trn = app.add_subcommand("train", "train a model on a simulated dataset");
    trn->add_option("--config", o.config, "run config JSON path");
    trn->add_option("--seed", o.seed, "training seed (overrides the config)");
    trn->add_option("--data", o.data, "dataset directory");
    trn->add_option("--out", o.out, "checkpoint/log output directory");
    trn->add_option("--ckpt", o.ckpt, "resume from this checkpoint");
    trn->add_option("--model", o.model, "model kind")->check(CLI::IsMember(kind_names));
    trn->add_option("--mode", o.mode, "crm|hcrm")->check(CLI::IsMember({"crm", "hcrm"}));
    trn->callback([&] { run_train(o, *trn); });

    auto* gen = app.add_subcommand("generate", "generate one raster from a road network");
    gen->add_option("--config", o.config, "run config JSON path");
    gen->add_option("--ckpt", o.ckpt, "model checkpoint")->required();
    gen->add_option("--roads", o.roads, "binary road raster (GRD)")->required();
    gen->add_option("--out", o.out, "output GRD path")->required();
    gen->add_option("--seed", o.seed, "sampling seed");
    gen->add_option("--model", o.model, "model kind override")->check(CLI::IsMember(kind_names));
    gen->callback([&] { run_generate(o, *gen); });

    auto* ev = app.add_subcommand("evaluate", "deviation report over the test split");
    ev->add_option("--config", o.config, "run config JSON path");
    ev->add_option("--data", o.data, "dataset directory");
    ev->add_option("--out", o.out, "report/grid output directory");
    ev->add_option("--ckpt", o.ckpts, "checkpoint as kind=path or bare path (repeatable)");
    ev->add_option("--seed", o.seed, "evaluation seed");
    ev->add_option("--mode", o.mode, "crm|hcrm")->check(CLI::IsMember({"crm", "hcrm"}));
    ev->add_option("--grid-examples", o.grid_examples, "examples per image grid (default 8)");
    ev->callback([&] { run_evaluate(o, *ev); });

    auto* ed = app.add_subcommand("edit", "fit an attribute hyperplane and sweep along it");
    ed->add_option("--config", o.config, "run config JSON path");
    ed->add_option("--ckpt", o.ckpt, "model checkpoint")->required();
    ed->add_option("--roads", o.roads, "binary road raster (GRD)")->required();
    ed->add_option("--out", o.out, "sweep output directory")->required();
    ed->add_option("--seed", o.seed, "sampling seed");
    ed->add_option("--model", o.model, "model kind override")->check(CLI::IsMember(kind_names));
    ed->add_option("--count", o.count, "attribute samples to label (default 10000)");
    ed->add_option("--alphas", o.alphas, "sweep as start:stop:count (default -10:10:9)");
    ed->add_option("--train-fraction", o.train_fraction, "SVM training fraction (default 0.9)");
    ed->callback([&] { run_edit(o, *ed); });

    auto* chg = app.add_subcommand("change-dataset",
                                   "emit (x, generated, change-mask) triples from perturbed roads");
    chg->add_option("--config", o.config, "run config JSON path");
    chg->add_option("--ckpt", o.ckpt, "model checkpoint")->required();
    chg->add_option("--out", o.out, "triple output directory")->required();
    chg->add_option("--seed", o.seed, "synthesis seed");
    chg->add_option("--model", o.model, "model kind override")->check(CLI::IsMember(kind_names));
    chg->add_option("--n", o.n_base, "base road networks (default 10)");
    chg->add_option("--k", o.k, "perturbed variants per base (default 5)");
    chg->add_option("--remove-edges", o.remove_edges, "edges to remove per variant (default 1)");
    chg->add_option("--add-edges", o.add_edges, "edges to add per variant (default 1)");
    chg->add_option("--roundabouts", o.roundabouts, "roundabouts to insert (default 0)");
    chg->callback([&] { run_change_dataset(o, *chg); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
        return 2;
    } catch (const DomainError& e) {
        return fail("domain", e.what());
    } catch (const ContractError& e) {
        return fail("contract", e.what());
    } catch (const FormatError& e) {
        return fail("format", e.what());
    } catch (const NumericError& e) {
        return fail("numeric", e.what());
    } catch (const DegenerateDataError& e) {
        return fail("degenerate_data", e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
}
