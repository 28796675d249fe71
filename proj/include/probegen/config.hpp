#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probegen/common.hpp"
#include "probegen/model.hpp"
#include "probegen/sim.hpp"
#include "probegen/trainer.hpp"

namespace probegen {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                                const std::string& where) {
    check_format(j.is_object(), where + ": expected a JSON object");
    for (const auto& kv : j.items())
        check_format(std::find(known.begin(), known.end(), kv.key()) != known.end(),
                     where + ": unknown key '" + kv.key() + "'");
}

} // namespace detail

// ---- simulator config <-> JSON ----

inline nlohmann::json sim_config_to_json(const SimConfig& c) {
    return nlohmann::json{{"delta_t", c.delta_t},
                          {"probe_rate", c.probe_rate},
                          {"gps_noise_sigma_px", c.gps_noise_sigma_px},
                          {"heading_noise_sigma_deg", c.heading_noise_sigma_deg},
                          {"modality_mix", c.modality_mix},
                          {"trace_len", c.trace_len}};
}

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j,
                                {"delta_t", "probe_rate", "gps_noise_sigma_px",
                                 "heading_noise_sigma_deg", "modality_mix", "trace_len"},
                                "sim config");
    SimConfig c;
    try {
        c.delta_t = j.value("delta_t", c.delta_t);
        c.probe_rate = j.value("probe_rate", c.probe_rate);
        c.gps_noise_sigma_px = j.value("gps_noise_sigma_px", c.gps_noise_sigma_px);
        c.heading_noise_sigma_deg = j.value("heading_noise_sigma_deg", c.heading_noise_sigma_deg);
        if (j.contains("modality_mix"))
            c.modality_mix = j.at("modality_mix").get<std::map<std::string, double>>();
        c.trace_len = j.value("trace_len", c.trace_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("sim config: ") + e.what());
    }
    return c;
}

// ---- dataset config <-> JSON ----

inline nlohmann::json dataset_config_to_json(const DatasetConfig& c) {
    return nlohmann::json{{"n_tiles", c.n_tiles},
                          {"tile_size", c.tile_size},
                          {"styles", c.styles},
                          {"density_min", c.density_min},
                          {"density_max", c.density_max},
                          {"delta_t_jitter_min", c.delta_t_jitter_min},
                          {"delta_t_jitter_max", c.delta_t_jitter_max},
                          {"sim", sim_config_to_json(c.sim)},
                          {"modality_filter", c.modality_filter}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j,
                                {"n_tiles", "tile_size", "styles", "density_min", "density_max",
                                 "delta_t_jitter_min", "delta_t_jitter_max", "sim",
                                 "modality_filter"},
                                "dataset config");
    DatasetConfig c;
    try {
        c.n_tiles = j.value("n_tiles", c.n_tiles);
        c.tile_size = j.value("tile_size", c.tile_size);
        if (j.contains("styles")) c.styles = j.at("styles").get<std::vector<std::string>>();
        c.density_min = j.value("density_min", c.density_min);
        c.density_max = j.value("density_max", c.density_max);
        c.delta_t_jitter_min = j.value("delta_t_jitter_min", c.delta_t_jitter_min);
        c.delta_t_jitter_max = j.value("delta_t_jitter_max", c.delta_t_jitter_max);
        if (j.contains("sim")) c.sim = sim_config_from_json(j.at("sim"));
        c.modality_filter = j.value("modality_filter", c.modality_filter);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset config: ") + e.what());
    }
    return c;
}

// ---- top-level run document ----

// One declarative document driving every subcommand: dataset synthesis, model
// architecture, training schedule, artifact paths, and the master seed.
struct RunConfig {
    DatasetConfig dataset;
    ModelConfig model;
    TrainConfig train;
    std::string data_dir;  // dataset directory (written by simulate, read elsewhere)
    std::string out_dir;   // artifact output directory
    std::uint64_t seed = 0;  // master seed; --seed on the command line wins
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    return nlohmann::json{{"dataset", dataset_config_to_json(c.dataset)},
                          {"model", model_config_to_json(c.model)},
                          {"train", train_config_to_json(c.train)},
                          {"paths", nlohmann::json{{"data", c.data_dir}, {"out", c.out_dir}}},
                          {"seed", c.seed}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"dataset", "model", "train", "paths", "seed"}, "run config");
    RunConfig c;
    try {
        if (j.contains("dataset")) c.dataset = dataset_config_from_json(j.at("dataset"));
        if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
        if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
        if (j.contains("paths")) {
            detail::reject_unknown_keys(j.at("paths"), {"data", "out"}, "run config paths");
            c.data_dir = j.at("paths").value("data", c.data_dir);
            c.out_dir = j.at("paths").value("out", c.out_dir);
        }
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("run config: ") + e.what());
    }
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    check_format(f.good(), "run config: cannot open '" + path + "'");
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    check_format(!j.is_discarded(), "run config: '" + path + "' is not valid JSON");
    return run_config_from_json(j);
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    check_format(f.good(), "run config: cannot write '" + path + "'");
    f << run_config_to_json(c).dump(2) << "\n";
}

} // namespace probegen
