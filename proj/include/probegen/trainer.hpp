#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probegen/eval.hpp"
#include "probegen/losses.hpp"
#include "probegen/model.hpp"
#include "probegen/sim.hpp"

namespace probegen {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double lr0 = 1e-3;
    double decay_rate = 0.95;
    int decay_segments_per_epoch = 5;
    LossWeights weights;
    std::uint64_t seed = 0;
    RasterMode task = RasterMode::crm;
    ModelKind model_kind = ModelKind::vae_info_cgan;
    int val_examples = 64;  // per-epoch validation cap; 0 evaluates the full split

    void validate() const {
        check_domain(epochs >= 1, "train config: epochs must be >= 1");
        check_domain(batch_size >= 1, "train config: batch_size must be >= 1");
        check_domain(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0,
                     "train config: adam betas must lie in [0,1)");
        check_domain(adam_eps > 0.0, "train config: adam_eps must be positive");
        check_domain(lr0 > 0.0, "train config: lr0 must be positive");
        check_domain(decay_rate > 0.0 && decay_rate <= 1.0,
                     "train config: decay_rate must lie in (0,1]");
        check_domain(decay_segments_per_epoch >= 1,
                     "train config: decay_segments_per_epoch must be >= 1");
        check_domain(val_examples >= 0, "train config: val_examples must be >= 0");
        weights.validate();
    }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["epochs"] = c.epochs;
    j["batch_size"] = c.batch_size;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["lr0"] = c.lr0;
    j["decay_rate"] = c.decay_rate;
    j["decay_segments_per_epoch"] = c.decay_segments_per_epoch;
    j["lambda1"] = c.weights.lambda1;
    j["lambda2"] = c.weights.lambda2;
    j["lambda3"] = c.weights.lambda3;
    j["lambda4"] = c.weights.lambda4;
    j["seed"] = c.seed;
    j["task"] = c.task == RasterMode::crm ? "crm" : "hcrm";
    j["model_kind"] = model_kind_to_string(c.model_kind);
    j["val_examples"] = c.val_examples;
    return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    static const char* known[] = {"epochs",      "batch_size", "adam_beta1",
                                  "adam_beta2",  "adam_eps",   "lr0",
                                  "decay_rate",  "decay_segments_per_epoch",
                                  "lambda1",     "lambda2",    "lambda3",
                                  "lambda4",     "seed",       "task",
                                  "model_kind",  "val_examples"};
    for (const auto& kv : j.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || kv.key() == k;
        check_format(ok, "train config: unknown key: " + kv.key());
    }
    TrainConfig c;
    try {
        if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
        if (j.contains("adam_beta1")) c.adam_beta1 = j["adam_beta1"].get<double>();
        if (j.contains("adam_beta2")) c.adam_beta2 = j["adam_beta2"].get<double>();
        if (j.contains("adam_eps")) c.adam_eps = j["adam_eps"].get<double>();
        if (j.contains("lr0")) c.lr0 = j["lr0"].get<double>();
        if (j.contains("decay_rate")) c.decay_rate = j["decay_rate"].get<double>();
        if (j.contains("decay_segments_per_epoch"))
            c.decay_segments_per_epoch = j["decay_segments_per_epoch"].get<int>();
        if (j.contains("lambda1")) c.weights.lambda1 = j["lambda1"].get<double>();
        if (j.contains("lambda2")) c.weights.lambda2 = j["lambda2"].get<double>();
        if (j.contains("lambda3")) c.weights.lambda3 = j["lambda3"].get<double>();
        if (j.contains("lambda4")) c.weights.lambda4 = j["lambda4"].get<double>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("task")) c.task = raster_mode_from_string(j["task"].get<std::string>());
        if (j.contains("model_kind"))
            c.model_kind = model_kind_from_string(j["model_kind"].get<std::string>());
        if (j.contains("val_examples")) c.val_examples = j["val_examples"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

// Staircase decay: lr0 * rate^floor(step / segment), with
// decay_segments_per_epoch equal segments per epoch.
inline double lr_at_step(std::uint64_t step, std::uint64_t steps_per_epoch,
                         const TrainConfig& cfg) {
    cfg.validate();
    check_domain(steps_per_epoch >= static_cast<std::uint64_t>(cfg.decay_segments_per_epoch),
                 "lr_at_step: steps_per_epoch must cover the decay segments");
    const std::uint64_t seg =
        steps_per_epoch / static_cast<std::uint64_t>(cfg.decay_segments_per_epoch);
    return cfg.lr0 * std::pow(cfg.decay_rate, static_cast<double>(step / seg));
}

// Kinds drop the loss terms of networks they do not carry; the full model
// keeps the configured weights (so a zero lambda there acts as an ablation).
inline LossWeights effective_weights(ModelKind k, const LossWeights& w) {
    LossWeights e = w;
    if (!kind_has_attribute_encoder(k)) e.lambda1 = 0.0;
    if (!kind_samples_condition(k)) e.lambda2 = 0.0;
    if (!kind_has_discriminator(k)) e.lambda3 = 0.0;
    if (!kind_has_aux_head(k)) e.lambda4 = 0.0;
    return e;
}

namespace traingraph {

struct PhaseNodes {
    int l_ae = -1;
    int l_vae = -1;
    int kl = -1;
    int recon = -1;
    int l_adv = -1;  // discriminator pair loss or non-saturating generator loss
    int l_info = -1;
    int total = -1;
};

// One full forward for one phase: condition heads, per-example latent, one
// generation, and every loss term the effective weights keep. The component
// choice in a mixture draw is a plain categorical (no gradient through it);
// the within-component draw is reparameterized through an input noise node.
inline PhaseNodes build_phase_graph(GraphCtx<double>& ctx, const ModelConfig& mc, ModelKind kind,
                                    const LossWeights& ew, int y, int xp, bool disc_phase,
                                    Rng& noise) {
    auto& t = ctx.tape;
    const std::int64_t b = t.val(y).dim(0);
    PhaseNodes out;

    int a = -1;
    if (kind_has_attribute_encoder(kind)) a = modelnet::attribute_forward(ctx, mc, xp);
    auto cond = modelnet::condition_forward(ctx, mc, y);

    const bool sample = kind_samples_condition(kind);
    std::vector<int> z_rows;
    int kl_sum = -1;
    for (std::int64_t e = 0; e < b; ++e) {
        int logits_e = ops::slice_row(t, cond.weight_logits, e);
        int mu_e = ops::reshape(t, ops::slice_row(t, cond.means, e), {mc.m, mc.d_c});
        int lv_e = ops::reshape(t, ops::slice_row(t, cond.logvars, e), {mc.m, mc.d_c});
        int z_e;
        if (sample) {
            const auto w = softmax_plain(t.val(logits_e).data);
            const auto k = static_cast<std::int64_t>(noise.categorical(w));
            Tensor<double> eps({mc.d_c});
            for (auto& v : eps.data) v = noise.normal();
            int std_k = ops::exp_op(t, ops::mul_scalar(t, ops::slice_row(t, lv_e, k), 0.5));
            z_e = ops::add(t, ops::slice_row(t, mu_e, k), ops::mul(t, std_k, t.input(eps)));
            if (ew.lambda2 > 0.0) {
                int logq = lossgraph::mixture_logq(t, z_e, ops::log_softmax_vec(t, logits_e),
                                                   mu_e, lv_e);
                int kl_e = ops::sub(t, logq, lossgraph::std_normal_logp(t, z_e));
                kl_sum = kl_sum < 0 ? kl_e : ops::add(t, kl_sum, kl_e);
            }
        } else {
            z_e = ops::weighted_sum_rows(t, mu_e, ops::softmax_vec(t, logits_e));
        }
        z_rows.push_back(z_e);
    }
    int z = ops::stack_rows(t, z_rows);
    if (a >= 0) z = ops::concat_axis1(t, z, a);

    int xt = modelnet::generator_forward(ctx, mc, z, cond.skips);

    if (ew.lambda1 > 0.0) out.l_ae = lossgraph::mse_all(t, xp, xt);
    if (ew.lambda2 > 0.0) {
        check_contract(kl_sum >= 0, "train graph: variational term requires sampled latents");
        out.kl = ops::mul_scalar(t, kl_sum, 1.0 / static_cast<double>(b));
        out.recon = lossgraph::recon_nll(t, xp, xt);
        out.l_vae = ops::add(t, out.kl, out.recon);
    }
    const bool want_info = ew.lambda4 > 0.0 && a >= 0;
    if (ew.lambda3 > 0.0 || want_info) {
        int fake_xy = ops::concat_axis1(t, xt, y);
        auto fake = modelnet::discriminator_forward(ctx, mc, fake_xy, want_info);
        if (ew.lambda3 > 0.0) {
            if (disc_phase) {
                int real_xy = ops::concat_axis1(t, xp, y);
                auto real = modelnet::discriminator_forward(ctx, mc, real_xy, false);
                out.l_adv = lossgraph::disc_loss(t, real.logit, fake.logit);
            } else {
                out.l_adv = lossgraph::gen_loss(t, fake.logit);
            }
        }
        if (want_info) out.l_info = lossgraph::info_loss(t, a, fake.q_mean, fake.q_logvar);
    }
    out.total = lossgraph::weighted_total(t, ew, out.l_ae, out.l_vae, out.l_adv, out.l_info,
                                          ew.lambda3);
    return out;
}

} // namespace traingraph

// Stacks a batch of examples into network tensors: binary roads as the
// condition, lognorm count rasters as the target.
inline void make_batch(const ModelConfig& mc, RasterMode task,
                       const std::vector<const Example*>& batch, Tensor<double>& y,
                       Tensor<double>& xp) {
    check_domain(!batch.empty(), "make_batch: empty batch");
    const auto b = static_cast<std::int64_t>(batch.size());
    y = Tensor<double>({b, 1, mc.image_h, mc.image_w});
    xp = Tensor<double>({b, mc.channels, mc.image_h, mc.image_w});
    const std::int64_t plane = mc.image_h * mc.image_w;
    for (std::int64_t e = 0; e < b; ++e) {
        const Example* ex = batch[static_cast<std::size_t>(e)];
        const RasterImage& x = task == RasterMode::crm ? ex->crm : ex->hcrm;
        check_contract(ex->road.h == mc.image_h && ex->road.w == mc.image_w && ex->road.c == 1,
                       "make_batch: road raster extents do not match the model config");
        check_contract(x.h == mc.image_h && x.w == mc.image_w && x.c == mc.channels,
                       "make_batch: target raster extents do not match the model config");
        for (std::int64_t i = 0; i < mc.image_h; ++i)
            for (std::int64_t j = 0; j < mc.image_w; ++j) {
                y.data[static_cast<std::size_t>(e * plane + i * mc.image_w + j)] =
                    ex->road.at(static_cast<int>(i), static_cast<int>(j), 0);
                for (std::int64_t c = 0; c < mc.channels; ++c)
                    xp.data[static_cast<std::size_t>(((e * mc.channels + c) * mc.image_h + i) *
                                                     mc.image_w + j)] =
                        lognorm_forward(x.at(static_cast<int>(i), static_cast<int>(j),
                                             static_cast<int>(c)));
            }
    }
}

// Owns everything one training run mutates: parameters, the two phase
// optimizers, the noise stream, and the step/epoch counters.
class Trainer {
public:
    ModelConfig model_config;
    TrainConfig train_config;
    ParamStore<double> params;
    Adam<double> adam_d;
    Adam<double> adam_g;
    Rng noise;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::string last_checkpoint;

    Trainer(const ModelConfig& mc, const TrainConfig& tc)
        : model_config(mc),
          train_config(tc),
          params(tc.seed),
          adam_d(tc.adam_beta1, tc.adam_beta2, tc.adam_eps),
          adam_g(tc.adam_beta1, tc.adam_beta2, tc.adam_eps),
          noise(tc.seed, "train/noise") {
        mc.validate();
        tc.validate();
        check_domain((tc.task == RasterMode::hcrm) == (mc.channels == 12),
                     "trainer: task channel count does not match the model config");
        initialize_model(params, mc, tc.model_kind);
    }

    static Trainer from_checkpoint(const std::string& path) {
        Checkpoint ck = checkpoint_read(path);
        check_format(ck.has_train_state, "trainer: checkpoint carries no training state");
        Trainer tr(ck.config, train_config_from_json(nlohmann::json::parse(ck.train.train_config_json)));
        tr.params = std::move(ck.params);
        tr.adam_d = std::move(ck.train.adam_d);
        tr.adam_g = std::move(ck.train.adam_g);
        tr.noise.set_state(ck.train.noise_rng_state);
        tr.step = ck.train.step;
        tr.epoch = ck.train.epoch;
        tr.last_checkpoint = path;
        return tr;
    }

    Checkpoint to_checkpoint() const {
        Checkpoint ck;
        ck.config = model_config;
        ck.params = params;
        ck.has_train_state = true;
        ck.train.step = step;
        ck.train.epoch = epoch;
        ck.train.adam_d = adam_d;
        ck.train.adam_g = adam_g;
        ck.train.noise_rng_state = noise.state();
        ck.train.train_config_json = train_config_to_json(train_config).dump();
        return ck;
    }

    // One alternating update: a discriminator-objective phase then a
    // generator-objective phase, each backpropagating its full total through
    // every parameter reachable in its graph.
    LossReport step_batch(const Tensor<double>& y, const Tensor<double>& xp, double lr) {
        const LossWeights ew = effective_weights(train_config.model_kind, train_config.weights);
        LossReport rep;
        run_phase(y, xp, lr, true, ew, rep);
        run_phase(y, xp, lr, false, ew, rep);
        ++step;
        return rep;
    }

private:
    void run_phase(const Tensor<double>& y, const Tensor<double>& xp, double lr, bool disc_phase,
                   const LossWeights& ew, LossReport& rep) {
        Tape<double> tape;
        GraphCtx<double> ctx{tape, params};
        ctx.training = true;
        ctx.update_running = true;
        int yn = tape.input(y);
        int xn = tape.input(xp);
        auto ph = traingraph::build_phase_graph(ctx, model_config, train_config.model_kind, ew, yn,
                                                xn, disc_phase, noise);
        const double total = tape.val(ph.total).data[0];
        if (!std::isfinite(total))
            throw NumericError("train: non-finite " +
                               std::string(disc_phase ? "discriminator" : "generator") +
                               "-phase loss at step " + std::to_string(step) +
                               "; last good checkpoint: " +
                               (last_checkpoint.empty() ? "none" : last_checkpoint));
        tape.backward(ph.total);
        auto grads = ctx.collect_gradients();
        (disc_phase ? adam_d : adam_g).step(params, grads, lr);
        auto val_of = [&tape](int node) { return node < 0 ? 0.0 : tape.val(node).data[0]; };
        if (disc_phase) {
            rep.l_ae = val_of(ph.l_ae);
            rep.l_vae = val_of(ph.l_vae);
            rep.kl = val_of(ph.kl);
            rep.recon = val_of(ph.recon);
            rep.l_disc = val_of(ph.l_adv);
            rep.l_info = val_of(ph.l_info);
            rep.l_d_total = total;
        } else {
            rep.l_gen = val_of(ph.l_adv);
            rep.l_g_total = total;
        }
    }
};

struct TrainOutput {
    std::string final_checkpoint;
    std::vector<std::string> epoch_checkpoints;
    std::vector<double> val_apnd;  // one entry per completed epoch (NaN when no val split)
};

// Epoch loop: seeded shuffling, staircase learning rate on the global step
// counter, JSONL step logs, per-epoch validation deviation and checkpoints.
// Resuming from an epoch checkpoint replays the remaining epochs bitwise.
inline TrainOutput train_model(Trainer& tr, const Dataset& ds, const std::string& out_dir,
                               std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    const TrainConfig& tc = tr.train_config;
    const auto train_split = ds.split("train");
    const auto val_split = ds.split("val");
    check_domain(!train_split.empty(), "train: dataset has no training examples");
    const std::uint64_t steps_per_epoch =
        std::max<std::uint64_t>(1, train_split.size() / static_cast<std::uint64_t>(tc.batch_size));
    fs::create_directories(out_dir);
    TrainOutput out;
    Tensor<double> y, xp;
    for (std::uint64_t e = tr.epoch; e < static_cast<std::uint64_t>(tc.epochs); ++e) {
        std::vector<std::size_t> order(train_split.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng(tc.seed, "train/shuffle/epoch" + std::to_string(e)).shuffle(order);
        for (std::uint64_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<const Example*> batch;
            for (std::uint64_t i = s * tc.batch_size;
                 i < (s + 1) * static_cast<std::uint64_t>(tc.batch_size) && i < order.size(); ++i)
                batch.push_back(train_split[order[i]]);
            make_batch(tr.model_config, tc.task, batch, y, xp);
            const double lr = lr_at_step(tr.step, steps_per_epoch, tc);
            const auto t0 = std::chrono::steady_clock::now();
            LossReport rep = tr.step_batch(y, xp, lr);
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            if (log) {
                nlohmann::json j = loss_report_to_json(rep);
                j["step"] = tr.step;
                j["epoch"] = e;
                j["lr"] = lr;
                j["wall_ms"] = ms;
                (*log) << j.dump() << "\n";
            }
        }
        tr.epoch = e + 1;

        double val = std::numeric_limits<double>::quiet_NaN();
        if (!val_split.empty()) {
            std::vector<const Example*> subset = val_split;
            if (tc.val_examples > 0 && subset.size() > static_cast<std::size_t>(tc.val_examples))
                subset.resize(static_cast<std::size_t>(tc.val_examples));
            std::vector<double> a_cal;
            if (kind_has_attribute_encoder(tc.model_kind))
                a_cal = calibrate_attribute(tr.params, tr.model_config, subset, tc.task);
            std::vector<RasterImage> xs, xts;
            for (const Example* ex : subset) {
                Rng rng(tc.seed, "train/val/epoch" + std::to_string(e) + "/" +
                                     std::to_string(ex->index));
                RasterImage gen = generate_for_kind(ex->road, tr.params, tr.model_config,
                                                    tc.model_kind, a_cal, rng);
                xs.push_back(tc.task == RasterMode::crm ? ex->crm : ex->hcrm);
                xts.push_back(lognorm_inverse(gen));
            }
            val = apnd(xs, xts).mean_percent;
        }
        out.val_apnd.push_back(val);

        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04llu.ckpt", static_cast<unsigned long long>(e));
        const std::string path = (fs::path(out_dir) / name).string();
        checkpoint_write(path, tr.to_checkpoint());
        tr.last_checkpoint = path;
        out.epoch_checkpoints.push_back(path);
        if (log) {
            nlohmann::json j;
            j["epoch"] = e;
            j["val_apnd"] = std::isnan(val) ? nlohmann::json() : nlohmann::json(val);
            j["checkpoint"] = path;
            (*log) << j.dump() << "\n";
        }
    }
    out.final_checkpoint = (fs::path(out_dir) / "final.ckpt").string();
    checkpoint_write(out.final_checkpoint, tr.to_checkpoint());
    tr.last_checkpoint = out.final_checkpoint;
    return out;
}

} // namespace probegen
