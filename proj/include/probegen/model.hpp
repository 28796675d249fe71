#pragma once
// The four networks (attribute encoder, condition encoder, generator,
// discriminator with auxiliary attribute head), latent assembly, inference
// entry points, and the versioned checkpoint container.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "probegen/common.hpp"
#include "probegen/nn.hpp"
#include "probegen/probes.hpp"
#include "probegen/raster.hpp"
#include "probegen/rng.hpp"

namespace probegen {

enum class ConvKind { conv2d, conv3d };

inline std::string conv_kind_to_string(ConvKind k) {
    return k == ConvKind::conv2d ? "conv2d" : "conv3d";
}

inline ConvKind conv_kind_from_string(const std::string& s) {
    if (s == "conv2d") return ConvKind::conv2d;
    if (s == "conv3d") return ConvKind::conv3d;
    throw DomainError("unknown conv kind: " + s);
}

namespace detail {

inline bool is_pow2_ge8(std::int64_t v) { return v >= 8 && (v & (v - 1)) == 0; }

inline std::int64_t ilog2(std::int64_t v) {
    std::int64_t l = 0;
    while ((std::int64_t(1) << l) < v) ++l;
    return l;
}

} // namespace detail

struct ModelConfig {
    std::int64_t image_h = 128;
    std::int64_t image_w = 128;
    std::int64_t channels = 1;  // 1 for single-channel count maps, 12 for heading-bucketed
    std::int64_t d_a = 32;
    std::int64_t d_c = 32;
    std::int64_t m = 20;
    std::int64_t ae_depth = 15;  // convolutions before the mixed-receptive-field block
    ConvKind ae_conv_kind = ConvKind::conv2d;
    bool ce_use_inception = true;
    bool skip_connections = true;
    std::int64_t gen_upsample_stages = 7;
    std::int64_t disc_depth = 6;
    double width_scale = 1.0;
    bool heteroscedastic = true;  // per-component diagonal variances; else one scalar per component

    void validate() const {
        check_domain(d_a >= 1 && d_c >= 1 && m >= 1, "model config: d_a, d_c, m must be >= 1");
        check_domain(detail::is_pow2_ge8(image_h) && detail::is_pow2_ge8(image_w),
                     "model config: image extents must be powers of two >= 8");
        check_domain(image_h == image_w, "model config: images must be square");
        check_domain(channels == 1 || channels == 12, "model config: channels must be 1 or 12");
        check_domain(ae_depth >= 1, "model config: ae_depth must be >= 1");
        check_domain(disc_depth >= 1, "model config: disc_depth must be >= 1");
        check_domain((std::int64_t(1) << gen_upsample_stages) == image_h,
                     "model config: gen_upsample_stages must equal log2(image extent)");
        check_domain(width_scale > 0.0, "model config: width_scale must be positive");
    }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
    return nlohmann::json{{"image_h", c.image_h},
                          {"image_w", c.image_w},
                          {"channels", c.channels},
                          {"d_a", c.d_a},
                          {"d_c", c.d_c},
                          {"m", c.m},
                          {"ae_depth", c.ae_depth},
                          {"ae_conv_kind", conv_kind_to_string(c.ae_conv_kind)},
                          {"ce_use_inception", c.ce_use_inception},
                          {"skip_connections", c.skip_connections},
                          {"gen_upsample_stages", c.gen_upsample_stages},
                          {"disc_depth", c.disc_depth},
                          {"width_scale", c.width_scale},
                          {"heteroscedastic", c.heteroscedastic}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    check_format(j.is_object(), "model config: expected a JSON object");
    static const std::vector<std::string> known = {
        "image_h",       "image_w",          "channels",    "d_a",
        "d_c",           "m",                "ae_depth",    "ae_conv_kind",
        "ce_use_inception", "skip_connections", "gen_upsample_stages", "disc_depth",
        "width_scale",   "heteroscedastic"};
    for (const auto& kv : j.items())
        check_format(std::find(known.begin(), known.end(), kv.key()) != known.end(),
                     "model config: unknown key \"" + kv.key() + "\"");
    ModelConfig c;
    if (j.count("image_h")) c.image_h = j.at("image_h").get<std::int64_t>();
    if (j.count("image_w")) c.image_w = j.at("image_w").get<std::int64_t>();
    if (j.count("channels")) c.channels = j.at("channels").get<std::int64_t>();
    if (j.count("d_a")) c.d_a = j.at("d_a").get<std::int64_t>();
    if (j.count("d_c")) c.d_c = j.at("d_c").get<std::int64_t>();
    if (j.count("m")) c.m = j.at("m").get<std::int64_t>();
    if (j.count("ae_depth")) c.ae_depth = j.at("ae_depth").get<std::int64_t>();
    if (j.count("ae_conv_kind"))
        c.ae_conv_kind = conv_kind_from_string(j.at("ae_conv_kind").get<std::string>());
    if (j.count("ce_use_inception")) c.ce_use_inception = j.at("ce_use_inception").get<bool>();
    if (j.count("skip_connections")) c.skip_connections = j.at("skip_connections").get<bool>();
    if (j.count("gen_upsample_stages"))
        c.gen_upsample_stages = j.at("gen_upsample_stages").get<std::int64_t>();
    if (j.count("disc_depth")) c.disc_depth = j.at("disc_depth").get<std::int64_t>();
    if (j.count("width_scale")) c.width_scale = j.at("width_scale").get<double>();
    if (j.count("heteroscedastic")) c.heteroscedastic = j.at("heteroscedastic").get<bool>();
    c.validate();
    return c;
}

// Convenience presets for the two raster tasks at a given square image size.
inline ModelConfig default_model_config(RasterMode mode, std::int64_t image, double width_scale) {
    ModelConfig c;
    c.image_h = c.image_w = image;
    c.channels = mode == RasterMode::crm ? 1 : 12;
    c.ae_conv_kind = mode == RasterMode::crm ? ConvKind::conv2d : ConvKind::conv3d;
    c.gen_upsample_stages = detail::ilog2(image);
    c.width_scale = width_scale;
    c.validate();
    return c;
}

// ---- network graph builders ----
//
// Width schedule (documented defaults, all multiplied by width_scale and
// rounded to at least one channel):
//   encoders/discriminator: 32 at full resolution, doubling after each
//   stride-2 convolution, capped at 128 (encoders) / 256 (discriminator);
//   generator: width(res) = clamp(16 * image / res, 16, 256).

namespace modelnet {

template <typename T>
int attribute_forward_2d(GraphCtx<T>& ctx, const ModelConfig& cfg, int x) {
    std::int64_t spatial = cfg.image_h;
    std::int64_t base = 32;
    std::int64_t cin = cfg.channels;
    for (std::int64_t i = 0; i < cfg.ae_depth; ++i) {
        const std::int64_t stride = (i % 2 == 0 && spatial > 4) ? 2 : 1;
        const std::int64_t dil = (i == cfg.ae_depth - 5 || i == cfg.ae_depth - 4) ? 2 : 1;
        const std::int64_t cout = scaled_width(cfg.width_scale, base);
        x = layers::conv_bn_relu2d(ctx, x, "ae.conv" + std::to_string(i), cin, cout, 3, stride,
                                   dil, dil);
        if (stride == 2) {
            spatial /= 2;
            base = std::min<std::int64_t>(base * 2, 128);
        }
        cin = cout;
    }
    auto split = layers::inception_split(scaled_width(cfg.width_scale, 128));
    x = layers::inception2d(ctx, x, "ae.incep", cin, split);
    x = ops::global_avg_pool(ctx.tape, x);
    x = layers::dense(ctx, x, "ae.head", split.total, cfg.d_a);
    return ops::sigmoid(ctx.tape, x);
}

template <typename T>
int attribute_forward_3d(GraphCtx<T>& ctx, const ModelConfig& cfg, int x) {
    // Heading channels become the depth axis of a single-channel volume.
    const auto& xv = ctx.tape.val(x);
    x = ops::reshape(ctx.tape, x, {xv.dim(0), 1, cfg.channels, cfg.image_h, cfg.image_w});
    std::int64_t spatial = cfg.image_h;
    std::int64_t base = 32;
    std::int64_t cin = 1;
    for (std::int64_t i = 0; i < cfg.ae_depth; ++i) {
        const std::int64_t stride = (i % 2 == 0 && spatial > 4) ? 2 : 1;
        const std::int64_t dil = (i == cfg.ae_depth - 5 || i == cfg.ae_depth - 4) ? 2 : 1;
        const std::int64_t cout = scaled_width(cfg.width_scale, base);
        x = layers::conv_bn_relu3d(ctx, x, "ae.conv" + std::to_string(i), cin, cout, {3, 3, 3},
                                   {1, stride, stride}, {1, dil, dil}, {1, dil, dil});
        if (stride == 2) {
            spatial /= 2;
            base = std::min<std::int64_t>(base * 2, 128);
        }
        cin = cout;
    }
    auto split = layers::inception_split(scaled_width(cfg.width_scale, 128));
    x = layers::inception3d(ctx, x, "ae.incep", cin, split);
    x = ops::global_avg_pool(ctx.tape, x);
    x = layers::dense(ctx, x, "ae.head", split.total, cfg.d_a);
    return ops::sigmoid(ctx.tape, x);
}

// x [B, c, h, w] in log space -> attribute rows [B, d_a], each entry in (0,1).
template <typename T>
int attribute_forward(GraphCtx<T>& ctx, const ModelConfig& cfg, int x) {
    return cfg.ae_conv_kind == ConvKind::conv3d ? attribute_forward_3d(ctx, cfg, x)
                                                : attribute_forward_2d(ctx, cfg, x);
}

template <typename T>
struct ConditionNodes {
    int weight_logits = -1;  // [B, m]
    int means = -1;          // [B, m*d_c]
    int logvars = -1;        // [B, m*d_c]
    std::map<std::int64_t, int> skips;  // resolution -> feature node [B, C, res, res]
};

// y [B, 1, h, w] -> mixture heads and one skip feature per generator scale.
template <typename T>
ConditionNodes<T> condition_forward(GraphCtx<T>& ctx, const ModelConfig& cfg, int y) {
    ConditionNodes<T> out;
    const std::int64_t incep_res = std::min<std::int64_t>(8, cfg.image_h / 2);
    std::int64_t res = cfg.image_h;
    std::int64_t base = 32;
    std::int64_t cin = 1;
    std::int64_t cout = scaled_width(cfg.width_scale, base);
    int x = layers::conv_bn_relu2d(ctx, y, "ce.conv0", cin, cout, 3, 1, 1);
    cin = cout;
    out.skips[res] = x;
    while (res > 2) {
        cout = scaled_width(cfg.width_scale, base);
        x = layers::conv_bn_relu2d(ctx, x, "ce.down" + std::to_string(res / 2), cin, cout, 3, 2, 1);
        cin = cout;
        base = std::min<std::int64_t>(base * 2, 128);
        res /= 2;
        if (cfg.ce_use_inception && res == incep_res) {
            auto split = layers::inception_split(scaled_width(cfg.width_scale, 128));
            x = layers::inception2d(ctx, x, "ce.incep", cin, split);
            cin = split.total;
        }
        out.skips[res] = x;
    }
    cout = scaled_width(cfg.width_scale, 128);
    x = layers::conv_bn_relu2d(ctx, x, "ce.trunk", cin, cout, 3, 2, 1);
    x = ops::reshape(ctx.tape, x, {ctx.tape.val(x).dim(0), cout});
    out.weight_logits = layers::dense(ctx, x, "ce.head_w", cout, cfg.m);
    out.means = layers::dense(ctx, x, "ce.head_mu", cout, cfg.m * cfg.d_c);
    if (cfg.heteroscedastic) {
        out.logvars = layers::dense(ctx, x, "ce.head_lv", cout, cfg.m * cfg.d_c);
    } else {
        int lv = layers::dense(ctx, x, "ce.head_lv", cout, cfg.m);
        out.logvars = ops::repeat_cols(ctx.tape, lv, cfg.d_c);
    }
    return out;
}

// z rows [B, dz] -> image [B, c, h, w] in log space, non-negative (softplus).
template <typename T>
int generator_forward(GraphCtx<T>& ctx, const ModelConfig& cfg, int z,
                      const std::map<std::int64_t, int>& skips) {
    auto width_at = [&cfg](std::int64_t res) {
        const std::int64_t w = std::clamp<std::int64_t>(16 * cfg.image_h / res, 16, 256);
        return scaled_width(cfg.width_scale, w);
    };
    const auto& zv = ctx.tape.val(z);
    check_contract(zv.ndim() == 2, "generator: latent must be [batch, dim]");
    const std::int64_t dz = zv.dim(1);
    int x = ops::reshape(ctx.tape, z, {zv.dim(0), dz, 1, 1});
    std::int64_t cin = dz;
    std::int64_t cout = width_at(1);
    x = layers::conv2d(ctx, x, "gen.stem", cin, cout, 1, 1, 0);
    x = layers::batchnorm(ctx, x, "gen.stem.bn", cout);
    x = ops::relu(ctx.tape, x);
    cin = cout;
    for (std::int64_t s = 1; s <= cfg.gen_upsample_stages; ++s) {
        const std::int64_t res = std::int64_t(1) << s;
        x = ops::upsample2x(ctx.tape, x);
        if (cfg.skip_connections) {
            auto it = skips.find(res);
            check_contract(it != skips.end(),
                           "generator: missing skip feature at resolution " + std::to_string(res));
            x = ops::concat_axis1(ctx.tape, x, it->second);
            cin += ctx.tape.val(it->second).dim(1);
        }
        cout = width_at(res);
        x = layers::conv_bn_relu2d(ctx, x, "gen.up" + std::to_string(s), cin, cout, 3, 1, 1);
        cin = cout;
    }
    x = layers::conv2d(ctx, x, "gen.out", cin, cfg.channels, 3, 1, 1);
    return ops::softplus(ctx.tape, x);
}

template <typename T>
struct DiscNodes {
    int logit = -1;     // [B, 1]
    int q_mean = -1;    // [B, d_a], absent (-1) when built without the auxiliary head
    int q_logvar = -1;  // [B, d_a]
};

// xy [B, c+1, h, w]: generated-or-real sample concatenated with the road
// raster on the channel axis.
template <typename T>
DiscNodes<T> discriminator_forward(GraphCtx<T>& ctx, const ModelConfig& cfg, int xy, bool with_q) {
    const auto& v = ctx.tape.val(xy);
    check_contract(v.ndim() == 4 && v.dim(1) == cfg.channels + 1,
                   "discriminator: input must have channels + 1 planes");
    std::int64_t spatial = cfg.image_h;
    std::int64_t base = 32;
    std::int64_t cin = cfg.channels + 1;
    int x = xy;
    for (std::int64_t i = 0; i < cfg.disc_depth; ++i) {
        const std::int64_t stride = spatial > 4 ? 2 : 1;
        const std::int64_t cout = scaled_width(cfg.width_scale, base);
        x = layers::conv_bn_relu2d(ctx, x, "disc.conv" + std::to_string(i), cin, cout, 3, stride, 1);
        if (stride == 2) {
            spatial /= 2;
            base = std::min<std::int64_t>(base * 2, 256);
        }
        cin = cout;
    }
    auto split = layers::inception_split(scaled_width(cfg.width_scale, 256));
    x = layers::inception2d(ctx, x, "disc.incep", cin, split);
    x = ops::global_avg_pool(ctx.tape, x);
    const std::int64_t fc = scaled_width(cfg.width_scale, 64);
    x = layers::dense(ctx, x, "disc.fc", split.total, fc);
    x = layers::batchnorm(ctx, x, "disc.fc.bn", fc);
    x = ops::relu(ctx.tape, x);
    DiscNodes<T> out;
    out.logit = layers::dense(ctx, x, "disc.logit", fc, 1);
    if (with_q) {
        const std::int64_t qh = scaled_width(cfg.width_scale, 32);
        int q = layers::dense(ctx, x, "disc.q.fc", fc, qh);
        q = ops::relu(ctx.tape, q);
        out.q_mean = layers::dense(ctx, q, "disc.q.mean", qh, cfg.d_a);
        out.q_logvar = layers::dense(ctx, q, "disc.q.logvar", qh, cfg.d_a);
    }
    return out;
}

} // namespace modelnet

// ---- plain (non-graph) posterior and latent helpers ----

struct ConditionPosterior {
    std::vector<double> weights;    // m entries on the simplex
    std::vector<double> means;      // m * d_c, component-major
    std::vector<double> variances;  // m * d_c, strictly positive
    std::map<std::int64_t, Tensor<double>> skips;  // resolution -> [1, C, res, res]
};

inline std::vector<double> softmax_plain(const std::vector<double>& logits) {
    double mx = logits.front();
    for (double v : logits) mx = std::max(mx, v);
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

// Categorical component draw (no gradient notion here), then the chosen
// component's affine reparameterization mu_k + sigma_k * eps.
inline std::vector<double> sample_condition(const ConditionPosterior& post, Rng& rng) {
    const std::size_t m = post.weights.size();
    check_contract(m >= 1 && post.means.size() == post.variances.size() &&
                       post.means.size() % m == 0,
                   "sample_condition: malformed posterior");
    const std::size_t d = post.means.size() / m;
    const std::size_t k = rng.categorical(post.weights);
    std::vector<double> z(d);
    for (std::size_t i = 0; i < d; ++i) {
        const double sd = std::sqrt(post.variances[k * d + i]);
        z[i] = post.means[k * d + i] + sd * rng.normal();
    }
    return z;
}

// Deterministic summary used at generation time: the mixture mean.
inline std::vector<double> posterior_mean(const ConditionPosterior& post) {
    const std::size_t m = post.weights.size();
    const std::size_t d = post.means.size() / m;
    std::vector<double> z(d, 0.0);
    for (std::size_t k = 0; k < m; ++k)
        for (std::size_t i = 0; i < d; ++i) z[i] += post.weights[k] * post.means[k * d + i];
    return z;
}

inline std::vector<double> form_latent(const ModelConfig& cfg, const std::vector<double>& z_c,
                                       const std::vector<double>& a) {
    check_contract(static_cast<std::int64_t>(z_c.size()) == cfg.d_c,
                   "form_latent: condition vector length mismatch");
    check_contract(static_cast<std::int64_t>(a.size()) == cfg.d_a,
                   "form_latent: attribute vector length mismatch");
    std::vector<double> z = z_c;
    z.insert(z.end(), a.begin(), a.end());
    return z;
}

struct DiscOutput {
    double logit = 0.0;
    std::vector<double> q_mean;
    std::vector<double> q_logvar;
};

// ---- raster <-> tensor plumbing ----

// HWC raster rows to one NCHW sample.
inline Tensor<double> raster_to_nchw(const RasterImage& img) {
    Tensor<double> t({1, img.c, img.h, img.w});
    for (std::int64_t i = 0; i < img.h; ++i)
        for (std::int64_t j = 0; j < img.w; ++j)
            for (std::int64_t k = 0; k < img.c; ++k)
                t.data[static_cast<std::size_t>((k * img.h + i) * img.w + j)] = img.at(i, j, k);
    return t;
}

inline RasterImage nchw_to_raster(const Tensor<double>& t, std::int64_t sample, Space space) {
    check_contract(t.ndim() == 4 && sample >= 0 && sample < t.dim(0), "nchw_to_raster: bad sample");
    RasterImage img(static_cast<int>(t.dim(2)), static_cast<int>(t.dim(3)),
                    static_cast<int>(t.dim(1)), space);
    const std::int64_t plane = t.dim(2) * t.dim(3);
    for (std::int64_t k = 0; k < img.c; ++k)
        for (std::int64_t i = 0; i < img.h; ++i)
            for (std::int64_t j = 0; j < img.w; ++j)
                img.at(i, j, k) =
                    t.data[static_cast<std::size_t>(((sample * t.dim(1) + k) * t.dim(2) + i) * t.dim(3) + j)];
    return img;
}

// ---- inference entry points (running statistics, no parameter updates) ----

inline GraphCtx<double> inference_ctx(Tape<double>& tape, ParamStore<double>& params) {
    GraphCtx<double> ctx{tape, params};
    ctx.training = false;
    ctx.update_running = false;
    return ctx;
}

inline std::vector<double> encode_attribute(const RasterImage& xprime, ParamStore<double>& params,
                                            const ModelConfig& cfg) {
    cfg.validate();
    check_contract(xprime.space == Space::lognorm, "encode_attribute: input must be in log space");
    check_contract(xprime.h == cfg.image_h && xprime.w == cfg.image_w && xprime.c == cfg.channels,
                   "encode_attribute: raster extents do not match the model config");
    Tape<double> tape;
    auto ctx = inference_ctx(tape, params);
    int x = tape.input(raster_to_nchw(xprime));
    int a = modelnet::attribute_forward(ctx, cfg, x);
    return tape.val(a).data;
}

inline ConditionPosterior encode_condition(const RasterImage& y, ParamStore<double>& params,
                                           const ModelConfig& cfg) {
    cfg.validate();
    check_contract(y.h == cfg.image_h && y.w == cfg.image_w && y.c == 1,
                   "encode_condition: road raster extents do not match the model config");
    for (double v : y.data)
        check_contract(v == 0.0 || v == 1.0, "encode_condition: road raster must be binary");
    Tape<double> tape;
    auto ctx = inference_ctx(tape, params);
    int yn = tape.input(raster_to_nchw(y));
    auto nodes = modelnet::condition_forward(ctx, cfg, yn);
    ConditionPosterior post;
    post.weights = softmax_plain(tape.val(nodes.weight_logits).data);
    post.means = tape.val(nodes.means).data;
    post.variances.resize(post.means.size());
    const auto& lv = tape.val(nodes.logvars).data;
    for (std::size_t i = 0; i < lv.size(); ++i) post.variances[i] = std::exp(lv[i]);
    for (const auto& kv : nodes.skips) post.skips[kv.first] = tape.val(kv.second);
    return post;
}

inline RasterImage generate(const std::vector<double>& z,
                            const std::map<std::int64_t, Tensor<double>>& skips,
                            ParamStore<double>& params, const ModelConfig& cfg) {
    cfg.validate();
    check_contract(static_cast<std::int64_t>(z.size()) == cfg.d_c + cfg.d_a ||
                       static_cast<std::int64_t>(z.size()) == cfg.d_c,
                   "generate: latent length must be d_c + d_a (or d_c without attributes)");
    if (params.has("gen.stem.w"))
        check_contract(params.at("gen.stem.w").dim(1) == static_cast<std::int64_t>(z.size()),
                       "generate: latent length does not match the trained generator");
    Tape<double> tape;
    auto ctx = inference_ctx(tape, params);
    Tensor<double> zt({1, static_cast<std::int64_t>(z.size())});
    zt.data = z;
    int zn = tape.input(zt);
    std::map<std::int64_t, int> skip_nodes;
    for (const auto& kv : skips) skip_nodes[kv.first] = tape.input(kv.second);
    int out = modelnet::generator_forward(ctx, cfg, zn, skip_nodes);
    RasterImage img = nchw_to_raster(tape.val(out), 0, Space::lognorm);
    return img;
}

inline DiscOutput discriminate(const RasterImage& X, ParamStore<double>& params,
                               const ModelConfig& cfg, bool with_q = true) {
    cfg.validate();
    check_contract(X.c == cfg.channels + 1,
                   "discriminate: input must carry channels + 1 planes (sample plus road)");
    check_contract(X.h == cfg.image_h && X.w == cfg.image_w,
                   "discriminate: raster extents do not match the model config");
    Tape<double> tape;
    auto ctx = inference_ctx(tape, params);
    int xn = tape.input(raster_to_nchw(X));
    auto nodes = modelnet::discriminator_forward(ctx, cfg, xn, with_q);
    DiscOutput out;
    out.logit = tape.val(nodes.logit).data[0];
    if (with_q) {
        out.q_mean = tape.val(nodes.q_mean).data;
        out.q_logvar = tape.val(nodes.q_logvar).data;
    }
    return out;
}

// ---- model families ----

// Which networks a trained model carries and how its condition latent is
// formed: the full model samples z_c and keeps every network; the baselines
// drop the adversarial pair and/or the attribute pathway.
enum class ModelKind : std::uint8_t {
    vae_info_cgan = 0,
    cvae_plc = 1,
    cvae_plc_flc = 2,
    cgan_plc = 3,
    cgan_plc_flc = 4,
};

inline constexpr ModelKind kAllModelKinds[5] = {
    ModelKind::cvae_plc, ModelKind::cvae_plc_flc, ModelKind::cgan_plc, ModelKind::cgan_plc_flc,
    ModelKind::vae_info_cgan};

inline std::string model_kind_to_string(ModelKind k) {
    switch (k) {
        case ModelKind::vae_info_cgan: return "vae-info-cgan";
        case ModelKind::cvae_plc: return "cvae-plc";
        case ModelKind::cvae_plc_flc: return "cvae-plc-flc";
        case ModelKind::cgan_plc: return "cgan-plc";
        case ModelKind::cgan_plc_flc: return "cgan-plc-flc";
    }
    throw DomainError("model kind: unknown enum value");
}

inline ModelKind model_kind_from_string(const std::string& s) {
    for (ModelKind k : kAllModelKinds)
        if (model_kind_to_string(k) == s) return k;
    throw DomainError("model kind: unknown name: " + s);
}

// Attribute encoder (and with it the feature-level condition in z).
inline bool kind_has_attribute_encoder(ModelKind k) {
    return k == ModelKind::vae_info_cgan || k == ModelKind::cvae_plc_flc ||
           k == ModelKind::cgan_plc_flc;
}

inline bool kind_has_discriminator(ModelKind k) {
    return k == ModelKind::vae_info_cgan || k == ModelKind::cgan_plc ||
           k == ModelKind::cgan_plc_flc;
}

// Auxiliary posterior head over the attribute vector.
inline bool kind_has_aux_head(ModelKind k) { return k == ModelKind::vae_info_cgan; }

// Variational kinds draw z_c from the mixture; adversarial-only kinds use the
// posterior mean deterministically.
inline bool kind_samples_condition(ModelKind k) { return !kind_has_discriminator(k) || k == ModelKind::vae_info_cgan; }

inline std::int64_t kind_latent_dim(ModelKind k, const ModelConfig& cfg) {
    return cfg.d_c + (kind_has_attribute_encoder(k) ? cfg.d_a : 0);
}

// Creates every parameter the kind's networks use by running one throwaway
// forward pass, so initialization is complete before training or loading.
inline void initialize_model(ParamStore<double>& params, const ModelConfig& cfg, ModelKind kind) {
    cfg.validate();
    Tape<double> tape;
    GraphCtx<double> ctx{tape, params};
    ctx.training = true;
    ctx.update_running = false;
    int yn = tape.input(Tensor<double>({1, 1, cfg.image_h, cfg.image_w}));
    auto cond = modelnet::condition_forward(ctx, cfg, yn);
    int xn = tape.input(Tensor<double>({1, cfg.channels, cfg.image_h, cfg.image_w}));
    if (kind_has_attribute_encoder(kind)) modelnet::attribute_forward(ctx, cfg, xn);
    int zn = tape.input(Tensor<double>({1, kind_latent_dim(kind, cfg)}));
    modelnet::generator_forward(ctx, cfg, zn, cond.skips);
    if (kind_has_discriminator(kind)) {
        int xy = ops::concat_axis1(tape, xn, yn);
        modelnet::discriminator_forward(ctx, cfg, xy, kind_has_aux_head(kind));
    }
}

// One conditioned sample from a trained model: z_c per the kind's latent rule,
// attribute concatenated when the kind carries the attribute pathway. The
// result stays in log space.
inline RasterImage generate_for_kind(const RasterImage& road, ParamStore<double>& params,
                                     const ModelConfig& cfg, ModelKind kind,
                                     const std::vector<double>& attribute, Rng& rng) {
    auto post = encode_condition(road, params, cfg);
    std::vector<double> z_c =
        kind_samples_condition(kind) ? sample_condition(post, rng) : posterior_mean(post);
    std::vector<double> z;
    if (kind_has_attribute_encoder(kind)) {
        z = form_latent(cfg, z_c, attribute);
    } else {
        check_contract(attribute.empty(), "generate_for_kind: model kind takes no attribute vector");
        z = std::move(z_c);
    }
    return generate(z, post.skips, params, cfg);
}

// ---- versioned checkpoint container ----

struct TrainState {
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    Adam<double> adam_d;
    Adam<double> adam_g;
    std::array<std::uint64_t, 4> noise_rng_state{};
    std::string train_config_json;
};

struct Checkpoint {
    ModelConfig config;
    ParamStore<double> params;
    bool has_train_state = false;
    TrainState train;
};

inline constexpr char kCheckpointMagic[4] = {'P', 'G', 'C', 'K'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

inline void checkpoint_write(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    check_format(os.good(), "checkpoint: cannot open for writing: " + path);
    os.write(kCheckpointMagic, 4);
    detail::stream_write_u8(os, kCheckpointVersion);
    detail::stream_write_string(os, model_config_to_json(ck.config).dump());
    detail::stream_write_u8(os, ck.has_train_state ? 1 : 0);
    ck.params.serialize(os);
    if (ck.has_train_state) {
        detail::stream_write_u64(os, ck.train.step);
        detail::stream_write_u64(os, ck.train.epoch);
        ck.train.adam_d.serialize(os);
        ck.train.adam_g.serialize(os);
        for (std::uint64_t s : ck.train.noise_rng_state) detail::stream_write_u64(os, s);
        detail::stream_write_string(os, ck.train.train_config_json);
    }
    os.flush();
    check_format(os.good(), "checkpoint: write failed: " + path);
}

inline Checkpoint checkpoint_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check_format(is.good(), "checkpoint: cannot open: " + path);
    char magic[4];
    detail::stream_read_bytes(is, magic, 4);
    check_format(std::memcmp(magic, kCheckpointMagic, 4) == 0, "checkpoint: bad magic");
    const std::uint8_t version = detail::stream_read_u8(is);
    check_format(version == kCheckpointVersion, "checkpoint: unsupported version");
    Checkpoint ck;
    ck.config = model_config_from_json(nlohmann::json::parse(detail::stream_read_string(is)));
    ck.has_train_state = detail::stream_read_u8(is) != 0;
    ck.params = ParamStore<double>::deserialize(is);
    if (ck.has_train_state) {
        ck.train.step = detail::stream_read_u64(is);
        ck.train.epoch = detail::stream_read_u64(is);
        ck.train.adam_d = Adam<double>::deserialize(is);
        ck.train.adam_g = Adam<double>::deserialize(is);
        for (auto& s : ck.train.noise_rng_state) s = detail::stream_read_u64(is);
        ck.train.train_config_json = detail::stream_read_string(is);
    }
    return ck;
}

} // namespace probegen
