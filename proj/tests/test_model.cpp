#include <catch2/catch_amalgamated.hpp>

#include "probegen/model.hpp"
#include "probegen/nn.hpp"

#include "helpers.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

using namespace probegen;

namespace {

ModelConfig tiny_config(std::int64_t image = 8, std::int64_t channels = 1) {
    ModelConfig cfg;
    cfg.image_h = cfg.image_w = image;
    cfg.channels = channels;
    cfg.d_a = 2;
    cfg.d_c = 2;
    cfg.m = 2;
    cfg.gen_upsample_stages = detail::ilog2(image);
    cfg.width_scale = 0.01;
    cfg.ae_conv_kind = channels == 12 ? ConvKind::conv3d : ConvKind::conv2d;
    cfg.validate();
    return cfg;
}

RasterImage random_lognorm_raster(std::int64_t h, std::int64_t w, std::int64_t c, Rng& rng) {
    RasterImage img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c), Space::lognorm);
    for (auto& v : img.data) v = rng.uniform(0.0, 3.0);
    return img;
}

RasterImage random_binary_road(std::int64_t n, Rng& rng) {
    RasterImage img(static_cast<int>(n), static_cast<int>(n), 1, Space::count);
    for (auto& v : img.data) v = rng.uniform() < 0.2 ? 1.0 : 0.0;
    return img;
}

} // namespace

TEST_CASE("nn: parameter init depends only on seed and name") {
    ParamStore<double> a(11), b(11), c(12);
    a.get_or_create("x.w", {2, 3}, true, init_he_normal<double>(2));
    a.get_or_create("y.w", {4}, true, init_he_normal<double>(4));
    // Same names created in the opposite order, with extra unrelated entries.
    b.get_or_create("q.w", {5}, true, init_he_normal<double>(5));
    b.get_or_create("y.w", {4}, true, init_he_normal<double>(4));
    b.get_or_create("x.w", {2, 3}, true, init_he_normal<double>(2));
    REQUIRE(a.at("x.w").data == b.at("x.w").data);
    REQUIRE(a.at("y.w").data == b.at("y.w").data);
    c.get_or_create("x.w", {2, 3}, true, init_he_normal<double>(2));
    REQUIRE(a.at("x.w").data != c.at("x.w").data);
}

TEST_CASE("nn: parameter re-touch validates shape and trainable flag") {
    ParamStore<double> s(1);
    s.get_or_create("p", {2, 2}, true, init_zeros<double>());
    REQUIRE_THROWS_AS(s.get_or_create("p", {2, 3}, true, init_zeros<double>()), ContractError);
    REQUIRE_THROWS_AS(s.get_or_create("p", {2, 2}, false, init_zeros<double>()), ContractError);
    REQUIRE_THROWS_AS(s.at("missing"), ContractError);
}

TEST_CASE("nn: he init matches its stated moments") {
    ParamStore<double> s(77);
    const std::int64_t fan_in = 50;
    auto& w = s.get_or_create("big.w", {200, 200}, true, init_he_normal<double>(fan_in));
    double mean = 0.0, sq = 0.0;
    for (double v : w.data) {
        mean += v;
        sq += v * v;
    }
    mean /= static_cast<double>(w.numel());
    const double sd = std::sqrt(sq / static_cast<double>(w.numel()) - mean * mean);
    REQUIRE(std::abs(mean) < 0.005);
    REQUIRE(sd == Catch::Approx(std::sqrt(2.0 / static_cast<double>(fan_in))).margin(0.005));
}

TEST_CASE("nn: param store serialization round-trips bitwise") {
    ParamStore<double> s(5);
    Rng rng(9, "fill");
    s.get_or_create("a.w", {3, 4}, true, init_he_normal<double>(3));
    s.get_or_create("a.bn.running_mean", {4}, false,
                    [&rng](Rng&, Tensor<double>& t) { for (auto& v : t.data) v = rng.normal(); });
    std::stringstream buf;
    s.serialize(buf);
    ParamStore<double> r = ParamStore<double>::deserialize(buf);
    REQUIRE(r.init_seed() == s.init_seed());
    REQUIRE(r.names() == s.names());
    REQUIRE(r.at("a.w").data == s.at("a.w").data);
    REQUIRE(r.at("a.bn.running_mean").data == s.at("a.bn.running_mean").data);
    REQUIRE_FALSE(r.trainable("a.bn.running_mean"));
    REQUIRE(r.content_hash() == s.content_hash());
}

TEST_CASE("nn: adam reproduces a hand-computed two-step trajectory") {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
    ParamStore<double> s(0);
    s.get_or_create("theta", {1}, true, init_ones<double>());
    Adam<double> opt(b1, b2, eps);

    double theta = 1.0, m = 0.0, v = 0.0;
    const double grads[2] = {0.5, 0.25};
    for (int t = 1; t <= 2; ++t) {
        const double g = grads[t - 1];
        std::map<std::string, Tensor<double>> gm;
        Tensor<double> gt({1});
        gt.data[0] = g;
        gm.emplace("theta", gt);
        opt.step(s, gm, lr);

        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps);
        REQUIRE(s.at("theta").data[0] == theta);
    }
    REQUIRE(opt.step_count() == 2);
}

TEST_CASE("nn: adam leaves parameters without gradients untouched") {
    ParamStore<double> s(3);
    s.get_or_create("moving", {2}, true, init_ones<double>());
    s.get_or_create("frozen", {2}, true, init_ones<double>());
    const auto before = s.at("frozen").data;
    Adam<double> opt;
    std::map<std::string, Tensor<double>> gm;
    Tensor<double> g({2});
    g.data = {0.1, -0.3};
    gm.emplace("moving", g);
    opt.step(s, gm, 0.01);
    REQUIRE(s.at("frozen").data == before);
    REQUIRE(s.at("moving").data != std::vector<double>{1.0, 1.0});

    ParamStore<double> s2(3);
    s2.get_or_create("stat", {2}, false, init_zeros<double>());
    std::map<std::string, Tensor<double>> bad;
    bad.emplace("stat", g);
    REQUIRE_THROWS_AS(opt.step(s2, bad, 0.01), ContractError);
}

TEST_CASE("nn: adam state round-trips and continues identically") {
    ParamStore<double> s1(4), s2(4);
    s1.get_or_create("w", {3}, true, init_he_normal<double>(3));
    s2.get_or_create("w", {3}, true, init_he_normal<double>(3));
    Adam<double> a1;
    auto grad = [](double scale) {
        Tensor<double> g({3});
        g.data = {0.3 * scale, -0.1 * scale, 0.05 * scale};
        std::map<std::string, Tensor<double>> gm;
        gm.emplace("w", g);
        return gm;
    };
    a1.step(s1, grad(1.0), 0.01);
    std::stringstream buf;
    a1.serialize(buf);
    Adam<double> a2 = Adam<double>::deserialize(buf);
    // Also replay step 1 onto the second store so parameters agree.
    Adam<double> fresh;
    fresh.step(s2, grad(1.0), 0.01);
    a1.step(s1, grad(0.5), 0.01);
    a2.step(s2, grad(0.5), 0.01);
    REQUIRE(s1.at("w").data == s2.at("w").data);
}

TEST_CASE("nn: graph context binds each parameter node once") {
    Tape<double> tape;
    ParamStore<double> store(6);
    GraphCtx<double> ctx{tape, store};
    int a = ctx.param("w", {2}, true, init_ones<double>());
    int b = ctx.param("w", {2}, true, init_ones<double>());
    REQUIRE(a == b);
    int c = ctx.param("stat", {2}, false, init_zeros<double>());
    REQUIRE_FALSE(tape.requires_grad(c));
}

TEST_CASE("model config: defaults validate and json round-trips") {
    ModelConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());
    cfg.channels = 12;
    cfg.ae_conv_kind = ConvKind::conv3d;
    cfg.heteroscedastic = false;
    cfg.width_scale = 0.25;
    auto j = model_config_to_json(cfg);
    ModelConfig back = model_config_from_json(j);
    REQUIRE(back.channels == 12);
    REQUIRE(back.ae_conv_kind == ConvKind::conv3d);
    REQUIRE_FALSE(back.heteroscedastic);
    REQUIRE(back.width_scale == cfg.width_scale);
    REQUIRE(model_config_to_json(back) == j);
}

TEST_CASE("model config: invariants are enforced") {
    ModelConfig cfg;
    cfg.image_h = 100;
    cfg.image_w = 100;
    REQUIRE_THROWS_AS(cfg.validate(), DomainError);
    cfg = ModelConfig{};
    cfg.image_w = 64;
    REQUIRE_THROWS_AS(cfg.validate(), DomainError);
    cfg = ModelConfig{};
    cfg.channels = 3;
    REQUIRE_THROWS_AS(cfg.validate(), DomainError);
    cfg = ModelConfig{};
    cfg.gen_upsample_stages = 5;
    REQUIRE_THROWS_AS(cfg.validate(), DomainError);
    cfg = ModelConfig{};
    cfg.d_a = 0;
    REQUIRE_THROWS_AS(cfg.validate(), DomainError);

    nlohmann::json j = model_config_to_json(ModelConfig{});
    j["mystery"] = 1;
    REQUIRE_THROWS_AS(model_config_from_json(j), FormatError);
}

TEST_CASE("model: attribute encoding lands in (0,1) and is deterministic") {
    auto cfg = tiny_config();
    ParamStore<double> params(21);
    Rng rng(22, "x");
    RasterImage x = random_lognorm_raster(cfg.image_h, cfg.image_w, cfg.channels, rng);
    auto a1 = encode_attribute(x, params, cfg);
    auto a2 = encode_attribute(x, params, cfg);
    REQUIRE(a1.size() == static_cast<std::size_t>(cfg.d_a));
    REQUIRE(a1 == a2);
    for (double v : a1) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }

    RasterImage zero(static_cast<int>(cfg.image_h), static_cast<int>(cfg.image_w),
                     static_cast<int>(cfg.channels), Space::lognorm);
    auto az = encode_attribute(zero, params, cfg);
    for (double v : az) {
        REQUIRE(std::isfinite(v));
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }

    RasterImage wrong(4, 4, 1, Space::lognorm);
    REQUIRE_THROWS_AS(encode_attribute(wrong, params, cfg), ContractError);
    RasterImage counts = x;
    counts.space = Space::count;
    REQUIRE_THROWS_AS(encode_attribute(counts, params, cfg), ContractError);
}

TEST_CASE("model: 3d attribute encoder accepts 12-channel volumes") {
    auto cfg = tiny_config(8, 12);
    REQUIRE(cfg.ae_conv_kind == ConvKind::conv3d);
    ParamStore<double> params(31);
    Rng rng(32, "x");
    RasterImage x = random_lognorm_raster(cfg.image_h, cfg.image_w, 12, rng);
    auto a = encode_attribute(x, params, cfg);
    REQUIRE(a.size() == static_cast<std::size_t>(cfg.d_a));
    for (double v : a) {
        REQUIRE(v > 0.0);
        REQUIRE(v < 1.0);
    }
}

TEST_CASE("model: condition posterior is a simplex with positive variances") {
    auto cfg = tiny_config();
    ParamStore<double> params(41);
    Rng rng(42, "y");
    for (int trial = 0; trial < 20; ++trial) {
        RasterImage y = random_binary_road(cfg.image_h, rng);
        auto post = encode_condition(y, params, cfg);
        REQUIRE(post.weights.size() == static_cast<std::size_t>(cfg.m));
        REQUIRE(post.means.size() == static_cast<std::size_t>(cfg.m * cfg.d_c));
        REQUIRE(post.variances.size() == post.means.size());
        double total = 0.0;
        for (double w : post.weights) {
            REQUIRE(w >= 0.0);
            total += w;
        }
        REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
        for (double v : post.variances) REQUIRE(v > 0.0);
        for (double v : post.means) REQUIRE(std::isfinite(v));
    }
    // Skips cover every generator scale: 2, 4, ..., image.
    RasterImage y = random_binary_road(cfg.image_h, rng);
    auto post = encode_condition(y, params, cfg);
    for (std::int64_t r = 2; r <= cfg.image_h; r *= 2) {
        REQUIRE(post.skips.count(r) == 1);
        REQUIRE(post.skips.at(r).dim(2) == r);
        REQUIRE(post.skips.at(r).dim(3) == r);
    }

    RasterImage bad = y;
    bad.data[3] = 0.5;
    REQUIRE_THROWS_AS(encode_condition(bad, params, cfg), ContractError);

    RasterImage zero(static_cast<int>(cfg.image_h), static_cast<int>(cfg.image_w), 1, Space::count);
    auto pz = encode_condition(zero, params, cfg);
    for (double w : pz.weights) REQUIRE(std::isfinite(w));
}

TEST_CASE("model: homoscedastic posterior repeats one variance per component") {
    auto cfg = tiny_config();
    cfg.heteroscedastic = false;
    ParamStore<double> params(43);
    Rng rng(44, "y");
    RasterImage y = random_binary_road(cfg.image_h, rng);
    auto post = encode_condition(y, params, cfg);
    for (std::int64_t k = 0; k < cfg.m; ++k)
        for (std::int64_t i = 1; i < cfg.d_c; ++i)
            REQUIRE(post.variances[k * cfg.d_c + i] == post.variances[k * cfg.d_c]);
}

TEST_CASE("model: condition sampling follows the mixture") {
    ConditionPosterior post;
    post.weights = {0.25, 0.75};
    post.means = {1.0, 2.0, -3.0, 0.5};
    post.variances = {1e-24, 1e-24, 1e-24, 1e-24};
    Rng rng(51, "z");
    // Vanishing variance: each draw must coincide with a component mean.
    int first = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        auto z = sample_condition(post, rng);
        REQUIRE(z.size() == 2);
        if (std::abs(z[0] - 1.0) < 1e-9) {
            REQUIRE(z[1] == Catch::Approx(2.0).margin(1e-9));
            ++first;
        } else {
            REQUIRE(z[0] == Catch::Approx(-3.0).margin(1e-9));
            REQUIRE(z[1] == Catch::Approx(0.5).margin(1e-9));
        }
    }
    // Component frequency matches the weights (binomial 3-sigma band).
    const double p = static_cast<double>(first) / n;
    REQUIRE(std::abs(p - 0.25) < 3.0 * std::sqrt(0.25 * 0.75 / n));

    // Unit variance: empirical mean approaches the weight-blended mean.
    post.variances = {1.0, 1.0, 1.0, 1.0};
    double mean0 = 0.0;
    for (int i = 0; i < n; ++i) mean0 += sample_condition(post, rng)[0];
    mean0 /= n;
    const double expected = 0.25 * 1.0 + 0.75 * -3.0;
    // Var of one draw <= component variance + spread of means; bound loosely.
    REQUIRE(std::abs(mean0 - expected) < 3.0 * std::sqrt((1.0 + 4.0) / n));

    REQUIRE(posterior_mean(post)[0] == Catch::Approx(expected));
    REQUIRE(posterior_mean(post)[1] == Catch::Approx(0.25 * 2.0 + 0.75 * 0.5));
}

TEST_CASE("model: latent assembly is ordered z_c then a") {
    ModelConfig cfg;
    cfg.d_c = 3;
    cfg.d_a = 2;
    auto z = form_latent(cfg, {1, 2, 3}, {4, 5});
    REQUIRE(z == std::vector<double>{1, 2, 3, 4, 5});
    REQUIRE_THROWS_AS(form_latent(cfg, {1, 2}, {4, 5}), ContractError);
    REQUIRE_THROWS_AS(form_latent(cfg, {1, 2, 3}, {4}), ContractError);
    auto zero = form_latent(cfg, {0, 0, 0}, {0, 0});
    REQUIRE(zero == std::vector<double>(5, 0.0));
}

TEST_CASE("model: generation is non-negative, shaped, and deterministic") {
    auto cfg = tiny_config();
    ParamStore<double> params(61);
    Rng rng(62, "g");
    RasterImage y = random_binary_road(cfg.image_h, rng);
    auto post = encode_condition(y, params, cfg);

    Rng zr(63, "latent");
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> z(static_cast<std::size_t>(cfg.d_c + cfg.d_a));
        for (auto& v : z) v = zr.uniform(-10.0, 10.0);
        RasterImage img = generate(z, post.skips, params, cfg);
        REQUIRE(img.h == cfg.image_h);
        REQUIRE(img.w == cfg.image_w);
        REQUIRE(img.c == cfg.channels);
        REQUIRE(img.space == Space::lognorm);
        for (double v : img.data) REQUIRE(v >= 0.0);
    }

    std::vector<double> z(static_cast<std::size_t>(cfg.d_c + cfg.d_a), 0.3);
    RasterImage g1 = generate(z, post.skips, params, cfg);
    RasterImage g2 = generate(z, post.skips, params, cfg);
    REQUIRE(g1.data == g2.data);

    auto missing = post.skips;
    missing.erase(4);
    REQUIRE_THROWS_AS(generate(z, missing, params, cfg), ContractError);
    std::vector<double> short_z(1, 0.0);
    REQUIRE_THROWS_AS(generate(short_z, post.skips, params, cfg), ContractError);
}

TEST_CASE("model: discriminator enforces the channel contract") {
    auto cfg = tiny_config();
    ParamStore<double> params(71);
    Rng rng(72, "d");
    RasterImage xy = random_lognorm_raster(cfg.image_h, cfg.image_w, cfg.channels + 1, rng);
    DiscOutput out = discriminate(xy, params, cfg);
    REQUIRE(std::isfinite(out.logit));
    REQUIRE(out.q_mean.size() == static_cast<std::size_t>(cfg.d_a));
    REQUIRE(out.q_logvar.size() == static_cast<std::size_t>(cfg.d_a));
    for (double v : out.q_logvar) REQUIRE(std::isfinite(v));

    DiscOutput again = discriminate(xy, params, cfg);
    REQUIRE(again.logit == out.logit);
    REQUIRE(again.q_mean == out.q_mean);

    DiscOutput bare = discriminate(xy, params, cfg, false);
    REQUIRE(bare.logit == out.logit);
    REQUIRE(bare.q_mean.empty());

    RasterImage wrong = random_lognorm_raster(cfg.image_h, cfg.image_w, cfg.channels, rng);
    REQUIRE_THROWS_AS(discriminate(wrong, params, cfg), ContractError);
}

TEST_CASE("model: every network stays connected to its parameters") {
    auto cfg = tiny_config();
    ParamStore<double> params(81);
    Tape<double> tape;
    GraphCtx<double> ctx{tape, params};
    ctx.training = true;
    ctx.update_running = false;

    Rng rng(82, "b");
    Tensor<double> xb({2, cfg.channels, cfg.image_h, cfg.image_w});
    for (auto& v : xb.data) v = rng.uniform(0.0, 2.0);
    Tensor<double> yb({2, 1, cfg.image_h, cfg.image_w});
    for (auto& v : yb.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    int x = tape.input(xb);
    int y = tape.input(yb);

    int a = modelnet::attribute_forward(ctx, cfg, x);
    auto cond = modelnet::condition_forward(ctx, cfg, y);
    int zc = ops::slice_row(ctx.tape, cond.means, 0);  // any head-dependent path
    int z = ops::concat_vec(ctx.tape, ops::reshape(ctx.tape, zc, {cfg.m * cfg.d_c}),
                            ops::reshape(ctx.tape, ops::slice_row(ctx.tape, a, 0), {cfg.d_a}));
    z = ops::reshape(ctx.tape, z, {1, cfg.m * cfg.d_c + cfg.d_a});
    // Reduce to d_c + d_a with a fixed-window sum so all heads contribute.
    int zsum = ops::sum_all(ctx.tape, z);
    // Feed the generator from the posterior means directly (batch of one).
    Tensor<double> zfix({2, cfg.d_c + cfg.d_a});
    for (auto& v : zfix.data) v = 0.5;
    int zg = tape.input(zfix, false);
    int gen = modelnet::generator_forward(ctx, cfg, zg, cond.skips);
    int xy = ops::concat_axis1(ctx.tape, gen, y);
    auto disc = modelnet::discriminator_forward(ctx, cfg, xy, true);

    int loss = ops::add(ctx.tape, zsum, ops::sum_all(ctx.tape, gen));
    loss = ops::add(ctx.tape, loss, ops::sum_all(ctx.tape, disc.logit));
    loss = ops::add(ctx.tape, loss, ops::sum_all(ctx.tape, disc.q_mean));
    loss = ops::add(ctx.tape, loss, ops::sum_all(ctx.tape, a));
    tape.backward(loss);

    auto grads = ctx.collect_gradients();
    bool ae = false, ce = false, gen_net = false, disc_net = false;
    for (const auto& kv : grads) {
        double norm = 0.0;
        for (double v : kv.second.data) norm += std::abs(v);
        if (norm == 0.0) continue;
        if (kv.first.rfind("ae.", 0) == 0) ae = true;
        if (kv.first.rfind("ce.", 0) == 0) ce = true;
        if (kv.first.rfind("gen.", 0) == 0) gen_net = true;
        if (kv.first.rfind("disc.", 0) == 0) disc_net = true;
    }
    REQUIRE(ae);
    REQUIRE(ce);
    REQUIRE(gen_net);
    REQUIRE(disc_net);
}

TEST_CASE("model: shape contracts hold across widths and image sizes") {
    Rng rng(91, "grid");
    for (std::int64_t image : {32, 64, 128}) {
        for (double ws : {0.25, 0.5, 1.0}) {
            // Keep the largest grid points affordable: full width only at 32,
            // and the biggest image only at quarter width.
            if (image == 128 && ws > 0.25) continue;
            if (image == 64 && ws > 0.5) continue;
            ModelConfig cfg;
            cfg.image_h = cfg.image_w = image;
            cfg.gen_upsample_stages = detail::ilog2(image);
            cfg.width_scale = ws;
            cfg.d_a = 4;
            cfg.d_c = 4;
            cfg.m = 3;
            cfg.validate();
            ParamStore<double> params(100 + image);
            RasterImage y = random_binary_road(image, rng);
            auto post = encode_condition(y, params, cfg);
            REQUIRE(post.weights.size() == 3);
            std::vector<double> z(8, 0.25);
            RasterImage img = generate(z, post.skips, params, cfg);
            REQUIRE(img.h == image);
            REQUIRE(img.c == 1);
            RasterImage x = random_lognorm_raster(image, image, 1, rng);
            auto a = encode_attribute(x, params, cfg);
            REQUIRE(a.size() == 4);
            RasterImage xy = random_lognorm_raster(image, image, 2, rng);
            DiscOutput d = discriminate(xy, params, cfg);
            REQUIRE(std::isfinite(d.logit));
        }
    }
}

TEST_CASE("model: checkpoint round-trips bitwise with training state") {
    auto dir = testutil::temp_dir("model_ckpt");
    auto cfg = tiny_config();
    Checkpoint ck;
    ck.config = cfg;
    ck.params = ParamStore<double>(7);
    Rng rng(92, "p");
    RasterImage y = random_binary_road(cfg.image_h, rng);
    encode_condition(y, ck.params, cfg);  // materialize a realistic parameter set
    ck.has_train_state = true;
    ck.train.step = 123;
    ck.train.epoch = 4;
    Adam<double> ad;
    std::map<std::string, Tensor<double>> gm;
    Tensor<double> g = ck.params.at("ce.conv0.b");
    for (auto& v : g.data) v = 0.01;
    gm.emplace("ce.conv0.b", g);
    ad.step(ck.params, gm, 1e-3);
    ck.train.adam_d = ad;
    ck.train.adam_g = Adam<double>();
    ck.train.noise_rng_state = {1, 2, 3, 4};
    ck.train.train_config_json = "{\"epochs\":2}";

    const std::string path = (dir / "model.ckpt").string();
    checkpoint_write(path, ck);
    Checkpoint rd = checkpoint_read(path);
    REQUIRE(rd.config.image_h == cfg.image_h);
    REQUIRE(rd.config.d_a == cfg.d_a);
    REQUIRE(rd.params.content_hash() == ck.params.content_hash());
    REQUIRE(rd.params.names() == ck.params.names());
    REQUIRE(rd.has_train_state);
    REQUIRE(rd.train.step == 123);
    REQUIRE(rd.train.epoch == 4);
    REQUIRE(rd.train.noise_rng_state == std::array<std::uint64_t, 4>{1, 2, 3, 4});
    REQUIRE(rd.train.train_config_json == ck.train.train_config_json);
    REQUIRE(rd.train.adam_d.step_count() == 1);

    // Write-back equality at the byte level.
    const std::string path2 = (dir / "model2.ckpt").string();
    checkpoint_write(path2, rd);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::stringstream b1, b2;
    b1 << f1.rdbuf();
    b2 << f2.rdbuf();
    REQUIRE(b1.str() == b2.str());

    std::ofstream bad(dir / "bad.ckpt", std::ios::binary);
    bad << "NOPE";
    bad.close();
    REQUIRE_THROWS_AS(checkpoint_read((dir / "bad.ckpt").string()), FormatError);
}

TEST_CASE("model: inference does not advance normalization statistics") {
    auto cfg = tiny_config();
    ParamStore<double> params(93);
    Rng rng(94, "x");
    RasterImage x = random_lognorm_raster(cfg.image_h, cfg.image_w, cfg.channels, rng);
    auto a1 = encode_attribute(x, params, cfg);
    const auto hash_before = params.content_hash();
    encode_attribute(x, params, cfg);
    REQUIRE(params.content_hash() == hash_before);

    // A training-mode pass with update_running must move the running stats.
    Tape<double> tape;
    GraphCtx<double> ctx{tape, params};
    ctx.training = true;
    ctx.update_running = true;
    int xn = tape.input(raster_to_nchw(x));
    modelnet::attribute_forward(ctx, cfg, xn);
    REQUIRE(params.content_hash() != hash_before);
    auto a2 = encode_attribute(x, params, cfg);
    REQUIRE(a1 != a2);
}
