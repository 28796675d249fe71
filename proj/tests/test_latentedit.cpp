#include <catch2/catch_amalgamated.hpp>

#include "probegen/latentedit.hpp"

#include <cmath>

using namespace probegen;

namespace {

ModelConfig tiny_model() {
    ModelConfig mc = default_model_config(RasterMode::crm, 16, 0.05);
    mc.d_a = 4;
    mc.d_c = 4;
    mc.m = 3;
    return mc;
}

RasterImage cross_road(int size = 16) {
    RasterImage road(size, size, 1, Space::count);
    for (int i = 0; i < size; ++i) {
        road.at(size / 2, i, 0) = 1.0;
        road.at(i, size / 2, 0) = 1.0;
    }
    return road;
}

// Linearly separable cloud around two centers; labels stored directly.
LabeledAttributeSet separable_set(int per_class, std::uint64_t seed) {
    Rng rng(seed, "toy");
    LabeledAttributeSet set;
    for (int i = 0; i < per_class; ++i) {
        set.samples.push_back({1.5 + 0.3 * rng.normal(), 1.5 + 0.3 * rng.normal()});
        set.pixel_sums.push_back(10.0);
        set.labels.push_back(1);
        set.samples.push_back({-1.5 + 0.3 * rng.normal(), -1.5 + 0.3 * rng.normal()});
        set.pixel_sums.push_back(1.0);
        set.labels.push_back(-1);
    }
    return set;
}

} // namespace

TEST_CASE("latentedit: labeling rule and idempotence") {
    LabeledAttributeSet s;
    s.samples = {{0.0}, {0.0}, {0.0}, {0.0}};
    s.pixel_sums = {1.0, 2.0, 3.0, 6.0};
    label_by_pixel_sum(s);
    REQUIRE(s.mu_ps == 3.0);
    REQUIRE(s.labels == std::vector<int>{-1, -1, -1, 1});  // tie at the mean goes negative

    auto mu = s.mu_ps;
    auto labels = s.labels;
    label_by_pixel_sum(s);
    REQUIRE(s.mu_ps == mu);
    REQUIRE(s.labels == labels);

    LabeledAttributeSet bad;
    REQUIRE_THROWS_AS(label_by_pixel_sum(bad), DomainError);
    bad.samples = {{0.0}};
    REQUIRE_THROWS_AS(label_by_pixel_sum(bad), ContractError);
}

TEST_CASE("latentedit: merge relabels against the pooled threshold") {
    LabeledAttributeSet a, b;
    a.samples = {{0.0}, {0.0}};
    a.pixel_sums = {1.0, 3.0};
    label_by_pixel_sum(a);
    b.samples = {{0.0}, {0.0}};
    b.pixel_sums = {10.0, 30.0};
    label_by_pixel_sum(b);
    auto m = merge_labeled_sets(a, b);
    REQUIRE(m.samples.size() == 4);
    REQUIRE(m.mu_ps == 11.0);
    REQUIRE(m.labels == std::vector<int>{-1, -1, -1, 1});
}

TEST_CASE("latentedit: hyperplane normal and score linearity") {
    Hyperplane h;
    h.weights = {3.0, -4.0};
    h.bias = 0.5;
    REQUIRE(h.weight_norm() == 5.0);
    auto n = h.unit_normal();
    REQUIRE(std::abs(n[0] * n[0] + n[1] * n[1] - 1.0) < 1e-12);

    // moving along the unit normal changes the score by exactly alpha * ||w||
    std::vector<double> a{0.2, 0.7};
    const double s0 = svm_score(h, a);
    for (double alpha : {-10.0, -1.0, 0.0, 0.45, 2.0, 10.0}) {
        auto ae = edit_along_normal(a, h, alpha);
        REQUIRE(std::abs(svm_score(h, ae) - (s0 + alpha * h.weight_norm())) < 1e-9);
        for (double v : ae) REQUIRE(std::isfinite(v));
    }
    // large steps may leave the [0,1] sampling box; that is allowed
    auto far = edit_along_normal(a, h, 10.0);
    REQUIRE((far[0] > 1.0 || far[0] < 0.0));

    Hyperplane zero;
    zero.weights = {0.0, 0.0};
    REQUIRE_THROWS_AS(zero.unit_normal(), ContractError);
    REQUIRE_THROWS_AS(svm_score(h, {1.0}), ContractError);
}

TEST_CASE("latentedit: svm separates a 1-d toy with the right sign") {
    LabeledAttributeSet s;
    for (int i = 0; i < 50; ++i) {
        s.samples.push_back({0.9});
        s.pixel_sums.push_back(10.0);
        s.labels.push_back(1);
        s.samples.push_back({0.1});
        s.pixel_sums.push_back(1.0);
        s.labels.push_back(-1);
    }
    auto [h, acc] = fit_linear_svm(s, 0.9, 7);
    REQUIRE(h.weights.size() == 1);
    REQUIRE(h.weights[0] > 0.0);  // higher attribute value must score higher
    // note: with strong L2 (reg 1.0) and balanced classes the bias sits on a
    // plateau here, so separation of this toy is not implied -- only the sign is
    REQUIRE(svm_score(h, {0.9}) > svm_score(h, {0.1}));
    REQUIRE((acc >= 0.0 && acc <= 1.0));
}

TEST_CASE("latentedit: svm on a separable 2-d cloud") {
    auto s = separable_set(100, 3);
    auto [h, acc] = fit_linear_svm(s, 0.9, 3);
    REQUIRE(acc == 1.0);
    int correct = 0;
    for (std::size_t i = 0; i < s.samples.size(); ++i) {
        int pred = svm_score(h, s.samples[i]) > 0.0 ? 1 : -1;
        if (pred == s.labels[i]) ++correct;
    }
    REQUIRE(correct == static_cast<int>(s.samples.size()));

    // determinism: identical seeds give identical fits
    auto [h2, acc2] = fit_linear_svm(s, 0.9, 3);
    REQUIRE(h2.weights == h.weights);
    REQUIRE(h2.bias == h.bias);
    REQUIRE(acc2 == acc);
}

TEST_CASE("latentedit: degenerate and invalid svm inputs") {
    LabeledAttributeSet s;
    for (int i = 0; i < 20; ++i) {
        s.samples.push_back({double(i)});
        s.pixel_sums.push_back(1.0);
        s.labels.push_back(1);
    }
    REQUIRE_THROWS_AS(fit_linear_svm(s, 0.9, 0), DegenerateDataError);

    auto ok = separable_set(10, 1);
    REQUIRE_THROWS_AS(fit_linear_svm(ok, 0.0, 0), DomainError);
    REQUIRE_THROWS_AS(fit_linear_svm(ok, 1.0, 0), DomainError);
    LabeledAttributeSet one;
    one.samples = {{1.0}};
    one.pixel_sums = {1.0};
    one.labels = {1};
    REQUIRE_THROWS_AS(fit_linear_svm(one, 0.9, 0), DomainError);
}

TEST_CASE("latentedit: boundary sample has the minimum absolute score") {
    auto s = separable_set(25, 9);
    auto [h, acc] = fit_linear_svm(s, 0.9, 9);
    (void)acc;
    const std::size_t b = select_boundary_sample(s, h);
    const double best = std::abs(svm_score(h, s.samples[b]));
    for (const auto& a : s.samples) REQUIRE(best <= std::abs(svm_score(h, a)) + 1e-15);
}

TEST_CASE("latentedit: attribute collection is deterministic and labeled") {
    ModelConfig mc = tiny_model();
    ParamStore<double> params(21);
    initialize_model(params, mc, ModelKind::vae_info_cgan);
    RasterImage road = cross_road();

    REQUIRE_THROWS_AS(collect_attribute_samples(road, params, mc, ModelKind::vae_info_cgan, 99, 4),
                      DomainError);
    REQUIRE_THROWS_AS(collect_attribute_samples(road, params, mc, ModelKind::cvae_plc, 100, 4),
                      ContractError);

    auto set = collect_attribute_samples(road, params, mc, ModelKind::vae_info_cgan, 120, 4);
    REQUIRE(set.samples.size() == 120);
    REQUIRE(set.pixel_sums.size() == 120);
    REQUIRE(set.labels.size() == 120);
    for (const auto& a : set.samples) {
        REQUIRE(a.size() == 4);
        for (double v : a) REQUIRE((v >= 0.0 && v < 1.0));
    }
    for (double ps : set.pixel_sums) {
        REQUIRE(std::isfinite(ps));
        REQUIRE(ps >= 0.0);
    }
    for (std::size_t i = 0; i < set.labels.size(); ++i)
        REQUIRE(set.labels[i] == (set.pixel_sums[i] > set.mu_ps ? 1 : -1));

    auto again = collect_attribute_samples(road, params, mc, ModelKind::vae_info_cgan, 120, 4);
    REQUIRE(again.samples == set.samples);
    REQUIRE(again.pixel_sums == set.pixel_sums);
    REQUIRE(again.labels == set.labels);

    auto other = collect_attribute_samples(road, params, mc, ModelKind::vae_info_cgan, 120, 5);
    REQUIRE(other.samples != set.samples);
}

TEST_CASE("latentedit: alpha sweep pins alpha zero to the boundary generation") {
    ModelConfig mc = tiny_model();
    ParamStore<double> params(22);
    initialize_model(params, mc, ModelKind::vae_info_cgan);
    RasterImage road = cross_road();

    Hyperplane h;
    h.weights = {0.5, -0.25, 1.0, 0.125};
    h.bias = -0.2;
    std::vector<double> a_boundary{0.3, 0.6, 0.1, 0.9};

    auto pts = alpha_sweep(road, params, mc, ModelKind::vae_info_cgan, h, a_boundary,
                           {-1.0, 0.0, 0.45, 1.0}, 4);
    REQUIRE(pts.size() == 4);
    for (const auto& p : pts) {
        REQUIRE(p.image.space == Space::count);
        REQUIRE(p.image.h == 16);
        double total = 0.0;
        for (double v : p.image.data) {
            REQUIRE(v >= 0.0);
            total += v;
        }
        REQUIRE(p.pixel_sum == total);
    }
    // scores increase strictly with alpha, linearly in ||w||
    for (std::size_t i = 1; i < pts.size(); ++i) REQUIRE(pts[i].score > pts[i - 1].score);
    REQUIRE(std::abs(pts[1].score - svm_score(h, a_boundary)) < 1e-12);

    // alpha = 0 reproduces the direct generation at a_boundary under the same stream
    EditContext ctx = edit_context(road, params, mc, ModelKind::vae_info_cgan, 4);
    RasterImage direct =
        lognorm_inverse(generate(form_latent(mc, ctx.z_c, a_boundary), ctx.posterior.skips, params, mc));
    REQUIRE(pts[1].image.data == direct.data);

    auto j = alpha_sweep_to_json(pts);
    REQUIRE(j.size() == 4);
    REQUIRE(j[2]["interval_doubling_point"] == true);
    REQUIRE(j[1]["interval_doubling_point"] == false);
    REQUIRE(j[0]["alpha"] == -1.0);
}

TEST_CASE("latentedit: cgan kinds use the posterior mean for z_c") {
    ModelConfig mc = tiny_model();
    ParamStore<double> params(23);
    initialize_model(params, mc, ModelKind::cgan_plc_flc);
    RasterImage road = cross_road();

    EditContext c1 = edit_context(road, params, mc, ModelKind::cgan_plc_flc, 1);
    EditContext c2 = edit_context(road, params, mc, ModelKind::cgan_plc_flc, 2);
    REQUIRE(c1.z_c == c2.z_c);  // deterministic summary, seed-independent

    auto set = collect_attribute_samples(road, params, mc, ModelKind::cgan_plc_flc, 100, 6);
    REQUIRE(set.samples.size() == 100);
}
