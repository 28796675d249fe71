#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "probegen/common.hpp"
#include "probegen/model.hpp"
#include "probegen/rng.hpp"

namespace probegen {

// ---- labeled attribute samples ----

struct LabeledAttributeSet {
    std::vector<std::vector<double>> samples;  // n attribute vectors
    std::vector<double> pixel_sums;            // count-space totals of the generations
    double mu_ps = 0.0;                        // labeling threshold: mean pixel sum
    std::vector<int> labels;                   // +1 iff pixel_sum > mu_ps, else -1
};

// Recomputes the threshold and labels from the stored pixel sums (idempotent).
inline void label_by_pixel_sum(LabeledAttributeSet& s) {
    check_contract(s.samples.size() == s.pixel_sums.size(),
                   "label_by_pixel_sum: samples and pixel sums differ in length");
    check_domain(!s.pixel_sums.empty(), "label_by_pixel_sum: empty set");
    s.mu_ps = std::accumulate(s.pixel_sums.begin(), s.pixel_sums.end(), 0.0) /
              static_cast<double>(s.pixel_sums.size());
    s.labels.resize(s.pixel_sums.size());
    for (std::size_t i = 0; i < s.pixel_sums.size(); ++i)
        s.labels[i] = s.pixel_sums[i] > s.mu_ps ? 1 : -1;
}

// Concatenates two sets (e.g. samples from several conditions) and relabels
// against the pooled threshold.
inline LabeledAttributeSet merge_labeled_sets(const LabeledAttributeSet& a,
                                              const LabeledAttributeSet& b) {
    LabeledAttributeSet out = a;
    out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
    out.pixel_sums.insert(out.pixel_sums.end(), b.pixel_sums.begin(), b.pixel_sums.end());
    label_by_pixel_sum(out);
    return out;
}

// ---- decision hyperplane ----

struct Hyperplane {
    std::vector<double> weights;
    double bias = 0.0;

    double weight_norm() const {
        double s = 0.0;
        for (double w : weights) s += w * w;
        return std::sqrt(s);
    }

    std::vector<double> unit_normal() const {
        const double n = weight_norm();
        check_contract(n > 0.0, "hyperplane: zero weight vector has no normal");
        std::vector<double> out = weights;
        for (double& v : out) v /= n;
        return out;
    }
};

inline double svm_score(const Hyperplane& h, const std::vector<double>& a) {
    check_contract(a.size() == h.weights.size(), "svm_score: dimension mismatch");
    double s = h.bias;
    for (std::size_t i = 0; i < a.size(); ++i) s += h.weights[i] * a[i];
    return s;
}

// ---- fixed-condition generation context ----

// One condition encoding shared by sample collection and sweeps: the road's
// posterior features plus a fixed z_c drawn once from the kind's latent rule.
struct EditContext {
    ConditionPosterior posterior;
    std::vector<double> z_c;
};

inline EditContext edit_context(const RasterImage& road, ParamStore<double>& params,
                                const ModelConfig& cfg, ModelKind kind, std::uint64_t seed) {
    check_contract(kind_has_attribute_encoder(kind),
                   "latent edit: model kind has no attribute pathway");
    EditContext ctx;
    ctx.posterior = encode_condition(road, params, cfg);
    Rng rng(seed, "edit/zc");
    ctx.z_c = kind_samples_condition(kind) ? sample_condition(ctx.posterior, rng)
                                           : posterior_mean(ctx.posterior);
    return ctx;
}

inline double count_pixel_sum(const RasterImage& lognorm_img) {
    double s = 0.0;
    for (double v : lognorm_img.data) s += lognorm_inverse(v);
    return s;
}

// Generates count samples at uniform random attributes under one fixed
// condition and labels them by the mean-pixel-sum rule.
inline LabeledAttributeSet collect_attribute_samples(const RasterImage& road,
                                                     ParamStore<double>& params,
                                                     const ModelConfig& cfg, ModelKind kind,
                                                     int count, std::uint64_t seed) {
    check_domain(count >= 100, "collect_attribute_samples: need at least 100 samples");
    EditContext ctx = edit_context(road, params, cfg, kind, seed);
    Rng arng(seed, "edit/attr");
    LabeledAttributeSet set;
    set.samples.reserve(static_cast<std::size_t>(count));
    set.pixel_sums.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        std::vector<double> a(static_cast<std::size_t>(cfg.d_a));
        for (double& v : a) v = arng.uniform();
        RasterImage img = generate(form_latent(cfg, ctx.z_c, a), ctx.posterior.skips, params, cfg);
        set.pixel_sums.push_back(count_pixel_sum(img));
        set.samples.push_back(std::move(a));
    }
    label_by_pixel_sum(set);
    return set;
}

// ---- linear SVM (primal hinge, L2 regularized, subgradient descent) ----

// The seeded shuffle that defines the train/val split; the first
// floor(train_fraction * n) entries (clamped to [1, n-1]) train the fit.
inline std::vector<std::size_t> svm_split_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(seed, "svm/split").shuffle(order);
    return order;
}

inline std::size_t svm_train_count(std::size_t n, double train_fraction) {
    auto k = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    return std::min(std::max<std::size_t>(k, 1), n - 1);
}

// Deterministic fixed-epoch fit with seeded shuffling; returns the hyperplane
// and the accuracy on the held-out (1 - train_fraction) tail.
inline std::pair<Hyperplane, double> fit_linear_svm(const LabeledAttributeSet& set,
                                                    double train_fraction = 0.9,
                                                    std::uint64_t seed = 0,
                                                    double regularization = 1.0,
                                                    int epochs = 200) {
    const std::size_t n = set.samples.size();
    check_contract(set.labels.size() == n && set.pixel_sums.size() == n,
                   "fit_linear_svm: set fields differ in length");
    check_domain(n >= 2, "fit_linear_svm: need at least two samples");
    check_domain(train_fraction > 0.0 && train_fraction < 1.0,
                 "fit_linear_svm: train_fraction must lie in (0,1)");
    check_domain(regularization > 0.0 && epochs >= 1, "fit_linear_svm: bad hyperparameters");

    std::vector<std::size_t> order = svm_split_order(n, seed);
    const std::size_t n_train = svm_train_count(n, train_fraction);

    bool pos = false, neg = false;
    for (std::size_t i = 0; i < n_train; ++i) {
        pos = pos || set.labels[order[i]] > 0;
        neg = neg || set.labels[order[i]] < 0;
    }
    if (!pos || !neg)
        throw DegenerateDataError("fit_linear_svm: training split contains a single class");

    const std::size_t d = set.samples[0].size();
    Hyperplane h;
    h.weights.assign(d, 0.0);
    std::vector<std::size_t> idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::uint64_t t = 0;
    for (int e = 0; e < epochs; ++e) {
        Rng(seed, "svm/epoch" + std::to_string(e)).shuffle(idx);
        for (std::size_t i : idx) {
            ++t;
            const double eta = 1.0 / (regularization * static_cast<double>(t));
            const auto& x = set.samples[i];
            const double y = static_cast<double>(set.labels[i]);
            const double margin = y * svm_score(h, x);
            const double shrink = 1.0 - eta * regularization;
            for (double& w : h.weights) w *= shrink;
            if (margin < 1.0) {
                for (std::size_t k = 0; k < d; ++k) h.weights[k] += eta * y * x[k];
                h.bias += eta * y;
            }
        }
    }
    check_contract(h.weight_norm() > 0.0, "fit_linear_svm: fit collapsed to a zero weight vector");

    std::size_t correct = 0;
    for (std::size_t i = n_train; i < n; ++i) {
        const int pred = svm_score(h, set.samples[order[i]]) > 0.0 ? 1 : -1;
        if (pred == set.labels[order[i]]) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(n - n_train);
    return {h, acc};
}

// Index of the sample nearest the decision boundary (minimum |score|); when
// `subset` is non-empty only those indices are considered (pass the training
// indices to match the fit's own split).
inline std::size_t select_boundary_sample(const LabeledAttributeSet& set, const Hyperplane& h,
                                          const std::vector<std::size_t>& subset = {}) {
    check_domain(!set.samples.empty(), "select_boundary_sample: empty set");
    std::vector<std::size_t> all;
    const std::vector<std::size_t>* idx = &subset;
    if (subset.empty()) {
        all.resize(set.samples.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        idx = &all;
    }
    std::size_t best = idx->front();
    double best_abs = std::abs(svm_score(h, set.samples[best]));
    for (std::size_t i : *idx) {
        check_contract(i < set.samples.size(), "select_boundary_sample: index out of range");
        const double s = std::abs(svm_score(h, set.samples[i]));
        if (s < best_abs) {
            best_abs = s;
            best = i;
        }
    }
    return best;
}

// Training-split indices for the same (set size, fraction, seed) as a fit call.
inline std::vector<std::size_t> svm_train_indices(std::size_t n, double train_fraction,
                                                  std::uint64_t seed) {
    check_domain(n >= 2, "svm_train_indices: need at least two samples");
    check_domain(train_fraction > 0.0 && train_fraction < 1.0,
                 "svm_train_indices: train_fraction must lie in (0,1)");
    std::vector<std::size_t> order = svm_split_order(n, seed);
    order.resize(svm_train_count(n, train_fraction));
    return order;
}

// a_edit = a_boundary + alpha * n. Entries may leave [0,1]; the generator
// accepts unconstrained latents at inference.
inline std::vector<double> edit_along_normal(const std::vector<double>& a_boundary,
                                             const Hyperplane& h, double alpha) {
    check_contract(a_boundary.size() == h.weights.size(), "edit_along_normal: dimension mismatch");
    const auto n = h.unit_normal();
    std::vector<double> out = a_boundary;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * n[i];
    return out;
}

// ---- sweeps along the normal ----

struct AlphaPoint {
    double alpha = 0.0;
    double score = 0.0;      // decision score at the edited attribute
    double pixel_sum = 0.0;  // count-space total of the generation
    RasterImage image;       // count space
};

// The attribute step that corresponds to doubling the observation interval in
// the reference calibration; sweeps flag the matching point.
inline constexpr double kIntervalDoublingAlpha = 0.45;

inline std::vector<AlphaPoint> alpha_sweep(const RasterImage& road, ParamStore<double>& params,
                                           const ModelConfig& cfg, ModelKind kind,
                                           const Hyperplane& h,
                                           const std::vector<double>& a_boundary,
                                           const std::vector<double>& alphas,
                                           std::uint64_t seed) {
    EditContext ctx = edit_context(road, params, cfg, kind, seed);
    std::vector<AlphaPoint> out;
    out.reserve(alphas.size());
    for (double alpha : alphas) {
        AlphaPoint p;
        p.alpha = alpha;
        const auto a = edit_along_normal(a_boundary, h, alpha);
        p.score = svm_score(h, a);
        RasterImage img = generate(form_latent(cfg, ctx.z_c, a), ctx.posterior.skips, params, cfg);
        p.image = lognorm_inverse(img);
        p.pixel_sum = 0.0;
        for (double v : p.image.data) p.pixel_sum += v;
        out.push_back(std::move(p));
    }
    return out;
}

inline nlohmann::json alpha_sweep_to_json(const std::vector<AlphaPoint>& points) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : points) {
        nlohmann::json j;
        j["alpha"] = p.alpha;
        j["score"] = p.score;
        j["pixel_sum"] = p.pixel_sum;
        j["interval_doubling_point"] = p.alpha == kIntervalDoublingAlpha;
        arr.push_back(j);
    }
    return arr;
}

} // namespace probegen
