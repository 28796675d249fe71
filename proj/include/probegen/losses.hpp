#pragma once
// Loss terms: reconstruction MSE, mixture-posterior ELBo (single-sample KL +
// unit-variance Gaussian NLL), non-saturating adversarial pair, attribute
// posterior NLL, and the weighted phase totals.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "probegen/common.hpp"
#include "probegen/model.hpp"
#include "probegen/raster.hpp"
#include "probegen/tape.hpp"

namespace probegen {

inline constexpr double kLn2Pi = 1.8378770664093453;  // ln(2*pi)

struct LossWeights {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double lambda3 = 1.0;
    double lambda4 = 1.0;

    void validate() const {
        check_domain(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0 && lambda4 >= 0,
                     "loss weights: lambdas must be non-negative");
    }
};

struct LossReport {
    double l_ae = 0.0;
    double l_vae = 0.0;
    double kl = 0.0;
    double recon = 0.0;
    double l_disc = 0.0;
    double l_gen = 0.0;
    double l_info = 0.0;
    double l_d_total = 0.0;
    double l_g_total = 0.0;
};

inline nlohmann::json loss_report_to_json(const LossReport& r) {
    return nlohmann::json{{"l_ae", r.l_ae},       {"l_vae", r.l_vae},
                          {"kl", r.kl},           {"recon", r.recon},
                          {"l_disc", r.l_disc},   {"l_gen", r.l_gen},
                          {"l_info", r.l_info},   {"l_d_total", r.l_d_total},
                          {"l_g_total", r.l_g_total}};
}

// ---- plain scalar forms ----

// Mean squared error over every entry of two log-space rasters.
inline double loss_ae(const RasterImage& xp, const RasterImage& xtp) {
    check_contract(xp.h == xtp.h && xp.w == xtp.w && xp.c == xtp.c,
                   "loss_ae: shape mismatch");
    check_contract(xp.space == Space::lognorm && xtp.space == Space::lognorm,
                   "loss_ae: both rasters must be in log space");
    double acc = 0.0;
    for (std::size_t i = 0; i < xp.data.size(); ++i) {
        const double d = xp.data[i] - xtp.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(xp.data.size());
}

// log N(z; mu, diag var) summed over dimensions.
inline double diag_gaussian_logpdf(const std::vector<double>& z, const double* mu,
                                   const double* var) {
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double d = z[i] - mu[i];
        acc += -0.5 * kLn2Pi - 0.5 * std::log(var[i]) - 0.5 * d * d / var[i];
    }
    return acc;
}

// log of the full mixture density at z.
inline double mixture_logpdf(const std::vector<double>& z, const ConditionPosterior& post) {
    const std::size_t m = post.weights.size();
    const std::size_t d = z.size();
    check_contract(post.means.size() == m * d && post.variances.size() == m * d,
                   "mixture_logpdf: dimension mismatch");
    std::vector<double> lp(m);
    for (std::size_t k = 0; k < m; ++k)
        lp[k] = std::log(post.weights[k]) +
                diag_gaussian_logpdf(z, post.means.data() + k * d, post.variances.data() + k * d);
    double mx = lp[0];
    for (double v : lp) mx = std::max(mx, v);
    if (!std::isfinite(mx)) return mx;  // all components vanish (or blow up)
    double acc = 0.0;
    for (double v : lp) acc += std::exp(v - mx);
    return mx + std::log(acc);
}

struct VaeLossParts {
    double total = 0.0;
    double kl = 0.0;
    double recon = 0.0;
};

// Single-sample Monte-Carlo ELBo pieces: kl = log q(z|posterior) - log N(z;0,I),
// recon = unit-variance Gaussian NLL of xp under mean xtp, summed over entries.
inline VaeLossParts loss_vae(const RasterImage& xp, const RasterImage& xtp,
                             const std::vector<double>& z_sample,
                             const ConditionPosterior& post) {
    check_contract(xp.h == xtp.h && xp.w == xtp.w && xp.c == xtp.c, "loss_vae: shape mismatch");
    VaeLossParts out;
    const double logq = mixture_logpdf(z_sample, post);
    double logp = 0.0;
    for (double z : z_sample) logp += -0.5 * kLn2Pi - 0.5 * z * z;
    if (!std::isfinite(logq) || !std::isfinite(logp))
        throw NumericError("loss_vae: non-finite posterior density at the drawn sample");
    out.kl = logq - logp;
    double acc = 0.0;
    for (std::size_t i = 0; i < xp.data.size(); ++i) {
        const double d = xp.data[i] - xtp.data[i];
        acc += 0.5 * d * d + 0.5 * kLn2Pi;
    }
    out.recon = acc;
    out.total = out.kl + out.recon;
    return out;
}

// Numerically stable -log sigmoid(x) = softplus(-x).
inline double nll_of_logit(double logit) {
    const double x = -logit;
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

inline double loss_disc_from_logits(double real_logit, double fake_logit) {
    return nll_of_logit(real_logit) + nll_of_logit(-fake_logit);
}

inline double loss_gen_from_logit(double fake_logit) { return nll_of_logit(fake_logit); }

// Probability-domain forms of the same pair.
inline double loss_disc(double d_real, double d_fake) {
    check_domain(d_real >= 0.0 && d_real <= 1.0 && d_fake >= 0.0 && d_fake <= 1.0,
                 "loss_disc: probabilities must lie in [0,1]");
    return -std::log(d_real) - std::log(1.0 - d_fake);
}

inline double loss_gen(double d_fake) {
    check_domain(d_fake >= 0.0 && d_fake <= 1.0, "loss_gen: probability must lie in [0,1]");
    return -std::log(d_fake);
}

// Negative log-likelihood of a under the diagonal Gaussian (q_mean, e^q_logvar).
inline double loss_info(const std::vector<double>& a, const std::vector<double>& q_mean,
                        const std::vector<double>& q_logvar) {
    check_contract(a.size() == q_mean.size() && a.size() == q_logvar.size(),
                   "loss_info: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - q_mean[i];
        acc += 0.5 * kLn2Pi + 0.5 * q_logvar[i] + 0.5 * d * d * std::exp(-q_logvar[i]);
    }
    return acc;
}

// l_d_total and l_g_total: both phases carry every term; they differ only in
// the adversarial piece (discriminator loss vs generator loss).
inline std::pair<double, double> combine_totals(double l_ae, double l_vae, double l_disc,
                                                double l_gen, double l_info,
                                                const LossWeights& w) {
    w.validate();
    const double d_total = w.lambda1 * l_ae + w.lambda2 * l_vae + w.lambda3 * l_disc + w.lambda4 * l_info;
    const double g_total = w.lambda1 * l_ae + w.lambda2 * l_vae + w.lambda3 * l_gen + w.lambda4 * l_info;
    return {d_total, g_total};
}

// ---- graph-node forms (batch-mean semantics) ----

namespace lossgraph {

// softplus(-x) elementwise via the stable tape op.
template <typename T>
int softplus_neg(Tape<T>& t, int x) {
    return ops::softplus(t, ops::mul_scalar(t, x, T(-1)));
}

// Mean over all entries of (a - b)^2.
template <typename T>
int mse_all(Tape<T>& t, int a, int b) {
    return ops::mean_all(t, ops::square(t, ops::sub(t, a, b)));
}

// Batch mean of per-example sums of [0.5 diff^2 + 0.5 ln 2pi].
template <typename T>
int recon_nll(Tape<T>& t, int xp, int xtp) {
    const auto& v = t.val(xp);
    const std::int64_t per_example = v.numel() / v.dim(0);
    int s = ops::sum_per_row(t, ops::square(t, ops::sub(t, xp, xtp)));  // [B]
    s = ops::mul_scalar(t, s, T(0.5));
    s = ops::add_scalar(t, s, T(0.5) * T(kLn2Pi) * static_cast<T>(per_example));
    return ops::mean_all(t, s);
}

// -E log D(real) - E log(1 - D(fake)), logits [B, 1] or [B].
template <typename T>
int disc_loss(Tape<T>& t, int real_logit, int fake_logit) {
    int lr = ops::mean_all(t, softplus_neg(t, real_logit));
    int lf = ops::mean_all(t, ops::softplus(t, fake_logit));
    return ops::add(t, lr, lf);
}

// -E log D(fake).
template <typename T>
int gen_loss(Tape<T>& t, int fake_logit) {
    return ops::mean_all(t, softplus_neg(t, fake_logit));
}

// Batch mean of per-row diagonal Gaussian NLL of a under (q_mean, e^q_logvar).
template <typename T>
int info_loss(Tape<T>& t, int a, int q_mean, int q_logvar) {
    const auto& v = t.val(a);
    check_contract(v.ndim() == 2, "info_loss: expects [B, d] inputs");
    const std::int64_t d = v.dim(1);
    int sq = ops::square(t, ops::sub(t, a, q_mean));
    int inv = ops::exp_op(t, ops::mul_scalar(t, q_logvar, T(-1)));
    int s = ops::sum_per_row(t, ops::add(t, ops::mul(t, sq, inv), q_logvar));  // [B]
    s = ops::mul_scalar(t, s, T(0.5));
    s = ops::add_scalar(t, s, T(0.5) * T(kLn2Pi) * static_cast<T>(d));
    return ops::mean_all(t, s);
}

// log q(z | mixture) for one example: mu/lv [m, d], logw [m] (log-simplex).
template <typename T>
int mixture_logq(Tape<T>& t, int z, int logw, int mu, int lv) {
    const auto& mv = t.val(mu);
    check_contract(mv.ndim() == 2, "mixture_logq: mu must be [m, d]");
    const std::int64_t d = mv.dim(1);
    int sq = ops::square(t, ops::sub_rowvec(t, mu, z));            // [m, d]
    int inv = ops::exp_op(t, ops::mul_scalar(t, lv, T(-1)));       // [m, d]
    int per_k = ops::sum_per_row(t, ops::add(t, ops::mul(t, sq, inv), lv));  // [m]
    per_k = ops::mul_scalar(t, per_k, T(-0.5));
    per_k = ops::add_scalar(t, per_k, T(-0.5) * T(kLn2Pi) * static_cast<T>(d));
    return ops::logsumexp_vec(t, ops::add(t, logw, per_k));
}

// log N(z; 0, I) for one example vector.
template <typename T>
int std_normal_logp(Tape<T>& t, int z) {
    const std::int64_t d = t.val(z).numel();
    int s = ops::mul_scalar(t, ops::sum_all(t, ops::square(t, z)), T(-0.5));
    return ops::add_scalar(t, s, T(-0.5) * T(kLn2Pi) * static_cast<T>(d));
}

// lambda-weighted sum of already-built scalar nodes; terms with zero weight
// may be absent (-1) and are skipped entirely.
template <typename T>
int weighted_total(Tape<T>& t, const LossWeights& w, int l_ae, int l_vae, int l_adv, int l_info,
                   double lambda_adv) {
    int total = -1;
    auto accumulate = [&t, &total](int node, double lambda) {
        if (node < 0 || lambda == 0.0) return;
        int term = ops::mul_scalar(t, node, T(lambda));
        total = total < 0 ? term : ops::add(t, total, term);
    };
    accumulate(l_ae, w.lambda1);
    accumulate(l_vae, w.lambda2);
    accumulate(l_adv, lambda_adv);
    accumulate(l_info, w.lambda4);
    check_contract(total >= 0, "weighted_total: every term is absent or zero-weighted");
    return total;
}

} // namespace lossgraph

} // namespace probegen
