#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "lfl/core.hpp"
#include "lfl/sampling.hpp"
#include "lfl/spectral.hpp"
#include "lfl/stiefel.hpp"

namespace lfl {

/// Latent state with the orthonormal-W invariant active. kappa_counter and
/// truncation_rejects are BNP diagnostics.
struct SubspaceState : LatentState {
    long kappa_counter = 0;
    int K_max = 0;
    long truncation_rejects = 0;
};

/// Moments of Eq. (11): x_{k,n} | ... ~ N(y_n.w_k / (sigma^2+1), sigma^2/(sigma^2+1)).
inline GaussMoments appca_x_moments(double y_dot_w, double sigma2) {
    return {y_dot_w / (sigma2 + 1.0), sigma2 / (sigma2 + 1.0)};
}

inline double appca_x_update(const SubspaceState& state, const Dataset& dataset, int n, int k, Rng& rng) {
    const GaussMoments post = appca_x_moments(dataset.Y.col(n).dot(state.W.col(k)), state.sigma2);
    return detail::draw_normal(post.mean, post.var, rng);
}

/// Slot-wise categorical resampling of z_n, identical mechanics to the aFA
/// update; the column sum stays exactly L.
inline Vector appca_z_update(const SubspaceState& state, const Dataset& dataset, int n, Rng& rng,
                             double temper = 1.0, ZMode mode = ZMode::Sample) {
    const Vector proj = state.W.transpose() * dataset.Y.col(n);
    const Vector scores = temper * proj.array().square();
    return detail::resample_hypergeom_column(scores, state.Z.col(n), mode, rng);
}

/// Eq. (12) exponent choice: the printed equation lacks the square on
/// y_n^T w_k, which Eqs. (13)-(14) have; Squared is the validated default.
enum class Eq12Exponent { Squared, Verbatim };

/// Bernoulli success probability of Eq. (12) for an existing feature.
inline double bnp_existing_prob(double m_minus, int N, double y_dot_w, double sigma2,
                                Eq12Exponent exponent = Eq12Exponent::Squared) {
    if (m_minus <= 0.0) return 0.0;
    const double q = exponent == Eq12Exponent::Squared ? y_dot_w * y_dot_w : y_dot_w;
    const double log_a = std::log(m_minus / N) + q / (2.0 * sigma2 * (sigma2 + 1.0)) +
                         0.5 * std::log(sigma2 / (sigma2 + 1.0));
    return 1.0 / (1.0 + std::exp(-log_a));
}

/// Resample one existing-feature indicator; returns the new bit.
inline double bnp_existing_z(const SubspaceState& state, const Dataset& dataset, int n, int k, Rng& rng,
                             Eq12Exponent exponent = Eq12Exponent::Squared) {
    const double m_minus = state.Z.row(k).sum() - state.Z(k, n);
    const double p = bnp_existing_prob(m_minus, dataset.count(),
                                       dataset.Y.col(n).dot(state.W.col(k)), state.sigma2, exponent);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return unif(rng) < p ? 1.0 : 0.0;
}

namespace detail {

/// kappa orthonormal directions drawn uniformly in the orthogonal complement
/// of span(W); empty when the complement is exhausted.
inline Matrix complement_directions(const Matrix& W, int kappa, Rng& rng) {
    const int D = static_cast<int>(W.rows());
    Matrix G(D, kappa);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int j = 0; j < kappa; ++j)
        for (int d = 0; d < D; ++d) G(d, j) = gauss(rng);
    if (W.cols() > 0) G -= W * (W.transpose() * G);
    Matrix U = stiefel::detail::thin_qf(G);
    if (W.cols() > 0) U -= W * (W.transpose() * U);  // squeeze out round-off leakage
    return stiefel::detail::thin_qf(U);
}

}  // namespace detail

/// Poisson(alpha/N) new-feature proposal of Eq. (13): jointly accept kappa
/// fresh orthonormal complement directions; on acceptance W, Z, X are
/// extended with z_{K+j,n} = 1. Returns the accepted count.
inline int bnp_new_features(SubspaceState& state, const Dataset& dataset, int n, Rng& rng) {
    const int D = dataset.dim();
    const int K = static_cast<int>(state.Z.rows());
    if (K >= D) return 0;  // orthogonal complement exhausted
    std::poisson_distribution<int> pois(state.alpha / dataset.count());
    const int kappa = pois(rng);
    if (kappa == 0) return 0;
    if (K + kappa > state.K_max) {
        ++state.truncation_rejects;
        return 0;
    }

    const Matrix U = detail::complement_directions(state.W, kappa, rng);
    const double s2 = state.sigma2;
    double log_b = 0.5 * kappa * std::log(s2 / (s2 + 1.0));
    const Vector proj = U.transpose() * dataset.Y.col(n);
    log_b += proj.squaredNorm() / (2.0 * s2 * (s2 + 1.0));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (!(unif(rng) < 1.0 / (1.0 + std::exp(-log_b)))) return 0;

    const int N = dataset.count();
    state.W.conservativeResize(D, K + kappa);
    state.X.conservativeResize(K + kappa, N);
    state.Z.conservativeResize(K + kappa, N);
    state.X.bottomRows(kappa).setZero();
    state.Z.bottomRows(kappa).setZero();
    for (int j = 0; j < kappa; ++j) {
        const int k = K + j;
        state.W.col(k) = U.col(j);
        state.Z(k, n) = 1.0;
        const GaussMoments post = appca_x_moments(proj[j], s2);
        state.X(k, n) = detail::draw_normal(post.mean, post.var, rng);
    }
    state.K = K + kappa;
    state.kappa_counter += kappa;
    return kappa;
}

struct WUpdateResult {
    Matrix W;
    bool converged = true;
};

/// MAP update of W: maximize tr(AW) with A = (1/2 sigma^2)(X .* Z) Y^T over
/// the Stiefel manifold, warm-started from the current W.
inline WUpdateResult appca_w_update(const SubspaceState& state, const Dataset& dataset) {
    stiefel::Problem problem;
    problem.A = (state.X.cwiseProduct(state.Z) * dataset.Y.transpose()) / (2.0 * state.sigma2);
    problem.max_iters = 200;
    const stiefel::Result res = stiefel::maximize_trace(problem, state.W);
    return {res.W, res.converged};
}

/// Appendix-B draw: sigma^2 ~ invGamma(gamma + ND/2, vartheta + rss/2), floored.
inline double update_sigma2(const LatentState& state, const Dataset& dataset,
                            const Hyperpriors& hp, Rng& rng) {
    const Matrix resid = dataset.Y - reconstruct(state, dataset);
    const double shape = hp.gamma + 0.5 * static_cast<double>(resid.size());
    const double scale = hp.vartheta + 0.5 * resid.squaredNorm();
    return std::max(detail::draw_inverse_gamma(shape, scale, rng), kSigma2Floor);
}

/// Appendix-B draw: alpha ~ Gamma(lambda + K, rate H_N + mu).
inline double update_alpha(const LatentState& state, const Hyperpriors& hp, Rng& rng) {
    const int N = static_cast<int>(state.Z.cols());
    return detail::draw_gamma_rate(hp.lambda + state.K, harmonic_number(N) + hp.mu_alpha, rng);
}

struct AppcaConfig {
    int K = 0;
    int L = 0;
    int iters = 200;
    Hyperpriors hyperpriors;
    std::uint64_t seed = 0;
    double temper = 1.0;
    std::optional<double> fixed_sigma2;  // hold sigma^2 fixed (SVA-style runs)
};

struct AppcaFit {
    SubspaceState state;
    FitReport report;
};

namespace detail {

/// Orthonormal D x K basis: leading principal directions, completed with
/// complement draws past the data rank.
inline Matrix orthonormal_pca_basis(const Matrix& Yc, int K, Rng& rng) {
    const int D = static_cast<int>(Yc.rows());
    const TopEig eig = top_k_eig(Yc, K);
    int rank = 0;
    while (rank < K && eig.values[rank] > 1e-12) ++rank;
    Matrix W = eig.vectors.leftCols(rank);
    if (rank < K) {
        Matrix rest = complement_directions(W, K - rank, rng);
        Matrix full(D, K);
        full << W, rest;
        return full;
    }
    return W;
}

inline void subspace_report_step(FitReport& report, double ll, int it, double& best_ll) {
    report.loglik_trace.push_back(ll);
    if (ll > best_ll) {
        best_ll = ll;
        report.best_sweep = it;
    }
}

}  // namespace detail

/// Alg.-3 Gibbs sampler for parametric aPPCA. Returns the final-sweep state;
/// the sweep maximizing the joint log-likelihood is recorded in the report.
inline AppcaFit fit_appca(const Dataset& dataset, const AppcaConfig& cfg) {
    if (cfg.iters < 1) throw std::invalid_argument("fit_appca: iters must be >= 1");
    const Dataset d = center(dataset);
    if (cfg.K > d.dim()) throw std::invalid_argument("fit_appca: K must satisfy K <= D");
    if (cfg.L < 1 || cfg.L > cfg.K) throw std::invalid_argument("fit_appca: need 1 <= L <= K");

    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = make_rng(cfg.seed);
    AppcaFit fit;
    SubspaceState& s = fit.state;
    s.K = cfg.K;
    s.K_max = cfg.K;
    s.L = cfg.L;
    s.sigma2_x = 1.0;
    s.W = detail::orthonormal_pca_basis(d.Y, cfg.K, rng);

    if (cfg.fixed_sigma2) {
        s.sigma2 = std::max(*cfg.fixed_sigma2, kSigma2Floor);
    } else {
        const double total = detail::cov_trace(d.Y);
        const double top = detail::top_k_eig(d.Y, cfg.K).values.sum();
        s.sigma2 = cfg.K < d.dim() ? std::max((total - top) / (d.dim() - cfg.K), kSigma2Floor) : 1.0;
    }

    const int N = d.count();
    s.Z = Matrix::Zero(cfg.K, N);
    s.X = Matrix::Zero(cfg.K, N);
    for (int n = 0; n < N; ++n) {
        s.Z.col(n) = hypergeom_sample(cfg.K, cfg.L, rng);
        for (int k = 0; k < cfg.K; ++k)
            if (s.Z(k, n) != 0.0) s.X(k, n) = appca_x_update(s, d, n, k, rng);
    }

    const PriorSpec prior = PriorSpec::hypergeometric(cfg.K, cfg.L);
    double best_ll = -std::numeric_limits<double>::infinity();
    bool w_warned = false;
    for (int it = 0; it < cfg.iters; ++it) {
        fit.report.iterations = it + 1;
        if (cfg.L < cfg.K) {
            for (int n = 0; n < N; ++n)
                s.Z.col(n) = appca_z_update(s, d, n, rng, cfg.temper);
        }
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < cfg.K; ++k)
                if (s.Z(k, n) != 0.0) s.X(k, n) = appca_x_update(s, d, n, k, rng);
        const WUpdateResult wres = appca_w_update(s, d);
        s.W = wres.W;
        if (!wres.converged && !w_warned) {
            fit.report.warnings.push_back("Stiefel optimizer hit its iteration cap");
            w_warned = true;
        }
        if (!cfg.fixed_sigma2) s.sigma2 = update_sigma2(s, d, cfg.hyperpriors, rng);
        detail::subspace_report_step(
            fit.report, joint_log_likelihood(s, d, prior, WPrior::uniform_stiefel()).total, it, best_ll);
    }
    detail::finalize_report(fit.report, s, d, t0);
    return fit;
}

struct BnpConfig {
    int K_max = 0;
    double alpha0 = 1.0;
    int iters = 300;
    Hyperpriors hyperpriors;
    std::uint64_t seed = 0;
    Eq12Exponent eq12 = Eq12Exponent::Squared;
};

/// Alg.-2 Gibbs sampler for Bayesian nonparametric PPCA with the truncated
/// IBP prior. Unrepresented features are pruned after each sweep and rows
/// relabeled by descending popularity.
inline AppcaFit fit_bnp_ppca(const Dataset& dataset, const BnpConfig& cfg) {
    if (cfg.K_max < 1) throw std::invalid_argument("fit_bnp_ppca: K_max must be >= 1");
    if (cfg.iters < 1) throw std::invalid_argument("fit_bnp_ppca: iters must be >= 1");
    const Dataset d = center(dataset);
    if (cfg.K_max > d.dim()) throw std::invalid_argument("fit_bnp_ppca: K_max must satisfy K_max <= D");

    const auto t0 = std::chrono::steady_clock::now();
    Rng rng = make_rng(cfg.seed);
    const int N = d.count();
    AppcaFit fit;
    SubspaceState& s = fit.state;
    s.K_max = cfg.K_max;
    s.alpha = cfg.alpha0;
    s.sigma2_x = 1.0;
    s.K = cfg.K_max;
    s.W = detail::orthonormal_pca_basis(d.Y, cfg.K_max, rng);
    {
        const double total = detail::cov_trace(d.Y);
        const double top = detail::top_k_eig(d.Y, cfg.K_max).values.sum();
        s.sigma2 = cfg.K_max < d.dim()
                       ? std::max((total - top) / (d.dim() - cfg.K_max), kSigma2Floor)
                       : 1.0;
    }
    s.Z = Matrix::Zero(cfg.K_max, N);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int k = 0; k < cfg.K_max; ++k)
        for (int n = 0; n < N; ++n) s.Z(k, n) = unif(rng) < 0.5 ? 1.0 : 0.0;
    s.X = Matrix::Zero(cfg.K_max, N);
    for (int n = 0; n < N; ++n)
        for (int k = 0; k < cfg.K_max; ++k)
            if (s.Z(k, n) != 0.0) s.X(k, n) = appca_x_update(s, d, n, k, rng);

    double best_ll = -std::numeric_limits<double>::infinity();
    bool w_warned = false;
    for (int it = 0; it < cfg.iters; ++it) {
        fit.report.iterations = it + 1;
        for (int n = 0; n < N; ++n) {
            for (int k = 0; k < static_cast<int>(s.Z.rows()); ++k) {
                const double bit = bnp_existing_z(s, d, n, k, rng, cfg.eq12);
                if (bit != s.Z(k, n)) {
                    s.Z(k, n) = bit;
                    s.X(k, n) = bit != 0.0 ? appca_x_update(s, d, n, k, rng) : 0.0;
                }
            }
            bnp_new_features(s, d, n, rng);
        }

        // prune dead features, relabel by descending popularity
        std::vector<int> order;
        for (int k = 0; k < static_cast<int>(s.Z.rows()); ++k)
            if (s.Z.row(k).sum() > 0.0) order.push_back(k);
        std::stable_sort(order.begin(), order.end(),
                         [&s](int a, int b) { return s.Z.row(a).sum() > s.Z.row(b).sum(); });
        detail::drop_rows(s, order);

        for (int n = 0; n < N; ++n)
            for (int k = 0; k < s.K; ++k)
                if (s.Z(k, n) != 0.0) s.X(k, n) = appca_x_update(s, d, n, k, rng);
        if (s.K > 0) {
            const WUpdateResult wres = appca_w_update(s, d);
            s.W = wres.W;
            if (!wres.converged && !w_warned) {
                fit.report.warnings.push_back("Stiefel optimizer hit its iteration cap");
                w_warned = true;
            }
        }
        s.sigma2 = update_sigma2(s, d, cfg.hyperpriors, rng);
        s.alpha = update_alpha(s, cfg.hyperpriors, rng);

        fit.report.k_trace.push_back(s.K);
        detail::subspace_report_step(
            fit.report,
            joint_log_likelihood(s, d, PriorSpec::ibp(s.alpha, cfg.K_max), WPrior::uniform_stiefel()).total,
            it, best_ll);
    }
    fit.report.truncation_rejects = s.truncation_rejects;
    detail::finalize_report(fit.report, s, d, t0);
    return fit;
}

}  // namespace lfl
