#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "lfl/core.hpp"
#include "lfl/sampling.hpp"
#include "lfl/spectral.hpp"

namespace lfl {

/// Per-observation conditional moments from the E step: columns of ex are
/// E[x_n], psi[n] = Cov(x_n | y_n) + E[x_n]E[x_n]^T.
struct EmStats {
    Matrix ex;                // K x N
    std::vector<Matrix> psi;  // N matrices, K x K
};

/// E step of Alg.-1 style EM: E[x_n] = (sigma_x^-2 I + sigma^-2 A_n W^T W A_n)^-1
/// (sigma^-2 A_n W^T y_n) with A_n = diag(z_n), plus the second moments.
inline EmStats afa_e_step(const LatentState& state, const Dataset& dataset) {
    detail::check_state_dims(state, dataset);
    const int K = static_cast<int>(state.W.cols());
    const int N = dataset.count();
    const Matrix WtW = state.W.transpose() * state.W;
    const Matrix WtY = state.W.transpose() * dataset.Y;
    const double inv_s2 = 1.0 / state.sigma2;
    const double inv_sx2 = 1.0 / state.sigma2_x;

    EmStats stats;
    stats.ex = Matrix::Zero(K, N);
    stats.psi.resize(N);
    for (int n = 0; n < N; ++n) {
        const Vector z = state.Z.col(n);
        Matrix M = inv_s2 * WtW.cwiseProduct(z * z.transpose());
        M.diagonal().array() += inv_sx2;
        const Eigen::LLT<Matrix> llt(M);
        const Vector rhs = inv_s2 * z.cwiseProduct(WtY.col(n));
        const Vector mean = llt.solve(rhs);
        stats.ex.col(n) = mean;
        stats.psi[n] = llt.solve(Matrix::Identity(K, K)) + mean * mean.transpose();
    }
    return stats;
}

struct MStepResult {
    Matrix W;
    double sigma2 = 0.0;
    double sigma2_x = 0.0;
    bool ridged = false;
};

/// Closed-form M step of Alg. 1. The scatter sum(A_n Psi_n A_n) is ridged
/// by 1e-8 I when its condition number exceeds 1e12 (e.g. all-zero Z rows).
inline MStepResult afa_m_step(const Dataset& dataset, const Matrix& Z, const EmStats& stats) {
    const int D = dataset.dim();
    const int N = dataset.count();
    const int K = static_cast<int>(Z.rows());

    Matrix B = Matrix::Zero(D, K);
    Matrix C = Matrix::Zero(K, K);
    for (int n = 0; n < N; ++n) {
        const Vector z = Z.col(n);
        const Vector t = z.cwiseProduct(stats.ex.col(n));
        B.noalias() += dataset.Y.col(n) * t.transpose();
        C.noalias() += stats.psi[n].cwiseProduct(z * z.transpose());
    }

    MStepResult out;
    {
        const Eigen::SelfAdjointEigenSolver<Matrix> es(C);
        const double lo = es.eigenvalues().minCoeff();
        const double hi = es.eigenvalues().maxCoeff();
        if (!(lo > 0.0) || hi / lo > 1e12) {
            C.diagonal().array() += 1e-8;
            out.ridged = true;
        }
    }
    out.W = C.ldlt().solve(B.transpose()).transpose();

    const Matrix WtW = out.W.transpose() * out.W;
    const Matrix WtY = out.W.transpose() * dataset.Y;
    double rss = 0.0;
    double trace_psi = 0.0;
    for (int n = 0; n < N; ++n) {
        const Vector z = Z.col(n);
        const Vector t = z.cwiseProduct(stats.ex.col(n));
        const Matrix mask = WtW.cwiseProduct(z * z.transpose());
        rss += dataset.Y.col(n).squaredNorm() - 2.0 * t.dot(WtY.col(n)) +
               mask.cwiseProduct(stats.psi[n]).sum();
        trace_psi += stats.psi[n].trace();
    }
    out.sigma2 = std::max(rss / (N * D), kSigma2Floor);
    out.sigma2_x = trace_psi / (static_cast<double>(N) * K);
    return out;
}

/// Slot-wise resampling of column z_n under the hypergeometric prior with
/// the categorical scores exp(temper * (y_n^T w_k)^2); column sum preserved.
inline Vector afa_z_update(const LatentState& state, const Dataset& dataset, int n, ZMode mode,
                           Rng& rng, double temper = 1.0) {
    detail::check_state_dims(state, dataset);
    const Vector proj = state.W.transpose() * dataset.Y.col(n);
    const Vector scores = temper * proj.array().square();
    return detail::resample_hypergeom_column(scores, state.Z.col(n), mode, rng);
}

namespace detail {

/// Exact marginal log-likelihood with X integrated out:
/// sum_n log N(y_n; 0, sigma_x^2 W_I W_I^T + sigma^2 I) over active sets I.
inline double afa_marginal_loglik(const LatentState& state, const Dataset& dataset) {
    const int D = dataset.dim();
    const int N = dataset.count();
    const Matrix WtW = state.W.transpose() * state.W;
    const Matrix WtY = state.W.transpose() * dataset.Y;
    const double s2 = state.sigma2;
    const double sx2 = state.sigma2_x;

    double ll = 0.0;
    for (int n = 0; n < N; ++n) {
        std::vector<int> act;
        for (int k = 0; k < state.Z.rows(); ++k)
            if (state.Z(k, n) != 0.0) act.push_back(k);
        const double yty = dataset.Y.col(n).squaredNorm();
        const int La = static_cast<int>(act.size());
        if (La == 0) {
            ll += -0.5 * (D * std::log(2.0 * M_PI * s2) + yty / s2);
            continue;
        }
        Matrix M(La, La);
        Vector u(La);
        for (int i = 0; i < La; ++i) {
            u[i] = WtY(act[i], n);
            for (int j = 0; j < La; ++j) M(i, j) = WtW(act[i], act[j]) / s2;
        }
        M.diagonal().array() += 1.0 / sx2;
        const Eigen::LLT<Matrix> llt(M);
        double logdet_m = 0.0;
        for (int i = 0; i < La; ++i) logdet_m += 2.0 * std::log(llt.matrixL()(i, i));
        const double logdet_c = D * std::log(s2) + La * std::log(sx2) + logdet_m;
        const double quad = yty / s2 - llt.solve(u).dot(u) / (s2 * s2);
        ll += -0.5 * (D * std::log(2.0 * M_PI) + logdet_c + quad);
    }
    return ll;
}

/// Draw every active loading from its Eq.-(5) posterior, maintaining the
/// residual matrix R = Y - W (X .* Z).
inline void gibbs_sweep_x(LatentState& state, Matrix& R, Rng& rng) {
    const int K = static_cast<int>(state.W.cols());
    const Vector wtw = state.W.colwise().squaredNorm();
    for (int n = 0; n < state.X.cols(); ++n) {
        for (int k = 0; k < K; ++k) {
            if (state.Z(k, n) == 0.0) continue;
            const Vector eps = R.col(n) + state.W.col(k) * state.X(k, n);
            const GaussMoments post =
                x_posterior_moments(wtw[k], state.W.col(k).dot(eps), state.sigma2, state.sigma2_x);
            const double x_new = draw_normal(post.mean, post.var, rng);
            R.col(n) = eps - state.W.col(k) * x_new;
            state.X(k, n) = x_new;
        }
    }
}

/// Draw every factor column from its Eq.-(6) Gaussian posterior.
inline void gibbs_sweep_w(LatentState& state, Matrix& R, double sigma_w2, Rng& rng) {
    const int D = static_cast<int>(state.W.rows());
    for (int k = 0; k < state.W.cols(); ++k) {
        const Vector t = state.X.row(k).cwiseProduct(state.Z.row(k)).transpose();
        const Matrix Ek = R + state.W.col(k) * t.transpose();
        const double prec = t.squaredNorm() / state.sigma2 + 1.0 / sigma_w2;
        const Vector mean = (Ek * t) / (state.sigma2 * prec);
        Vector w_new(D);
        for (int d = 0; d < D; ++d) w_new[d] = draw_normal(mean[d], 1.0 / prec, rng);
        R = Ek - w_new * t.transpose();
        state.W.col(k) = w_new;
    }
}

inline void gibbs_draw_sigma2(LatentState& state, const Matrix& R, const Hyperpriors& hp, Rng& rng) {
    const double shape = hp.gamma + 0.5 * static_cast<double>(R.size());
    const double scale = hp.vartheta + 0.5 * R.squaredNorm();
    state.sigma2 = std::max(draw_inverse_gamma(shape, scale, rng), kSigma2Floor);
}

}  // namespace detail

/// One full aFA Gibbs sweep: Z (Eq. 14, sample mode), active X (Eq. 5),
/// W columns (Eq. 6), then sigma^2 from its inverse-Gamma posterior.
inline LatentState afa_gibbs_step(LatentState state, const Dataset& dataset, Rng& rng,
                                  const Hyperpriors& hyperpriors = {}, double sigma_w2 = 1.0,
                                  double temper = 1.0) {
    detail::check_state_dims(state, dataset);
    const int L = state.L.value_or(static_cast<int>(state.Z.col(0).sum()));
    if (L < state.Z.rows()) {
        for (int n = 0; n < dataset.count(); ++n)
            state.Z.col(n) = afa_z_update(state, dataset, n, ZMode::Sample, rng, temper);
    }
    Matrix R = dataset.Y - state.W * state.X.cwiseProduct(state.Z);
    detail::gibbs_sweep_x(state, R, rng);
    detail::gibbs_sweep_w(state, R, sigma_w2, rng);
    detail::gibbs_draw_sigma2(state, R, hyperpriors, rng);
    return state;
}

enum class AfaMode { Em, Gibbs };
enum class AfaPrior { Hypergeometric, AllOnes };

struct AfaConfig {
    int K = 0;
    int L = 0;  // ignored for AllOnes
    AfaPrior prior = AfaPrior::Hypergeometric;
    Hyperpriors hyperpriors;
    int iters = 100;
    AfaMode mode = AfaMode::Em;
    std::uint64_t seed = 0;
    ZMode em_z_mode = ZMode::Icm;
    double temper = 1.0;    // optional Eq.-(14) exponent scale; 1 = as printed
    double sigma_w2 = 1.0;
    double tol = 1e-6;      // EM stop: |delta L| < tol * |L|
};

struct AfaFit {
    LatentState state;
    FitReport report;
};

/// Fit aFA (or vanilla FA via the AllOnes prior) by EM/ICM or Gibbs.
/// EM traces the exact marginal log-likelihood plus log P(Z); Gibbs traces
/// the joint log-likelihood.
inline AfaFit fit_afa(const Dataset& dataset, const AfaConfig& cfg) {
    if (cfg.iters < 1) throw std::invalid_argument("fit_afa: iters must be >= 1");
    if (cfg.K < 1) throw std::invalid_argument("fit_afa: K must be >= 1");
    if (cfg.prior == AfaPrior::Hypergeometric && (cfg.L < 1 || cfg.L > cfg.K))
        throw std::invalid_argument("fit_afa: hypergeometric prior needs 1 <= L <= K");

    const auto t0 = std::chrono::steady_clock::now();
    const Dataset d = center(dataset);
    const int L = cfg.prior == AfaPrior::AllOnes ? cfg.K : cfg.L;
    const PriorSpec prior = cfg.prior == AfaPrior::AllOnes
                                ? PriorSpec::all_ones(cfg.K)
                                : PriorSpec::hypergeometric(cfg.K, cfg.L);

    Rng rng = make_rng(cfg.seed);
    AfaFit fit;
    if (cfg.K > d.dim()) fit.report.warnings.push_back("K exceeds data dimension D");

    LatentState& s = fit.state;
    const detail::PcaInit init = detail::pca_init(d.Y, cfg.K, std::sqrt(cfg.sigma_w2), rng);
    s.W = init.W;
    s.X = init.X;
    s.K = cfg.K;
    s.L = L;
    s.sigma2_x = 1.0;
    s.Z = Matrix::Zero(cfg.K, d.count());
    for (int n = 0; n < d.count(); ++n)
        s.Z.col(n) = cfg.prior == AfaPrior::AllOnes ? Vector::Ones(cfg.K)
                                                    : hypergeom_sample(cfg.K, L, rng);
    s.sigma2 = std::max((d.Y - s.W * s.X.cwiseProduct(s.Z)).squaredNorm() / d.Y.size(), kSigma2Floor);

    const double z_log_prior = cfg.prior == AfaPrior::AllOnes
                                   ? 0.0
                                   : -d.count() * log_binomial(cfg.K, L);

    bool ridge_warned = false;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg.iters; ++it) {
        fit.report.iterations = it + 1;
        if (cfg.mode == AfaMode::Em) {
            if (cfg.prior == AfaPrior::Hypergeometric && L < cfg.K) {
                for (int n = 0; n < d.count(); ++n)
                    s.Z.col(n) = afa_z_update(s, d, n, cfg.em_z_mode, rng, cfg.temper);
            }
            const EmStats stats = afa_e_step(s, d);
            s.X = stats.ex;
            const MStepResult m = afa_m_step(d, s.Z, stats);
            s.W = m.W;
            s.sigma2 = m.sigma2;
            s.sigma2_x = m.sigma2_x;
            if (m.ridged && !ridge_warned) {
                fit.report.warnings.push_back("ridge fallback in M-step scatter inversion");
                ridge_warned = true;
            }
            const double ll = detail::afa_marginal_loglik(s, d) + z_log_prior;
            fit.report.loglik_trace.push_back(ll);
            if (ll > best_ll) {
                best_ll = ll;
                fit.report.best_sweep = it;
            }
            const std::size_t m_tr = fit.report.loglik_trace.size();
            if (m_tr >= 2) {
                const double prev = fit.report.loglik_trace[m_tr - 2];
                if (std::abs(ll - prev) < cfg.tol * std::abs(ll)) break;
            }
        } else {
            s = afa_gibbs_step(s, d, rng, cfg.hyperpriors, cfg.sigma_w2, cfg.temper);
            const double ll =
                joint_log_likelihood(s, d, prior, WPrior::gaussian(cfg.sigma_w2)).total;
            fit.report.loglik_trace.push_back(ll);
            if (ll > best_ll) {
                best_ll = ll;
                fit.report.best_sweep = it;
            }
        }
    }
    detail::finalize_report(fit.report, s, d, t0);
    return fit;
}

/// Truncated-IBP infinite sparse FA: collapsed Bernoulli updates for
/// represented features plus Metropolis-Hastings singleton replacement moves.
struct IsfaConfig {
    int K_max = 0;
    double alpha0 = 2.0;
    int iters = 150;
    std::uint64_t seed = 0;
    double sigma_w2 = 1.0;
    Hyperpriors hyperpriors;
};

/// Finite Beta-Bernoulli sparse FA with fixed K and fixed alpha.
struct FsfaConfig {
    int K = 0;
    double alpha = 2.0;
    int iters = 150;
    std::uint64_t seed = 0;
    double sigma_w2 = 1.0;
    Hyperpriors hyperpriors;
};

namespace detail {

/// log N(b; 0, sigma2 I + sigma2_x U U^T) for a thin U, via Woodbury.
inline double low_rank_gauss_logpdf(const Vector& b, const Matrix& U, double sigma2, double sigma2_x) {
    const int D = static_cast<int>(b.size());
    const int t = static_cast<int>(U.cols());
    const double btb = b.squaredNorm();
    if (t == 0) return -0.5 * (D * std::log(2.0 * M_PI * sigma2) + btb / sigma2);
    Matrix M = (sigma2_x / sigma2) * (U.transpose() * U);
    M.diagonal().array() += 1.0;
    const Eigen::LLT<Matrix> llt(M);
    double logdet_m = 0.0;
    for (int i = 0; i < t; ++i) logdet_m += 2.0 * std::log(llt.matrixL()(i, i));
    const Vector u = U.transpose() * b;
    const double quad = (btb - (sigma2_x / sigma2) * llt.solve(u).dot(u)) / sigma2;
    return -0.5 * (D * std::log(2.0 * M_PI) + D * std::log(sigma2) + logdet_m + quad);
}

}  // namespace detail

inline AfaFit fit_isfa(const Dataset& dataset, const IsfaConfig& cfg) {
    if (cfg.iters < 1) throw std::invalid_argument("fit_isfa: iters must be >= 1");
    if (cfg.K_max < 1) throw std::invalid_argument("fit_isfa: K_max must be >= 1");

    const auto t0 = std::chrono::steady_clock::now();
    const Dataset d = center(dataset);
    const int D = d.dim();
    const int N = d.count();
    Rng rng = make_rng(cfg.seed);

    AfaFit fit;
    LatentState& s = fit.state;
    s.alpha = cfg.alpha0;
    s.sigma2_x = 1.0;
    IbpDraw draw = ibp_sample(N, cfg.alpha0, cfg.K_max, rng);
    s.Z = draw.Z;
    s.K = static_cast<int>(s.Z.rows());
    {
        const detail::PcaInit init = detail::pca_init(d.Y, std::max(s.K, 1), std::sqrt(cfg.sigma_w2), rng);
        s.W = init.W.leftCols(s.K);
        s.X = init.X.topRows(s.K);
    }
    s.sigma2 = std::max((d.Y - s.W * s.X.cwiseProduct(s.Z)).squaredNorm() / d.Y.size(), kSigma2Floor);

    Matrix R = d.Y - s.W * s.X.cwiseProduct(s.Z);
    double best_ll = -std::numeric_limits<double>::infinity();
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (int it = 0; it < cfg.iters; ++it) {
        fit.report.iterations = it + 1;
        Eigen::VectorXd m = s.Z.rowwise().sum();

        for (int n = 0; n < N; ++n) {
            // existing (non-singleton) features: collapsed Bernoulli
            for (int k = 0; k < s.K; ++k) {
                const double m_minus = m[k] - s.Z(k, n);
                if (m_minus <= 0.0) continue;
                const Vector eps = R.col(n) + s.W.col(k) * (s.X(k, n) * s.Z(k, n));
                const double wtw = s.W.col(k).squaredNorm();
                const double log_odds =
                    std::log(m_minus / (N - m_minus)) +
                    detail::collapsed_log_lr(wtw, s.W.col(k).dot(eps), s.sigma2, s.sigma2_x);
                const double bit = detail::draw_bernoulli_logodds(log_odds, rng);
                m[k] += bit - s.Z(k, n);
                s.Z(k, n) = bit;
                if (bit == 1.0) {
                    const GaussMoments post = detail::x_posterior_moments(
                        wtw, s.W.col(k).dot(eps), s.sigma2, s.sigma2_x);
                    s.X(k, n) = detail::draw_normal(post.mean, post.var, rng);
                    R.col(n) = eps - s.W.col(k) * s.X(k, n);
                } else {
                    s.X(k, n) = 0.0;
                    R.col(n) = eps;
                }
            }

            // Metropolis-Hastings replacement of n's singleton features
            std::vector<int> singles;
            for (int k = 0; k < s.K; ++k)
                if (s.Z(k, n) == 1.0 && m[k] - 1.0 <= 0.0) singles.push_back(k);
            std::poisson_distribution<int> pois(s.alpha / N);
            const int kappa = pois(rng);
            if (s.K - static_cast<int>(singles.size()) + kappa > cfg.K_max) {
                ++fit.report.truncation_rejects;
                continue;
            }
            Vector base = R.col(n);
            Matrix U_cur(D, singles.size());
            for (std::size_t i = 0; i < singles.size(); ++i) {
                base += s.W.col(singles[i]) * s.X(singles[i], n);
                U_cur.col(static_cast<int>(i)) = s.W.col(singles[i]);
            }
            Matrix U_new(D, kappa);
            for (int j = 0; j < kappa; ++j)
                for (int dd = 0; dd < D; ++dd)
                    U_new(dd, j) = detail::draw_normal(0.0, cfg.sigma_w2, rng);
            const double log_acc =
                detail::low_rank_gauss_logpdf(base, U_new, s.sigma2, s.sigma2_x) -
                detail::low_rank_gauss_logpdf(base, U_cur, s.sigma2, s.sigma2_x);
            if (std::log(unif(rng)) < log_acc) {
                for (int k : singles) {
                    m[k] -= 1.0;
                    s.Z(k, n) = 0.0;
                    s.X(k, n) = 0.0;
                }
                R.col(n) = base;
                if (kappa > 0) {
                    const int K_old = s.K;
                    s.K += kappa;
                    s.W.conservativeResize(D, s.K);
                    s.X.conservativeResize(s.K, N);
                    s.Z.conservativeResize(s.K, N);
                    s.X.bottomRows(kappa).setZero();
                    s.Z.bottomRows(kappa).setZero();
                    m.conservativeResize(s.K);
                    for (int j = 0; j < kappa; ++j) {
                        const int k = K_old + j;
                        s.W.col(k) = U_new.col(j);
                        s.Z(k, n) = 1.0;
                        m[k] = 1.0;
                        const GaussMoments post = detail::x_posterior_moments(
                            s.W.col(k).squaredNorm(), s.W.col(k).dot(R.col(n)), s.sigma2, s.sigma2_x);
                        s.X(k, n) = detail::draw_normal(post.mean, post.var, rng);
                        R.col(n) -= s.W.col(k) * s.X(k, n);
                    }
                }
            }
        }

        // drop unrepresented rows
        std::vector<int> keep;
        for (int k = 0; k < s.K; ++k)
            if (s.Z.row(k).sum() > 0.0) keep.push_back(k);
        if (static_cast<int>(keep.size()) != s.K) detail::drop_rows(s, keep);

        detail::gibbs_sweep_x(s, R, rng);
        detail::gibbs_sweep_w(s, R, cfg.sigma_w2, rng);
        detail::gibbs_draw_sigma2(s, R, cfg.hyperpriors, rng);
        s.alpha = detail::draw_gamma_rate(cfg.hyperpriors.lambda + s.K,
                                          harmonic_number(N) + cfg.hyperpriors.mu_alpha, rng);
        R = d.Y - s.W * s.X.cwiseProduct(s.Z);

        const double ll = joint_log_likelihood(s, d, PriorSpec::ibp(s.alpha, cfg.K_max),
                                               WPrior::gaussian(cfg.sigma_w2)).total;
        fit.report.loglik_trace.push_back(ll);
        if (ll > best_ll) {
            best_ll = ll;
            fit.report.best_sweep = it;
        }
    }
    detail::finalize_report(fit.report, s, d, t0);
    return fit;
}

inline AfaFit fit_fsfa(const Dataset& dataset, const FsfaConfig& cfg) {
    if (cfg.iters < 1) throw std::invalid_argument("fit_fsfa: iters must be >= 1");
    if (cfg.K < 1) throw std::invalid_argument("fit_fsfa: K must be >= 1");

    const auto t0 = std::chrono::steady_clock::now();
    const Dataset d = center(dataset);
    const int N = d.count();
    Rng rng = make_rng(cfg.seed);

    AfaFit fit;
    LatentState& s = fit.state;
    s.K = cfg.K;
    s.alpha = cfg.alpha;
    s.sigma2_x = 1.0;
    {
        const detail::PcaInit init = detail::pca_init(d.Y, cfg.K, std::sqrt(cfg.sigma_w2), rng);
        s.W = init.W;
        s.X = init.X;
    }
    s.Z = Matrix::Zero(cfg.K, N);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int k = 0; k < cfg.K; ++k)
        for (int n = 0; n < N; ++n) s.Z(k, n) = unif(rng) < 0.5 ? 1.0 : 0.0;
    s.sigma2 = std::max((d.Y - s.W * s.X.cwiseProduct(s.Z)).squaredNorm() / d.Y.size(), kSigma2Floor);

    Matrix R = d.Y - s.W * s.X.cwiseProduct(s.Z);
    double best_ll = -std::numeric_limits<double>::infinity();
    const PriorSpec prior = PriorSpec::finite_beta_bernoulli(cfg.alpha, cfg.K);

    for (int it = 0; it < cfg.iters; ++it) {
        fit.report.iterations = it + 1;
        Eigen::VectorXd m = s.Z.rowwise().sum();
        for (int n = 0; n < N; ++n) {
            for (int k = 0; k < cfg.K; ++k) {
                const int m_minus = static_cast<int>(m[k] - s.Z(k, n));
                const double p1 = bb_predictive(m_minus, N, cfg.alpha, cfg.K);
                const Vector eps = R.col(n) + s.W.col(k) * (s.X(k, n) * s.Z(k, n));
                const double wtw = s.W.col(k).squaredNorm();
                const double log_odds =
                    std::log(p1 / (1.0 - p1)) +
                    detail::collapsed_log_lr(wtw, s.W.col(k).dot(eps), s.sigma2, s.sigma2_x);
                const double bit = detail::draw_bernoulli_logodds(log_odds, rng);
                m[k] += bit - s.Z(k, n);
                s.Z(k, n) = bit;
                if (bit == 1.0) {
                    const GaussMoments post = detail::x_posterior_moments(
                        wtw, s.W.col(k).dot(eps), s.sigma2, s.sigma2_x);
                    s.X(k, n) = detail::draw_normal(post.mean, post.var, rng);
                    R.col(n) = eps - s.W.col(k) * s.X(k, n);
                } else {
                    s.X(k, n) = 0.0;
                    R.col(n) = eps;
                }
            }
        }
        detail::gibbs_sweep_x(s, R, rng);
        detail::gibbs_sweep_w(s, R, cfg.sigma_w2, rng);
        detail::gibbs_draw_sigma2(s, R, cfg.hyperpriors, rng);
        R = d.Y - s.W * s.X.cwiseProduct(s.Z);

        const double ll = joint_log_likelihood(s, d, prior, WPrior::gaussian(cfg.sigma_w2)).total;
        fit.report.loglik_trace.push_back(ll);
        if (ll > best_ll) {
            best_ll = ll;
            fit.report.best_sweep = it;
        }
    }
    detail::finalize_report(fit.report, s, d, t0);
    return fit;
}

}  // namespace lfl
