#pragma once

#include <chrono>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "lfl/core.hpp"
#include "lfl/rng.hpp"

namespace lfl {

/// How indicator resampling picks the winning slot.
enum class ZMode { Icm, Sample };

struct GaussMoments {
    double mean = 0.0;
    double var = 0.0;
};

namespace detail {

/// Posterior moments of one loading x_{k,n} given its residual: the
/// sigma_x-general form that reduces to the printed update at sigma_x^2 = 1.
inline GaussMoments x_posterior_moments(double wtw, double w_dot_eps, double sigma2, double sigma2_x) {
    const double denom = sigma2 + sigma2_x * wtw;
    return {sigma2_x * w_dot_eps / denom, sigma2 * sigma2_x / denom};
}

/// Log marginal-likelihood ratio P(y | z=1) / P(y | z=0) with the loading
/// integrated out against its Gaussian prior.
inline double collapsed_log_lr(double wtw, double w_dot_eps, double sigma2, double sigma2_x) {
    const double denom = sigma2 + sigma2_x * wtw;
    return 0.5 * std::log(sigma2 / denom) + sigma2_x * w_dot_eps * w_dot_eps / (2.0 * sigma2 * denom);
}

inline double draw_normal(double mean, double var, Rng& rng) {
    std::normal_distribution<double> gauss(mean, std::sqrt(var));
    return gauss(rng);
}

/// Draw from inverse-Gamma(shape, scale): scale / Gamma(shape, rate 1).
inline double draw_inverse_gamma(double shape, double scale, Rng& rng) {
    std::gamma_distribution<double> gamma(shape, 1.0);
    return scale / gamma(rng);
}

inline double draw_gamma_rate(double shape, double rate, Rng& rng) {
    std::gamma_distribution<double> gamma(shape, 1.0 / rate);
    return gamma(rng);
}

inline double draw_bernoulli_logodds(double log_odds, Rng& rng) {
    const double p = 1.0 / (1.0 + std::exp(-log_odds));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return unif(rng) < p ? 1.0 : 0.0;
}

/// Slot-wise hypergeometric column resampling: for each originally active
/// slot, deactivate it and pick a replacement among the currently inactive
/// features with probability proportional to exp(score), in log-space with
/// max subtraction. Icm takes the argmax with ties broken by lowest index.
/// The column sum is preserved exactly.
inline Vector resample_hypergeom_column(const Vector& scores, Vector z, ZMode mode, Rng& rng) {
    const int K = static_cast<int>(z.size());
    std::vector<int> slots;
    for (int k = 0; k < K; ++k)
        if (z[k] != 0.0) slots.push_back(k);

    for (int slot : slots) {
        z[slot] = 0.0;
        int chosen = -1;
        if (mode == ZMode::Icm) {
            double best = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < K; ++k) {
                if (z[k] != 0.0) continue;
                if (scores[k] > best) {
                    best = scores[k];
                    chosen = k;
                }
            }
        } else {
            double smax = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < K; ++k)
                if (z[k] == 0.0 && scores[k] > smax) smax = scores[k];
            double total = 0.0;
            for (int k = 0; k < K; ++k)
                if (z[k] == 0.0) total += std::exp(scores[k] - smax);
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            double target = unif(rng) * total;
            for (int k = 0; k < K; ++k) {
                if (z[k] != 0.0) continue;
                target -= std::exp(scores[k] - smax);
                chosen = k;
                if (target <= 0.0) break;
            }
        }
        z[chosen] = 1.0;
    }
    return z;
}

/// Keep only the listed rows of Z/X (and columns of W), in the given order.
inline void drop_rows(LatentState& s, const std::vector<int>& keep) {
    const int N = static_cast<int>(s.X.cols());
    Matrix W(s.W.rows(), keep.size()), X(keep.size(), N), Z(keep.size(), N);
    for (std::size_t i = 0; i < keep.size(); ++i) {
        W.col(static_cast<int>(i)) = s.W.col(keep[i]);
        X.row(static_cast<int>(i)) = s.X.row(keep[i]);
        Z.row(static_cast<int>(i)) = s.Z.row(keep[i]);
    }
    s.W = std::move(W);
    s.X = std::move(X);
    s.Z = std::move(Z);
    s.K = static_cast<int>(keep.size());
}

inline void finalize_report(FitReport& report, const LatentState& state, const Dataset& dataset,
                            std::chrono::steady_clock::time_point t0) {
    const Matrix rec = reconstruct(state, dataset);
    report.mae = mae(dataset.Y, rec);
    const RowRmse rr = rmse_per_row(dataset.Y, rec);
    report.rmse_mean = rr.mean;
    report.rmse_std = rr.stddev;
    report.popularity = popularity_histogram(state.Z);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail
}  // namespace lfl
