#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "lfl/rng.hpp"

namespace lfl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Sentinel for log of an event outside the prior's support. Propagates
/// through sums as -inf without producing NaN (no +inf terms ever occur).
inline constexpr double log_zero() { return -std::numeric_limits<double>::infinity(); }

inline double harmonic_number(int n) {
    double h = 0.0;
    for (int i = 1; i <= n; ++i) h += 1.0 / i;
    return h;
}

inline double log_binomial(int n, int k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// Sufficient statistics of a binary allocation matrix: per-feature counts
/// m_k = sum_n z_{k,n} and the harmonic number H_N they are scored against.
struct FeatureCounts {
    Eigen::VectorXi m;
    int n_obs = 0;
    double harmonic = 0.0;

    static FeatureCounts from_z(const Matrix& Z) {
        FeatureCounts fc;
        fc.n_obs = static_cast<int>(Z.cols());
        fc.m = Z.rowwise().sum().cast<int>();
        fc.harmonic = harmonic_number(fc.n_obs);
        return fc;
    }
};

/// Multivariate hypergeometric pmf over one indicator column: uniform over
/// the C(K,L) binary vectors with exactly L active entries.
inline double hypergeom_log_pmf(const Eigen::Ref<const Vector>& z, int L) {
    const int K = static_cast<int>(z.size());
    if (L < 1 || L > K) throw std::invalid_argument("hypergeom_log_pmf: need 1 <= L <= K");
    int sum = 0;
    for (int k = 0; k < K; ++k) sum += z[k] != 0.0 ? 1 : 0;
    if (sum != L) return log_zero();
    return -log_binomial(K, L);
}

/// Uniform draw over binary K-vectors with exactly L ones (partial Fisher-Yates).
inline Vector hypergeom_sample(int K, int L, Rng& rng) {
    if (L < 1 || L > K) throw std::invalid_argument("hypergeom_sample: need 1 <= L <= K");
    std::vector<int> idx(K);
    std::iota(idx.begin(), idx.end(), 0);
    Vector z = Vector::Zero(K);
    for (int l = 0; l < L; ++l) {
        std::uniform_int_distribution<int> pick(l, K - 1);
        std::swap(idx[l], idx[pick(rng)]);
        z[idx[l]] = 1.0;
    }
    return z;
}

/// IBP prior mass of a left-ordered-form-equivalent matrix with represented
/// rows only. This is the unnormalized log-pmf (the paper states the prior up
/// to a constant of proportionality); all uses are MCMC ratios and trace
/// diagnostics, where the constant cancels.
inline double ibp_log_pmf(const Matrix& Z, double alpha) {
    const int K = static_cast<int>(Z.rows());
    const int N = static_cast<int>(Z.cols());
    const double h = harmonic_number(N);
    double lp = -alpha * h + K * std::log(alpha);
    for (int k = 0; k < K; ++k) {
        const int mk = static_cast<int>(std::lround(Z.row(k).sum()));
        if (mk < 1) throw std::invalid_argument("ibp_log_pmf: unrepresented feature (row with m_k = 0)");
        lp += std::lgamma(mk) + std::lgamma(N - mk + 1.0) - std::lgamma(N + 1.0);
    }
    return lp;
}

struct IbpDraw {
    Matrix Z;             // K x N, K = number of dishes instantiated (possibly 0)
    long truncated = 0;   // dishes rejected by the K_max cap
};

/// Sequential buffet: customer n takes existing dish k w.p. m_k/n, then
/// Poisson(alpha/n) new dishes, truncated so the total never exceeds K_max.
inline IbpDraw ibp_sample(int N, double alpha, int K_max, Rng& rng) {
    if (K_max < 1) throw std::invalid_argument("ibp_sample: K_max must be >= 1");
    std::vector<std::vector<double>> rows;  // rows[k][n]
    std::vector<int> counts;
    long truncated = 0;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
            const double p = static_cast<double>(counts[k]) / (n + 1);
            const bool take = unif(rng) < p;
            rows[k].push_back(take ? 1.0 : 0.0);
            if (take) ++counts[k];
        }
        std::poisson_distribution<int> pois(alpha / (n + 1));
        int fresh = pois(rng);
        const int room = K_max - static_cast<int>(rows.size());
        if (fresh > room) {
            truncated += fresh - room;
            fresh = room;
        }
        for (int j = 0; j < fresh; ++j) {
            rows.emplace_back(n + 1, 0.0);
            rows.back()[n] = 1.0;
            counts.push_back(1);
        }
    }
    IbpDraw draw;
    draw.truncated = truncated;
    draw.Z = Matrix::Zero(static_cast<int>(rows.size()), N);
    for (std::size_t k = 0; k < rows.size(); ++k)
        for (int n = 0; n < N; ++n) draw.Z(static_cast<int>(k), n) = rows[k][n];
    return draw;
}

/// Collapsed predictive P(z_{k,n}=1 | Z_{-n}) under pi_k ~ Beta(alpha/K, 1),
/// the finite-K construction whose K -> inf limit is the IBP.
inline double bb_predictive(int m_minus, int N, double alpha, int K) {
    if (m_minus < 0 || m_minus > N - 1) throw std::invalid_argument("bb_predictive: need 0 <= m_minus <= N-1");
    const double a = alpha / K;
    return (m_minus + a) / (N + a);
}

/// Fraction of points active in each feature, sorted descending.
inline std::vector<double> popularity_histogram(const Matrix& Z) {
    const int N = static_cast<int>(Z.cols());
    std::vector<double> pop(Z.rows());
    for (int k = 0; k < Z.rows(); ++k) pop[k] = N > 0 ? Z.row(k).sum() / N : 0.0;
    std::sort(pop.begin(), pop.end(), std::greater<double>());
    return pop;
}

}  // namespace lfl
