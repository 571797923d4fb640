#pragma once

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lfl/allocation.hpp"

namespace lfl {

/// Numerical floor applied everywhere sigma^2 is updated.
inline constexpr double kSigma2Floor = 1e-10;

/// Observations are columns: Y is D x N, mu the empirical row mean.
struct Dataset {
    Matrix Y;
    Vector mu;
    bool centered = false;

    int dim() const { return static_cast<int>(Y.rows()); }
    int count() const { return static_cast<int>(Y.cols()); }

    static Dataset from_matrix(Matrix y) {
        Dataset d;
        d.mu = y.rowwise().mean();
        d.Y = std::move(y);
        d.centered = false;
        return d;
    }
};

/// Subtracts the per-row mean and records it. Idempotent: a centered dataset
/// is returned unchanged, bit for bit.
inline Dataset center(const Dataset& d) {
    if (d.centered) return d;
    Dataset out;
    out.mu = d.Y.rowwise().mean();
    out.Y = d.Y.colwise() - out.mu;
    out.centered = true;
    return out;
}

/// Which allocation prior governs Z.
struct PriorSpec {
    enum class Kind { Hypergeometric, Ibp, FiniteBetaBernoulli, AllOnes };
    Kind kind = Kind::Hypergeometric;
    int K = 0;
    int L = 0;          // Hypergeometric only
    double alpha = 1.0; // Ibp / FiniteBetaBernoulli
    int K_max = 0;      // Ibp truncation

    static PriorSpec hypergeometric(int K, int L) {
        if (K < 1 || L < 1 || L > K) throw std::invalid_argument("PriorSpec: hypergeometric needs 1 <= L <= K");
        return {Kind::Hypergeometric, K, L, 0.0, 0};
    }
    static PriorSpec ibp(double alpha, int K_max) {
        if (alpha <= 0 || K_max < 1) throw std::invalid_argument("PriorSpec: IBP needs alpha > 0, K_max >= 1");
        return {Kind::Ibp, 0, 0, alpha, K_max};
    }
    static PriorSpec finite_beta_bernoulli(double alpha, int K) {
        if (alpha <= 0 || K < 1) throw std::invalid_argument("PriorSpec: Beta-Bernoulli needs alpha > 0, K >= 1");
        return {Kind::FiniteBetaBernoulli, K, 0, alpha, 0};
    }
    static PriorSpec all_ones(int K) {
        if (K < 1) throw std::invalid_argument("PriorSpec: AllOnes needs K >= 1");
        return {Kind::AllOnes, K, 0, 0.0, 0};
    }
};

/// Inverse-Gamma hyperprior on sigma^2 and Gamma hyperprior on the IBP alpha.
struct Hyperpriors {
    double gamma = 1.0;
    double vartheta = 1.0;
    double lambda = 1.0;
    double mu_alpha = 1.0;
};

/// Full model state shared by every variant. Z entries are 0.0/1.0.
struct LatentState {
    Matrix W;  // D x K
    Matrix X;  // K x N
    Matrix Z;  // K x N
    double sigma2 = 1.0;
    double sigma2_x = 1.0;
    double alpha = 1.0;
    int K = 0;
    std::optional<int> L;
};

/// Prior on the factor matrix W used by the joint likelihood.
struct WPrior {
    enum class Kind { Gaussian, UniformStiefel };
    Kind kind = Kind::Gaussian;
    double sigma_w2 = 1.0;

    static WPrior gaussian(double sigma_w2 = 1.0) { return {Kind::Gaussian, sigma_w2}; }
    static WPrior uniform_stiefel() { return {Kind::UniformStiefel, 1.0}; }
};

struct LogLikTerms {
    double data_term = 0.0;
    double x_prior_term = 0.0;
    double z_prior_term = 0.0;
    double w_prior_term = 0.0;
    double total = 0.0;
};

struct RowRmse {
    double mean = 0.0;
    double stddev = 0.0;
};

/// Per-fit outcome: likelihood trace, reconstruction metrics, feature
/// popularity (m_k/N sorted descending) and assorted diagnostics.
struct FitReport {
    std::vector<double> loglik_trace;
    double mae = 0.0;
    double rmse_mean = 0.0;
    double rmse_std = 0.0;
    std::vector<double> popularity;
    int iterations = 0;
    double wall_seconds = 0.0;
    int best_sweep = -1;            // sweep index maximizing the joint log-likelihood
    long truncation_rejects = 0;    // proposals dropped by the K_max cap
    std::vector<std::string> warnings;
    std::vector<double> eigvals;    // spectral fits (pca/ppca) only
    std::vector<int> k_trace;       // represented-feature count per sweep (BNP only)
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline std::string shape_str(const Matrix& m) {
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

inline void check_state_dims(const LatentState& s, const Dataset& d) {
    const auto D = d.Y.rows();
    require(s.W.rows() == D,
            "dimension mismatch: W rows (" + std::to_string(s.W.rows()) + ") vs data dimension D (" + std::to_string(D) + ")");
    require(s.W.cols() == s.X.rows(),
            "dimension mismatch: W cols (" + std::to_string(s.W.cols()) + ") vs X rows (" + std::to_string(s.X.rows()) + ") on axis K");
    require(s.X.rows() == s.Z.rows() && s.X.cols() == s.Z.cols(),
            "dimension mismatch: X is " + shape_str(s.X) + " but Z is " + shape_str(s.Z));
    require(s.X.cols() == d.Y.cols(),
            "dimension mismatch: X cols (" + std::to_string(s.X.cols()) + ") vs data count N (" + std::to_string(d.Y.cols()) + ")");
    require(d.mu.size() == D,
            "dimension mismatch: mu length (" + std::to_string(d.mu.size()) + ") vs data dimension D (" + std::to_string(D) + ")");
}

inline double gauss_log_density_sum(double sq_norm, double n_terms, double var) {
    return -0.5 * n_terms * std::log(2.0 * M_PI * var) - 0.5 * sq_norm / var;
}

}  // namespace detail

/// W(X .* Z), plus mu on every column when the dataset is not centered.
inline Matrix reconstruct(const LatentState& state, const Dataset& dataset) {
    detail::check_state_dims(state, dataset);
    Matrix rec = state.W * state.X.cwiseProduct(state.Z);
    if (!dataset.centered) rec.colwise() += dataset.mu;
    return rec;
}

/// Log of Eq.-(4)-style joint, split per factor group. z_prior_term is
/// log-zero (-inf) outside the allocation prior's support and propagates to
/// the total without NaN.
inline LogLikTerms joint_log_likelihood(const LatentState& state, const Dataset& dataset,
                                        const PriorSpec& prior, const WPrior& w_prior = WPrior::gaussian()) {
    const Matrix resid = dataset.Y - reconstruct(state, dataset);
    const double D = static_cast<double>(dataset.dim());
    const double N = static_cast<double>(dataset.count());
    const double K = static_cast<double>(state.Z.rows());

    LogLikTerms t;
    t.data_term = detail::gauss_log_density_sum(resid.squaredNorm(), N * D, state.sigma2);
    t.x_prior_term = detail::gauss_log_density_sum(state.X.squaredNorm(), N * K, state.sigma2_x);

    switch (prior.kind) {
        case PriorSpec::Kind::Hypergeometric: {
            t.z_prior_term = 0.0;
            for (int n = 0; n < state.Z.cols(); ++n) {
                const double lp = hypergeom_log_pmf(state.Z.col(n), prior.L);
                if (lp == log_zero()) {
                    t.z_prior_term = log_zero();
                    break;
                }
                t.z_prior_term += lp;
            }
            break;
        }
        case PriorSpec::Kind::Ibp: {
            // score represented rows only; alpha is the state's current value
            std::vector<int> rep;
            for (int k = 0; k < state.Z.rows(); ++k)
                if (state.Z.row(k).sum() > 0.0) rep.push_back(k);
            if (rep.empty()) {
                t.z_prior_term = -state.alpha * harmonic_number(static_cast<int>(N));
            } else {
                Matrix Zr(static_cast<int>(rep.size()), state.Z.cols());
                for (std::size_t i = 0; i < rep.size(); ++i) Zr.row(static_cast<int>(i)) = state.Z.row(rep[i]);
                t.z_prior_term = ibp_log_pmf(Zr, state.alpha);
            }
            break;
        }
        case PriorSpec::Kind::FiniteBetaBernoulli: {
            const double a = prior.alpha / prior.K;
            const auto lbeta = [](double x, double y) {
                return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y);
            };
            t.z_prior_term = 0.0;
            for (int k = 0; k < state.Z.rows(); ++k) {
                const double mk = state.Z.row(k).sum();
                t.z_prior_term += lbeta(a + mk, N - mk + 1.0) - lbeta(a, 1.0);
            }
            break;
        }
        case PriorSpec::Kind::AllOnes: {
            t.z_prior_term = state.Z.sum() == static_cast<double>(state.Z.size()) ? 0.0 : log_zero();
            break;
        }
    }

    if (w_prior.kind == WPrior::Kind::Gaussian) {
        t.w_prior_term = detail::gauss_log_density_sum(state.W.squaredNorm(),
                                                       static_cast<double>(state.W.size()), w_prior.sigma_w2);
    } else {
        t.w_prior_term = 0.0;  // uniform over the Stiefel manifold
    }

    const auto check = [](double v, const char* name) {
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw std::runtime_error(std::string("joint_log_likelihood: non-finite ") + name);
    };
    check(t.data_term, "data_term");
    check(t.x_prior_term, "x_prior_term");
    check(t.w_prior_term, "w_prior_term");
    if (std::isnan(t.z_prior_term) || t.z_prior_term == std::numeric_limits<double>::infinity())
        throw std::runtime_error("joint_log_likelihood: non-finite z_prior_term");

    t.total = t.z_prior_term == log_zero()
                  ? log_zero()
                  : t.data_term + t.x_prior_term + t.z_prior_term + t.w_prior_term;
    return t;
}

/// Mean of |Y - Yhat| over all D*N entries.
inline double mae(const Matrix& Y, const Matrix& Yhat) {
    detail::require(Y.rows() == Yhat.rows() && Y.cols() == Yhat.cols(),
                    "mae: shape mismatch " + detail::shape_str(Y) + " vs " + detail::shape_str(Yhat));
    return (Y - Yhat).cwiseAbs().mean();
}

/// Mean and population standard deviation, over rows, of per-row RMSE.
inline RowRmse rmse_per_row(const Matrix& Y, const Matrix& Yhat) {
    detail::require(Y.rows() == Yhat.rows() && Y.cols() == Yhat.cols(),
                    "rmse_per_row: shape mismatch " + detail::shape_str(Y) + " vs " + detail::shape_str(Yhat));
    const Vector row_mse = (Y - Yhat).cwiseAbs2().rowwise().mean();
    const Vector rmse = row_mse.cwiseSqrt();
    RowRmse out;
    out.mean = rmse.mean();
    out.stddev = std::sqrt((rmse.array() - out.mean).square().mean());
    return out;
}

}  // namespace lfl
