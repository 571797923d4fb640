#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "lfl/afa.hpp"
#include "lfl/core.hpp"
#include "lfl/spectral.hpp"
#include "lfl/subspace.hpp"

namespace lfl {

struct PcaResult {
    Matrix W;       // D x K, orthonormal
    Vector eigvals; // descending
};

/// Top-K eigenpairs of the sample covariance of the centered data. The
/// D > N case is served by the same interface through the SVD route.
inline PcaResult pca_fit(const Dataset& dataset, int K) {
    const Dataset d = center(dataset);
    if (K < 1 || K > std::min(d.dim(), d.count()))
        throw std::invalid_argument("pca_fit: need 1 <= K <= min(D, N)");
    const detail::TopEig eig = detail::top_k_eig(d.Y, K);
    return {eig.vectors, eig.values};
}

struct PpcaResult {
    Matrix W;
    double sigma2 = 0.0;
    bool clamped = false;  // some factor scale hit the lambda_k < sigma^2 clamp
};

/// Maximum-likelihood PPCA: sigma^2 is the mean discarded eigenvalue and
/// W = U_K (Lambda_K - sigma^2 I)^(1/2) with R = I, rho = I.
inline PpcaResult ppca_ml(const Dataset& dataset, int K) {
    const Dataset d = center(dataset);
    if (K < 1 || K >= d.dim()) throw std::invalid_argument("ppca_ml: need 1 <= K < D");
    const detail::TopEig eig = detail::top_k_eig(d.Y, K);
    PpcaResult out;
    out.sigma2 = (detail::cov_trace(d.Y) - eig.values.sum()) / (d.dim() - K);
    out.W = Matrix::Zero(d.dim(), K);
    for (int k = 0; k < K; ++k) {
        double gap = eig.values[k] - out.sigma2;
        if (gap < 0.0) {
            gap = 0.0;
            out.clamped = true;
        }
        out.W.col(k) = eig.vectors.col(k) * std::sqrt(gap);
    }
    return out;
}

/// Diagonal feature-expectation weights rho with the factors they scale:
/// rho_k = L/K under the hypergeometric prior, m_k/N under the IBP.
struct MarginalSpec {
    Vector rho;
    Matrix W;
    double sigma2 = 0.0;
};

/// Model covariance C = W rho W^T + sigma^2 I of the collapsed model.
inline Matrix marginal_covariance(const MarginalSpec& spec) {
    detail::require(spec.rho.size() == spec.W.cols(),
                    "marginal_covariance: rho length (" + std::to_string(spec.rho.size()) +
                        ") vs W cols (" + std::to_string(spec.W.cols()) + ")");
    Matrix C = spec.W * spec.rho.asDiagonal() * spec.W.transpose();
    C.diagonal().array() += spec.sigma2;
    return C;
}

struct SvaCheck {
    double angle = 0.0;  // largest principal angle, radians
    bool skipped = false;
};

/// aPPCA with L = K and a small fixed sigma^2 should recover the span of the
/// top-K sample eigenvectors. Returns the largest principal angle between
/// the fitted span and the eigenvector span; skipped (angle NaN) when the
/// spectrum gap at K is degenerate and the span is unconstrained.
inline SvaCheck sva_equivalence_check(const Dataset& dataset, int K) {
    const Dataset d = center(dataset);
    if (K < 1 || K > d.dim()) throw std::invalid_argument("sva_equivalence_check: need 1 <= K <= D");
    if (K == d.dim()) return {0.0, false};  // full space: spans coincide exactly

    const detail::TopEig eig = detail::top_k_eig(d.Y, std::min(K + 1, d.count()));
    const double gap = K < static_cast<int>(eig.values.size())
                           ? eig.values[K - 1] - eig.values[K]
                           : eig.values[K - 1];
    if (gap < 1e-6 * std::max(eig.values[0], 1e-12))
        return {std::numeric_limits<double>::quiet_NaN(), true};

    AppcaConfig cfg;
    cfg.K = K;
    cfg.L = K;
    cfg.iters = 30;
    cfg.fixed_sigma2 = std::max(1e-6 * eig.values[0], 1e-12);
    const AppcaFit fit = fit_appca(d, cfg);

    const Matrix cross = eig.vectors.leftCols(K).transpose() * fit.state.W;
    Eigen::JacobiSVD<Matrix> svd(cross);
    const double smin = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
    return {std::acos(smin), false};
}

/// Vanilla FA = aFA EM with the AllOnes prior (L = K, Z fixed).
inline AfaFit fit_vanilla_fa(const Dataset& dataset, int K, int iters) {
    AfaConfig cfg;
    cfg.K = K;
    cfg.L = K;
    cfg.prior = AfaPrior::AllOnes;
    cfg.iters = iters;
    cfg.mode = AfaMode::Em;
    return fit_afa(dataset, cfg);
}

}  // namespace lfl
