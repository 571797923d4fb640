#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "lfl/core.hpp"
#include "lfl/rng.hpp"

namespace lfl::detail {

struct TopEig {
    Vector values;   // descending
    Matrix vectors;  // D x k, orthonormal columns
};

/// Top-k eigenpairs of the sample covariance S = Yc Yc^T / N, computed via
/// the SVD of Yc so the D > N case costs the same as the Gram-matrix route.
inline TopEig top_k_eig(const Matrix& Yc, int k) {
    const int N = static_cast<int>(Yc.cols());
    Eigen::BDCSVD<Matrix> svd(Yc, Eigen::ComputeThinU);
    TopEig out;
    out.values = Vector::Zero(k);
    out.vectors = Matrix::Zero(Yc.rows(), k);
    const int avail = static_cast<int>(svd.singularValues().size());
    for (int i = 0; i < k && i < avail; ++i) {
        const double sv = svd.singularValues()[i];
        out.values[i] = sv * sv / N;
        out.vectors.col(i) = svd.matrixU().col(i);
    }
    return out;
}

inline double cov_trace(const Matrix& Yc) {
    return Yc.squaredNorm() / static_cast<double>(Yc.cols());
}

struct PcaInit {
    Matrix W;  // D x K
    Matrix X;  // K x N
};

/// PCA-based {W, X} initialization: leading directions scaled by sqrt of the
/// explained variance; columns beyond the data rank filled with prior draws.
inline PcaInit pca_init(const Matrix& Yc, int K, double sigma_w, Rng& rng) {
    const int D = static_cast<int>(Yc.rows());
    const int N = static_cast<int>(Yc.cols());
    const int k_spec = std::min(K, std::min(D, N));
    const TopEig eig = top_k_eig(Yc, k_spec);
    PcaInit init;
    init.W = Matrix::Zero(D, K);
    init.X = Matrix::Zero(K, N);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int k = 0; k < K; ++k) {
        if (k < k_spec && eig.values[k] > 1e-12) {
            const double scale = std::sqrt(eig.values[k]);
            init.W.col(k) = eig.vectors.col(k) * scale;
            init.X.row(k) = (eig.vectors.col(k).transpose() * Yc) / scale;
        } else {
            for (int d = 0; d < D; ++d) init.W(d, k) = sigma_w * gauss(rng);
        }
    }
    return init;
}

}  // namespace lfl::detail
