#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "lfl/core.hpp"

namespace lfl::stiefel {

/// Maximize tr(A W) over D x K matrices with orthonormal columns.
/// A is the K x D coefficient from the matrix von Mises-Fisher posterior.
struct Problem {
    Matrix A;
    double tol_grad = 1e-6;
    int max_iters = 200;
    double step0 = 1.0;
};

struct Result {
    Matrix W;
    double objective = 0.0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

inline Matrix thin_qf(const Matrix& M) {
    const auto D = M.rows();
    const auto K = M.cols();
    Eigen::HouseholderQR<Matrix> qr(M);
    Matrix Q = qr.householderQ() * Matrix::Identity(D, K);
    const Matrix R = qr.matrixQR().topRows(K).template triangularView<Eigen::Upper>();
    for (int j = 0; j < K; ++j)
        if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
    return Q;
}

inline bool rank_deficient(const Matrix& M) {
    Eigen::HouseholderQR<Matrix> qr(M);
    const Matrix R = qr.matrixQR().topRows(M.cols()).template triangularView<Eigen::Upper>();
    const double scale = R.cwiseAbs().maxCoeff();
    for (int j = 0; j < M.cols(); ++j)
        if (std::abs(R(j, j)) <= scale * 1e-14) return true;
    return false;
}

}  // namespace detail

/// QR retraction: the orthonormal factor of W + tangent, with the positive
/// diagonal R convention so the map is deterministic.
inline Matrix retract(const Matrix& W, const Matrix& tangent) {
    Matrix M = W + tangent;
    if (detail::rank_deficient(M)) {
        for (int j = 0; j < std::min(M.rows(), M.cols()); ++j) M(j, j) += 1e-12;
        if (detail::rank_deficient(M)) throw std::runtime_error("stiefel::retract: rank-deficient update");
    }
    return detail::thin_qf(M);
}

/// Tangent-space projection of the Euclidean gradient A^T of tr(AW).
inline Matrix riemannian_grad(const Matrix& W, const Matrix& A) {
    if (A.rows() != W.cols() || A.cols() != W.rows())
        throw std::invalid_argument("stiefel::riemannian_grad: A must be K x D for W D x K");
    const Matrix G = A.transpose();
    const Matrix WtG = W.transpose() * G;
    return G - W * (0.5 * (WtG + WtG.transpose()));
}

/// Riemannian gradient ascent with Armijo backtracking and QR retraction.
/// Returns the best iterate seen; objective sequence is non-decreasing.
inline Result maximize_trace(const Problem& problem, const Matrix& W0) {
    constexpr double kArmijoShrink = 0.5;
    constexpr double kSufficientDecrease = 1e-4;

    const auto objective = [&problem](const Matrix& W) { return (problem.A * W).trace(); };

    Result res;
    res.W = W0;
    res.objective = objective(W0);
    if (!std::isfinite(res.objective))
        throw std::invalid_argument("stiefel::maximize_trace: objective non-finite at W0");

    Matrix W = W0;
    double f = res.objective;
    for (int it = 0; it < problem.max_iters; ++it) {
        res.iterations = it;
        const Matrix g = riemannian_grad(W, problem.A);
        const double gnorm2 = g.squaredNorm();
        if (std::sqrt(gnorm2) < problem.tol_grad) {
            res.converged = true;
            break;
        }
        double step = problem.step0;
        bool accepted = false;
        for (int bt = 0; bt < 60; ++bt) {
            const Matrix Wtry = retract(W, step * g);
            const double ftry = objective(Wtry);
            if (std::isfinite(ftry) && ftry >= f + kSufficientDecrease * step * gnorm2) {
                W = Wtry;
                f = ftry;
                accepted = true;
                break;
            }
            step *= kArmijoShrink;
        }
        if (f > res.objective) {
            res.W = W;
            res.objective = f;
        }
        if (!accepted) break;  // no ascent step found; best iterate already recorded
    }
    return res;
}

}  // namespace lfl::stiefel
