#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "lfl/allocation.hpp"
#include "lfl/core.hpp"
#include "lfl/rng.hpp"
#include "lfl/stiefel.hpp"

namespace lfl::synth {

/// The five indicator regimes of the synthetic study.
enum class ZPattern { Sparse, Dense, SubspaceClustering, Balanced, SingleState };

/// The single-state regime admits two readings: one all-ones row, or one
/// fixed L-subset shared by every column.
enum class SingleStateVariant { OneRow, SharedConfig };

struct GenConfig {
    ZPattern pattern = ZPattern::Balanced;
    int N = 1000;
    int D = 50;
    int K = 10;
    int L = 5;
    double sigma = 0.1;
    double sigma_w = 1.0;
    std::uint64_t seed = 0;
    double dense_rate = 0.8;  // Dense pattern Bernoulli rate
    SingleStateVariant single_state = SingleStateVariant::OneRow;
};

inline Matrix generate_z(const GenConfig& cfg, Rng& rng) {
    Matrix Z = Matrix::Zero(cfg.K, cfg.N);
    switch (cfg.pattern) {
        case ZPattern::Sparse: {
            // IBP draw truncated to K rows; alpha chosen so E[#features] = K
            const double alpha = cfg.K / harmonic_number(cfg.N);
            const IbpDraw draw = ibp_sample(cfg.N, alpha, cfg.K, rng);
            Z.topRows(draw.Z.rows()) = draw.Z;
            break;
        }
        case ZPattern::Dense: {
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            for (int k = 0; k < cfg.K; ++k)
                for (int n = 0; n < cfg.N; ++n) Z(k, n) = unif(rng) < cfg.dense_rate ? 1.0 : 0.0;
            break;
        }
        case ZPattern::SubspaceClustering: {
            // three blocks of points, each owning a disjoint feature chunk
            int n0 = 0, k0 = 0;
            for (int b = 0; b < 3; ++b) {
                const int nb = cfg.N / 3 + (b < cfg.N % 3 ? 1 : 0);
                const int kb = cfg.K / 3 + (b < cfg.K % 3 ? 1 : 0);
                Z.block(k0, n0, kb, nb).setOnes();
                n0 += nb;
                k0 += kb;
            }
            break;
        }
        case ZPattern::Balanced: {
            for (int n = 0; n < cfg.N; ++n) Z.col(n) = hypergeom_sample(cfg.K, cfg.L, rng);
            break;
        }
        case ZPattern::SingleState: {
            if (cfg.single_state == SingleStateVariant::OneRow) {
                Z.row(0).setOnes();
            } else {
                const Vector z0 = hypergeom_sample(cfg.K, cfg.L, rng);
                for (int n = 0; n < cfg.N; ++n) Z.col(n) = z0;
            }
            break;
        }
    }
    return Z;
}

struct GroundTruth {
    Matrix W, X, Z;
};

struct Generated {
    Dataset data;
    GroundTruth truth;

    Matrix signal() const { return truth.W * truth.X.cwiseProduct(truth.Z); }
};

/// Y = W (X .* Z) + E with W columns ~ N(0, sigma_w^2 I), X standard normal,
/// E ~ N(0, sigma^2 I).
inline Generated generate_dataset(const GenConfig& cfg, Rng& rng) {
    Generated out;
    out.truth.Z = generate_z(cfg, rng);
    std::normal_distribution<double> gauss(0.0, 1.0);
    out.truth.W.resize(cfg.D, cfg.K);
    for (int k = 0; k < cfg.K; ++k)
        for (int d = 0; d < cfg.D; ++d) out.truth.W(d, k) = cfg.sigma_w * gauss(rng);
    out.truth.X.resize(cfg.K, cfg.N);
    for (int n = 0; n < cfg.N; ++n)
        for (int k = 0; k < cfg.K; ++k) out.truth.X(k, n) = gauss(rng);
    Matrix Y = out.signal();
    for (int n = 0; n < cfg.N; ++n)
        for (int d = 0; d < cfg.D; ++d) Y(d, n) += cfg.sigma * gauss(rng);
    out.data = Dataset::from_matrix(std::move(Y));
    return out;
}

struct SubspaceScene {
    Dataset data;
    std::vector<int> labels;  // planted plane per point (0, 1, 2)
    Matrix directions;        // 3 x 3 orthonormal
};

/// Three orthogonal 1-D directions in 3-D; each third of the points lies in
/// the plane spanned by one direction pair, plus small isotropic noise.
inline SubspaceScene generate_three_subspace_scene(int N, Rng& rng) {
    if (N % 3 != 0) throw std::invalid_argument("generate_three_subspace_scene: N must be divisible by 3");
    constexpr double kNoise = 0.05;
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix G(3, 3);
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) G(i, j) = gauss(rng);
    const Matrix Q = stiefel::detail::thin_qf(G);

    constexpr int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    SubspaceScene scene;
    scene.directions = Q;
    scene.labels.resize(N);
    Matrix Y(3, N);
    const int third = N / 3;
    for (int n = 0; n < N; ++n) {
        const int b = n / third;
        scene.labels[n] = b;
        Y.col(n) = gauss(rng) * Q.col(pairs[b][0]) + gauss(rng) * Q.col(pairs[b][1]);
        for (int d = 0; d < 3; ++d) Y(d, n) += kNoise * gauss(rng);
    }
    scene.data = Dataset::from_matrix(std::move(Y));
    return scene;
}

}  // namespace lfl::synth
