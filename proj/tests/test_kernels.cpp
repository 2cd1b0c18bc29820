#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oedkit/kernels.hpp"

using namespace oedkit;
using namespace oedkit::kernels;
using linalg::Rng;

namespace {

WeightKernel kernel(KernelKind kind, double a = 1.0, TemporalKind t = TemporalKind::None, double ell = 1.0) {
    WeightKernel k;
    k.kind = kind;
    k.a = a;
    k.temporal = t;
    k.time_length_scale = ell;
    return k;
}

Vector random_design(Index n, KernelKind kind, Rng& rng) {
    std::uniform_real_distribution<double> u(kind == KernelKind::Sqrt ? 0.1 : -2.0, kind == KernelKind::Sqrt ? 0.9 : 2.0);
    Vector z(n);
    for (Index i = 0; i < n; ++i) z(i) = u(rng);
    return z;
}

SymMatrix random_spd(Index n, Rng& rng) {
    const Matrix a = linalg::gaussian_matrix(n, n, rng);
    return SymMatrix(a * a.transpose() + Matrix::Identity(n, n));
}

const std::vector<double> kTimes{0.0, 0.5, 1.0};

std::vector<WeightKernel> all_kernels() {
    std::vector<WeightKernel> out;
    for (auto kind : {KernelKind::Sqrt, KernelKind::Exp, KernelKind::Sigmoid}) {
        for (auto t : {TemporalKind::None, TemporalKind::Gaussian, TemporalKind::GaspariCohn}) {
            out.push_back(kernel(kind, kind == KernelKind::Sqrt ? 1.0 : 2.0, t, 0.7));
        }
    }
    return out;
}

}  // namespace

TEST(EvalWeight, ClosedFormValues) {
    const auto s = eval_weight(kernel(KernelKind::Sigmoid), 0.0, 0.0);
    EXPECT_DOUBLE_EQ(s.value, 0.5);
    // d/dz_i sigma((z_i + z_j)/2) = sigma (1 - sigma) / 2 = 0.125 at 0
    EXPECT_DOUBLE_EQ(s.d_first, 0.125);
    EXPECT_DOUBLE_EQ(s.d_second, 0.125);
    EXPECT_DOUBLE_EQ(eval_weight(kernel(KernelKind::Sqrt), 1.0, 1.0).value, 1.0);
    for (double x : {0.0, 0.3, 1.0}) EXPECT_EQ(eval_weight(kernel(KernelKind::Sqrt), 0.0, x).value, 0.0);
    EXPECT_DOUBLE_EQ(eval_weight(kernel(KernelKind::Exp), 0.0, 0.0).value, 1.0);
    EXPECT_THROW(eval_weight(kernel(KernelKind::Sqrt), -0.1, 0.5), DomainError);
}

TEST(EvalWeight, SymmetryRangeAndPartials) {
    Rng rng(1);
    for (auto kind : {KernelKind::Sqrt, KernelKind::Exp, KernelKind::Sigmoid}) {
        const auto k = kernel(kind, 1.5);
        for (int t = 0; t < 1000; ++t) {
            const Vector z = random_design(2, kind, rng);
            const auto ab = eval_weight(k, z(0), z(1)), ba = eval_weight(k, z(1), z(0));
            EXPECT_EQ(ab.value, ba.value);
            EXPECT_EQ(ab.d_first, ba.d_second);
            EXPECT_GE(ab.value, 0.0);
            if (kind != KernelKind::Exp) {
                EXPECT_LE(ab.value, 1.0);
            }
        }
        for (int t = 0; t < 20; ++t) {
            const Vector z = random_design(2, kind, rng);
            const double h = 1e-6;
            const double fd = (eval_weight(k, z(0) + h, z(1)).value - eval_weight(k, z(0) - h, z(1)).value) / (2 * h);
            EXPECT_NEAR(eval_weight(k, z(0), z(1)).d_first, fd, 1e-7);
        }
    }
}

TEST(TemporalRho, Properties) {
    for (auto t : {TemporalKind::Gaussian, TemporalKind::GaspariCohn}) {
        const auto k = kernel(KernelKind::Sigmoid, 1.0, t, 0.5);
        EXPECT_EQ(temporal_rho(k, 1.3, 1.3), 1.0);
        EXPECT_EQ(temporal_rho(k, 0.2, 0.9), temporal_rho(k, 0.9, 0.2));
    }
    const auto gc = kernel(KernelKind::Sigmoid, 1.0, TemporalKind::GaspariCohn, 0.5);
    EXPECT_EQ(temporal_rho(gc, 0.0, 1.0), 0.0);
    EXPECT_EQ(temporal_rho(gc, 0.0, 3.0), 0.0);
    // Both polynomial branches at r = 1: -1/4 + 1/2 + 5/8 - 5/3 + 1 = 5/24
    EXPECT_NEAR(gaspari_cohn(1.0), 5.0 / 24.0, 1e-15);
    EXPECT_NEAR(1.0 / 12 - 0.5 + 0.625 + 5.0 / 3 - 5.0 + 4.0 - 2.0 / 3, 5.0 / 24.0, 1e-15);
    EXPECT_NEAR(gaspari_cohn(1.0 - 1e-12), gaspari_cohn(1.0 + 1e-12), 1e-10);
    const auto ga = kernel(KernelKind::Sigmoid, 1.0, TemporalKind::Gaussian, 0.5);
    EXPECT_NEAR(temporal_rho(ga, 0.0, 0.3), std::exp(-0.3 / (2 * 0.25)), 1e-15);
}

TEST(BuildTheta, SpaceModeIdenticalBlocks) {
    Rng rng(2);
    const Vector z = random_design(3, KernelKind::Sigmoid, rng);
    const auto th = build_theta(kernel(KernelKind::Sigmoid), z, kTimes, CorrelationMode::Space);
    ASSERT_TRUE(th.is_blocked());
    EXPECT_EQ(th.blocks().count(), 3u);
    for (std::size_t m = 1; m < 3; ++m) EXPECT_EQ(th.blocks().block(m).matrix(), th.blocks().block(0).matrix());
    EXPECT_EQ(th.blocks().block_dim(), z.size());
}

TEST(BuildTheta, SpacetimeLayout) {
    const auto k = kernel(KernelKind::Exp, 1.0, TemporalKind::GaspariCohn, 2.0);
    const Vector z{{0.3, 0.7}};
    const std::vector<double> t{0.0, 1.5};
    const Matrix th = build_theta(k, z, t, CorrelationMode::Spacetime).to_dense();
    ASSERT_EQ(th.rows(), 4);
    for (Index a = 0; a < 2; ++a) {
        for (Index b = 0; b < 2; ++b) {
            for (Index i = 0; i < 2; ++i) {
                for (Index j = 0; j < 2; ++j) {
                    const double expect = gaspari_cohn(std::abs(t[a] - t[b]) / 2.0) * std::exp(-z(i)) * std::exp(-z(j));
                    EXPECT_NEAR(th(a * 2 + i, b * 2 + j), expect, 1e-15);
                }
            }
        }
    }
}

TEST(BuildTheta, SigmoidAtZeroAndCompactSupport) {
    const Vector z = Vector::Zero(3);
    const Matrix th = build_theta(kernel(KernelKind::Sigmoid), z, kTimes, CorrelationMode::Spacetime).to_dense();
    EXPECT_TRUE((th.array() == 0.5).all());
    const auto gc = kernel(KernelKind::Sigmoid, 1.0, TemporalKind::GaspariCohn, 0.2);
    const Matrix t2 = build_theta(gc, z, kTimes, CorrelationMode::Spacetime).to_dense();
    for (Index r = 0; r < 9; ++r) {
        for (Index c = 0; c < 9; ++c) {
            if (r / 3 != c / 3) {
                EXPECT_EQ(t2(r, c), 0.0);
            }
        }
    }
}

TEST(Eta, ClosedForms) {
    const Vector ones = Vector::Ones(4);
    for (Index j = 0; j < 4; ++j) {
        EXPECT_LE((eta_vector(kernel(KernelKind::Sqrt), ones, j) - Vector::Constant(4, 0.5)).cwiseAbs().maxCoeff(), 1e-15);
        EXPECT_LE((eta_vector(kernel(KernelKind::Sigmoid), Vector::Zero(4), j) - Vector::Constant(4, 0.125))
                      .cwiseAbs()
                      .maxCoeff(),
                  1e-15);
    }
    EXPECT_LE((theta_prime(kernel(KernelKind::Sqrt), ones) - Matrix::Constant(4, 4, 0.5))
                  .cwiseAbs()
                  .maxCoeff(),
              1e-15);
    EXPECT_TRUE((theta_prime(kernel(KernelKind::Sigmoid), Vector::Zero(4)).array() == 0.125).all());
}

TEST(Eta, DiagonalDerivativeOfSqrtIsHalfIdentityMasked) {
    // With diagonal noise only the diagonal of Theta' contributes: R^{-1} (.) Theta' = R^{-1}/2.
    Rng rng(3);
    const Vector z = random_design(5, KernelKind::Sqrt, rng);
    const Matrix tp = theta_prime(kernel(KernelKind::Sqrt), z);
    for (Index i = 0; i < 5; ++i) EXPECT_NEAR(tp(i, i), 0.5, 1e-15);
}

TEST(Eta, ReconstructsBlockDerivative) {
    Rng rng(4);
    for (const auto& k : all_kernels()) {
        for (int t = 0; t < 5; ++t) {
            const Vector z = random_design(4, k.kind, rng);
            for (Index j = 0; j < 4; ++j) {
                const Vector eta = eta_vector(k, z, j);
                Matrix analytic = Matrix::Zero(4, 4);
                analytic.row(j) += eta.transpose();
                analytic.col(j) += eta;
                const double h = 1e-5;
                Vector zp = z, zm = z;
                zp(j) += h;
                zm(j) -= h;
                const Matrix fd = (build_theta(k, zp, {0.0}, CorrelationMode::Space).to_dense() -
                                   build_theta(k, zm, {0.0}, CorrelationMode::Space).to_dense()) /
                                  (2 * h);
                EXPECT_LE((analytic - fd).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
            }
        }
    }
}

TEST(Vartheta, Reductions) {
    Rng rng(5);
    const Vector z = random_design(4, KernelKind::Sigmoid, rng);
    const auto k = kernel(KernelKind::Sigmoid);
    for (Index i = 0; i < 4; ++i) EXPECT_EQ(vartheta(k, z, {1.0}, i, 0), eta_vector(k, z, i));
    const auto gc = kernel(KernelKind::Sigmoid, 1.0, TemporalKind::GaspariCohn, 0.2);
    const Vector v = vartheta(gc, z, kTimes, 2, 1);
    for (Index q = 0; q < v.size(); ++q) {
        if (q / 4 != 1) {
            EXPECT_EQ(v(q), 0.0);
        }
    }
    EXPECT_THROW(vartheta(k, z, kTimes, 4, 0), std::out_of_range);
}

TEST(Vartheta, ReconstructsSpacetimeDerivative) {
    Rng rng(6);
    for (const auto& k : all_kernels()) {
        const Vector z = random_design(3, k.kind, rng);
        for (Index i = 0; i < 3; ++i) {
            Matrix analytic = Matrix::Zero(9, 9);
            for (Index m = 0; m < 3; ++m) {
                const Vector v = vartheta(k, z, kTimes, i, m);
                analytic.row(i + 3 * m) += v.transpose();
                analytic.col(i + 3 * m) += v;
            }
            const double h = 1e-5;
            Vector zp = z, zm = z;
            zp(i) += h;
            zm(i) -= h;
            const Matrix fd = (build_theta(k, zp, kTimes, CorrelationMode::Spacetime).to_dense() -
                               build_theta(k, zm, kTimes, CorrelationMode::Spacetime).to_dense()) /
                              (2 * h);
            EXPECT_LE((analytic - fd).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, fd.cwiseAbs().maxCoeff()));
        }
    }
}

TEST(WeightedPrecision, AllOnesGivesPrecision) {
    Rng rng(7);
    const auto noise = SpaceTimeCovariance(linalg::BlockDiag({random_spd(3, rng), random_spd(3, rng)}));
    const auto ones = ObsMatrix(linalg::BlockDiag::repeated(SymMatrix(Matrix::Ones(3, 3)), 2));
    EXPECT_EQ(weighted_precision(noise, ones).to_dense(), noise.precision().to_dense());
}

TEST(WeightedPrecision, SqrtAndSeparableForms) {
    Rng rng(8);
    for (int t = 0; t < 10; ++t) {
        const SymMatrix r = random_spd(5, rng);
        const auto noise = SpaceTimeCovariance(linalg::BlockDiag::repeated(r, 3));
        const Matrix rinv = noise.precision().blocks().block(0).matrix();

        const Vector z = random_design(5, KernelKind::Sqrt, rng);
        const auto w = weighted_precision(noise, build_theta(kernel(KernelKind::Sqrt), z, kTimes, CorrelationMode::Space));
        const Matrix expect = z.cwiseSqrt().asDiagonal() * rinv * z.cwiseSqrt().asDiagonal();
        for (std::size_t m = 0; m < 3; ++m) {
            EXPECT_LE((w.blocks().block(m).matrix() - expect).cwiseAbs().maxCoeff(), 1e-14 * std::max(1.0, expect.cwiseAbs().maxCoeff()));
        }

        const auto ek = kernel(KernelKind::Exp, 1.3);
        const Vector ze = random_design(5, KernelKind::Exp, rng);
        const Vector g = (-1.3 * ze.array()).exp();
        const auto we = weighted_precision(noise, build_theta(ek, ze, kTimes, CorrelationMode::Space));
        const Matrix expect_e = g.asDiagonal() * rinv * g.asDiagonal();
        EXPECT_LE((we.blocks().block(1).matrix() - expect_e).cwiseAbs().maxCoeff(),
                  1e-14 * std::max(1.0, expect_e.cwiseAbs().maxCoeff()));
    }
}

TEST(WeightedPrecision, StructureRules) {
    Rng rng(9);
    const auto blocked = SpaceTimeCovariance(linalg::BlockDiag::repeated(random_spd(2, rng), 2));
    const Vector z = Vector::Zero(2);
    const auto k = kernel(KernelKind::Sigmoid);
    EXPECT_TRUE(weighted_precision(blocked, build_theta(k, z, {0.0, 1.0}, CorrelationMode::Space)).is_blocked());
    EXPECT_FALSE(weighted_precision(blocked, build_theta(k, z, {0.0, 1.0}, CorrelationMode::Spacetime)).is_blocked());
    const auto dense = SpaceTimeCovariance(random_spd(4, rng), 2);
    EXPECT_THROW(weighted_precision(dense, build_theta(k, z, {0.0, 1.0}, CorrelationMode::Space)), std::invalid_argument);
    EXPECT_THROW(weighted_precision(blocked, build_theta(k, Vector::Zero(3), {0.0, 1.0}, CorrelationMode::Space)),
                 DimensionMismatch);
}

TEST(WeightedPrecisionDerivative, MatchesFiniteDifferences) {
    Rng rng(10);
    for (const auto& k : all_kernels()) {
        for (auto mode : {CorrelationMode::Space, CorrelationMode::Spacetime}) {
            for (int structure = 0; structure < 3; ++structure) {
                if (mode == CorrelationMode::Space && structure == 2) continue;
                SpaceTimeCovariance noise;
                if (structure == 0) {
                    noise = SpaceTimeCovariance::diagonal(Vector{{0.5, 1.0, 2.0, 1.5}}, 3);
                } else if (structure == 1) {
                    noise = SpaceTimeCovariance(linalg::BlockDiag({random_spd(4, rng), random_spd(4, rng), random_spd(4, rng)}));
                } else {
                    noise = SpaceTimeCovariance(random_spd(12, rng), 4);
                }
                const Vector z = random_design(4, k.kind, rng);
                for (Index i = 0; i < 4; ++i) {
                    const Matrix analytic = weighted_precision_derivative(noise, k, z, kTimes, i, mode).to_dense();
                    const double h = 1e-5;
                    Vector zp = z, zm = z;
                    zp(i) += h;
                    zm(i) -= h;
                    const Matrix fd = (weighted_precision(noise, build_theta(k, zp, kTimes, mode)).to_dense() -
                                       weighted_precision(noise, build_theta(k, zm, kTimes, mode)).to_dense()) /
                                      (2 * h);
                    EXPECT_LE((analytic - fd).cwiseAbs().maxCoeff(), 1e-6 * std::max(1.0, fd.cwiseAbs().maxCoeff()))
                        << to_string(k.kind) << " " << to_string(k.temporal) << " structure " << structure;
                }
            }
        }
    }
}

TEST(WeightedPrecisionDerivative, DiagonalSqrtSingleEntry) {
    const Vector var{{0.5, 2.0, 4.0}};
    const auto noise = SpaceTimeCovariance::diagonal(var, 2);
    const Vector z = Vector::Ones(3);
    for (Index i = 0; i < 3; ++i) {
        const Matrix d = weighted_precision_derivative(noise, kernel(KernelKind::Sqrt), z, {0.0, 1.0}, i,
                                                       CorrelationMode::Space)
                             .to_dense();
        Matrix expect = Matrix::Zero(6, 6);
        // d/dz (z / var) = 1 / var at every time block
        expect(i, i) = 1.0 / var(i);
        expect(i + 3, i + 3) = 1.0 / var(i);
        EXPECT_LE((d - expect).cwiseAbs().maxCoeff(), 1e-15);
    }
}

TEST(WeightedPrecisionDerivative, IndexChecks) {
    const auto noise = SpaceTimeCovariance::diagonal(Vector::Ones(2), 1);
    EXPECT_THROW(weighted_precision_derivative(noise, kernel(KernelKind::Sigmoid), Vector::Zero(2), {0.0}, 2,
                                               CorrelationMode::Space),
                 std::out_of_range);
}

TEST(Masks, MaskAndBinaryTheta) {
    const Vector b{{1.0, 0.0, 1.0}};
    const auto th = build_theta(kernel(KernelKind::Sigmoid), Vector::Zero(3), kTimes, CorrelationMode::Spacetime);
    const Matrix masked = mask_theta(th, b).to_dense();
    for (Index r = 0; r < 9; ++r) {
        for (Index c = 0; c < 9; ++c) {
            EXPECT_EQ(masked(r, c), b(r % 3) * b(c % 3) * 0.5);
        }
    }
    const Matrix bin = binary_theta(b, 3, CorrelationMode::Space).to_dense();
    for (Index r = 0; r < 9; ++r) {
        for (Index c = 0; c < 9; ++c) EXPECT_EQ(bin(r, c), r / 3 == c / 3 ? b(r % 3) * b(c % 3) : 0.0);
    }
}
