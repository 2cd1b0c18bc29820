#include <gtest/gtest.h>

#include <cmath>

#include "oedkit/linalg.hpp"

using namespace oedkit;
using namespace oedkit::linalg;

namespace {

Matrix random_matrix(Index n, Rng& rng) { return gaussian_matrix(n, n, rng); }

SymMatrix random_sym(Index n, Rng& rng) {
    const Matrix a = random_matrix(n, rng);
    return SymMatrix(a + a.transpose());
}

SymMatrix random_spd(Index n, Rng& rng, double shift = 1.0) {
    const Matrix a = random_matrix(n, rng);
    return SymMatrix(a * a.transpose() + shift * Matrix::Identity(n, n));
}

}  // namespace

TEST(Hadamard, Entrywise) {
    const SymMatrix a(Matrix{{1, 2}, {2, 4}});
    const SymMatrix b(Matrix{{5, 6}, {6, 8}});
    EXPECT_EQ(hadamard(a, b).matrix(), (Matrix{{5, 12}, {12, 32}}));
}

TEST(Hadamard, ZeroAndIdentityMasks) {
    Rng rng(1);
    const SymMatrix a = random_sym(5, rng);
    EXPECT_EQ(max_abs(hadamard(a, SymMatrix::zero(5)).matrix()), 0.0);
    const Matrix d = hadamard(a, SymMatrix::identity(5)).matrix();
    EXPECT_EQ(d, Matrix(a.matrix().diagonal().asDiagonal()));
}

TEST(Hadamard, DimensionMismatch) {
    EXPECT_THROW(hadamard(SymMatrix::identity(2), SymMatrix::identity(3)), DimensionMismatch);
}

TEST(Hadamard, DistributesOverAddition) {
    Rng rng(2);
    for (int t = 0; t < 20; ++t) {
        const SymMatrix a = random_sym(6, rng), b = random_sym(6, rng), c = random_sym(6, rng);
        const Matrix lhs = hadamard(a, b + c).matrix();
        const Matrix rhs = (hadamard(a, b) + hadamard(a, c)).matrix();
        // (b + c) is formed before the product, so allow one rounding step.
        EXPECT_LE(max_abs(lhs - rhs), 1e-14 * (1.0 + max_abs(lhs)));
    }
}

TEST(Hadamard, RankOneColumnIdentity) {
    // A (.) (e_i y^T) = e_i ((A e_i) (.) y)^T
    Rng rng(3);
    for (int t = 0; t < 10; ++t) {
        const SymMatrix a = random_sym(8, rng);
        const Vector y = gaussian_matrix(8, 1, rng);
        for (Index i = 0; i < 8; ++i) {
            Matrix eiy = Matrix::Zero(8, 8);
            eiy.row(i) = y.transpose();
            const Matrix lhs = a.matrix().cwiseProduct(eiy);
            Matrix rhs = Matrix::Zero(8, 8);
            rhs.row(i) = a.matrix().col(i).cwiseProduct(y).transpose();
            EXPECT_EQ(max_abs(lhs - rhs), 0.0);
        }
    }
}

TEST(Hadamard, DiagonalOfProductAsSumOfSquares) {
    // diag(A A^T B) = sum_i s_i (.) s_i, s_i = B^{1/2} A e_i, for symmetric A and diagonal B >= 0.
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int t = 0; t < 20; ++t) {
        const SymMatrix a = random_sym(6, rng);
        Vector b(6);
        for (Index i = 0; i < 6; ++i) b(i) = u(rng);
        const Vector lhs = (a.matrix() * a.matrix().transpose() * b.asDiagonal()).diagonal();
        Vector rhs = Vector::Zero(6);
        for (Index i = 0; i < 6; ++i) {
            const Vector s = b.cwiseSqrt().asDiagonal() * a.matrix().col(i);
            rhs += s.cwiseProduct(s);
        }
        EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + lhs.cwiseAbs().maxCoeff()));
    }
}

TEST(SymMatrix, SymmetrizesAndRejectsAsymmetry) {
    const SymMatrix s(Matrix{{1, 2 + 1e-12}, {2, 1}});
    EXPECT_EQ(s(0, 1), s(1, 0));
    EXPECT_THROW(SymMatrix(Matrix{{1, 2}, {3, 1}}), std::invalid_argument);
    EXPECT_THROW(SymMatrix(Matrix(2, 3)), DimensionMismatch);
}

TEST(Cholesky, LogDeterminants) {
    EXPECT_EQ(spd_factorize(SymMatrix::identity(3)).logdet(), 0.0);
    EXPECT_NEAR(spd_factorize(SymMatrix::diagonal(Vector{{2.0, 3.0}})).logdet(), std::log(6.0), 1e-15);
    // det [[4,2],[2,3]] = 4*3 - 2*2 by cofactor expansion
    EXPECT_NEAR(spd_factorize(SymMatrix(Matrix{{4, 2}, {2, 3}})).logdet(), std::log(4.0 * 3.0 - 2.0 * 2.0), 1e-15);
}

TEST(Cholesky, NotPositiveDefiniteNamesPivot) {
    const SymMatrix a(Matrix{{1, 0, 0}, {0, 2, 0}, {0, 0, -1}});
    try {
        spd_factorize(a);
        FAIL() << "expected NotPositiveDefinite";
    } catch (const NotPositiveDefinite& e) {
        EXPECT_EQ(e.pivot(), 2u);
    }
    // Second pivot fails: 1 - (2^2 / 1) < 0
    try {
        spd_factorize(SymMatrix(Matrix{{1, 2}, {2, 1}}));
        FAIL() << "expected NotPositiveDefinite";
    } catch (const NotPositiveDefinite& e) {
        EXPECT_EQ(e.pivot(), 1u);
    }
}

TEST(Cholesky, SolveResidual) {
    Rng rng(5);
    for (int t = 0; t < 20; ++t) {
        const SymMatrix a = random_spd(30, rng);
        const Vector b = gaussian_matrix(30, 1, rng);
        const Vector x = spd_factorize(a).solve(b);
        EXPECT_LE((a.matrix() * x - b).norm() / b.norm(), 1e-10);
    }
}

TEST(Cholesky, LowerFactorReproducesMatrix) {
    Rng rng(6);
    const SymMatrix a = random_spd(7, rng);
    const CholFactor c(a);
    EXPECT_LE(max_abs(c.lower() * c.lower().transpose() - a.matrix()), 1e-12 * max_abs(a.matrix()));
    const Matrix x = gaussian_matrix(7, 2, rng);
    EXPECT_LE(max_abs(c.multiply_lower(c.solve_lower(x)) - x), 1e-12);
}

TEST(BlockDiag, DenseInverseAndKronecker) {
    const BlockDiag b({SymMatrix(Matrix{{2.0}}), SymMatrix(Matrix{{3.0}})});
    EXPECT_EQ(b.to_dense(), Matrix(Vector{{2.0, 3.0}}.asDiagonal()));

    Rng rng(7);
    const SymMatrix r1 = random_spd(3, rng), r2 = random_spd(3, rng);
    const BlockDiag bd({r1, r2});
    const BlockDiag inv = bd.inverse();
    EXPECT_LE(max_abs(inv.to_dense() * bd.to_dense() - Matrix::Identity(6, 6)), 1e-12);

    const SymMatrix r(Matrix{{2, 1}, {1, 3}});
    const Matrix dense = BlockDiag::repeated(r, 3).to_dense();
    Matrix kron = Matrix::Zero(6, 6);
    for (Index m = 0; m < 3; ++m) kron.block(2 * m, 2 * m, 2, 2) = r.matrix();
    EXPECT_EQ(max_abs(dense - kron), 0.0);

    const Vector v = gaussian_matrix(6, 1, rng);
    EXPECT_LE((bd.apply(v) - bd.to_dense() * v).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(BlockDiag, SingularBlockNamesIndex) {
    const BlockDiag b({SymMatrix::identity(2), SymMatrix(Matrix{{1, 0}, {0, 0}})});
    try {
        b.inverse();
        FAIL() << "expected SingularBlock";
    } catch (const SingularBlock& e) {
        EXPECT_EQ(e.block(), 1u);
    }
}

TEST(TwoPassEigs, DiagonalMatrix) {
    const Matrix a = Vector{{3.0, 2.0, 1.0}}.asDiagonal();
    Rng rng(8);
    const auto r = two_pass_eigs([&](const Matrix& x) { return Matrix(a * x); }, 3, 2, rng);
    ASSERT_EQ(r.values.size(), 2);
    EXPECT_NEAR(r.values(0), 3.0, 1e-10);
    EXPECT_NEAR(r.values(1), 2.0, 1e-10);
    EXPECT_FALSE(r.rank_deficient);
}

TEST(TwoPassEigs, RankOne) {
    Rng rng(9);
    const Vector v = gaussian_matrix(10, 1, rng);
    const Matrix a = v * v.transpose();
    const auto r = two_pass_eigs([&](const Matrix& x) { return Matrix(a * x); }, 10, 1, rng);
    EXPECT_NEAR(r.values(0), v.squaredNorm(), 1e-10 * v.squaredNorm());
}

TEST(TwoPassEigs, RankDeficiencyFlagged) {
    Rng rng(10);
    const Vector v = gaussian_matrix(10, 1, rng);
    const Matrix a = v * v.transpose();
    const auto r = two_pass_eigs([&](const Matrix& x) { return Matrix(a * x); }, 10, 3, rng);
    EXPECT_EQ(r.values.size(), 1);
    EXPECT_TRUE(r.rank_deficient);
}

TEST(TwoPassEigs, FullRankReconstruction) {
    Rng rng(11);
    for (int t = 0; t < 5; ++t) {
        const SymMatrix a = random_spd(12, rng);
        const auto r = two_pass_eigs([&](const Matrix& x) { return Matrix(a.matrix() * x); }, 12, 12, rng);
        const Matrix rec = r.vectors * r.values.asDiagonal() * r.vectors.transpose();
        EXPECT_LE((a.matrix() - rec).norm() / a.matrix().norm(), 1e-8);
        EXPECT_LE(max_abs(r.vectors.transpose() * r.vectors - Matrix::Identity(12, 12)), 1e-10);
        for (Index i = 1; i < r.values.size(); ++i) EXPECT_GE(r.values(i - 1), r.values(i));
    }
}

TEST(TwoPassEigs, MatchesDenseOracleWithGap) {
    // Spectrum 10, 9, ..., 6 then a gap to 1e-3-scale tail.
    Rng rng(12);
    const Index n = 40;
    Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(n, n, rng));
    const Matrix q = qr.householderQ();
    Vector spec = Vector::Constant(n, 1e-4);
    for (Index i = 0; i < 5; ++i) spec(i) = 10.0 - static_cast<double>(i);
    const Matrix a = q * spec.asDiagonal() * q.transpose();
    const auto r = two_pass_eigs([&](const Matrix& x) { return Matrix(a * x); }, n, 5, rng);
    Eigen::SelfAdjointEigenSolver<Matrix> dense(a);
    for (Index i = 0; i < 5; ++i) {
        const double oracle = dense.eigenvalues()(n - 1 - i);
        EXPECT_NEAR(r.values(i), oracle, 1e-8 * oracle);
    }
}

TEST(TwoPassEigs, RejectsBadRank) {
    Rng rng(13);
    auto id = [](const Matrix& x) { return x; };
    EXPECT_THROW(two_pass_eigs(id, 4, 5, rng), std::invalid_argument);
    EXPECT_THROW(two_pass_eigs(id, 4, 0, rng), std::invalid_argument);
    EXPECT_THROW(two_pass_eigs(id, 4, 3, rng, 2), std::invalid_argument);
}

TEST(Rademacher, EntriesAndDeterminism) {
    Rng a(42), b(42);
    const Matrix z1 = rademacher_probes(50, 7, a);
    const Matrix z2 = rademacher_probes(50, 7, b);
    EXPECT_EQ(z1, z2);
    EXPECT_TRUE((z1.array().abs() == 1.0).all());
    EXPECT_THROW(rademacher_probes(5, 0, a), std::invalid_argument);
}

TEST(Rademacher, ExactOnDiagonal) {
    Rng rng(14);
    const Vector d = gaussian_matrix(20, 1, rng);
    const Matrix z = rademacher_probes(20, 5, rng);
    for (Index r = 0; r < 5; ++r) {
        EXPECT_NEAR(z.col(r).dot(d.asDiagonal() * z.col(r)), d.sum(), 1e-12);
    }
}

TEST(Rademacher, MeanNearZero) {
    Rng rng(15);
    const Matrix z = rademacher_probes(10000, 1, rng);
    EXPECT_LE(std::abs(z.mean()), 3.0 / std::sqrt(10000.0));
}
