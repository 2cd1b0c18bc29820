#pragma once

// Dense symmetric-matrix substrate: symmetric storage, Cholesky with log-determinant,
// Hadamard products, block-diagonal algebra, randomized two-pass eigendecomposition
// and Rademacher probes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "oedkit/errors.hpp"

namespace oedkit::linalg {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// The one generator type accepted by every randomized operation.
using Rng = std::mt19937_64;

inline double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

/// Real symmetric matrix. Inputs are symmetrized as (A + A^T)/2; inputs whose
/// asymmetry exceeds `tol` relative to their largest entry are rejected.
class SymMatrix {
public:
    static constexpr double kAsymmetryTol = 1e-8;

    SymMatrix() = default;

    explicit SymMatrix(const Matrix& a, double tol = kAsymmetryTol) {
        if (a.rows() != a.cols()) {
            throw DimensionMismatch("SymMatrix: matrix is " + std::to_string(a.rows()) + "x" +
                                    std::to_string(a.cols()) + ", expected square");
        }
        const double scale = max_abs(a);
        const double asym = a.size() == 0 ? 0.0 : (a - a.transpose()).cwiseAbs().maxCoeff();
        if (asym > tol * std::max(scale, 1e-300) && asym > 0.0) {
            throw std::invalid_argument("SymMatrix: asymmetry " + std::to_string(asym) +
                                        " exceeds tolerance relative to scale " +
                                        std::to_string(scale));
        }
        data_ = 0.5 * (a + a.transpose());
    }

    static SymMatrix identity(Index n) { return SymMatrix(Matrix::Identity(n, n)); }
    static SymMatrix zero(Index n) { return SymMatrix(Matrix::Zero(n, n)); }
    static SymMatrix diagonal(const Vector& d) { return SymMatrix(Matrix(d.asDiagonal())); }

    Index dim() const { return data_.rows(); }
    const Matrix& matrix() const { return data_; }
    double operator()(Index i, Index j) const { return data_(i, j); }

    SymMatrix operator+(const SymMatrix& o) const {
        check_same(o, "operator+");
        return SymMatrix(data_ + o.data_);
    }
    SymMatrix operator-(const SymMatrix& o) const {
        check_same(o, "operator-");
        return SymMatrix(data_ - o.data_);
    }
    SymMatrix operator*(double s) const { return SymMatrix(data_ * s); }

private:
    void check_same(const SymMatrix& o, const char* op) const {
        if (o.dim() != dim()) {
            throw DimensionMismatch(std::string("SymMatrix::") + op + ": dimension mismatch");
        }
    }

    Matrix data_;
};

inline SymMatrix operator*(double s, const SymMatrix& a) { return a * s; }

/// Entrywise (Schur) product.
inline SymMatrix hadamard(const SymMatrix& a, const SymMatrix& b) {
    if (a.dim() != b.dim()) {
        throw DimensionMismatch("hadamard: dimensions " + std::to_string(a.dim()) + " and " +
                                std::to_string(b.dim()) + " differ");
    }
    return SymMatrix(a.matrix().cwiseProduct(b.matrix()));
}

/// Lower Cholesky factor A = L L^T with cached log-determinant.
class CholFactor {
public:
    CholFactor() = default;

    explicit CholFactor(const SymMatrix& a) : llt_(a.matrix()) {
        if (llt_.info() != Eigen::Success || !pivots_positive()) {
            throw NotPositiveDefinite(locate_failing_pivot(a.matrix()));
        }
        logdet_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    }

    Index dim() const { return llt_.matrixLLT().rows(); }
    double logdet() const { return logdet_; }
    Matrix lower() const { return llt_.matrixL(); }

    template <typename Rhs>
    Matrix solve(const Eigen::MatrixBase<Rhs>& b) const {
        return llt_.solve(b);
    }
    Vector solve(const Vector& b) const { return llt_.solve(b); }

    /// L^{-1} b
    Matrix solve_lower(const Matrix& b) const { return llt_.matrixL().solve(b); }
    /// L b
    Matrix multiply_lower(const Matrix& b) const { return llt_.matrixL() * b; }

    Matrix inverse() const { return llt_.solve(Matrix::Identity(dim(), dim())); }

private:
    bool pivots_positive() const {
        const auto d = llt_.matrixLLT().diagonal();
        for (Index i = 0; i < d.size(); ++i) {
            if (!(d(i) > 0.0) || !std::isfinite(d(i))) return false;
        }
        return true;
    }

    static std::size_t locate_failing_pivot(const Matrix& a) {
        const Index n = a.rows();
        Matrix l = Matrix::Zero(n, n);
        for (Index j = 0; j < n; ++j) {
            double d = a(j, j) - l.row(j).head(j).squaredNorm();
            if (!(d > 0.0) || !std::isfinite(d)) return static_cast<std::size_t>(j);
            l(j, j) = std::sqrt(d);
            for (Index i = j + 1; i < n; ++i) {
                l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
            }
        }
        return static_cast<std::size_t>(n == 0 ? 0 : n - 1);
    }

    Eigen::LLT<Matrix> llt_;
    double logdet_ = 0.0;
};

inline CholFactor spd_factorize(const SymMatrix& a) { return CholFactor(a); }

/// Direct sum of equally sized symmetric blocks.
class BlockDiag {
public:
    BlockDiag() = default;

    explicit BlockDiag(std::vector<SymMatrix> blocks) : blocks_(std::move(blocks)) {
        for (const auto& b : blocks_) {
            if (b.dim() != block_dim()) {
                throw DimensionMismatch("BlockDiag: blocks must share one dimension");
            }
        }
    }

    /// I_count (x) block
    static BlockDiag repeated(const SymMatrix& block, std::size_t count) {
        return BlockDiag(std::vector<SymMatrix>(count, block));
    }

    std::size_t count() const { return blocks_.size(); }
    Index block_dim() const { return blocks_.empty() ? 0 : blocks_.front().dim(); }
    Index dim() const { return block_dim() * static_cast<Index>(count()); }
    const SymMatrix& block(std::size_t m) const { return blocks_.at(m); }
    const std::vector<SymMatrix>& blocks() const { return blocks_; }

    Vector apply(const Vector& v) const {
        if (v.size() != dim()) throw DimensionMismatch("BlockDiag::apply: length mismatch");
        Vector out(dim());
        const Index b = block_dim();
        for (std::size_t m = 0; m < count(); ++m) {
            const Index off = static_cast<Index>(m) * b;
            out.segment(off, b) = blocks_[m].matrix() * v.segment(off, b);
        }
        return out;
    }

    BlockDiag inverse() const {
        std::vector<SymMatrix> inv;
        inv.reserve(count());
        for (std::size_t m = 0; m < count(); ++m) {
            try {
                inv.emplace_back(CholFactor(blocks_[m]).inverse());
            } catch (const NotPositiveDefinite& e) {
                throw SingularBlock(m, e.pivot());
            }
        }
        return BlockDiag(std::move(inv));
    }

    Matrix to_dense() const {
        Matrix out = Matrix::Zero(dim(), dim());
        const Index b = block_dim();
        for (std::size_t m = 0; m < count(); ++m) {
            const Index off = static_cast<Index>(m) * b;
            out.block(off, off, b, b) = blocks_[m].matrix();
        }
        return out;
    }

private:
    std::vector<SymMatrix> blocks_;
};

/// Symmetric linear operator acting on the columns of its argument.
using SymOperator = std::function<Matrix(const Matrix&)>;

struct EigResult {
    Vector values;        // non-increasing
    Matrix vectors;       // n x (number of pairs), orthonormal columns
    bool rank_deficient = false;
};

inline Matrix gaussian_matrix(Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(rows, cols);
    for (Index j = 0; j < cols; ++j) {
        for (Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
    }
    return out;
}

/// Randomized two-pass Hermitian eigensolver: Y = A Omega, Q = orth(Y),
/// T = Q^T A Q, leading `rank` eigenpairs of T lifted by Q. `oversample`
/// defaults to min(10, n - rank).
inline EigResult two_pass_eigs(const SymOperator& apply, Index n, Index rank, Rng& rng,
                               std::optional<Index> oversample = std::nullopt) {
    if (rank < 1 || rank > n) {
        throw std::invalid_argument("two_pass_eigs: rank must lie in [1, n]");
    }
    const Index p = oversample.value_or(std::min<Index>(10, n - rank));
    if (p < 0 || rank + p > n) {
        throw std::invalid_argument("two_pass_eigs: rank + oversample exceeds n");
    }
    const Index l = rank + p;

    const Matrix omega = gaussian_matrix(n, l, rng);
    const Matrix y = apply(omega);

    Eigen::ColPivHouseholderQR<Matrix> qr(y);
    qr.setThreshold(1e-12);
    const Index numeric_rank = qr.rank();
    Matrix q = qr.householderQ() * Matrix::Identity(n, l);
    q.conservativeResize(Eigen::NoChange, numeric_rank);

    EigResult out;
    if (numeric_rank == 0) {
        out.values = Vector();
        out.vectors = Matrix(n, 0);
        out.rank_deficient = true;
        return out;
    }

    const Matrix aq = apply(q);
    const Matrix t = 0.5 * (q.transpose() * aq + (q.transpose() * aq).transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(t);

    const Index keep = std::min(rank, numeric_rank);
    out.values.resize(keep);
    out.vectors.resize(n, keep);
    for (Index k = 0; k < keep; ++k) {
        const Index src = numeric_rank - 1 - k;
        out.values(k) = eig.eigenvalues()(src);
        out.vectors.col(k) = q * eig.eigenvectors().col(src);
    }
    out.rank_deficient = keep < rank;
    return out;
}

/// n x count matrix of independent +/-1 entries.
inline Matrix rademacher_probes(Index n, Index count, Rng& rng) {
    if (count < 1) throw std::invalid_argument("rademacher_probes: count must be >= 1");
    Matrix z(n, count);
    for (Index j = 0; j < count; ++j) {
        for (Index i = 0; i < n; ++i) z(i, j) = (rng() >> 63) ? 1.0 : -1.0;
    }
    return z;
}

}  // namespace oedkit::linalg
