#pragma once

// Linear Gaussian inverse problem: forward/adjoint maps, the design-weighted
// Hessian, MAP estimate and goal-oriented posterior covariance.

#include <string>
#include <utility>
#include <vector>

#include "oedkit/errors.hpp"
#include "oedkit/kernels.hpp"
#include "oedkit/linalg.hpp"

namespace oedkit::bayes {

using kernels::ObsMatrix;
using kernels::SpaceTimeCovariance;
using linalg::CholFactor;
using linalg::Index;
using linalg::Matrix;
using linalg::SymMatrix;
using linalg::Vector;

/// Per-time forward blocks F_{0,m} (n_sensors x n_params) stacked time-major,
/// with a diagonal mass matrix for the adjoint inner product.
class ForwardModel {
public:
    ForwardModel() = default;

    ForwardModel(const std::vector<Matrix>& blocks, std::vector<double> times, Vector mass = Vector())
        : times_(std::move(times)) {
        if (blocks.empty()) throw DimensionMismatch("ForwardModel: at least one time block required");
        if (blocks.size() != times_.size()) {
            throw DimensionMismatch("ForwardModel: one observation time per block required");
        }
        n_sensors_ = blocks.front().rows();
        n_params_ = blocks.front().cols();
        stacked_.resize(n_sensors_ * static_cast<Index>(blocks.size()), n_params_);
        for (std::size_t m = 0; m < blocks.size(); ++m) {
            if (blocks[m].rows() != n_sensors_ || blocks[m].cols() != n_params_) {
                throw DimensionMismatch("ForwardModel: blocks must share one shape");
            }
            stacked_.middleRows(static_cast<Index>(m) * n_sensors_, n_sensors_) = blocks[m];
        }
        mass_ = mass.size() == 0 ? Vector::Ones(n_params_) : std::move(mass);
        if (mass_.size() != n_params_) throw DimensionMismatch("ForwardModel: mass length");
        if ((mass_.array() <= 0.0).any()) throw DomainError("ForwardModel: mass entries must be > 0");
    }

    Index n_params() const { return n_params_; }
    Index n_sensors() const { return n_sensors_; }
    Index n_times() const { return static_cast<Index>(times_.size()); }
    Index n_obs() const { return stacked_.rows(); }
    const std::vector<double>& times() const { return times_; }
    const Matrix& stacked() const { return stacked_; }
    auto block(Index m) const { return stacked_.middleRows(m * n_sensors_, n_sensors_); }
    const Vector& mass() const { return mass_; }
    bool identity_mass() const { return (mass_.array() == 1.0).all(); }

private:
    std::vector<double> times_;
    Index n_sensors_ = 0;
    Index n_params_ = 0;
    Matrix stacked_;
    Vector mass_;
};

inline Vector forward_apply(const ForwardModel& f, const Vector& theta) {
    if (theta.size() != f.n_params()) throw DimensionMismatch("forward_apply: parameter length");
    return f.stacked() * theta;
}

/// F* w = M^{-1} F^T w
inline Vector adjoint_apply(const ForwardModel& f, const Vector& w) {
    if (w.size() != f.n_obs()) throw DimensionMismatch("adjoint_apply: observation length");
    return (f.stacked().transpose() * w).cwiseQuotient(f.mass());
}

struct Prior {
    Vector mean;
    SymMatrix covariance;
    CholFactor factor;
    SymMatrix precision;

    Prior() = default;
    Prior(Vector m, SymMatrix cov)
        : mean(std::move(m)), covariance(std::move(cov)), factor(covariance),
          precision(factor.inverse()) {
        if (mean.size() != covariance.dim()) throw DimensionMismatch("Prior: mean/covariance size");
    }
};

struct GoalOperator {
    Matrix matrix;  // Npred x Ntheta

    Index n_pred() const { return matrix.rows(); }
};

struct InverseProblem {
    ForwardModel forward;
    Prior prior;
    GoalOperator goal;
    SpaceTimeCovariance noise;

    InverseProblem() = default;
    InverseProblem(ForwardModel f, Prior p, GoalOperator g, SpaceTimeCovariance n)
        : forward(std::move(f)), prior(std::move(p)), goal(std::move(g)), noise(std::move(n)) {
        validate();
    }

    void validate() const {
        if (prior.mean.size() != forward.n_params()) {
            throw DimensionMismatch("InverseProblem: prior dimension differs from forward parameters");
        }
        if (goal.matrix.cols() != forward.n_params() || goal.n_pred() < 1) {
            throw DimensionMismatch("InverseProblem: goal operator shape");
        }
        if (noise.n_sensors() != forward.n_sensors() || noise.n_times() != forward.n_times()) {
            throw DimensionMismatch("InverseProblem: noise covariance shape");
        }
    }

    Index n_sensors() const { return forward.n_sensors(); }
    Index n_obs() const { return forward.n_obs(); }
    const std::vector<double>& times() const { return forward.times(); }
};

/// P* = M^{-1} P^T
inline Matrix goal_adjoint(const InverseProblem& p) {
    return p.goal.matrix.transpose().array().colwise() / p.forward.mass().array();
}

/// F^T W F, blockwise when W is block diagonal.
inline Matrix data_misfit_hessian(const ForwardModel& f, const ObsMatrix& w) {
    if (w.dim() != f.n_obs()) throw DimensionMismatch("weighted Hessian: W dimension");
    if (w.is_blocked()) {
        Matrix out = Matrix::Zero(f.n_params(), f.n_params());
        for (Index m = 0; m < f.n_times(); ++m) {
            const auto fm = f.block(m);
            const Matrix wf = w.blocks().block(static_cast<std::size_t>(m)).matrix() * fm;
            out.noalias() += fm.transpose() * wf;
        }
        return out;
    }
    const Matrix wf = w.dense().matrix() * f.stacked();
    return f.stacked().transpose() * wf;
}

/// H(W) = Gamma_prior^{-1} + F* W F
class WeightedHessian {
public:
    WeightedHessian(const InverseProblem& p, const ObsMatrix& w) {
        if (!p.forward.identity_mass()) {
            throw std::invalid_argument("weighted Hessian assembly requires an identity mass matrix");
        }
        matrix_ = SymMatrix(p.prior.precision.matrix() + data_misfit_hessian(p.forward, w));
    }

    const SymMatrix& matrix() const { return matrix_; }
    Vector apply(const Vector& v) const { return matrix_.matrix() * v; }

    /// Throws IndefiniteHessian when H is not numerically positive definite.
    CholFactor factor() const {
        try {
            return CholFactor(matrix_);
        } catch (const NotPositiveDefinite& e) {
            throw IndefiniteHessian("weighted Hessian is not positive definite (pivot " +
                                    std::to_string(e.pivot()) + ")");
        }
    }

private:
    SymMatrix matrix_;
};

inline WeightedHessian weighted_hessian(const InverseProblem& p, const ObsMatrix& w) {
    return WeightedHessian(p, w);
}

/// theta_MAP = H^{-1}(Gamma_prior^{-1} theta_b + F* W y)
inline Vector map_estimate(const InverseProblem& p, const ObsMatrix& w, const Vector& y) {
    if (y.size() != p.n_obs()) throw DimensionMismatch("map_estimate: data length");
    const CholFactor h = weighted_hessian(p, w).factor();
    const Vector rhs = p.prior.precision.matrix() * p.prior.mean + adjoint_apply(p.forward, w.apply(y));
    return h.solve(rhs);
}

/// Gradient of 1/2|theta - theta_b|^2_{Gamma^{-1}} + 1/2|F theta - y|^2_W.
inline Vector map_objective_gradient(const InverseProblem& p, const ObsMatrix& w, const Vector& y,
                                     const Vector& theta) {
    return p.prior.precision.matrix() * (theta - p.prior.mean) +
           adjoint_apply(p.forward, w.apply(forward_apply(p.forward, theta) - y));
}

/// Gamma_pred^post = P H^{-1} P*
inline SymMatrix goal_posterior_cov(const InverseProblem& p, const ObsMatrix& w) {
    const CholFactor h = weighted_hessian(p, w).factor();
    return SymMatrix(p.goal.matrix * h.solve(goal_adjoint(p)));
}

/// H^{-1} ~= L (I - V diag(lambda / (1 + lambda)) V^T) L^T, where Gamma_prior = L L^T
/// and (lambda, V) are leading eigenpairs of the prior-preconditioned misfit
/// Hessian L^T F^T W F L.
class LowRankHessianInverse {
public:
    LowRankHessianInverse(Matrix lower, Vector eigenvalues, Matrix eigenvectors, bool rank_deficient)
        : lower_(std::move(lower)), values_(std::move(eigenvalues)), vectors_(std::move(eigenvectors)),
          rank_deficient_(rank_deficient) {
        damping_ = values_.array() / (1.0 + values_.array());
    }

    Matrix apply(const Matrix& x) const {
        Matrix t = lower_.transpose() * x;
        t -= vectors_ * (damping_.asDiagonal() * (vectors_.transpose() * t));
        return lower_ * t;
    }

    const Vector& eigenvalues() const { return values_; }
    Index rank() const { return values_.size(); }
    bool rank_deficient() const { return rank_deficient_; }

private:
    Matrix lower_;
    Vector values_;
    Matrix vectors_;
    Vector damping_;
    bool rank_deficient_;
};

inline LowRankHessianInverse lowrank_hessian_inverse(const InverseProblem& p, const ObsMatrix& w,
                                                     Index rank, linalg::Rng& rng,
                                                     std::optional<Index> oversample = std::nullopt) {
    const Index n = p.forward.n_params();
    if (rank < 1 || rank > n) throw std::invalid_argument("lowrank_hessian_inverse: rank must lie in [1, Ntheta]");
    if (!p.forward.identity_mass()) {
        throw std::invalid_argument("lowrank_hessian_inverse requires an identity mass matrix");
    }
    const Matrix lower = p.prior.factor.lower();
    const Matrix& f = p.forward.stacked();
    linalg::SymOperator misfit = [&](const Matrix& x) -> Matrix {
        const Matrix fx = f * (lower * x);
        Matrix wfx(fx.rows(), fx.cols());
        for (Index c = 0; c < fx.cols(); ++c) wfx.col(c) = w.apply(fx.col(c));
        return lower.transpose() * (f.transpose() * wfx);
    };
    auto eig = linalg::two_pass_eigs(misfit, n, rank, rng, oversample);
    return LowRankHessianInverse(lower, std::move(eig.values), std::move(eig.vectors), eig.rank_deficient);
}

}  // namespace oedkit::bayes
