#pragma once

// Goal-oriented A/D criteria with analytic design gradients (space and space-time
// correlations), the randomized A-criterion, the sparsity penalty and the combined
// relaxed OED objective.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "oedkit/bayes.hpp"
#include "oedkit/errors.hpp"
#include "oedkit/kernels.hpp"
#include "oedkit/linalg.hpp"

namespace oedkit::criteria {

using bayes::InverseProblem;
using kernels::CorrelationMode;
using kernels::ObsMatrix;
using kernels::WeightKernel;
using linalg::CholFactor;
using linalg::Index;
using linalg::Matrix;
using linalg::SymMatrix;
using linalg::Vector;

enum class CriterionKind { A, D };

inline std::string to_string(CriterionKind k) { return k == CriterionKind::A ? "A" : "D"; }

struct CriterionSpec {
    CriterionKind kind = CriterionKind::A;
    /// Number of Hutchinson probes; unset means the exact trace.
    std::optional<Index> n_probes;
    std::uint64_t probe_seed = 0;
    CorrelationMode mode = CorrelationMode::Space;
    double alpha = 0.0;
    int penalty_p = 1;
    /// Use the randomized low-rank Hessian inverse with this rank instead of a dense solve.
    std::optional<Index> hessian_rank;

    bool randomized() const { return n_probes.has_value(); }

    void validate() const {
        if (randomized() && kind != CriterionKind::A) {
            throw std::invalid_argument("randomized evaluation is only defined for the A criterion");
        }
        if (randomized() && *n_probes < 1) throw std::invalid_argument("n_probes must be >= 1");
        if (!(alpha >= 0.0)) throw std::invalid_argument("penalty alpha must be >= 0");
        if (penalty_p != 1) throw std::invalid_argument("only the l1 penalty (p = 1) is supported");
        if (hessian_rank && *hessian_rank < 1) throw std::invalid_argument("hessian_rank must be >= 1");
    }
};

/// Posterior quantities shared by a criterion value and its gradient at one W.
struct PosteriorState {
    Matrix Y;         // H^{-1} P*            (Ntheta x Npred)
    Matrix S;         // F H^{-1} P*          (Nobs x Npred)
    SymMatrix gamma;  // P H^{-1} P*          (Npred x Npred)
};

inline PosteriorState posterior_state(const InverseProblem& p, const ObsMatrix& w,
                                      std::optional<Index> hessian_rank = std::nullopt,
                                      std::uint64_t seed = 0) {
    if (!p.forward.identity_mass()) {
        throw std::invalid_argument("criteria are defined for an identity mass matrix only");
    }
    PosteriorState st;
    const Matrix pstar = bayes::goal_adjoint(p);
    if (hessian_rank) {
        linalg::Rng rng(seed);
        st.Y = bayes::lowrank_hessian_inverse(p, w, *hessian_rank, rng).apply(pstar);
    } else {
        st.Y = bayes::weighted_hessian(p, w).factor().solve(pstar);
    }
    st.S = p.forward.stacked() * st.Y;
    st.gamma = SymMatrix(p.goal.matrix * st.Y, 1e-6);
    return st;
}

inline CholFactor factor_prediction(const SymMatrix& gamma) {
    try {
        return CholFactor(gamma);
    } catch (const NotPositiveDefinite& e) {
        throw IndefiniteHessian("goal posterior covariance is not positive definite (pivot " +
                                std::to_string(e.pivot()) + ")");
    }
}

/// Rademacher probes for the randomized criterion, fixed by the spec's seed.
inline Matrix criterion_probes(const CriterionSpec& spec, Index n_pred) {
    if (!spec.randomized()) return Matrix();
    linalg::Rng rng(spec.probe_seed);
    return linalg::rademacher_probes(n_pred, *spec.n_probes, rng);
}

inline double hutchinson_trace(const Matrix& a, const Matrix& probes) {
    double acc = 0.0;
    for (Index r = 0; r < probes.cols(); ++r) acc += probes.col(r).dot(a * probes.col(r));
    return acc / static_cast<double>(probes.cols());
}

/// Criterion value from a prepared posterior state.
inline double criterion_value(const CriterionSpec& spec, const PosteriorState& st, const Matrix& probes) {
    if (spec.kind == CriterionKind::D) return factor_prediction(st.gamma).logdet();
    if (spec.randomized()) return hutchinson_trace(st.gamma.matrix(), probes);
    return st.gamma.matrix().trace();
}

/// Criterion for an explicit weighted precision W.
inline double criterion_at_weights(const InverseProblem& p, const CriterionSpec& spec, const ObsMatrix& w) {
    spec.validate();
    return criterion_value(spec, posterior_state(p, w, spec.hessian_rank, spec.probe_seed),
                           criterion_probes(spec, p.goal.n_pred()));
}

/// Criterion for an explicit weighting matrix Theta.
inline double criterion_at_theta(const InverseProblem& p, const CriterionSpec& spec, const ObsMatrix& theta) {
    return criterion_at_weights(p, spec, kernels::weighted_precision(p.noise, theta));
}

inline ObsMatrix design_weights(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                                const Vector& design) {
    if (design.size() != p.n_sensors()) throw DimensionMismatch("design length differs from Nsens");
    if (spec.mode == CorrelationMode::Space && !p.noise.is_blocked()) {
        throw std::invalid_argument("space correlation mode needs block-diagonal observation noise");
    }
    return kernels::weighted_precision(p.noise, kernels::build_theta(k, design, p.times(), spec.mode));
}

inline double a_criterion(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                          const Vector& design) {
    CriterionSpec s = spec;
    s.kind = CriterionKind::A;
    return criterion_at_weights(p, s, design_weights(p, s, k, design));
}

inline double d_criterion(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                          const Vector& design) {
    CriterionSpec s = spec;
    s.kind = CriterionKind::D;
    s.n_probes.reset();
    return criterion_at_weights(p, s, design_weights(p, s, k, design));
}

namespace detail {

/// grad_i = -sum_m (G_m B_m)_ii with B_m = R_m^{-1} (.) Theta', i.e. -tr(dW/dzeta_i G) / 2 * 2.
inline Vector space_gradient(const InverseProblem& p, const WeightKernel& k, const Vector& design,
                             const Matrix& S, const Matrix& inner) {
    const Index ns = p.n_sensors();
    const Matrix tp = kernels::theta_prime(k, design);
    const auto& prec = p.noise.precision().blocks();
    Vector grad = Vector::Zero(ns);
    for (Index m = 0; m < p.forward.n_times(); ++m) {
        const Matrix sm = S.middleRows(m * ns, ns);
        const Matrix g = sm * inner * sm.transpose();
        const Matrix b = prec.block(static_cast<std::size_t>(m)).matrix().cwiseProduct(tp);
        grad -= 2.0 * g.cwiseProduct(b.transpose()).rowwise().sum();
    }
    return grad;
}

inline Vector spacetime_gradient(const InverseProblem& p, const WeightKernel& k, const Vector& design,
                                 const Matrix& S, const Matrix& inner) {
    const Index ns = p.n_sensors();
    const Index nt = p.forward.n_times();
    const Matrix prec = p.noise.precision().to_dense();
    const Matrix g = S * inner * S.transpose();
    Vector grad = Vector::Zero(ns);
    for (Index i = 0; i < ns; ++i) {
        for (Index m = 0; m < nt; ++m) {
            const Index q = i + m * ns;
            const Vector v = prec.col(q).cwiseProduct(kernels::vartheta(k, design, p.times(), i, m));
            grad(i) -= 2.0 * g.row(q).dot(v);
        }
    }
    return grad;
}

/// Randomized A-gradient: -(1/n_r) sum_r psi_r^T (dW/dzeta_i) psi_r, psi_r = F H^{-1} P* z_r.
inline Vector randomized_gradient(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                                  const Vector& design, const Matrix& S, const Matrix& probes) {
    const Index ns = p.n_sensors();
    const Index nt = p.forward.n_times();
    const Matrix psi = S * probes;
    const double scale = 2.0 / static_cast<double>(probes.cols());
    Vector grad = Vector::Zero(ns);
    if (spec.mode == CorrelationMode::Space) {
        const Matrix tp = kernels::theta_prime(k, design);
        const auto& prec = p.noise.precision().blocks();
        for (Index r = 0; r < psi.cols(); ++r) {
            for (Index m = 0; m < nt; ++m) {
                const Vector pm = psi.col(r).segment(m * ns, ns);
                const Matrix b = prec.block(static_cast<std::size_t>(m)).matrix().cwiseProduct(tp);
                grad -= scale * pm.cwiseProduct(b.transpose() * pm);
            }
        }
        return grad;
    }
    const Matrix prec = p.noise.precision().to_dense();
    for (Index r = 0; r < psi.cols(); ++r) {
        const Vector pr = psi.col(r);
        for (Index i = 0; i < ns; ++i) {
            for (Index m = 0; m < nt; ++m) {
                const Index q = i + m * ns;
                const Vector v = prec.col(q).cwiseProduct(kernels::vartheta(k, design, p.times(), i, m));
                grad(i) -= scale * pr(q) * v.dot(pr);
            }
        }
    }
    return grad;
}

inline Vector gradient_from_state(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                                  const Vector& design, const PosteriorState& st, const Matrix& probes) {
    if (spec.kind == CriterionKind::A && spec.randomized()) {
        return randomized_gradient(p, spec, k, design, st.S, probes);
    }
    const Index np = p.goal.n_pred();
    const Matrix inner = spec.kind == CriterionKind::A ? Matrix(Matrix::Identity(np, np))
                                                       : factor_prediction(st.gamma).inverse();
    return spec.mode == CorrelationMode::Space ? space_gradient(p, k, design, st.S, inner)
                                               : spacetime_gradient(p, k, design, st.S, inner);
}

}  // namespace detail

inline Vector a_gradient(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                         const Vector& design) {
    CriterionSpec s = spec;
    s.kind = CriterionKind::A;
    s.validate();
    const auto st = posterior_state(p, design_weights(p, s, k, design), s.hessian_rank, s.probe_seed);
    return detail::gradient_from_state(p, s, k, design, st, criterion_probes(s, p.goal.n_pred()));
}

inline Vector d_gradient(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                         const Vector& design) {
    CriterionSpec s = spec;
    s.kind = CriterionKind::D;
    s.n_probes.reset();
    s.validate();
    const auto st = posterior_state(p, design_weights(p, s, k, design), s.hessian_rank, s.probe_seed);
    return detail::gradient_from_state(p, s, k, design, st, Matrix());
}

struct PenaltyValue {
    double value = 0.0;
    Vector gradient;
};

/// l1 penalty sum_i omega(zeta_i, zeta_i); weights are nonnegative so no absolute value.
inline PenaltyValue penalty(const WeightKernel& k, const Vector& design) {
    PenaltyValue out;
    out.gradient.resize(design.size());
    for (Index i = 0; i < design.size(); ++i) {
        const auto [w, dw] = kernels::diagonal_weight(k, design(i));
        out.value += w;
        out.gradient(i) = dw;
    }
    return out;
}

struct ObjectiveValue {
    double value = 0.0;      // criterion + alpha * penalty
    double criterion = 0.0;
    double penalty = 0.0;
    Vector gradient;
};

/// The relaxed OED objective T(zeta) = Psi(zeta) + alpha Phi(zeta). Probes are drawn
/// once at construction and reused for every evaluation.
class OedObjective {
public:
    OedObjective(const InverseProblem& p, CriterionSpec spec, WeightKernel kernel)
        : problem_(&p), spec_(std::move(spec)), kernel_(kernel) {
        spec_.validate();
        kernel_.validate();
        probes_ = criterion_probes(spec_, p.goal.n_pred());
    }

    const CriterionSpec& spec() const { return spec_; }
    const WeightKernel& kernel() const { return kernel_; }
    const InverseProblem& problem() const { return *problem_; }
    const Matrix& probes() const { return probes_; }

    ObjectiveValue evaluate(const Vector& design, bool with_gradient = true) const {
        const auto st = posterior_state(*problem_, design_weights(*problem_, spec_, kernel_, design),
                                        spec_.hessian_rank, spec_.probe_seed);
        ObjectiveValue out;
        out.criterion = criterion_value(spec_, st, probes_);
        const auto pen = penalty(kernel_, design);
        out.penalty = pen.value;
        out.value = out.criterion + spec_.alpha * pen.value;
        if (with_gradient) {
            out.gradient = detail::gradient_from_state(*problem_, spec_, kernel_, design, st, probes_) +
                           spec_.alpha * pen.gradient;
        }
        return out;
    }

    double value(const Vector& design) const { return evaluate(design, false).value; }

private:
    const InverseProblem* problem_;
    CriterionSpec spec_;
    WeightKernel kernel_;
    Matrix probes_;
};

inline ObjectiveValue oed_objective(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                                    const Vector& design) {
    return OedObjective(p, spec, k).evaluate(design);
}

struct GradientCheck {
    Vector analytic;
    Vector finite_difference;
    double step = 0.0;
    double max_rel_error = 0.0;
    Index worst_index = -1;
};

/// Errors are |g_i - fd_i| / max(|fd|_inf, tiny): relative to the gradient's scale,
/// so coordinates with near-zero derivative do not inflate the report.
inline GradientCheck compare_gradients(const Vector& analytic, const Vector& fd, double step) {
    GradientCheck out;
    out.analytic = analytic;
    out.finite_difference = fd;
    out.step = step;
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
    for (Index i = 0; i < fd.size(); ++i) {
        const double e = std::abs(analytic(i) - fd(i)) / scale;
        if (e > out.max_rel_error || out.worst_index < 0) {
            out.max_rel_error = e;
            out.worst_index = i;
        }
    }
    return out;
}

inline Vector central_difference(const OedObjective& obj, const Vector& design, double step) {
    Vector fd(design.size());
    for (Index i = 0; i < design.size(); ++i) {
        Vector plus = design, minus = design;
        plus(i) += step;
        minus(i) -= step;
        fd(i) = (obj.value(plus) - obj.value(minus)) / (2.0 * step);
    }
    return fd;
}

inline GradientCheck gradient_check(const OedObjective& obj, const Vector& design, double step = 1e-5) {
    if (!(step > 0.0)) throw std::invalid_argument("gradient_check: step must be > 0");
    return compare_gradients(obj.evaluate(design).gradient, central_difference(obj, design, step), step);
}

inline GradientCheck gradient_check(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                                    const Vector& design, double step = 1e-5) {
    return gradient_check(OedObjective(p, spec, k), design, step);
}

/// Max relative error for each step in the sweep.
inline std::vector<GradientCheck> gradient_step_sweep(const OedObjective& obj, const Vector& design,
                                                      const std::vector<double>& steps = {1e-3, 1e-5, 1e-7}) {
    std::vector<GradientCheck> out;
    const Vector g = obj.evaluate(design).gradient;
    for (double h : steps) out.push_back(compare_gradients(g, central_difference(obj, design, h), h));
    return out;
}

}  // namespace oedkit::criteria
