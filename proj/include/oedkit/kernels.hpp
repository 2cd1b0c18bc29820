#pragma once

// Design weighting kernels, temporal decorrelation, the weighting matrix Theta(zeta),
// the weighted precision W = Gamma_noise^{-1} (.) Theta and their derivatives.
//
// Observation vectors are stacked time-major: entry k (0-based) belongs to sensor
// k % n_sensors at time k / n_sensors.

#include <cmath>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "oedkit/errors.hpp"
#include "oedkit/linalg.hpp"

namespace oedkit::kernels {

using linalg::BlockDiag;
using linalg::Index;
using linalg::Matrix;
using linalg::SymMatrix;
using linalg::Vector;

enum class KernelKind { Sqrt, Exp, Sigmoid };
enum class TemporalKind { None, Gaussian, GaspariCohn };
enum class CorrelationMode { Space, Spacetime };

/// Lower clamp applied to SQRT designs wherever 1/sqrt(zeta) appears.
inline constexpr double kSqrtFloor = 1e-12;

struct WeightKernel {
    KernelKind kind = KernelKind::Sigmoid;
    double a = 1.0;
    TemporalKind temporal = TemporalKind::None;
    double time_length_scale = 1.0;

    void validate() const {
        if (kind != KernelKind::Sqrt && !(a >= 1.0)) {
            throw DomainError("weight kernel scaling a must be >= 1");
        }
        if (temporal != TemporalKind::None && !(time_length_scale > 0.0)) {
            throw DomainError("temporal length scale must be > 0");
        }
    }
};

inline std::string to_string(KernelKind k) {
    switch (k) {
        case KernelKind::Sqrt: return "sqrt";
        case KernelKind::Exp: return "exp";
        case KernelKind::Sigmoid: return "sigmoid";
    }
    return "?";
}

inline std::string to_string(TemporalKind k) {
    switch (k) {
        case TemporalKind::None: return "none";
        case TemporalKind::Gaussian: return "gaussian";
        case TemporalKind::GaspariCohn: return "gaspari-cohn";
    }
    return "?";
}

/// omega(zeta_i, zeta_j) and its partials with respect to each argument.
struct WeightValue {
    double value = 0.0;
    double d_first = 0.0;
    double d_second = 0.0;
};

inline WeightValue eval_weight(const WeightKernel& k, double zi, double zj) {
    switch (k.kind) {
        case KernelKind::Sqrt: {
            if (zi < 0.0 || zj < 0.0) {
                throw DomainError("SQRT kernel requires nonnegative design values");
            }
            const double si = std::sqrt(zi), sj = std::sqrt(zj);
            const double ci = std::sqrt(std::max(zi, kSqrtFloor));
            const double cj = std::sqrt(std::max(zj, kSqrtFloor));
            return {si * sj, 0.5 * sj / ci, 0.5 * si / cj};
        }
        case KernelKind::Exp: {
            const double v = std::exp(-k.a * zi) * std::exp(-k.a * zj);
            return {v, -k.a * v, -k.a * v};
        }
        case KernelKind::Sigmoid: {
            const double v = 1.0 / (1.0 + std::exp(-k.a * 0.5 * (zi + zj)));
            const double d = 0.5 * k.a * v * (1.0 - v);
            return {v, d, d};
        }
    }
    return {};
}

/// omega(zeta, zeta) and its total derivative in zeta.
inline std::pair<double, double> diagonal_weight(const WeightKernel& k, double z) {
    const auto w = eval_weight(k, z, z);
    return {w.value, w.d_first + w.d_second};
}

inline Vector diagonal_weights(const WeightKernel& k, const Vector& design) {
    Vector w(design.size());
    for (Index i = 0; i < design.size(); ++i) w(i) = diagonal_weight(k, design(i)).first;
    return w;
}

/// Fifth-order piecewise-rational Gaspari-Cohn correlation, zero for r >= 2.
inline double gaspari_cohn(double r) {
    r = std::abs(r);
    if (r >= 2.0) return 0.0;
    const double r2 = r * r, r3 = r2 * r, r4 = r3 * r, r5 = r4 * r;
    if (r <= 1.0) {
        return -0.25 * r5 + 0.5 * r4 + 0.625 * r3 - 5.0 / 3.0 * r2 + 1.0;
    }
    return r5 / 12.0 - 0.5 * r4 + 0.625 * r3 + 5.0 / 3.0 * r2 - 5.0 * r + 4.0 - 2.0 / (3.0 * r);
}

inline double temporal_rho(const WeightKernel& k, double tm, double tn) {
    const double d = std::abs(tm - tn);
    switch (k.temporal) {
        case TemporalKind::None: return 1.0;
        case TemporalKind::Gaussian:
            return std::exp(-d / (2.0 * k.time_length_scale * k.time_length_scale));
        case TemporalKind::GaspariCohn: return gaspari_cohn(d / k.time_length_scale);
    }
    return 1.0;
}

/// Symmetric observation-space matrix: either a direct sum of per-time blocks or
/// a dense space-time matrix.
class ObsMatrix {
public:
    ObsMatrix() = default;
    explicit ObsMatrix(BlockDiag blocks) : data_(std::move(blocks)) {}
    explicit ObsMatrix(SymMatrix dense) : data_(std::move(dense)) {}

    bool is_blocked() const { return std::holds_alternative<BlockDiag>(data_); }
    const BlockDiag& blocks() const { return std::get<BlockDiag>(data_); }
    const SymMatrix& dense() const { return std::get<SymMatrix>(data_); }

    Index dim() const { return is_blocked() ? blocks().dim() : dense().dim(); }

    Matrix to_dense() const { return is_blocked() ? blocks().to_dense() : dense().matrix(); }

    Vector apply(const Vector& v) const {
        return is_blocked() ? blocks().apply(v) : Vector(dense().matrix() * v);
    }

private:
    std::variant<BlockDiag, SymMatrix> data_;
};

/// Observation-error covariance in one of three structures, with its precision
/// cached in the same structure.
class SpaceTimeCovariance {
public:
    enum class Structure { Diagonal, SpaceBlocks, Dense };

    SpaceTimeCovariance() = default;

    /// Direct sum of per-time spatial covariances R_m.
    explicit SpaceTimeCovariance(BlockDiag blocks)
        : n_sensors_(blocks.block_dim()), n_times_(static_cast<Index>(blocks.count())) {
        bool diag = true;
        for (const auto& b : blocks.blocks()) {
            const Matrix& m = b.matrix();
            if ((m - Matrix(m.diagonal().asDiagonal())).cwiseAbs().maxCoeff() != 0.0) diag = false;
        }
        structure_ = diag ? Structure::Diagonal : Structure::SpaceBlocks;
        precision_ = ObsMatrix(blocks.inverse());
        covariance_ = ObsMatrix(std::move(blocks));
    }

    /// Dense space-time covariance over n_sensors * n_times time-major entries.
    SpaceTimeCovariance(SymMatrix dense, Index n_sensors)
        : structure_(Structure::Dense), n_sensors_(n_sensors) {
        if (n_sensors <= 0 || dense.dim() % n_sensors != 0) {
            throw DimensionMismatch("SpaceTimeCovariance: dimension is not a multiple of n_sensors");
        }
        n_times_ = dense.dim() / n_sensors;
        precision_ = ObsMatrix(SymMatrix(linalg::CholFactor(dense).inverse()));
        covariance_ = ObsMatrix(std::move(dense));
    }

    static SpaceTimeCovariance diagonal(const Vector& variances, Index n_times) {
        return SpaceTimeCovariance(BlockDiag::repeated(SymMatrix::diagonal(variances),
                                                       static_cast<std::size_t>(n_times)));
    }

    Structure structure() const { return structure_; }
    bool is_blocked() const { return structure_ != Structure::Dense; }
    Index n_sensors() const { return n_sensors_; }
    Index n_times() const { return n_times_; }
    Index dim() const { return n_sensors_ * n_times_; }
    const ObsMatrix& covariance() const { return covariance_; }
    const ObsMatrix& precision() const { return precision_; }

private:
    Structure structure_ = Structure::Diagonal;
    Index n_sensors_ = 0;
    Index n_times_ = 0;
    ObsMatrix covariance_;
    ObsMatrix precision_;
};

inline void check_times(const Vector& design, const std::vector<double>& times) {
    if (design.size() == 0) throw DimensionMismatch("design must be non-empty");
    if (times.empty()) throw DimensionMismatch("at least one observation time is required");
}

/// Weighting matrix Theta(zeta). Space mode: n_t identical blocks
/// [omega(zeta_i, zeta_j)]. Spacetime mode: dense with entries
/// rho(t_tau(k), t_tau(h)) * omega(zeta_s(k), zeta_s(h)).
inline ObsMatrix build_theta(const WeightKernel& k, const Vector& design,
                             const std::vector<double>& times, CorrelationMode mode) {
    check_times(design, times);
    const Index ns = design.size();
    Matrix block(ns, ns);
    for (Index i = 0; i < ns; ++i) {
        for (Index j = i; j < ns; ++j) {
            block(i, j) = block(j, i) = eval_weight(k, design(i), design(j)).value;
        }
    }
    if (mode == CorrelationMode::Space) {
        return ObsMatrix(BlockDiag::repeated(SymMatrix(block), times.size()));
    }
    const Index nt = static_cast<Index>(times.size());
    Matrix theta(ns * nt, ns * nt);
    for (Index m = 0; m < nt; ++m) {
        for (Index n = 0; n < nt; ++n) {
            const double rho = temporal_rho(k, times[m], times[n]);
            theta.block(m * ns, n * ns, ns, ns) = rho * block;
        }
    }
    return ObsMatrix(SymMatrix(theta));
}

/// eta_j: entry i is (1 / (1 + delta_ij)) d omega(zeta_i, zeta_j) / d zeta_j, with
/// the total derivative on the diagonal.
inline Vector eta_vector(const WeightKernel& k, const Vector& design, Index j) {
    if (j < 0 || j >= design.size()) throw std::out_of_range("eta_vector: sensor index");
    Vector eta(design.size());
    for (Index i = 0; i < design.size(); ++i) {
        if (i == j) {
            eta(i) = 0.5 * diagonal_weight(k, design(j)).second;
        } else {
            eta(i) = eval_weight(k, design(i), design(j)).d_second;
        }
    }
    return eta;
}

/// Theta' = [eta_1, ..., eta_Nsens]
inline Matrix theta_prime(const WeightKernel& k, const Vector& design) {
    Matrix tp(design.size(), design.size());
    for (Index j = 0; j < design.size(); ++j) tp.col(j) = eta_vector(k, design, j);
    return tp;
}

/// vartheta_{i,m}: entry k is (1 / (1 + delta_{i,s(k)})) d/d zeta_i of
/// rho(t_m, t_tau(k)) omega(zeta_i, zeta_s(k)).
inline Vector vartheta(const WeightKernel& k, const Vector& design, const std::vector<double>& times,
                       Index i, Index m) {
    check_times(design, times);
    const Index ns = design.size();
    const Index nt = static_cast<Index>(times.size());
    if (i < 0 || i >= ns || m < 0 || m >= nt) throw std::out_of_range("vartheta: index out of range");
    const Vector eta = eta_vector(k, design, i);
    Vector out(ns * nt);
    for (Index n = 0; n < nt; ++n) {
        out.segment(n * ns, ns) = temporal_rho(k, times[m], times[n]) * eta;
    }
    return out;
}

/// W = Gamma_noise^{-1} (.) Theta. Blocked noise with dense Theta yields a dense W.
inline ObsMatrix weighted_precision(const SpaceTimeCovariance& noise, const ObsMatrix& theta) {
    const ObsMatrix& prec = noise.precision();
    if (prec.dim() != theta.dim()) throw DimensionMismatch("weighted_precision: dimension mismatch");
    if (prec.is_blocked() && theta.is_blocked()) {
        if (prec.blocks().count() != theta.blocks().count()) {
            throw DimensionMismatch("weighted_precision: block counts differ");
        }
        std::vector<SymMatrix> out;
        out.reserve(prec.blocks().count());
        for (std::size_t m = 0; m < prec.blocks().count(); ++m) {
            out.push_back(linalg::hadamard(prec.blocks().block(m), theta.blocks().block(m)));
        }
        return ObsMatrix(BlockDiag(std::move(out)));
    }
    if (!prec.is_blocked() && theta.is_blocked()) {
        throw std::invalid_argument(
            "weighted_precision: space-time correlated noise needs a space-time weighting matrix");
    }
    return ObsMatrix(SymMatrix(prec.to_dense().cwiseProduct(theta.to_dense())));
}

/// d W / d zeta_i in the structure of the chosen correlation mode.
inline ObsMatrix weighted_precision_derivative(const SpaceTimeCovariance& noise, const WeightKernel& k,
                                               const Vector& design, const std::vector<double>& times,
                                               Index i, CorrelationMode mode) {
    check_times(design, times);
    const Index ns = design.size();
    const Index nt = static_cast<Index>(times.size());
    if (i < 0 || i >= ns) throw std::out_of_range("weighted_precision_derivative: sensor index");
    if (noise.n_sensors() != ns || noise.n_times() != nt) {
        throw DimensionMismatch("weighted_precision_derivative: noise/design mismatch");
    }
    if (mode == CorrelationMode::Space) {
        if (!noise.is_blocked()) {
            throw std::invalid_argument("space mode requires block-diagonal noise covariance");
        }
        const Vector eta = eta_vector(k, design, i);
        std::vector<SymMatrix> blocks;
        for (Index m = 0; m < nt; ++m) {
            const Vector col = noise.precision().blocks().block(static_cast<std::size_t>(m)).matrix().col(i);
            Matrix d = Matrix::Zero(ns, ns);
            const Vector v = col.cwiseProduct(eta);
            d.row(i) += v.transpose();
            d.col(i) += v;
            blocks.emplace_back(d);
        }
        return ObsMatrix(BlockDiag(std::move(blocks)));
    }
    const Matrix prec = noise.precision().to_dense();
    Matrix d = Matrix::Zero(ns * nt, ns * nt);
    for (Index m = 0; m < nt; ++m) {
        const Index q = i + m * ns;
        const Vector v = prec.col(q).cwiseProduct(vartheta(k, design, times, i, m));
        d.row(q) += v.transpose();
        d.col(q) += v;
    }
    return ObsMatrix(SymMatrix(d));
}

/// Theta (.) (b b^T) for an indicator b over sensors, applied in every time block.
inline ObsMatrix mask_theta(const ObsMatrix& theta, const Vector& indicator) {
    const Index ns = indicator.size();
    const Matrix mask = indicator * indicator.transpose();
    if (theta.is_blocked()) {
        std::vector<SymMatrix> out;
        for (const auto& b : theta.blocks().blocks()) {
            out.emplace_back(b.matrix().cwiseProduct(mask));
        }
        return ObsMatrix(BlockDiag(std::move(out)));
    }
    Matrix d = theta.dense().matrix();
    const Index nt = d.rows() / ns;
    for (Index m = 0; m < nt; ++m) {
        for (Index n = 0; n < nt; ++n) d.block(m * ns, n * ns, ns, ns) = d.block(m * ns, n * ns, ns, ns).cwiseProduct(mask);
    }
    return ObsMatrix(SymMatrix(d));
}

/// Unit weights at the active sensors, no temporal damping: Theta = 1 (x) b b^T.
inline ObsMatrix binary_theta(const Vector& indicator, Index n_times, CorrelationMode mode) {
    const Matrix block = indicator * indicator.transpose();
    if (mode == CorrelationMode::Space) {
        return ObsMatrix(BlockDiag::repeated(SymMatrix(block), static_cast<std::size_t>(n_times)));
    }
    const Index ns = indicator.size();
    Matrix d(ns * n_times, ns * n_times);
    for (Index m = 0; m < n_times; ++m) {
        for (Index n = 0; n < n_times; ++n) d.block(m * ns, n * ns, ns, ns) = block;
    }
    return ObsMatrix(SymMatrix(d));
}

}  // namespace oedkit::kernels
