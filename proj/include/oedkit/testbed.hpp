#pragma once

// Advection-diffusion testbed on the unit square: cell-centered finite differences,
// implicit Euler in time, bilinear point observations, Gaspari-Cohn observation
// covariances, a Laplacian-squared prior and synthetic data.

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "oedkit/bayes.hpp"
#include "oedkit/errors.hpp"
#include "oedkit/kernels.hpp"
#include "oedkit/linalg.hpp"

namespace oedkit::testbed {

using bayes::ForwardModel;
using bayes::GoalOperator;
using bayes::Prior;
using kernels::SpaceTimeCovariance;
using linalg::BlockDiag;
using linalg::Index;
using linalg::Matrix;
using linalg::SymMatrix;
using linalg::Vector;

struct Point {
    double x = 0.0;
    double y = 0.0;
};

inline double distance(const Point& a, const Point& b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Rect {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
    bool contains(const Point& p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

struct ModelConfig {
    Index nx = 24;
    Index ny = 24;
    double dt = 0.2;
    double kappa = 0.01;
    /// Peak speed of the stream-function velocity field; 0 disables advection.
    double max_speed = 0.5;
    std::vector<double> obs_times{1.0, 1.2, 1.4, 1.6, 1.8, 2.0};
    double t_pred = 2.2;
    std::vector<Rect> obstacles;

    /// Number of implicit Euler steps to reach t; t must be a multiple of dt.
    Index steps_to(double t) const {
        const double s = t / dt;
        const double r = std::round(s);
        if (t < 0.0 || std::abs(s - r) > 1e-9 * std::max(1.0, s)) {
            throw std::invalid_argument("time " + std::to_string(t) + " is not a nonnegative multiple of dt");
        }
        return static_cast<Index>(r);
    }

    void validate() const {
        if (nx < 2 || ny < 2) throw std::invalid_argument("grid needs at least 2x2 cells");
        if (!(dt > 0.0)) throw std::invalid_argument("dt must be > 0");
        if (!(kappa > 0.0)) throw std::invalid_argument("diffusivity kappa must be > 0");
        if (!(max_speed >= 0.0)) throw std::invalid_argument("max_speed must be >= 0");
        if (obs_times.empty()) throw std::invalid_argument("at least one observation time is required");
        for (std::size_t m = 0; m < obs_times.size(); ++m) {
            steps_to(obs_times[m]);
            if (m > 0 && !(obs_times[m] > obs_times[m - 1])) {
                throw std::invalid_argument("observation times must increase");
            }
        }
        steps_to(t_pred);
        if (!(t_pred > obs_times.back())) {
            throw std::invalid_argument("prediction time must exceed the last observation time");
        }
    }
};

/// Cell-centered grid; cell (i, j) has index i + nx * j.
class Grid {
public:
    Grid(Index nx, Index ny, std::vector<Rect> obstacles = {})
        : nx_(nx), ny_(ny), hx_(1.0 / static_cast<double>(nx)), hy_(1.0 / static_cast<double>(ny)),
          obstacles_(std::move(obstacles)) {
        active_.assign(static_cast<std::size_t>(size()), true);
        for (Index c = 0; c < size(); ++c) {
            for (const auto& r : obstacles_) {
                if (r.contains(center(c))) active_[static_cast<std::size_t>(c)] = false;
            }
        }
    }

    Index nx() const { return nx_; }
    Index ny() const { return ny_; }
    double hx() const { return hx_; }
    double hy() const { return hy_; }
    Index size() const { return nx_ * ny_; }
    Index index(Index i, Index j) const { return i + nx_ * j; }
    Point center(Index c) const {
        return {(static_cast<double>(c % nx_) + 0.5) * hx_, (static_cast<double>(c / nx_) + 0.5) * hy_};
    }
    bool active(Index c) const { return active_[static_cast<std::size_t>(c)]; }
    bool inside_obstacle(const Point& p) const {
        for (const auto& r : obstacles_) {
            if (r.contains(p)) return true;
        }
        return false;
    }
    bool open_face(Index a, Index b) const { return active(a) && active(b); }

private:
    Index nx_, ny_;
    double hx_, hy_;
    std::vector<Rect> obstacles_;
    std::vector<bool> active_;
};

/// -Laplacian with no-flux boundaries (walls and obstacles), positive semidefinite.
inline Matrix neumann_laplacian(const Grid& g) {
    Matrix l = Matrix::Zero(g.size(), g.size());
    auto couple = [&](Index a, Index b, double w) {
        if (!g.open_face(a, b)) return;
        l(a, a) += w;
        l(b, b) += w;
        l(a, b) -= w;
        l(b, a) -= w;
    };
    const double wx = 1.0 / (g.hx() * g.hx()), wy = 1.0 / (g.hy() * g.hy());
    for (Index j = 0; j < g.ny(); ++j) {
        for (Index i = 0; i < g.nx(); ++i) {
            if (i + 1 < g.nx()) couple(g.index(i, j), g.index(i + 1, j), wx);
            if (j + 1 < g.ny()) couple(g.index(i, j), g.index(i, j + 1), wy);
        }
    }
    return l;
}

/// psi(x, y) = speed / pi * sin(pi x) sin(pi y), whose velocity peaks at `speed`.
inline double stream_function(double x, double y, double speed) {
    return speed / std::numbers::pi * std::sin(std::numbers::pi * x) * std::sin(std::numbers::pi * y);
}

/// First-order upwind advection operator A_adv (du/dt = -A_adv u). Face normal
/// velocities are differences of the stream function at cell corners, so the
/// discrete field is divergence free.
inline Matrix upwind_advection(const Grid& g, double speed) {
    Matrix a = Matrix::Zero(g.size(), g.size());
    if (speed == 0.0) return a;
    // Flux from `from` to `to` with face-normal velocity u (positive pointing from -> to).
    auto face = [&](Index from, Index to, double u, double face_len, double area) {
        if (!g.open_face(from, to)) return;
        const double q = u * face_len / area;
        if (q > 0.0) {
            a(from, from) += q;
            a(to, from) -= q;
        } else {
            a(to, to) -= q;
            a(from, to) += q;
        }
    };
    const double hx = g.hx(), hy = g.hy(), area = hx * hy;
    for (Index j = 0; j < g.ny(); ++j) {
        for (Index i = 0; i < g.nx(); ++i) {
            const double x1 = (static_cast<double>(i) + 1.0) * hx, y1 = (static_cast<double>(j) + 1.0) * hy;
            const double x0 = x1 - hx, y0 = y1 - hy;
            if (i + 1 < g.nx()) {
                const double u = (stream_function(x1, y1, speed) - stream_function(x1, y0, speed)) / hy;
                face(g.index(i, j), g.index(i + 1, j), u, hy, area);
            }
            if (j + 1 < g.ny()) {
                const double v = -(stream_function(x1, y1, speed) - stream_function(x0, y1, speed)) / hx;
                face(g.index(i, j), g.index(i, j + 1), v, hx, area);
            }
        }
    }
    return a;
}

/// One implicit Euler step: (I + dt (kappa L + A_adv))^{-1}.
inline Matrix step_matrix(const ModelConfig& cfg, const Grid& g) {
    if (!(cfg.kappa > 0.0)) throw std::invalid_argument("diffusivity kappa must be > 0");
    const Index n = g.size();
    const Matrix sys = Matrix::Identity(n, n) + cfg.dt * (cfg.kappa * neumann_laplacian(g) + upwind_advection(g, cfg.max_speed));
    Eigen::PartialPivLU<Matrix> lu(sys);
    return lu.inverse();
}

/// Rows of a bilinear interpolation operator from cell centers to points; each row sums to 1.
inline Matrix interpolation_matrix(const Grid& g, const std::vector<Point>& pts) {
    Matrix h = Matrix::Zero(static_cast<Index>(pts.size()), g.size());
    for (std::size_t r = 0; r < pts.size(); ++r) {
        const auto& p = pts[r];
        if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0) {
            throw DomainError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") lies outside the domain");
        }
        const double fx = std::clamp(p.x / g.hx() - 0.5, 0.0, static_cast<double>(g.nx() - 1));
        const double fy = std::clamp(p.y / g.hy() - 0.5, 0.0, static_cast<double>(g.ny() - 1));
        const Index i0 = std::min(static_cast<Index>(fx), g.nx() - 2);
        const Index j0 = std::min(static_cast<Index>(fy), g.ny() - 2);
        const double tx = fx - static_cast<double>(i0), ty = fy - static_cast<double>(j0);
        const auto row = static_cast<Index>(r);
        h(row, g.index(i0, j0)) += (1 - tx) * (1 - ty);
        h(row, g.index(i0 + 1, j0)) += tx * (1 - ty);
        h(row, g.index(i0, j0 + 1)) += (1 - tx) * ty;
        h(row, g.index(i0 + 1, j0 + 1)) += tx * ty;
    }
    return h;
}

/// Restriction onto grid cells (one unit entry per row).
inline Matrix cell_restriction(const Grid& g, const std::vector<Index>& cells) {
    Matrix c = Matrix::Zero(static_cast<Index>(cells.size()), g.size());
    for (std::size_t r = 0; r < cells.size(); ++r) c(static_cast<Index>(r), cells[r]) = 1.0;
    return c;
}

/// rows * S^steps, propagating the (few) rows rather than powering S.
inline Matrix propagate_rows(const Matrix& rows, const Matrix& step, Index steps) {
    Matrix out = rows;
    for (Index s = 0; s < steps; ++s) out = out * step;
    return out;
}

inline double radical_inverse(std::uint64_t i, std::uint64_t base) {
    double f = 1.0, r = 0.0;
    while (i > 0) {
        f /= static_cast<double>(base);
        r += f * static_cast<double>(i % base);
        i /= base;
    }
    return r;
}

/// `count` Halton(2,3) points inside [margin, 1 - margin]^2, skipping obstacles.
inline std::vector<Point> halton_sensors(Index count, const Grid& g, double margin = 0.05) {
    std::vector<Point> out;
    for (std::uint64_t i = 1; static_cast<Index>(out.size()) < count; ++i) {
        if (i > 1000000) throw std::invalid_argument("could not place sensors outside the obstacles");
        const Point p{margin + (1 - 2 * margin) * radical_inverse(i, 2), margin + (1 - 2 * margin) * radical_inverse(i, 3)};
        if (!g.inside_obstacle(p)) out.push_back(p);
    }
    return out;
}

/// Cells whose centers lie in `region`.
inline std::vector<Index> cells_in(const Grid& g, const Rect& region) {
    std::vector<Index> out;
    for (Index c = 0; c < g.size(); ++c) {
        if (g.active(c) && region.contains(g.center(c))) out.push_back(c);
    }
    return out;
}

/// The assembled testbed operators.
struct Model {
    ModelConfig config;
    Grid grid{2, 2};
    Matrix step;
    std::vector<Point> sensors;
    Matrix observation;  // H, Nsens x Ntheta
    ForwardModel forward;
};

/// F_{0,m} = H S^{n_m}, identity mass matrix.
inline Model build_model(const ModelConfig& cfg, std::vector<Point> sensors) {
    cfg.validate();
    Model m{cfg, Grid(cfg.nx, cfg.ny, cfg.obstacles), Matrix(), std::move(sensors), Matrix(), ForwardModel()};
    if (m.sensors.empty()) throw std::invalid_argument("at least one sensor is required");
    for (const auto& p : m.sensors) {
        if (m.grid.inside_obstacle(p)) throw DomainError("sensor placed inside an obstacle");
    }
    m.step = step_matrix(cfg, m.grid);
    m.observation = interpolation_matrix(m.grid, m.sensors);
    std::vector<Matrix> blocks;
    Matrix rows = m.observation;
    Index done = 0;
    for (double t : cfg.obs_times) {
        const Index n = cfg.steps_to(t);
        rows = propagate_rows(rows, m.step, n - done);
        done = n;
        blocks.push_back(rows);
    }
    m.forward = ForwardModel(blocks, cfg.obs_times);
    return m;
}

/// P = C_p S^{n_p}. A prediction time of 0 gives P = C_p.
inline GoalOperator build_goal(const Model& m, const Matrix& restriction, double t_pred) {
    if (t_pred < 0.0) throw std::invalid_argument("prediction time must be >= 0");
    if (restriction.cols() != m.grid.size() || restriction.rows() < 1) {
        throw DimensionMismatch("goal restriction shape");
    }
    return {propagate_rows(restriction, m.step, m.config.steps_to(t_pred))};
}

inline GoalOperator build_goal(const Model& m, const std::vector<Index>& cells) {
    return build_goal(m, cell_restriction(m.grid, cells), m.config.t_pred);
}

/// Spatial Gaspari-Cohn covariance R_ij = sigma^2 GC(|x_i - x_j| / ell); ell = 0 gives sigma^2 I.
inline SymMatrix gc_spatial_covariance(const std::vector<Point>& sensors, double ell, double sigma) {
    if (!(ell >= 0.0)) throw std::invalid_argument("correlation length scale must be >= 0");
    if (!(sigma > 0.0)) throw std::invalid_argument("observation standard deviation must be > 0");
    const auto n = static_cast<Index>(sensors.size());
    Matrix r = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            const double rho = ell == 0.0 ? (i == j ? 1.0 : 0.0)
                                          : kernels::gaspari_cohn(distance(sensors[static_cast<std::size_t>(i)],
                                                                           sensors[static_cast<std::size_t>(j)]) / ell);
            r(i, j) = sigma * sigma * rho;
        }
    }
    SymMatrix out(r);
    try {
        linalg::CholFactor check(out);
    } catch (const NotPositiveDefinite& e) {
        throw NotPositiveDefinite(e.pivot(), "Gaspari-Cohn covariance is not positive definite");
    }
    return out;
}

/// Identical spatial blocks at every observation time.
inline SpaceTimeCovariance build_gc_covariance(const std::vector<Point>& sensors, double ell, double sigma,
                                               Index n_times) {
    return SpaceTimeCovariance(BlockDiag::repeated(gc_spatial_covariance(sensors, ell, sigma),
                                                   static_cast<std::size_t>(n_times)));
}

/// Dense space-time covariance: temporal GC(|t_m - t_n| / time_ell) times the spatial block.
inline SpaceTimeCovariance build_spacetime_covariance(const std::vector<Point>& sensors, double ell, double sigma,
                                                      const std::vector<double>& times, double time_ell) {
    if (!(time_ell > 0.0)) throw std::invalid_argument("temporal correlation length must be > 0");
    const Matrix r = gc_spatial_covariance(sensors, ell, sigma).matrix();
    const Index ns = r.rows();
    const auto nt = static_cast<Index>(times.size());
    Matrix c(ns * nt, ns * nt);
    for (Index m = 0; m < nt; ++m) {
        for (Index n = 0; n < nt; ++n) {
            c.block(m * ns, n * ns, ns, ns) =
                kernels::gaspari_cohn(std::abs(times[static_cast<std::size_t>(m)] - times[static_cast<std::size_t>(n)]) / time_ell) * r;
        }
    }
    return SpaceTimeCovariance(SymMatrix(c), ns);
}

struct PriorConfig {
    double delta = 25.0;
    double max_variance = 1.0;
};

/// Gamma_prior = gamma (delta I + L)^{-2}, gamma normalizing the largest variance.
inline Prior build_prior(const Grid& g, const PriorConfig& cfg = {}) {
    if (!(cfg.delta > 0.0) || !(cfg.max_variance > 0.0)) {
        throw std::invalid_argument("prior delta and max_variance must be > 0");
    }
    const Index n = g.size();
    const Matrix a = cfg.delta * Matrix::Identity(n, n) + neumann_laplacian(g);
    const Matrix ainv = Eigen::PartialPivLU<Matrix>(a).inverse();
    Matrix cov = ainv * ainv.transpose();
    cov *= cfg.max_variance / cov.diagonal().maxCoeff();
    return Prior(Vector::Zero(n), SymMatrix(cov, 1e-6));
}

/// Sum of Gaussian bumps sampled at cell centers.
struct Bump {
    Point center;
    double amplitude = 1.0;
    double width = 0.08;
};

inline Vector bump_field(const Grid& g, const std::vector<Bump>& bumps) {
    Vector v = Vector::Zero(g.size());
    for (Index c = 0; c < g.size(); ++c) {
        if (!g.active(c)) continue;
        for (const auto& b : bumps) {
            const double d = distance(g.center(c), b.center);
            v(c) += b.amplitude * std::exp(-0.5 * d * d / (b.width * b.width));
        }
    }
    return v;
}

/// 0.5% of the largest noiseless observation magnitude.
inline double default_noise_sigma(const ForwardModel& f, const Vector& theta_true, double level = 0.005) {
    return level * bayes::forward_apply(f, theta_true).cwiseAbs().maxCoeff();
}

/// y = F theta_true + delta, delta ~ N(0, Gamma_noise); `noiseless` skips delta.
inline Vector synth_data(const ForwardModel& f, const SpaceTimeCovariance& noise, const Vector& theta_true,
                         linalg::Rng& rng, bool noiseless = false) {
    Vector y = bayes::forward_apply(f, theta_true);
    if (noiseless) return y;
    const linalg::CholFactor c(SymMatrix(noise.covariance().to_dense()));
    y += c.multiply_lower(linalg::gaussian_matrix(y.size(), 1, rng));
    return y;
}

/// RAE is undefined because every true value is zero.
class UndefinedRelativeError : public DomainError {
public:
    explicit UndefinedRelativeError(double rmse)
        : DomainError("relative absolute error undefined: every true value is zero"), rmse_(rmse) {}
    double rmse() const { return rmse_; }

private:
    double rmse_;
};

struct ErrorMetrics {
    Vector rae;                  // NaN at masked entries
    std::vector<Index> masked;   // indices with zero truth
    double rmse = 0.0;
};

inline ErrorMetrics error_metrics(const Vector& est, const Vector& truth) {
    if (est.size() != truth.size() || est.size() == 0) throw DimensionMismatch("error_metrics: length mismatch");
    ErrorMetrics out;
    out.rmse = std::sqrt((est - truth).squaredNorm() / static_cast<double>(est.size()));
    out.rae.resize(est.size());
    for (Index i = 0; i < est.size(); ++i) {
        if (truth(i) == 0.0) {
            out.rae(i) = std::numeric_limits<double>::quiet_NaN();
            out.masked.push_back(i);
        } else {
            out.rae(i) = std::abs((est(i) - truth(i)) / truth(i));
        }
    }
    if (static_cast<Index>(out.masked.size()) == est.size()) throw UndefinedRelativeError(out.rmse);
    return out;
}

}  // namespace oedkit::testbed
