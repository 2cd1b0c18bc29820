#pragma once

// Limited-memory BFGS with gradient projection onto box bounds and an Armijo
// backtracking search along the projected path.

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "oedkit/errors.hpp"
#include "oedkit/linalg.hpp"

namespace oedkit::optimize {

using linalg::Index;
using linalg::Vector;

struct Box {
    Vector lower;
    Vector upper;

    static Box unbounded(Index n) {
        const double inf = std::numeric_limits<double>::infinity();
        return {Vector::Constant(n, -inf), Vector::Constant(n, inf)};
    }

    Vector project(const Vector& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
};

struct LbfgsOptions {
    double pgtol = 1e-5;
    int max_iters = 200;
    int memory = 10;
    double armijo = 1e-4;
    int max_backtracks = 50;
};

struct LbfgsResult {
    Vector x;
    double f = 0.0;
    Vector g;
    std::vector<double> history;  // objective at every accepted iterate, starting with x0
    int iterations = 0;
    int evaluations = 0;
    double pg_norm = 0.0;
    bool converged = false;
    std::string message;
};

/// Every trial step from the last valid iterate hit an indefinite weighted Hessian.
class OptimizationFailed : public std::runtime_error {
public:
    OptimizationFailed(const std::string& what, Vector last)
        : std::runtime_error(what), last_(std::move(last)) {}
    const Vector& last_iterate() const { return last_; }

private:
    Vector last_;
};

/// Objective callback: returns f(x) and writes the gradient into g. May throw
/// IndefiniteHessian, which the line search treats as an infeasible trial point.
using Objective = std::function<double(const Vector& x, Vector& g)>;

/// inf-norm of x - P(x - g)
inline double projected_gradient_norm(const Vector& x, const Vector& g, const Box& box) {
    return (x - box.project(x - g)).cwiseAbs().maxCoeff();
}

inline LbfgsResult minimize_lbfgs(const Objective& fn, const Vector& x0, const Box& box,
                                  const LbfgsOptions& opt = {}) {
    if (!(opt.pgtol > 0.0)) throw std::invalid_argument("pgtol must be > 0");
    if (opt.memory < 1) throw std::invalid_argument("L-BFGS memory must be >= 1");
    const Index n = x0.size();
    if (box.lower.size() != n || box.upper.size() != n) throw DimensionMismatch("bounds length");

    LbfgsResult res;
    res.x = box.project(x0);
    res.g.resize(n);
    res.f = fn(res.x, res.g);
    res.evaluations = 1;
    res.history.push_back(res.f);

    std::deque<Vector> s_hist, y_hist;
    std::deque<double> rho_hist;

    for (;;) {
        res.pg_norm = projected_gradient_norm(res.x, res.g, box);
        if (res.pg_norm <= opt.pgtol) {
            res.converged = true;
            res.message = "projected gradient below tolerance";
            return res;
        }
        if (res.iterations >= opt.max_iters) {
            res.message = "maximum iterations reached";
            return res;
        }

        // Variables held at a bound by the gradient stay fixed this iteration.
        std::vector<bool> active(static_cast<std::size_t>(n), false);
        for (Index i = 0; i < n; ++i) {
            const double eps = 1e-12 * std::max(1.0, std::abs(res.x(i)));
            active[static_cast<std::size_t>(i)] = (res.x(i) <= box.lower(i) + eps && res.g(i) > 0.0) ||
                                                  (res.x(i) >= box.upper(i) - eps && res.g(i) < 0.0);
        }
        auto mask = [&](Vector v) {
            for (Index i = 0; i < n; ++i) {
                if (active[static_cast<std::size_t>(i)]) v(i) = 0.0;
            }
            return v;
        };

        bool steepest = s_hist.empty();
        Vector d;
        if (!steepest) {
            Vector q = mask(res.g);
            std::vector<double> alpha(s_hist.size());
            for (std::size_t k = s_hist.size(); k-- > 0;) {
                alpha[k] = rho_hist[k] * s_hist[k].dot(q);
                q -= alpha[k] * y_hist[k];
            }
            const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
            q *= gamma;
            for (std::size_t k = 0; k < s_hist.size(); ++k) {
                const double beta = rho_hist[k] * y_hist[k].dot(q);
                q += (alpha[k] - beta) * s_hist[k];
            }
            d = mask(-q);
            if (!(d.dot(res.g) < 0.0)) steepest = true;
        }
        double step = 1.0;
        if (steepest) {
            d = mask(-res.g);
            step = std::min(1.0, 1.0 / d.cwiseAbs().maxCoeff());
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        Vector x_new, g_new(n);
        double f_new = 0.0;
        bool accepted = false;
        int indefinite = 0, trials = 0;
        for (int bt = 0; bt < opt.max_backtracks; ++bt, step *= 0.5) {
            x_new = box.project(res.x + step * d);
            const Vector dx = x_new - res.x;
            if (dx.cwiseAbs().maxCoeff() == 0.0) break;
            ++trials;
            try {
                f_new = fn(x_new, g_new);
            } catch (const IndefiniteHessian&) {
                ++res.evaluations;
                ++indefinite;
                continue;
            }
            ++res.evaluations;
            if (std::isfinite(f_new) && f_new <= res.f + opt.armijo * res.g.dot(dx)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (!steepest) {
                // Stale curvature pairs: retry from a steepest-descent step.
                s_hist.clear();
                y_hist.clear();
                rho_hist.clear();
                continue;
            }
            if (trials > 0 && indefinite == trials) {
                throw OptimizationFailed("every trial step produced an indefinite weighted Hessian", res.x);
            }
            res.message = "line search failed to decrease the objective";
            return res;
        }

        const Vector s = x_new - res.x;
        const Vector y = g_new - res.g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            s_hist.push_back(s);
            y_hist.push_back(y);
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > opt.memory) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        res.x = x_new;
        res.f = f_new;
        res.g = g_new;
        res.history.push_back(f_new);
        ++res.iterations;
    }
}

}  // namespace oedkit::optimize
