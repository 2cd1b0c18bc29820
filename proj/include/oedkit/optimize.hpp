#pragma once

// Relaxed OED solves, thresholding to a sensor budget, brute-force enumeration,
// random-design baselines and sigmoid continuation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "oedkit/bayes.hpp"
#include "oedkit/criteria.hpp"
#include "oedkit/kernels.hpp"
#include "oedkit/lbfgs.hpp"

namespace oedkit::optimize {

using bayes::InverseProblem;
using criteria::CriterionSpec;
using kernels::KernelKind;
using kernels::ObsMatrix;
using kernels::WeightKernel;
using linalg::Matrix;

/// Number of combinations exceeded the configured enumeration cap.
class EnumerationCapExceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Worker count: OEDKIT_THREADS if set and positive, else the hardware concurrency.
inline unsigned thread_count() {
    if (const char* env = std::getenv("OEDKIT_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n). Each index writes its own slot, so results do not
/// depend on the schedule. The first exception is rethrown.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto worker = [&] {
        for (std::size_t i; !failed && (i = next++) < n;) {
            try {
                body(i);
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

struct OptimizerConfig {
    double pgtol = 1e-5;
    int max_iters = 200;
    int memory = 10;
    std::uint64_t seed = 0;
    std::optional<Vector> initial_design;

    void validate() const {
        if (!(pgtol > 0.0)) throw std::invalid_argument("pgtol must be > 0");
        if (max_iters < 0) throw std::invalid_argument("max_iters must be >= 0");
        if (memory < 1) throw std::invalid_argument("memory must be >= 1");
    }
};

/// Design value whose diagonal weight omega(zeta, zeta) equals 0.5.
inline double half_weight_design(const WeightKernel& k) {
    switch (k.kind) {
        case KernelKind::Sqrt: return 0.5;
        case KernelKind::Sigmoid: return 0.0;
        case KernelKind::Exp: return std::log(2.0) / (2.0 * k.a);
    }
    return 0.0;
}

/// SQRT designs live in [floor, 1]; the other kernels are unconstrained.
inline Box design_bounds(const WeightKernel& k, Index n) {
    if (k.kind == KernelKind::Sqrt) {
        return {Vector::Constant(n, kernels::kSqrtFloor), Vector::Ones(n)};
    }
    return Box::unbounded(n);
}

/// Indicator of the k largest weights; ties go to the lowest index.
inline Vector threshold_to_budget(const Vector& weights, Index k) {
    const Index n = weights.size();
    if (k < 1 || k > n) throw std::invalid_argument("budget must lie in [1, Nsens]");
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return weights(a) > weights(b); });
    Vector b = Vector::Zero(n);
    for (Index i = 0; i < k; ++i) b(order[static_cast<std::size_t>(i)]) = 1.0;
    return b;
}

inline Vector threshold_to_budget(const WeightKernel& kernel, const Vector& design, Index k) {
    return threshold_to_budget(kernels::diagonal_weights(kernel, design), k);
}

inline std::vector<Index> active_indices(const Vector& indicator) {
    std::vector<Index> out;
    for (Index i = 0; i < indicator.size(); ++i) {
        if (indicator(i) != 0.0) out.push_back(i);
    }
    return out;
}

inline Vector indicator_from(const std::vector<Index>& idx, Index n) {
    Vector b = Vector::Zero(n);
    for (Index i : idx) b(i) = 1.0;
    return b;
}

/// Criterion with unit weights at the active sensors (and no temporal damping).
inline double binary_criterion(const InverseProblem& p, const CriterionSpec& spec, const Vector& indicator) {
    return criteria::criterion_at_theta(p, spec,
                                        kernels::binary_theta(indicator, p.forward.n_times(), spec.mode));
}

/// Criterion values before and after thresholding.
struct CriterionTriple {
    double relaxed = std::numeric_limits<double>::quiet_NaN();
    double thresholded_relaxed = std::numeric_limits<double>::quiet_NaN();
    double thresholded_binary = std::numeric_limits<double>::quiet_NaN();
};

struct OedResult {
    Vector relaxed_design;
    Vector weights;  // omega(zeta_i, zeta_i)
    Vector binary_design;
    Index budget = 0;
    CriterionTriple criteria;
    std::vector<double> objective_history;
    int iterations = 0;
    int evaluations = 0;
    double pg_norm = 0.0;
    bool converged = false;
    std::string message;
};

inline CriterionTriple evaluate_triple(const InverseProblem& p, const CriterionSpec& spec,
                                       const WeightKernel& k, const Vector& design, const Vector& indicator) {
    CriterionTriple t;
    auto guarded = [](auto&& f) {
        try {
            return f();
        } catch (const IndefiniteHessian&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    const ObsMatrix theta = kernels::build_theta(k, design, p.times(), spec.mode);
    t.relaxed = guarded([&] { return criteria::criterion_at_theta(p, spec, theta); });
    t.thresholded_relaxed =
        guarded([&] { return criteria::criterion_at_theta(p, spec, kernels::mask_theta(theta, indicator)); });
    t.thresholded_binary = guarded([&] { return binary_criterion(p, spec, indicator); });
    return t;
}

/// Minimizes Psi(zeta) + alpha Phi(zeta) from the configured (or half-weight) start,
/// then thresholds the result to `budget` sensors.
inline OedResult solve_oed(const InverseProblem& p, const CriterionSpec& spec, const WeightKernel& k,
                           const OptimizerConfig& cfg, Index budget) {
    cfg.validate();
    const Index ns = p.n_sensors();
    if (budget < 1 || budget > ns) throw std::invalid_argument("budget must lie in [1, Nsens]");
    const criteria::OedObjective objective(p, spec, k);

    Vector x0 = cfg.initial_design.value_or(Vector::Constant(ns, half_weight_design(k)));
    if (x0.size() != ns) throw DimensionMismatch("initial design length differs from Nsens");

    Objective fn = [&](const Vector& x, Vector& g) {
        auto v = objective.evaluate(x);
        g = v.gradient;
        return v.value;
    };
    LbfgsOptions opt;
    opt.pgtol = cfg.pgtol;
    opt.max_iters = cfg.max_iters;
    opt.memory = cfg.memory;
    const auto run = minimize_lbfgs(fn, x0, design_bounds(k, ns), opt);

    OedResult out;
    out.relaxed_design = run.x;
    out.weights = kernels::diagonal_weights(k, run.x);
    out.budget = budget;
    out.binary_design = threshold_to_budget(out.weights, budget);
    out.criteria = evaluate_triple(p, spec, k, run.x, out.binary_design);
    out.objective_history = run.history;
    out.iterations = run.iterations;
    out.evaluations = run.evaluations;
    out.pg_norm = run.pg_norm;
    out.converged = run.converged;
    out.message = run.message;
    return out;
}

struct EnumerationEntry {
    std::vector<Index> sensors;
    double criterion = 0.0;
};

inline double binomial(Index n, Index k) {
    if (k < 0 || k > n) return 0.0;
    double c = 1.0;
    for (Index i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
    return std::round(c);
}

/// All k-subsets of [0, n) in lexicographic order.
inline std::vector<std::vector<Index>> k_subsets(Index n, Index k) {
    std::vector<std::vector<Index>> out;
    std::vector<Index> cur(static_cast<std::size_t>(k));
    std::iota(cur.begin(), cur.end(), Index{0});
    if (k == 0 || k > n) return out;
    for (;;) {
        out.push_back(cur);
        Index i = k - 1;
        while (i >= 0 && cur[static_cast<std::size_t>(i)] == n - k + i) --i;
        if (i < 0) break;
        ++cur[static_cast<std::size_t>(i)];
        for (Index j = i + 1; j < k; ++j) cur[static_cast<std::size_t>(j)] = cur[static_cast<std::size_t>(j - 1)] + 1;
    }
    return out;
}

/// Exhaustive binary-design criteria over all k-subsets, ascending by criterion
/// (ties keep lexicographic subset order).
inline std::vector<EnumerationEntry> brute_force_enumerate(const InverseProblem& p, const CriterionSpec& spec,
                                                           Index k, double cap = 1e6) {
    const Index ns = p.n_sensors();
    if (k < 1 || k > ns) throw std::invalid_argument("budget must lie in [1, Nsens]");
    const double count = binomial(ns, k);
    if (count > cap) {
        throw EnumerationCapExceeded("C(" + std::to_string(ns) + ", " + std::to_string(k) + ") = " +
                                     std::to_string(static_cast<long long>(count)) +
                                     " subsets exceeds the enumeration cap; use k = 1 or a smaller testbed");
    }
    const auto subsets = k_subsets(ns, k);
    std::vector<EnumerationEntry> out(subsets.size());
    parallel_for(subsets.size(), [&](std::size_t s) {
        out[s].sensors = subsets[s];
        out[s].criterion = binary_criterion(p, spec, indicator_from(subsets[s], ns));
    });
    std::stable_sort(out.begin(), out.end(),
                     [](const EnumerationEntry& a, const EnumerationEntry& b) { return a.criterion < b.criterion; });
    return out;
}

inline double rmse(const Vector& est, const Vector& truth) {
    if (est.size() != truth.size() || est.size() == 0) throw DimensionMismatch("rmse: length mismatch");
    return std::sqrt((est - truth).squaredNorm() / static_cast<double>(est.size()));
}

/// Goal prediction P theta_MAP for a binary design.
inline Vector binary_goal_prediction(const InverseProblem& p, const CriterionSpec& spec, const Vector& indicator,
                                     const Vector& data) {
    const auto w = kernels::weighted_precision(p.noise, kernels::binary_theta(indicator, p.forward.n_times(), spec.mode));
    return p.goal.matrix * bayes::map_estimate(p, w, data);
}

struct BaselineSample {
    std::vector<Index> sensors;
    double criterion = 0.0;
    double rmse = 0.0;
};

/// Uniform k-subset via a partial Fisher-Yates shuffle, returned sorted.
inline std::vector<Index> random_subset(Index n, Index k, linalg::Rng& rng) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    for (Index i = 0; i < k; ++i) {
        std::uniform_int_distribution<Index> pick(i, n - 1);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    idx.resize(static_cast<std::size_t>(k));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Criterion and goal RMSE (against `goal_truth`, after inverting `data`) of
/// n_samples random k-subsets. Subsets are drawn sequentially, then evaluated.
inline std::vector<BaselineSample> random_baseline(const InverseProblem& p, const CriterionSpec& spec, Index k,
                                                   Index n_samples, linalg::Rng& rng, const Vector& data,
                                                   const Vector& goal_truth) {
    const Index ns = p.n_sensors();
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
    if (k < 1 || k > ns) throw std::invalid_argument("budget must lie in [1, Nsens]");
    std::vector<BaselineSample> out(static_cast<std::size_t>(n_samples));
    for (auto& s : out) s.sensors = random_subset(ns, k, rng);
    parallel_for(out.size(), [&](std::size_t i) {
        const Vector b = indicator_from(out[i].sensors, ns);
        out[i].criterion = binary_criterion(p, spec, b);
        out[i].rmse = rmse(binary_goal_prediction(p, spec, b, data), goal_truth);
    });
    return out;
}

struct Quartiles {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Quartiles with linear interpolation between order statistics.
inline Quartiles quartiles(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("quartiles of an empty sample");
    std::sort(v.begin(), v.end());
    auto at = [&](double q) {
        const double pos = q * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    return {v.front(), at(0.25), at(0.5), at(0.75), v.back()};
}

struct ContinuationStage {
    double a = 0.0;
    OedResult result;
    /// mean over sensors of min(w, |1 - w|) for the diagonal weights
    double binary_distance = 0.0;
};

struct ContinuationResult {
    OedResult final_result;
    std::vector<ContinuationStage> stages;
};

/// Re-solves with increasing sigmoid scaling, warm-starting each stage from the
/// previous optimum.
inline ContinuationResult continuation(const InverseProblem& p, const CriterionSpec& spec, WeightKernel k,
                                       const OptimizerConfig& cfg, Index budget,
                                       const std::vector<double>& schedule = {1.0, 2.0, 5.0, 10.0}) {
    if (k.kind != KernelKind::Sigmoid) throw std::invalid_argument("continuation requires the sigmoid kernel");
    if (schedule.empty()) throw std::invalid_argument("continuation schedule is empty");
    for (std::size_t i = 1; i < schedule.size(); ++i) {
        if (!(schedule[i] > schedule[i - 1])) throw std::invalid_argument("continuation schedule must increase");
    }
    ContinuationResult out;
    OptimizerConfig stage_cfg = cfg;
    for (double a : schedule) {
        k.a = a;
        ContinuationStage st;
        st.a = a;
        st.result = solve_oed(p, spec, k, stage_cfg, budget);
        st.binary_distance = st.result.weights.unaryExpr([](double w) { return std::min(std::abs(w), std::abs(1.0 - w)); }).mean();
        stage_cfg.initial_design = st.result.relaxed_design;
        out.stages.push_back(std::move(st));
    }
    out.final_result = out.stages.back().result;
    return out;
}

}  // namespace oedkit::optimize
