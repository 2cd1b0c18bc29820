#pragma once

// JSON experiment configuration (strict: unknown keys are errors) and the
// scenario builder that turns a config into a testbed inverse problem.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "oedkit/criteria.hpp"
#include "oedkit/optimize.hpp"
#include "oedkit/testbed.hpp"

namespace oedkit::experiment {

using json = nlohmann::ordered_json;
using linalg::Index;
using linalg::Matrix;
using linalg::Vector;

/// Invalid configuration content; the message names the offending key path.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TruthConfig {
    std::vector<testbed::Bump> bumps{testbed::Bump{{0.3, 0.7}, 100.0, 0.1}};
};

struct SensorConfig {
    Index count = 43;
    /// Explicit locations; empty means `count` Halton points.
    std::vector<testbed::Point> coordinates;
    double ell = 0.0;
    /// Noise standard deviation; unset means noise_level times the largest noiseless observation.
    std::optional<double> sigma;
    double noise_level = 0.005;
    /// Temporal GC length; set means a dense space-time noise covariance.
    std::optional<double> time_ell;
};

struct CriterionConfig {
    criteria::CriterionKind kind = criteria::CriterionKind::A;
    bool randomized = false;
    Index n_probes = 5;
    kernels::CorrelationMode mode = kernels::CorrelationMode::Space;
    double alpha = 0.0;
    Index budget = 8;
    std::optional<Index> hessian_rank;
};

struct OutputConfig {
    std::string directory = "out";
    std::vector<std::string> formats{"json", "csv"};

    bool wants(const std::string& f) const {
        for (const auto& x : formats) {
            if (x == f) return true;
        }
        return false;
    }
};

struct CheckConfig {
    double step = 1e-5;
    double tolerance = 1e-6;
    std::vector<double> sweep_steps{1e-3, 1e-5, 1e-7};
};

struct EnumerateConfig {
    Index k = 1;
    double cap = 1e6;
};

struct BaselineConfig {
    Index n_samples = 100;
};

struct SweepConfig {
    Index k_max = 8;
};

struct ExperimentConfig {
    testbed::ModelConfig model;
    testbed::PriorConfig prior{25.0, 1e4};
    TruthConfig truth;
    testbed::Rect goal_region{0.55, 0.2, 0.8, 0.45};
    SensorConfig sensors;
    kernels::WeightKernel kernel;
    CriterionConfig criterion;
    optimize::OptimizerConfig optimizer;
    OutputConfig output;
    CheckConfig check;
    EnumerateConfig enumerate;
    BaselineConfig baseline;
    SweepConfig sweep;

    criteria::CriterionSpec criterion_spec() const {
        criteria::CriterionSpec s;
        s.kind = criterion.kind;
        if (criterion.randomized) s.n_probes = criterion.n_probes;
        s.probe_seed = optimizer.seed + 1;
        s.mode = criterion.mode;
        s.alpha = criterion.alpha;
        s.hessian_rank = criterion.hessian_rank;
        return s;
    }

    std::uint64_t data_seed() const { return optimizer.seed; }
    std::uint64_t baseline_seed() const { return optimizer.seed + 2; }
};

namespace detail {

/// Typed field access that records the key path for error messages.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    void allow(std::initializer_list<const char*> keys) const {
        const std::set<std::string> ok(keys.begin(), keys.end());
        for (const auto& [k, v] : j_.items()) {
            if (!ok.count(k)) throw ConfigError("unknown key '" + join(k) + "'");
        }
    }

    bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }
    const json& at(const char* key) const { return j_.at(key); }
    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    template <typename T>
    void get(const char* key, T& out) const {
        if (!has(key)) return;
        out = convert<T>(j_.at(key), join(key));
    }

    template <typename T>
    void get(const char* key, std::optional<T>& out) const {
        if (j_.contains(key)) {
            out = j_.at(key).is_null() ? std::nullopt : std::optional<T>(convert<T>(j_.at(key), join(key)));
        }
    }

    template <typename T>
    static T convert(const json& v, const std::string& path) {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(path + " must be a number");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!v.is_number_integer()) throw ConfigError(path + " must be an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path + " must be >= 0");
                }
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(path + " must be true or false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v.is_string()) throw ConfigError(path + " must be a string");
            }
            return v.get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }

private:
    std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

    const json& j_;
    std::string path_;
};

inline std::vector<double> number_list(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + " must be an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(Reader::convert<double>(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline testbed::Rect rect_from(const json& v, const std::string& path) {
    const auto r = number_list(v, path);
    if (r.size() != 4) throw ConfigError(path + " must be [x0, y0, x1, y1]");
    if (!(r[2] > r[0]) || !(r[3] > r[1])) throw ConfigError(path + " must satisfy x1 > x0 and y1 > y0");
    return {r[0], r[1], r[2], r[3]};
}

inline json rect_json(const testbed::Rect& r) { return json::array({r.x0, r.y0, r.x1, r.y1}); }

template <typename E>
E enum_from(const json& v, const std::string& path, std::initializer_list<std::pair<const char*, E>> names) {
    const auto s = Reader::convert<std::string>(v, path);
    std::string options;
    for (const auto& [n, e] : names) {
        if (s == n) return e;
        options += (options.empty() ? "" : ", ") + std::string(n);
    }
    throw ConfigError(path + " must be one of: " + options);
}

inline const char* mode_name(kernels::CorrelationMode m) {
    return m == kernels::CorrelationMode::Space ? "space" : "spacetime";
}

inline const char* kernel_name(kernels::KernelKind k) {
    switch (k) {
        case kernels::KernelKind::Sqrt: return "sqrt";
        case kernels::KernelKind::Exp: return "exp";
        case kernels::KernelKind::Sigmoid: return "sigmoid";
    }
    return "?";
}

inline const char* temporal_name(kernels::TemporalKind k) {
    switch (k) {
        case kernels::TemporalKind::None: return "none";
        case kernels::TemporalKind::Gaussian: return "gaussian";
        case kernels::TemporalKind::GaspariCohn: return "gaspari_cohn";
    }
    return "?";
}

inline json optional_json(const auto& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

inline void validate(const ExperimentConfig& c) {
    try {
        c.model.validate();
        c.kernel.validate();
        c.criterion_spec().validate();
        c.optimizer.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (c.sensors.coordinates.empty() && c.sensors.count < 1) throw ConfigError("sensors.count must be >= 1");
    if (!(c.sensors.ell >= 0.0)) throw ConfigError("sensors.ell must be >= 0");
    if (c.sensors.sigma && !(*c.sensors.sigma > 0.0)) throw ConfigError("sensors.sigma must be > 0");
    if (!(c.sensors.noise_level > 0.0)) throw ConfigError("sensors.noise_level must be > 0");
    if (c.sensors.time_ell && !(*c.sensors.time_ell > 0.0)) throw ConfigError("sensors.time_ell must be > 0");
    if (c.criterion.n_probes < 1) throw ConfigError("criterion.n_probes must be >= 1");
    if (c.criterion.budget < 1) throw ConfigError("criterion.budget must be >= 1");
    if (!(c.prior.delta > 0.0) || !(c.prior.max_variance > 0.0)) {
        throw ConfigError("prior.delta and prior.max_variance must be > 0");
    }
    for (const auto& f : c.output.formats) {
        if (f != "json" && f != "csv") throw ConfigError("output.formats entries must be \"json\" or \"csv\"");
    }
    if (!(c.check.step > 0.0) || !(c.check.tolerance > 0.0)) throw ConfigError("check.step and check.tolerance must be > 0");
    for (double h : c.check.sweep_steps) {
        if (!(h > 0.0)) throw ConfigError("check.sweep_steps entries must be > 0");
    }
    if (c.enumerate.k < 1) throw ConfigError("enumerate.k must be >= 1");
    if (c.baseline.n_samples < 1) throw ConfigError("baseline.n_samples must be >= 1");
    if (c.sweep.k_max < 1) throw ConfigError("sweep.k_max must be >= 1");
}

inline ExperimentConfig config_from_json(const json& root) {
    using detail::Reader;
    ExperimentConfig c;
    const Reader r(root, "");
    r.allow({"model", "prior", "truth", "goal", "sensors", "kernel", "criterion", "optimizer", "output", "check",
             "enumerate", "baseline", "sweep"});

    if (r.has("model")) {
        const Reader m(r.at("model"), "model");
        m.allow({"nx", "ny", "dt", "kappa", "max_speed", "obs_times", "t_pred", "obstacles"});
        m.get("nx", c.model.nx);
        m.get("ny", c.model.ny);
        m.get("dt", c.model.dt);
        m.get("kappa", c.model.kappa);
        m.get("max_speed", c.model.max_speed);
        if (m.has("obs_times")) c.model.obs_times = detail::number_list(m.at("obs_times"), "model.obs_times");
        m.get("t_pred", c.model.t_pred);
        if (m.has("obstacles")) {
            const auto& obs = m.at("obstacles");
            if (!obs.is_array()) throw ConfigError("model.obstacles must be an array");
            c.model.obstacles.clear();
            for (std::size_t i = 0; i < obs.size(); ++i) {
                c.model.obstacles.push_back(detail::rect_from(obs[i], "model.obstacles[" + std::to_string(i) + "]"));
            }
        }
    }
    if (r.has("prior")) {
        const Reader p(r.at("prior"), "prior");
        p.allow({"delta", "max_variance"});
        p.get("delta", c.prior.delta);
        p.get("max_variance", c.prior.max_variance);
    }
    if (r.has("truth")) {
        const Reader t(r.at("truth"), "truth");
        t.allow({"bumps"});
        if (t.has("bumps")) {
            const auto& arr = t.at("bumps");
            if (!arr.is_array()) throw ConfigError("truth.bumps must be an array");
            c.truth.bumps.clear();
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const Reader b(arr[i], "truth.bumps[" + std::to_string(i) + "]");
                b.allow({"x", "y", "amplitude", "width"});
                testbed::Bump bump;
                b.get("x", bump.center.x);
                b.get("y", bump.center.y);
                b.get("amplitude", bump.amplitude);
                b.get("width", bump.width);
                if (!(bump.width > 0.0)) throw ConfigError(b.join("width") + " must be > 0");
                c.truth.bumps.push_back(bump);
            }
        }
    }
    if (r.has("goal")) {
        const Reader g(r.at("goal"), "goal");
        g.allow({"region"});
        if (g.has("region")) c.goal_region = detail::rect_from(g.at("region"), "goal.region");
    }
    if (r.has("sensors")) {
        const Reader s(r.at("sensors"), "sensors");
        s.allow({"count", "coordinates", "ell", "sigma", "noise_level", "time_ell"});
        s.get("count", c.sensors.count);
        if (s.has("coordinates")) {
            const auto& arr = s.at("coordinates");
            if (!arr.is_array()) throw ConfigError("sensors.coordinates must be an array of [x, y]");
            for (std::size_t i = 0; i < arr.size(); ++i) {
                const auto xy = detail::number_list(arr[i], "sensors.coordinates[" + std::to_string(i) + "]");
                if (xy.size() != 2) throw ConfigError("sensors.coordinates[" + std::to_string(i) + "] must be [x, y]");
                c.sensors.coordinates.push_back({xy[0], xy[1]});
            }
        }
        s.get("ell", c.sensors.ell);
        s.get("sigma", c.sensors.sigma);
        s.get("noise_level", c.sensors.noise_level);
        s.get("time_ell", c.sensors.time_ell);
    }
    if (r.has("kernel")) {
        const Reader k(r.at("kernel"), "kernel");
        k.allow({"kind", "a", "temporal", "time_length_scale"});
        if (k.has("kind")) {
            c.kernel.kind = detail::enum_from<kernels::KernelKind>(
                k.at("kind"), "kernel.kind",
                {{"sqrt", kernels::KernelKind::Sqrt}, {"exp", kernels::KernelKind::Exp},
                 {"sigmoid", kernels::KernelKind::Sigmoid}});
        }
        k.get("a", c.kernel.a);
        if (k.has("temporal")) {
            c.kernel.temporal = detail::enum_from<kernels::TemporalKind>(
                k.at("temporal"), "kernel.temporal",
                {{"none", kernels::TemporalKind::None}, {"gaussian", kernels::TemporalKind::Gaussian},
                 {"gaspari_cohn", kernels::TemporalKind::GaspariCohn}});
        }
        k.get("time_length_scale", c.kernel.time_length_scale);
    }
    if (r.has("criterion")) {
        const Reader k(r.at("criterion"), "criterion");
        k.allow({"kind", "evaluation", "n_probes", "mode", "alpha", "budget", "hessian_rank"});
        if (k.has("kind")) {
            c.criterion.kind = detail::enum_from<criteria::CriterionKind>(
                k.at("kind"), "criterion.kind", {{"A", criteria::CriterionKind::A}, {"D", criteria::CriterionKind::D}});
        }
        if (k.has("evaluation")) {
            c.criterion.randomized =
                detail::enum_from<bool>(k.at("evaluation"), "criterion.evaluation", {{"exact", false}, {"randomized", true}});
        }
        k.get("n_probes", c.criterion.n_probes);
        if (k.has("mode")) {
            c.criterion.mode = detail::enum_from<kernels::CorrelationMode>(
                k.at("mode"), "criterion.mode",
                {{"space", kernels::CorrelationMode::Space}, {"spacetime", kernels::CorrelationMode::Spacetime}});
        }
        k.get("alpha", c.criterion.alpha);
        k.get("budget", c.criterion.budget);
        k.get("hessian_rank", c.criterion.hessian_rank);
    }
    if (r.has("optimizer")) {
        const Reader o(r.at("optimizer"), "optimizer");
        o.allow({"pgtol", "max_iters", "memory", "seed"});
        o.get("pgtol", c.optimizer.pgtol);
        o.get("max_iters", c.optimizer.max_iters);
        o.get("memory", c.optimizer.memory);
        o.get("seed", c.optimizer.seed);
    }
    if (r.has("output")) {
        const Reader o(r.at("output"), "output");
        o.allow({"directory", "formats"});
        o.get("directory", c.output.directory);
        if (o.has("formats")) {
            const auto& f = o.at("formats");
            if (!f.is_array()) throw ConfigError("output.formats must be an array of strings");
            c.output.formats.clear();
            for (std::size_t i = 0; i < f.size(); ++i) {
                c.output.formats.push_back(Reader::convert<std::string>(f[i], "output.formats[" + std::to_string(i) + "]"));
            }
        }
    }
    if (r.has("check")) {
        const Reader k(r.at("check"), "check");
        k.allow({"step", "tolerance", "sweep_steps"});
        k.get("step", c.check.step);
        k.get("tolerance", c.check.tolerance);
        if (k.has("sweep_steps")) c.check.sweep_steps = detail::number_list(k.at("sweep_steps"), "check.sweep_steps");
    }
    if (r.has("enumerate")) {
        const Reader k(r.at("enumerate"), "enumerate");
        k.allow({"k", "cap"});
        k.get("k", c.enumerate.k);
        k.get("cap", c.enumerate.cap);
    }
    if (r.has("baseline")) {
        const Reader k(r.at("baseline"), "baseline");
        k.allow({"n_samples"});
        k.get("n_samples", c.baseline.n_samples);
    }
    if (r.has("sweep")) {
        const Reader k(r.at("sweep"), "sweep");
        k.allow({"k_max"});
        k.get("k_max", c.sweep.k_max);
    }
    validate(c);
    return c;
}

/// Parses config text. JSON syntax errors report the byte offset.
inline ExperimentConfig parse_config(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    return config_from_json(root);
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Fully resolved config; every field is present.
inline json config_to_json(const ExperimentConfig& c) {
    json j;
    json obstacles = json::array();
    for (const auto& r : c.model.obstacles) obstacles.push_back(detail::rect_json(r));
    j["model"] = {{"nx", c.model.nx},         {"ny", c.model.ny},
                  {"dt", c.model.dt},         {"kappa", c.model.kappa},
                  {"max_speed", c.model.max_speed}, {"obs_times", c.model.obs_times},
                  {"t_pred", c.model.t_pred}, {"obstacles", obstacles}};
    j["prior"] = {{"delta", c.prior.delta}, {"max_variance", c.prior.max_variance}};
    json bumps = json::array();
    for (const auto& b : c.truth.bumps) {
        bumps.push_back({{"x", b.center.x}, {"y", b.center.y}, {"amplitude", b.amplitude}, {"width", b.width}});
    }
    j["truth"] = {{"bumps", bumps}};
    j["goal"] = {{"region", detail::rect_json(c.goal_region)}};
    json coords = json::array();
    for (const auto& p : c.sensors.coordinates) coords.push_back(json::array({p.x, p.y}));
    j["sensors"] = {{"count", c.sensors.count},
                    {"coordinates", coords},
                    {"ell", c.sensors.ell},
                    {"sigma", detail::optional_json(c.sensors.sigma)},
                    {"noise_level", c.sensors.noise_level},
                    {"time_ell", detail::optional_json(c.sensors.time_ell)}};
    j["kernel"] = {{"kind", detail::kernel_name(c.kernel.kind)},
                   {"a", c.kernel.a},
                   {"temporal", detail::temporal_name(c.kernel.temporal)},
                   {"time_length_scale", c.kernel.time_length_scale}};
    j["criterion"] = {{"kind", criteria::to_string(c.criterion.kind)},
                      {"evaluation", c.criterion.randomized ? "randomized" : "exact"},
                      {"n_probes", c.criterion.n_probes},
                      {"mode", detail::mode_name(c.criterion.mode)},
                      {"alpha", c.criterion.alpha},
                      {"budget", c.criterion.budget},
                      {"hessian_rank", detail::optional_json(c.criterion.hessian_rank)}};
    j["optimizer"] = {{"pgtol", c.optimizer.pgtol},
                      {"max_iters", c.optimizer.max_iters},
                      {"memory", c.optimizer.memory},
                      {"seed", c.optimizer.seed}};
    j["output"] = {{"directory", c.output.directory}, {"formats", c.output.formats}};
    j["check"] = {{"step", c.check.step}, {"tolerance", c.check.tolerance}, {"sweep_steps", c.check.sweep_steps}};
    j["enumerate"] = {{"k", c.enumerate.k}, {"cap", c.enumerate.cap}};
    j["baseline"] = {{"n_samples", c.baseline.n_samples}};
    j["sweep"] = {{"k_max", c.sweep.k_max}};
    return j;
}

/// Everything a subcommand needs, assembled once from a config.
struct Scenario {
    ExperimentConfig config;
    testbed::Model model;
    std::vector<Index> goal_cells;
    Vector theta_true;
    Vector goal_truth;
    double sigma = 0.0;
    bayes::InverseProblem problem;
    Vector data;
};

inline Scenario build_scenario(const ExperimentConfig& cfg) {
    validate(cfg);
    Scenario s;
    s.config = cfg;
    const testbed::Grid grid(cfg.model.nx, cfg.model.ny, cfg.model.obstacles);
    auto sensors = cfg.sensors.coordinates.empty() ? testbed::halton_sensors(cfg.sensors.count, grid)
                                                   : cfg.sensors.coordinates;
    for (const auto& p : sensors) {
        if (p.x < 0.0 || p.x > 1.0 || p.y < 0.0 || p.y > 1.0 || grid.inside_obstacle(p)) {
            throw ConfigError("sensors.coordinates: (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                              ") lies outside the domain or inside an obstacle");
        }
    }
    s.model = testbed::build_model(cfg.model, std::move(sensors));
    s.goal_cells = testbed::cells_in(s.model.grid, cfg.goal_region);
    if (s.goal_cells.empty()) throw ConfigError("goal.region contains no active cells");
    const auto goal = testbed::build_goal(s.model, s.goal_cells);
    s.theta_true = testbed::bump_field(s.model.grid, cfg.truth.bumps);
    s.goal_truth = goal.matrix * s.theta_true;

    if (cfg.sensors.sigma) {
        s.sigma = *cfg.sensors.sigma;
    } else {
        s.sigma = testbed::default_noise_sigma(s.model.forward, s.theta_true, cfg.sensors.noise_level);
        if (!(s.sigma > 0.0)) throw ConfigError("truth produces zero observations; set sensors.sigma explicitly");
    }
    auto noise = cfg.sensors.time_ell
                     ? testbed::build_spacetime_covariance(s.model.sensors, cfg.sensors.ell, s.sigma,
                                                           cfg.model.obs_times, *cfg.sensors.time_ell)
                     : testbed::build_gc_covariance(s.model.sensors, cfg.sensors.ell, s.sigma,
                                                    static_cast<Index>(cfg.model.obs_times.size()));
    if (!noise.is_blocked() && cfg.criterion.mode == kernels::CorrelationMode::Space) {
        throw ConfigError("criterion.mode \"space\" needs block-diagonal noise; unset sensors.time_ell or use \"spacetime\"");
    }
    if (cfg.criterion.budget > s.model.forward.n_sensors()) throw ConfigError("criterion.budget exceeds the sensor count");
    s.problem = bayes::InverseProblem(s.model.forward, testbed::build_prior(s.model.grid, cfg.prior), goal,
                                      std::move(noise));
    linalg::Rng rng(cfg.data_seed());
    s.data = testbed::synth_data(s.model.forward, s.problem.noise, s.theta_true, rng);
    return s;
}

}  // namespace oedkit::experiment
