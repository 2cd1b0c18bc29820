// oedkit: command-line front end for the advection-diffusion OED testbed.
//
//   oedkit solve     --config cfg.json [--seed N] [--out DIR]
//   oedkit invert    --config cfg.json --design design.json [--use binary|relaxed]
//   oedkit check | enumerate | baseline | sweep --config cfg.json
//
// Exit codes: 0 success, 1 configuration/input error, 2 numerical target not met
// (optimizer stopped before pgtol, or gradient check over tolerance), 3 enumeration
// cap exceeded.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "oedkit/experiment.hpp"

namespace fs = std::filesystem;
using namespace oedkit;
using experiment::json;
using linalg::Index;
using linalg::Vector;

namespace {

constexpr int kOk = 0, kInputError = 1, kTargetMissed = 2, kCapExceeded = 3;

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

experiment::ExperimentConfig resolve(const Common& c) {
    auto cfg = experiment::load_config(c.config_path);
    if (c.seed) cfg.optimizer.seed = *c.seed;
    if (c.out) cfg.output.directory = *c.out;
    return cfg;
}

json vec_json(const Vector& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

json index_json(const std::vector<Index>& v) {
    json a = json::array();
    for (Index i : v) a.push_back(i);
    return a;
}

/// NaN is written as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string sensor_list(const std::vector<Index>& v) {
    std::string s;
    for (Index i : v) s += (s.empty() ? "" : " ") + std::to_string(i);
    return s;
}

/// Round-trip formatting for CSV numbers.
std::string fmt(double v) {
    if (!std::isfinite(v)) return "nan";
    std::ostringstream o;
    o.precision(17);
    o << v;
    return o.str();
}

class Output {
public:
    explicit Output(const experiment::ExperimentConfig& cfg)
        : cfg_(cfg), dir_(cfg.output.directory), resolved_(experiment::config_to_json(cfg)) {
        fs::create_directories(dir_);
    }

    void write_json(const std::string& name, const std::string& schema, json body) const {
        if (!cfg_.output.wants("json")) return;
        json doc;
        doc["schema"] = schema;
        doc["seed"] = cfg_.optimizer.seed;
        doc["config"] = resolved_;
        for (auto& [k, v] : body.items()) doc[k] = v;
        std::ofstream(dir_ / name, std::ios::binary) << doc.dump(2) << "\n";
    }

    /// Writes the reproducibility header; the caller streams the header row and rows.
    std::optional<std::ofstream> csv(const std::string& name, const std::string& schema) const {
        if (!cfg_.output.wants("csv")) return std::nullopt;
        std::ofstream f(dir_ / name, std::ios::binary);
        f << "# schema: " << schema << "\n# seed: " << cfg_.optimizer.seed << "\n# config: " << resolved_.dump() << "\n";
        return f;
    }

private:
    const experiment::ExperimentConfig& cfg_;
    fs::path dir_;
    json resolved_;
};

json sensors_json(const experiment::Scenario& s) {
    json a = json::array();
    for (const auto& p : s.model.sensors) a.push_back(json::array({p.x, p.y}));
    return a;
}

json prediction_points_json(const experiment::Scenario& s) {
    json a = json::array();
    for (Index c : s.goal_cells) {
        const auto p = s.model.grid.center(c);
        a.push_back(json::array({p.x, p.y}));
    }
    return a;
}

int cmd_solve(const Common& common) {
    const auto cfg = resolve(common);
    const auto sc = experiment::build_scenario(cfg);
    const auto r = optimize::solve_oed(sc.problem, cfg.criterion_spec(), cfg.kernel, cfg.optimizer, cfg.criterion.budget);
    const Output out(cfg);
    out.write_json("design.json", "oedkit.design/1",
                   {{"sensors", sensors_json(sc)},
                    {"prediction_points", prediction_points_json(sc)},
                    {"noise_sigma", sc.sigma},
                    {"relaxed_design", vec_json(r.relaxed_design)},
                    {"weights", vec_json(r.weights)},
                    {"binary_design", vec_json(r.binary_design)},
                    {"active_sensors", index_json(optimize::active_indices(r.binary_design))},
                    {"budget", r.budget},
                    {"criteria",
                     {{"relaxed", num(r.criteria.relaxed)},
                      {"thresholded_relaxed", num(r.criteria.thresholded_relaxed)},
                      {"thresholded_binary", num(r.criteria.thresholded_binary)}}},
                    {"optimizer",
                     {{"iterations", r.iterations},
                      {"evaluations", r.evaluations},
                      {"pg_norm", r.pg_norm},
                      {"converged", r.converged},
                      {"message", r.message}}}});
    if (auto f = out.csv("history.csv", "oedkit.history/1")) {
        *f << "iteration,objective\n";
        for (std::size_t i = 0; i < r.objective_history.size(); ++i) *f << i << "," << fmt(r.objective_history[i]) << "\n";
    }
    std::cout << "solve: " << r.message << " after " << r.iterations << " iterations; active sensors ["
              << sensor_list(optimize::active_indices(r.binary_design)) << "]; thresholded-binary criterion "
              << r.criteria.thresholded_binary << "\n";
    return r.converged ? kOk : kTargetMissed;
}

struct DesignInput {
    bool binary = true;
    Vector values;
};

DesignInput read_design(const std::string& path, const std::string& use) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw experiment::ConfigError("cannot read design file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw experiment::ConfigError("malformed design JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    auto to_vector = [&](const json& a, const std::string& what) {
        if (!a.is_array()) throw experiment::ConfigError(what + " must be an array of numbers");
        Vector v(static_cast<Index>(a.size()));
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].is_number()) throw experiment::ConfigError(what + "[" + std::to_string(i) + "] must be a number");
            v(static_cast<Index>(i)) = a[i].get<double>();
        }
        return v;
    };
    DesignInput d;
    if (j.is_array()) {
        d.values = to_vector(j, "design");
    } else if (j.is_object()) {
        d.binary = use == "binary" ? j.contains("binary_design") : !j.contains("relaxed_design");
        const char* key = d.binary ? "binary_design" : "relaxed_design";
        if (!j.contains(key)) throw experiment::ConfigError("design file has neither binary_design nor relaxed_design");
        d.values = to_vector(j.at(key), key);
    } else {
        throw experiment::ConfigError("design file must hold an array or a design object");
    }
    if (d.binary) {
        for (Index i = 0; i < d.values.size(); ++i) {
            if (d.values(i) != 0.0 && d.values(i) != 1.0) {
                throw experiment::ConfigError("binary design entries must be 0 or 1");
            }
        }
    }
    return d;
}

int cmd_invert(const Common& common, const std::string& design_path, const std::string& use) {
    const auto cfg = resolve(common);
    const auto sc = experiment::build_scenario(cfg);
    const auto design = read_design(design_path, use);
    const Index ns = sc.problem.n_sensors();
    if (design.values.size() != ns) {
        throw DimensionMismatch("design has " + std::to_string(design.values.size()) + " entries but the config has " +
                                std::to_string(ns) + " sensors");
    }
    const auto spec = cfg.criterion_spec();
    const auto theta = design.binary
                           ? kernels::binary_theta(design.values, sc.problem.forward.n_times(), spec.mode)
                           : kernels::build_theta(cfg.kernel, design.values, sc.problem.times(), spec.mode);
    const auto w = kernels::weighted_precision(sc.problem.noise, theta);
    const Vector map = bayes::map_estimate(sc.problem, w, sc.data);
    const Vector pred = sc.problem.goal.matrix * map;
    const Vector prior_pred = sc.problem.goal.matrix * sc.problem.prior.mean;

    Vector rae = Vector::Constant(pred.size(), std::numeric_limits<double>::quiet_NaN());
    double rmse = optimize::rmse(pred, sc.goal_truth);
    std::vector<Index> masked;
    try {
        const auto m = testbed::error_metrics(pred, sc.goal_truth);
        rae = m.rae;
        masked = m.masked;
    } catch (const testbed::UndefinedRelativeError& e) {
        rmse = e.rmse();
    }
    double rae_sum = 0.0, rae_max = 0.0;
    Index rae_n = 0;
    for (Index i = 0; i < rae.size(); ++i) {
        if (std::isnan(rae(i))) continue;
        rae_sum += rae(i);
        rae_max = std::max(rae_max, rae(i));
        ++rae_n;
    }

    const Output out(cfg);
    out.write_json("metrics.json", "oedkit.metrics/1",
                   {{"design_file", design_path},
                    {"design_kind", design.binary ? "binary" : "relaxed"},
                    {"design", vec_json(design.values)},
                    {"criterion", num(criteria::criterion_at_weights(sc.problem, spec, w))},
                    {"rmse", rmse},
                    {"prior_rmse", optimize::rmse(prior_pred, sc.goal_truth)},
                    {"rae_mean", rae_n ? num(rae_sum / static_cast<double>(rae_n)) : json(nullptr)},
                    {"rae_max", rae_n ? num(rae_max) : json(nullptr)},
                    {"rae_masked", index_json(masked)}});
    if (auto f = out.csv("map.csv", "oedkit.map/1")) {
        *f << "cell,x,y,map,truth\n";
        for (Index c = 0; c < map.size(); ++c) {
            const auto p = sc.model.grid.center(c);
            *f << c << "," << fmt(p.x) << "," << fmt(p.y) << "," << fmt(map(c)) << "," << fmt(sc.theta_true(c)) << "\n";
        }
    }
    if (auto f = out.csv("prediction.csv", "oedkit.prediction/1")) {
        *f << "point,cell,x,y,prediction,prior_prediction,truth,rae\n";
        for (Index i = 0; i < pred.size(); ++i) {
            const Index c = sc.goal_cells[static_cast<std::size_t>(i)];
            const auto p = sc.model.grid.center(c);
            *f << i << "," << c << "," << fmt(p.x) << "," << fmt(p.y) << "," << fmt(pred(i)) << ","
               << fmt(prior_pred(i)) << "," << fmt(sc.goal_truth(i)) << "," << fmt(rae(i)) << "\n";
        }
    }
    std::cout << "invert: goal RMSE " << rmse << " (prior " << optimize::rmse(prior_pred, sc.goal_truth) << ")\n";
    return kOk;
}

int cmd_check(const Common& common) {
    const auto cfg = resolve(common);
    const auto sc = experiment::build_scenario(cfg);
    const criteria::OedObjective obj(sc.problem, cfg.criterion_spec(), cfg.kernel);
    const Vector x0 = cfg.optimizer.initial_design.value_or(
        Vector::Constant(sc.problem.n_sensors(), optimize::half_weight_design(cfg.kernel)));
    const auto report = criteria::gradient_check(obj, x0, cfg.check.step);
    const auto sweep = criteria::gradient_step_sweep(obj, x0, cfg.check.sweep_steps);
    const bool pass = report.max_rel_error <= cfg.check.tolerance;

    const Output out(cfg);
    if (auto f = out.csv("check.csv", "oedkit.check/1")) {
        *f << "sensor,analytic,finite_difference,rel_error\n";
        const double scale = std::max(report.finite_difference.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
        for (Index i = 0; i < x0.size(); ++i) {
            *f << i << "," << fmt(report.analytic(i)) << "," << fmt(report.finite_difference(i)) << ","
               << fmt(std::abs(report.analytic(i) - report.finite_difference(i)) / scale) << "\n";
        }
    }
    if (auto f = out.csv("check_sweep.csv", "oedkit.check_sweep/1")) {
        *f << "step,max_rel_error,worst_index\n";
        for (const auto& s : sweep) *f << fmt(s.step) << "," << fmt(s.max_rel_error) << "," << s.worst_index << "\n";
    }
    out.write_json("check.json", "oedkit.check/1",
                   {{"step", report.step},
                    {"max_rel_error", report.max_rel_error},
                    {"worst_index", report.worst_index},
                    {"tolerance", cfg.check.tolerance},
                    {"pass", pass}});
    std::cout << "check: max relative error " << report.max_rel_error << " at sensor " << report.worst_index
              << (pass ? " (within " : " (exceeds ") << cfg.check.tolerance << ")\n";
    return pass ? kOk : kTargetMissed;
}

int cmd_enumerate(const Common& common) {
    const auto cfg = resolve(common);
    const auto sc = experiment::build_scenario(cfg);
    const auto list = optimize::brute_force_enumerate(sc.problem, cfg.criterion_spec(), cfg.enumerate.k, cfg.enumerate.cap);
    const Output out(cfg);
    if (auto f = out.csv("enumerate.csv", "oedkit.enumerate/1")) {
        *f << "rank,criterion,sensors\n";
        for (std::size_t i = 0; i < list.size(); ++i) {
            *f << i + 1 << "," << fmt(list[i].criterion) << "," << sensor_list(list[i].sensors) << "\n";
        }
    }
    std::cout << "enumerate: " << list.size() << " subsets; best [" << sensor_list(list.front().sensors) << "] "
              << list.front().criterion << "\n";
    return kOk;
}

int cmd_baseline(const Common& common) {
    const auto cfg = resolve(common);
    const auto sc = experiment::build_scenario(cfg);
    linalg::Rng rng(cfg.baseline_seed());
    const auto samples = optimize::random_baseline(sc.problem, cfg.criterion_spec(), cfg.criterion.budget,
                                                   cfg.baseline.n_samples, rng, sc.data, sc.goal_truth);
    std::vector<double> crit, err;
    for (const auto& s : samples) {
        crit.push_back(s.criterion);
        err.push_back(s.rmse);
    }
    const auto qc = optimize::quartiles(crit), qe = optimize::quartiles(err);
    const Output out(cfg);
    if (auto f = out.csv("baseline.csv", "oedkit.baseline/1")) {
        *f << "sample,criterion,rmse,sensors\n";
        for (std::size_t i = 0; i < samples.size(); ++i) {
            *f << i << "," << fmt(samples[i].criterion) << "," << fmt(samples[i].rmse) << ","
               << sensor_list(samples[i].sensors) << "\n";
        }
    }
    if (auto f = out.csv("baseline_summary.csv", "oedkit.baseline_summary/1")) {
        *f << "statistic,criterion,rmse\n";
        *f << "min," << fmt(qc.min) << "," << fmt(qe.min) << "\n";
        *f << "q1," << fmt(qc.q1) << "," << fmt(qe.q1) << "\n";
        *f << "median," << fmt(qc.median) << "," << fmt(qe.median) << "\n";
        *f << "q3," << fmt(qc.q3) << "," << fmt(qe.q3) << "\n";
        *f << "max," << fmt(qc.max) << "," << fmt(qe.max) << "\n";
    }
    std::cout << "baseline: " << samples.size() << " random designs; median criterion " << qc.median
              << ", median RMSE " << qe.median << "\n";
    return kOk;
}

int cmd_sweep(const Common& common) {
    const auto cfg = resolve(common);
    const auto sc = experiment::build_scenario(cfg);
    const auto spec = cfg.criterion_spec();
    const Index ns = sc.problem.n_sensors();
    const Index kmax = std::min(cfg.sweep.k_max, ns);
    const auto r = optimize::solve_oed(sc.problem, spec, cfg.kernel, cfg.optimizer, std::min(cfg.criterion.budget, ns));
    const auto best = optimize::brute_force_enumerate(sc.problem, spec, 1, cfg.enumerate.cap).front();
    const Output out(cfg);
    if (auto f = out.csv("sweep.csv", "oedkit.sweep/1")) {
        *f << "kind,k,criterion,sensors\n";
        for (Index k = 1; k <= kmax; ++k) {
            const Vector b = optimize::threshold_to_budget(r.weights, k);
            *f << "thresholded," << k << "," << fmt(optimize::binary_criterion(sc.problem, spec, b)) << ","
               << sensor_list(optimize::active_indices(b)) << "\n";
        }
        *f << "bruteforce,1," << fmt(best.criterion) << "," << sensor_list(best.sensors) << "\n";
    }
    std::cout << "sweep: k = 1.." << kmax << " from one relaxed solve (" << r.message << "); brute-force best sensor "
              << sensor_list(best.sensors) << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Goal-oriented optimal sensor placement on an advection-diffusion testbed"};
    app.require_subcommand(1);
    Common common;
    std::string design_path, use = "binary";

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_path, "JSON experiment config")->required();
        sub->add_option("--seed", common.seed, "override optimizer.seed");
        sub->add_option("--out", common.out, "override output.directory");
    };
    auto* solve = app.add_subcommand("solve", "solve the relaxed OED problem and threshold to the budget");
    auto* invert = app.add_subcommand("invert", "invert synthetic data with a given design");
    auto* check = app.add_subcommand("check", "compare analytic and finite-difference design gradients");
    auto* enumerate = app.add_subcommand("enumerate", "rank every k-subset of sensors");
    auto* baseline = app.add_subcommand("baseline", "criterion and RMSE of random k-subsets");
    auto* sweep = app.add_subcommand("sweep", "thresholded criterion for k = 1..K");
    for (auto* s : {solve, invert, check, enumerate, baseline, sweep}) add_common(s);
    invert->add_option("--design", design_path, "design JSON (solve output or an array)")->required();
    invert->add_option("--use", use, "which design of a solve output to use")->check(CLI::IsMember({"binary", "relaxed"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInputError;
    }

    try {
        if (*solve) return cmd_solve(common);
        if (*invert) return cmd_invert(common, design_path, use);
        if (*check) return cmd_check(common);
        if (*enumerate) return cmd_enumerate(common);
        if (*baseline) return cmd_baseline(common);
        if (*sweep) return cmd_sweep(common);
    } catch (const optimize::EnumerationCapExceeded& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kCapExceeded;
    } catch (const experiment::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kInputError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kInputError;
    }
    return kInputError;
}
