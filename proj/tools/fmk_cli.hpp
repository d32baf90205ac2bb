#pragma once

// Command-line front end. run() parses one subcommand, executes it and maps
// library errors to exit codes: 0 success, 1 usage or input error, 2 numeric
// or runtime failure.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fmk/error.hpp"
#include "fmk/harness.hpp"
#include "fmk/io.hpp"
#include "fmk/kernel.hpp"
#include "fmk/regression.hpp"
#include "fmk/simulate.hpp"
#include "fmk/verify.hpp"

namespace fmk::cli {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct CommandOutcome {
    int code = 0;
    std::string message;
    std::vector<std::string> files;
};

/// Raised for bad flag values detected after parsing.
class UsageError : public Error {
public:
    using Error::Error;
};

struct Options {
    std::optional<std::uint64_t> seed;
    unsigned threads = default_threads();

    std::string config;
    std::string out;
    std::string data;
    std::string kernel;
    double gamma = std::numeric_limits<double>::quiet_NaN();
    std::string model;
    std::string input;
    std::string k_model;
    std::string na_model;
    std::string name;
    std::string suite = "all";
};

namespace detail {

inline harness::ExperimentConfig load_config(const Options& o, std::optional<harness::ExperimentId> id) {
    harness::ExperimentConfig cfg =
        o.config.empty() ? harness::default_config(*id) : harness::config_from_json(io::read_json(o.config), id);
    if (o.seed) {
        cfg.seed = *o.seed;
    }
    return cfg;
}

inline CommandOutcome gen_data(const Options& o, std::ostream& out) {
    const auto cfg = load_config(o, std::nullopt);
    harness::OutputDir dir(o.out);
    const json echo = harness::to_json(cfg);
    switch (cfg.id) {
        case harness::ExperimentId::Lti: dir.dataset("dataset.csv", harness::gen_lti_dataset(cfg), echo); break;
        case harness::ExperimentId::SatlagRbf:
            dir.dataset("dataset.csv", harness::gen_satlag_dataset(cfg), echo);
            break;
        case harness::ExperimentId::LpvCompare: {
            const auto sets = harness::gen_lpv_compare_datasets(cfg);
            dir.dataset("dataset_step.csv", sets.steps, echo);
            dir.dataset("dataset_sine.csv", sets.sines, echo);
            break;
        }
        case harness::ExperimentId::HhK:
        case harness::ExperimentId::HhNa: dir.dataset("dataset.csv", harness::gen_hh_channel_dataset(cfg), echo); break;
        case harness::ExperimentId::HhClosedLoop:
            dir.dataset("dataset_k.csv", harness::gen_hh_channel_dataset(cfg.potassium), echo);
            dir.dataset("dataset_na.csv", harness::gen_hh_channel_dataset(cfg.sodium), echo);
            break;
    }
    out << echo.dump(2) << "\n";
    dir.commit();
    return {0, "datasets written to " + o.out, dir.written()};
}

inline CommandOutcome fit_cmd(const Options& o, std::ostream& out) {
    if (!(o.gamma > 0.0) || !std::isfinite(o.gamma)) {
        throw UsageError("--gamma must be positive and finite");
    }
    const auto data = io::read_dataset(o.data);
    const auto spec = io::kernel_from_json(io::read_json(o.kernel));
    double offset = 0.0;
    const auto side = io::dataset_sidecar(o.data);
    if (fs::exists(side)) {
        const auto meta = io::read_json(side);
        if (meta.contains("input_offset") && meta["input_offset"].is_number()) {
            offset = meta["input_offset"].get<double>();
        }
    }
    const auto model = with_input_offset(fit(data, spec, o.gamma, o.threads), offset);
    io::save_model(o.out, model);
    out << "fitted " << kernel_name(spec) << " on " << data.size() << " pairs, rkhs_norm "
        << io::format_number(rkhs_norm(model)) << "\n";
    return {0, "model written to " + o.out, {o.out}};
}

inline CommandOutcome simulate_cmd(const Options& o, std::ostream& out) {
    const auto model = io::load_model(o.model);
    const auto input = io::read_trajectory(o.input);
    const auto y = simulate_open_loop(model, input);
    io::write_trajectory(o.out, y, "output");
    out << "simulated " << y.size() << " samples\n";
    return {0, "trace written to " + o.out, {o.out}};
}

/// Input current of a closed-loop config: {"constant": x}, {"csv": path} or {"noise": {...}}.
inline Trajectory closed_loop_input(const json& spec, std::uint64_t seed, double duration, double dt,
                                    const fs::path& base) {
    if (!spec.is_object() || spec.size() != 1) {
        throw FormatError("closed-loop config: 'input' must hold exactly one of constant, csv, noise");
    }
    if (spec.contains("constant")) {
        const auto n = static_cast<std::size_t>(std::llround(duration / dt)) + 1;
        return Trajectory(0.0, dt, std::vector<double>(n, spec["constant"].get<double>()));
    }
    if (spec.contains("csv")) {
        fs::path p = spec["csv"].get<std::string>();
        if (p.is_relative()) {
            p = base / p;
        }
        return io::read_trajectory(p);
    }
    if (spec.contains("noise")) {
        harness::NoiseSpec noise;
        double noise_dt = 0.01;
        harness::detail::SectionReader(spec["noise"], "input.noise")
            .get("cutoff", noise.cutoff)
            .get("amplitude", noise.amplitude)
            .get("baseline", noise.baseline)
            .get("dt", noise_dt)
            .finish();
        if (!(noise.cutoff > 0.0) || !(noise_dt > 0.0)) {
            throw InvalidArgument("closed-loop config: noise cutoff and dt must be positive");
        }
        return harness::band_limited_noise(seed, noise, duration, noise_dt);
    }
    throw FormatError("closed-loop config: unknown input kind '" + spec.begin().key() + "'");
}

inline CommandOutcome closed_loop_cmd(const Options& o, std::ostream& out) {
    const json cfg_json = io::read_json(o.config);
    ClosedLoopConfig cfg;
    json circuit = json::object();
    json input = {{"noise", json::object()}};
    std::uint64_t seed = 42;
    double threshold = 0.0;
    double refractory = 2.0;
    cfg.dt = 0.0;
    harness::detail::SectionReader(cfg_json, "closed-loop")
        .get("circuit", circuit)
        .get("dt", cfg.dt)
        .get("duration", cfg.duration)
        .get("v0", cfg.v0)
        .get("input", input)
        .get("seed", seed)
        .get("spike_threshold", threshold)
        .get("refractory", refractory)
        .finish();
    if (o.seed) {
        seed = *o.seed;
    }
    const auto k_model = io::load_model(o.k_model);
    const auto na_model = io::load_model(o.na_model);
    if (cfg.dt == 0.0) {
        cfg.dt = k_model.grid().dt();
    }
    if (!(cfg.dt > 0.0) || !(cfg.duration > 0.0)) {
        throw InvalidArgument("closed-loop config: dt and duration must be positive");
    }
    cfg.circuit = harness::circuit_from_json(circuit);
    cfg.i_ext = closed_loop_input(input, seed, cfg.duration, cfg.dt, fs::path(o.config).parent_path());

    harness::OutputDir dir(o.out);
    const auto v = simulate_closed_loop(k_model, na_model, cfg);
    const auto spikes = detect_spikes(v, threshold, refractory);
    dir.trajectory("trace_input_current.csv", cfg.i_ext);
    dir.trajectory("trace_voltage.csv", v, "V");
    dir.spikes("spikes.csv", spikes);
    json report = {{"metrics", {{"spikes", spikes.size()}, {"v_min", *std::min_element(v.values.begin(), v.values.end())},
                                {"v_max", *std::max_element(v.values.begin(), v.values.end())}}},
                   {"config",
                    {{"circuit", harness::to_json(cfg.circuit)},
                     {"dt", cfg.dt},
                     {"duration", cfg.duration},
                     {"v0", cfg.v0},
                     {"input", input},
                     {"seed", seed},
                     {"spike_threshold", threshold},
                     {"refractory", refractory}}}};
    dir.json_file("report.json", report);
    out << report.dump(2) << "\n";
    dir.commit();
    return {0, std::to_string(spikes.size()) + " spikes", dir.written()};
}

inline CommandOutcome experiment_cmd(const Options& o, std::ostream& out) {
    const auto cfg = load_config(o, harness::parse_experiment(o.name));
    const auto rep = harness::run_experiment(cfg, o.out, o.threads);
    out << json{{"metrics", rep.metrics}, {"config", rep.config}}.dump(2) << "\n";
    std::vector<std::string> files;
    for (const auto& f : rep.files) {
        files.push_back((fs::path(o.out) / f).string());
    }
    return {0, "experiment " + o.name + " complete", files};
}

inline CommandOutcome verify_cmd(const Options& o, std::ostream& out) {
    const auto results = verify::run_suite(o.suite);
    int failed = 0;
    for (const auto& r : results) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
        failed += r.passed ? 0 : 1;
    }
    if (failed > 0) {
        return {2, std::to_string(failed) + " invariant check(s) failed", {}};
    }
    return {0, "all " + std::to_string(results.size()) + " checks passed", {}};
}

/// Largest sqrt(defect) over distinct training-window pairs.
inline double empirical_lipschitz(const TrainedModel& m, std::size_t pairs = 2000) {
    const auto& w = m.windows();
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> pick(0, w.size() - 1);
    double r2 = 0.0;
    for (std::size_t i = 0; i < pairs && w.size() > 1; ++i) {
        const std::size_t a = pick(rng);
        const std::size_t b = pick(rng);
        try {
            r2 = std::max(r2, lipschitz_defect(m.spec(), w[a], w[b], primary_weight(m.spec())));
        } catch (const DegeneratePair&) {
        }
    }
    return std::sqrt(r2);
}

inline CommandOutcome inspect_cmd(const Options& o, std::ostream& out) {
    const auto m = io::load_model(o.model);
    double r = analytic_lipschitz_constant(m.spec());
    std::string r_source = "analytic";
    if (r == 0.0) {
        r = empirical_lipschitz(m);
        r_source = "empirical over training pairs";
    }
    const auto cert = small_gain_check(m, r, primary_weight(m.spec()), std::numeric_limits<double>::infinity());
    out << "kernel      " << io::kernel_to_json(m.spec()).dump() << "\n";
    out << "gamma       " << io::format_number(m.gamma()) << "\n";
    out << "N           " << m.size() << "\n";
    out << "grid        dt " << io::format_number(m.grid().dt()) << ", " << m.grid().size() << " samples\n";
    out << "rkhs_norm   " << io::format_number(rkhs_norm(m)) << "\n";
    out << "r           " << io::format_number(r) << " (" << r_source << ")\n";
    out << "beta        " << io::format_number(cert.beta) << "\n";
    out << "c           " << io::format_number(cert.c) << "\n";
    out << "small_gain  " << (cert.certified ? "certified" : "not certified") << " (beta^2 "
        << (cert.certified ? "<" : ">=") << " 1/c^2)\n";
    if (m.metadata().jitter_applied) {
        out << "jitter      " << io::format_number(m.metadata().jitter) << "\n";
    }
    return {0, "", {}};
}

}  // namespace detail

/// Parses and runs one subcommand. Help text and diagnostics go to `out` / `err`.
inline CommandOutcome run(int argc, const char* const* argv, std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
    Options o;
    CLI::App app{"Fading-memory kernel identification and simulation", "fmk"};
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->always_capture_default();
    app.add_option("--seed", o.seed, "Override the configuration seed");
    app.add_option("--threads", o.threads, "Worker thread cap")->check(CLI::PositiveNumber);

    auto* gen = app.add_subcommand("gen-data", "Generate the training dataset(s) of an experiment config");
    gen->add_option("--config", o.config, "Experiment config (JSON)")->required();
    gen->add_option("--out", o.out, "Output directory")->required();

    auto* fit = app.add_subcommand("fit", "Fit a kernel model to a dataset");
    fit->add_option("--data", o.data, "Dataset CSV")->required();
    fit->add_option("--kernel", o.kernel, "Kernel spec (JSON)")->required();
    fit->add_option("--gamma", o.gamma, "Regularization weight (> 0)")->required();
    fit->add_option("--out", o.out, "Model file")->required();

    auto* sim = app.add_subcommand("simulate", "Run a model open loop on an input trace");
    sim->add_option("--model", o.model, "Model file")->required();
    sim->add_option("--input", o.input, "Input CSV (t,<value>)")->required();
    sim->add_option("--out", o.out, "Output CSV")->required();

    auto* loop = app.add_subcommand("closed-loop", "Simulate the HH circuit with two channel models");
    loop->add_option("--k-model", o.k_model, "Potassium model file")->required();
    loop->add_option("--na-model", o.na_model, "Sodium model file")->required();
    loop->add_option("--config", o.config, "Closed-loop config (JSON)")->required();
    loop->add_option("--out", o.out, "Output directory")->required();

    auto* exp = app.add_subcommand("experiment", "Run a reference experiment end to end");
    std::vector<std::string> names;
    for (const auto& [id, n] : harness::experiment_names()) {
        names.push_back(n);
    }
    exp->add_option("--name", o.name, "Experiment name")->required()->check(CLI::IsMember(names));
    exp->add_option("--config", o.config, "Config overrides (JSON)");
    exp->add_option("--out", o.out, "Output directory")->required();

    auto* ver = app.add_subcommand("verify", "Run invariant suites");
    ver->add_option("--suite", o.suite, "Suite")->check(CLI::IsMember({"kernels", "regression", "plants", "all"}));

    auto* ins = app.add_subcommand("inspect", "Print model summary and small-gain certificate");
    ins->add_option("--model", o.model, "Model file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return {code == 0 ? 0 : 1, e.what(), {}};
    }

    auto fail = [&err](int code, const std::string& msg) {
        err << "error: " << msg << "\n";
        return CommandOutcome{code, msg, {}};
    };
    try {
        CommandOutcome r;
        if (gen->parsed()) {
            r = detail::gen_data(o, out);
        } else if (fit->parsed()) {
            r = detail::fit_cmd(o, out);
        } else if (sim->parsed()) {
            r = detail::simulate_cmd(o, out);
        } else if (loop->parsed()) {
            r = detail::closed_loop_cmd(o, out);
        } else if (exp->parsed()) {
            r = detail::experiment_cmd(o, out);
        } else if (ver->parsed()) {
            r = detail::verify_cmd(o, out);
        } else {
            r = detail::inspect_cmd(o, out);
        }
        if (r.code != 0) {
            err << "error: " << r.message << "\n";
        }
        return r;
    } catch (const NumericalFailure& e) {
        return fail(2, e.what());
    } catch (const Error& e) {
        return fail(1, e.what());
    } catch (const json::exception& e) {
        return fail(1, std::string("malformed JSON: ") + e.what());
    } catch (const fs::filesystem_error& e) {
        return fail(1, e.what());
    } catch (const std::exception& e) {
        return fail(2, e.what());
    }
}

inline CommandOutcome run(const std::vector<std::string>& args, std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
    std::vector<const char*> argv{"fmk"};
    for (const auto& a : args) {
        argv.push_back(a.c_str());
    }
    return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace fmk::cli
