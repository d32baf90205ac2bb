#pragma once

// Experiment protocols: probe generation, dataset sampling, training and
// evaluation for the six reference experiments, driven by declarative
// configs with seeded randomness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fmk/error.hpp"
#include "fmk/io.hpp"
#include "fmk/kernel.hpp"
#include "fmk/metrics.hpp"
#include "fmk/plants.hpp"
#include "fmk/regression.hpp"
#include "fmk/signal.hpp"
#include "fmk/simulate.hpp"

namespace fmk::harness {

using json = nlohmann::json;

enum class ExperimentId { Lti, SatlagRbf, LpvCompare, HhK, HhNa, HhClosedLoop };

inline const std::vector<std::pair<ExperimentId, std::string>>& experiment_names() {
    static const std::vector<std::pair<ExperimentId, std::string>> names = {
        {ExperimentId::Lti, "lti"},       {ExperimentId::SatlagRbf, "satlag-rbf"},
        {ExperimentId::LpvCompare, "lpv-compare"}, {ExperimentId::HhK, "hh-k"},
        {ExperimentId::HhNa, "hh-na"},    {ExperimentId::HhClosedLoop, "hh-closed-loop"}};
    return names;
}

inline std::string to_string(ExperimentId id) {
    for (const auto& [e, name] : experiment_names()) {
        if (e == id) {
            return name;
        }
    }
    return "unknown";
}

inline ExperimentId parse_experiment(const std::string& name) {
    for (const auto& [e, n] : experiment_names()) {
        if (n == name) {
            return e;
        }
    }
    throw InvalidArgument("unknown experiment '" + name + "'");
}

// ---------------------------------------------------------------------------
// Protocols

/// Sine probes of the LTI example, one pair per probe at the end of the record.
struct LtiProtocol {
    int probes = 100;
    double log_freq_min = -5.0;
    double log_freq_max = 5.0;
    double sample_time = 2.0;
    double horizon = 2.0;
    double dt = 0.01;
    std::vector<double> lambdas{1.0, 4.0, 6.0, 12.0, 30.0};
    double gamma = 1e-4;
    double test_duration = 3.0;
};

/// Sine grid over (0, max_freq] x (0, max_amp] probing the saturated lag.
struct SatlagProtocol {
    double threshold = 5.0;
    int freq_count = 10;
    int amp_count = 10;
    double max_freq = 30.0;
    double max_amp = 50.0;
    std::vector<double> sample_times{0.666, 1.333, 2.0};
    double horizon = 2.0;
    double dt = 0.01;
    double lambda = 4.0;
    // The printed "v = 0.25" is taken as the precision 1 / sigma^2.
    double sigma = 2.0;
    std::vector<double> gammas{1e-4, 1e-2};
    std::vector<double> test_steps{2.0, 10.0, 20.0, 30.0};
    double test_duration = 3.0;
};

struct LpvCompareProtocol {
    double threshold = 0.5;
    int step_count = 20;
    double step_min = -10.0;
    double step_max = 10.0;
    int sine_amp_count = 10;
    double sine_amp_max = 10.0;
    std::vector<double> sine_freqs{5.0, 10.0};
    int samples_per_response = 50;
    double record_duration = 5.0;
    double horizon = 10.0;
    double dt = 0.01;
    double lambda = 5.0;
    double sigma = 1.0;
    double gamma = 6e-4;
    double test_sine_freq = 5.0;
    double test_sine_amp = 8.0;
    /// Held-out step for the sine-trained models: the dataset amplitude nearest this value.
    double test_step_target = 8.0;
    double test_duration = 5.0;
};

enum class Channel { Potassium, Sodium };

/**
 * Step (and, for sodium, step-plus-impulse) probes of an HH channel held at
 * V_r before the step. Model inputs are the driving force V - E_rev.
 */
struct HhChannelProtocol {
    Channel channel = Channel::Potassium;
    int probes = 50;
    double amp_min = -4.9;
    double amp_max = 95.1;
    double hold = hh::kRest;
    double step_duration = 10.0;
    double impulse_phase = 0.0;       // recorded time after the impulse (sodium: 2)
    double impulse_amplitude = 20.0;  // one-sample pulse above the operating point
    int step_samples = 20;
    int impulse_samples = 0;
    double horizon = 10.0;
    double dt = 0.05;
    KernelSpec kernel = ConductanceLpvKernel(ExpWeight(0.2), 10.0);
    double gamma = 1e-4;
    double test_current = 10.0;  // constant I_ext producing the spike-train test voltage
    double test_duration = 100.0;

    static HhChannelProtocol potassium() { return {}; }

    static HhChannelProtocol sodium() {
        HhChannelProtocol p;
        p.channel = Channel::Sodium;
        p.probes = 40;
        p.step_duration = 13.0;
        p.impulse_phase = 2.0;
        p.step_samples = 25;
        p.impulse_samples = 25;
        p.horizon = 15.0;
        p.kernel = TwoScaleConductanceLpvKernel(ExpWeight(0.2), 9.5, ExpWeight(1.7), 2.5);
        p.gamma = 1e-7;
        return p;
    }

    [[nodiscard]] double reversal() const noexcept {
        return channel == Channel::Potassium ? hh::kPotassiumReversal : hh::kSodiumReversal;
    }
    [[nodiscard]] PlantSpec plant() const {
        return channel == Channel::Potassium ? PlantSpec{HhPotassium{}} : PlantSpec{HhSodium{}};
    }
};

/// Band-limited noise: white noise through a first-order filter, plus a baseline.
struct NoiseSpec {
    double cutoff = 1.0;
    double amplitude = 15.0;  // stationary standard deviation of the filtered part
    double baseline = 5.0;
};

struct ClosedLoopProtocol {
    HhCircuit circuit;
    double duration = 100.0;
    double reference_dt = 0.01;  // monolithic RK4 reference and oracle-mode loop
    NoiseSpec noise;
    double spike_threshold = 0.0;
    double refractory = 2.0;
};

struct ExperimentConfig {
    ExperimentId id = ExperimentId::Lti;
    std::uint64_t seed = 42;
    LtiProtocol lti;
    SatlagProtocol satlag;
    LpvCompareProtocol lpv;
    HhChannelProtocol potassium = HhChannelProtocol::potassium();
    HhChannelProtocol sodium = HhChannelProtocol::sodium();
    ClosedLoopProtocol closed_loop;
};

inline ExperimentConfig default_config(ExperimentId id) {
    ExperimentConfig cfg;
    cfg.id = id;
    return cfg;
}

// ---------------------------------------------------------------------------
// Config (de)serialization

namespace detail {

class SectionReader {
public:
    SectionReader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
        if (!j_.is_object()) {
            throw FormatError("config section '" + section_ + "' must be an object");
        }
    }

    template <typename T>
    SectionReader& get(const char* key, T& out) {
        seen_.insert(key);
        if (j_.contains(key)) {
            try {
                out = j_.at(key).get<T>();
            } catch (const json::exception&) {
                throw FormatError("config " + section_ + "." + key + ": wrong type");
            }
        }
        return *this;
    }

    SectionReader& kernel(const char* key, KernelSpec& out) {
        seen_.insert(key);
        if (j_.contains(key)) {
            out = io::kernel_from_json(j_.at(key));
        }
        return *this;
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) {
                throw FormatError("config " + section_ + ": unknown key '" + item.key() + "'");
            }
        }
    }

private:
    const json& j_;
    std::string section_;
    std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) {
        throw InvalidArgument("config: " + what);
    }
}

inline void require_positive(double x, const std::string& name) { require(x > 0.0 && std::isfinite(x), name + " must be positive"); }

}  // namespace detail

inline json to_json(const HhCircuit& c) {
    return {{"capacitance", c.capacitance}, {"leak_conductance", c.leak_conductance}, {"leak_reversal", c.leak_reversal}};
}

inline json to_json(const LtiProtocol& p) {
    return {{"probes", p.probes},           {"log_freq_min", p.log_freq_min}, {"log_freq_max", p.log_freq_max},
            {"sample_time", p.sample_time}, {"horizon", p.horizon},           {"dt", p.dt},
            {"lambdas", p.lambdas},         {"gamma", p.gamma},               {"test_duration", p.test_duration}};
}

inline json to_json(const SatlagProtocol& p) {
    return {{"threshold", p.threshold},   {"freq_count", p.freq_count},     {"amp_count", p.amp_count},
            {"max_freq", p.max_freq},     {"max_amp", p.max_amp},           {"sample_times", p.sample_times},
            {"horizon", p.horizon},       {"dt", p.dt},                     {"lambda", p.lambda},
            {"sigma", p.sigma},           {"gammas", p.gammas},             {"test_steps", p.test_steps},
            {"test_duration", p.test_duration}};
}

inline json to_json(const LpvCompareProtocol& p) {
    return {{"threshold", p.threshold},
            {"step_count", p.step_count},
            {"step_min", p.step_min},
            {"step_max", p.step_max},
            {"sine_amp_count", p.sine_amp_count},
            {"sine_amp_max", p.sine_amp_max},
            {"sine_freqs", p.sine_freqs},
            {"samples_per_response", p.samples_per_response},
            {"record_duration", p.record_duration},
            {"horizon", p.horizon},
            {"dt", p.dt},
            {"lambda", p.lambda},
            {"sigma", p.sigma},
            {"gamma", p.gamma},
            {"test_sine_freq", p.test_sine_freq},
            {"test_sine_amp", p.test_sine_amp},
            {"test_step_target", p.test_step_target},
            {"test_duration", p.test_duration}};
}

inline json to_json(const HhChannelProtocol& p) {
    return {{"channel", p.channel == Channel::Potassium ? "potassium" : "sodium"},
            {"probes", p.probes},
            {"amp_min", p.amp_min},
            {"amp_max", p.amp_max},
            {"hold", p.hold},
            {"step_duration", p.step_duration},
            {"impulse_phase", p.impulse_phase},
            {"impulse_amplitude", p.impulse_amplitude},
            {"step_samples", p.step_samples},
            {"impulse_samples", p.impulse_samples},
            {"horizon", p.horizon},
            {"dt", p.dt},
            {"kernel", io::kernel_to_json(p.kernel)},
            {"gamma", p.gamma},
            {"test_current", p.test_current},
            {"test_duration", p.test_duration}};
}

inline json to_json(const ClosedLoopProtocol& p) {
    return {{"circuit", to_json(p.circuit)},
            {"duration", p.duration},
            {"reference_dt", p.reference_dt},
            {"noise", {{"cutoff", p.noise.cutoff}, {"amplitude", p.noise.amplitude}, {"baseline", p.noise.baseline}}},
            {"spike_threshold", p.spike_threshold},
            {"refractory", p.refractory}};
}

/// Config echo: the sections the experiment actually uses.
inline json to_json(const ExperimentConfig& cfg) {
    json j = {{"experiment", to_string(cfg.id)}, {"seed", cfg.seed}};
    switch (cfg.id) {
        case ExperimentId::Lti: j["lti"] = to_json(cfg.lti); break;
        case ExperimentId::SatlagRbf: j["satlag"] = to_json(cfg.satlag); break;
        case ExperimentId::LpvCompare: j["lpv_compare"] = to_json(cfg.lpv); break;
        case ExperimentId::HhK: j["potassium"] = to_json(cfg.potassium); break;
        case ExperimentId::HhNa: j["sodium"] = to_json(cfg.sodium); break;
        case ExperimentId::HhClosedLoop:
            j["potassium"] = to_json(cfg.potassium);
            j["sodium"] = to_json(cfg.sodium);
            j["closed_loop"] = to_json(cfg.closed_loop);
            break;
    }
    return j;
}

inline HhCircuit circuit_from_json(const json& j, HhCircuit c = {}) {
    detail::SectionReader(j, "circuit")
        .get("capacitance", c.capacitance)
        .get("leak_conductance", c.leak_conductance)
        .get("leak_reversal", c.leak_reversal)
        .finish();
    detail::require_positive(c.capacitance, "circuit.capacitance");
    detail::require(c.leak_conductance >= 0.0, "circuit.leak_conductance must be non-negative");
    return c;
}

inline void validate(const ExperimentConfig& cfg) {
    using detail::require;
    using detail::require_positive;
    const auto& l = cfg.lti;
    require(l.probes >= 1, "lti.probes must be >= 1");
    require(l.log_freq_max >= l.log_freq_min, "lti.log_freq_max must be >= log_freq_min");
    require_positive(l.sample_time, "lti.sample_time");
    require_positive(l.horizon, "lti.horizon");
    require_positive(l.dt, "lti.dt");
    require_positive(l.gamma, "lti.gamma");
    require_positive(l.test_duration, "lti.test_duration");
    require(!l.lambdas.empty(), "lti.lambdas must be non-empty");
    for (double lam : l.lambdas) {
        require_positive(lam, "lti.lambdas entries");
    }
    const auto& s = cfg.satlag;
    require_positive(s.threshold, "satlag.threshold");
    require(s.freq_count >= 1 && s.amp_count >= 1, "satlag grid counts must be >= 1");
    require_positive(s.max_freq, "satlag.max_freq");
    require_positive(s.max_amp, "satlag.max_amp");
    require(!s.sample_times.empty(), "satlag.sample_times must be non-empty");
    for (double t : s.sample_times) {
        require_positive(t, "satlag.sample_times entries");
    }
    require_positive(s.horizon, "satlag.horizon");
    require_positive(s.dt, "satlag.dt");
    require_positive(s.lambda, "satlag.lambda");
    require_positive(s.sigma, "satlag.sigma");
    require(!s.gammas.empty(), "satlag.gammas must be non-empty");
    for (double g : s.gammas) {
        require_positive(g, "satlag.gammas entries");
    }
    require_positive(s.test_duration, "satlag.test_duration");
    const auto& p = cfg.lpv;
    require_positive(p.threshold, "lpv_compare.threshold");
    require(p.step_count >= 2 && p.sine_amp_count >= 2, "lpv_compare probe counts must be >= 2");
    require(p.step_max > p.step_min, "lpv_compare.step_max must exceed step_min");
    require_positive(p.sine_amp_max, "lpv_compare.sine_amp_max");
    require(!p.sine_freqs.empty(), "lpv_compare.sine_freqs must be non-empty");
    require(p.samples_per_response >= 1, "lpv_compare.samples_per_response must be >= 1");
    for (double v : {p.record_duration, p.horizon, p.dt, p.lambda, p.sigma, p.gamma, p.test_duration}) {
        require_positive(v, "lpv_compare numeric fields");
    }
    for (const auto* c : {&cfg.potassium, &cfg.sodium}) {
        require(c->probes >= 2, "channel probes must be >= 2");
        require(c->amp_max > c->amp_min, "channel amp_max must exceed amp_min");
        require_positive(c->step_duration, "channel step_duration");
        require(c->impulse_phase >= 0.0, "channel impulse_phase must be non-negative");
        require(c->step_samples >= 1, "channel step_samples must be >= 1");
        require(c->impulse_samples >= 0, "channel impulse_samples must be >= 0");
        require(c->impulse_samples == 0 || c->impulse_phase > 0.0, "impulse samples need a positive impulse_phase");
        require_positive(c->horizon, "channel horizon");
        require_positive(c->dt, "channel dt");
        require_positive(c->gamma, "channel gamma");
        require_positive(c->test_duration, "channel test_duration");
    }
    const auto& c = cfg.closed_loop;
    require_positive(c.duration, "closed_loop.duration");
    require_positive(c.reference_dt, "closed_loop.reference_dt");
    require_positive(c.noise.cutoff, "closed_loop.noise.cutoff");
    require(c.noise.amplitude >= 0.0, "closed_loop.noise.amplitude must be non-negative");
    require(c.refractory >= 0.0, "closed_loop.refractory must be non-negative");
    if (cfg.id == ExperimentId::HhClosedLoop) {
        require(same_step(cfg.potassium.dt, cfg.sodium.dt), "closed loop needs equal potassium and sodium dt");
    }
}

/// Overlays a JSON config on the defaults of its experiment. Unknown keys are rejected.
inline ExperimentConfig config_from_json(const json& j, std::optional<ExperimentId> forced = std::nullopt) {
    if (!j.is_object()) {
        throw FormatError("config: top level must be an object");
    }
    ExperimentId id = ExperimentId::Lti;
    if (j.contains("experiment")) {
        if (!j["experiment"].is_string()) {
            throw FormatError("config: 'experiment' must be a string");
        }
        id = parse_experiment(j["experiment"].get<std::string>());
        if (forced && *forced != id) {
            throw InvalidArgument("config: experiment '" + to_string(id) + "' does not match requested '" +
                                  to_string(*forced) + "'");
        }
    } else if (forced) {
        id = *forced;
    } else {
        throw FormatError("config: missing 'experiment'");
    }
    ExperimentConfig cfg = default_config(id);
    std::set<std::string> known = {"experiment", "seed", "lti", "satlag", "lpv_compare", "potassium", "sodium", "closed_loop"};
    for (const auto& item : j.items()) {
        if (!known.count(item.key())) {
            throw FormatError("config: unknown key '" + item.key() + "'");
        }
    }
    if (j.contains("seed")) {
        cfg.seed = j["seed"].get<std::uint64_t>();
    }
    if (j.contains("lti")) {
        auto& p = cfg.lti;
        detail::SectionReader(j["lti"], "lti")
            .get("probes", p.probes)
            .get("log_freq_min", p.log_freq_min)
            .get("log_freq_max", p.log_freq_max)
            .get("sample_time", p.sample_time)
            .get("horizon", p.horizon)
            .get("dt", p.dt)
            .get("lambdas", p.lambdas)
            .get("gamma", p.gamma)
            .get("test_duration", p.test_duration)
            .finish();
    }
    if (j.contains("satlag")) {
        auto& p = cfg.satlag;
        detail::SectionReader(j["satlag"], "satlag")
            .get("threshold", p.threshold)
            .get("freq_count", p.freq_count)
            .get("amp_count", p.amp_count)
            .get("max_freq", p.max_freq)
            .get("max_amp", p.max_amp)
            .get("sample_times", p.sample_times)
            .get("horizon", p.horizon)
            .get("dt", p.dt)
            .get("lambda", p.lambda)
            .get("sigma", p.sigma)
            .get("gammas", p.gammas)
            .get("test_steps", p.test_steps)
            .get("test_duration", p.test_duration)
            .finish();
    }
    if (j.contains("lpv_compare")) {
        auto& p = cfg.lpv;
        detail::SectionReader(j["lpv_compare"], "lpv_compare")
            .get("threshold", p.threshold)
            .get("step_count", p.step_count)
            .get("step_min", p.step_min)
            .get("step_max", p.step_max)
            .get("sine_amp_count", p.sine_amp_count)
            .get("sine_amp_max", p.sine_amp_max)
            .get("sine_freqs", p.sine_freqs)
            .get("samples_per_response", p.samples_per_response)
            .get("record_duration", p.record_duration)
            .get("horizon", p.horizon)
            .get("dt", p.dt)
            .get("lambda", p.lambda)
            .get("sigma", p.sigma)
            .get("gamma", p.gamma)
            .get("test_sine_freq", p.test_sine_freq)
            .get("test_sine_amp", p.test_sine_amp)
            .get("test_step_target", p.test_step_target)
            .get("test_duration", p.test_duration)
            .finish();
    }
    for (auto [key, proto] : {std::pair{"potassium", &cfg.potassium}, std::pair{"sodium", &cfg.sodium}}) {
        if (!j.contains(key)) {
            continue;
        }
        auto& p = *proto;
        std::string channel = p.channel == Channel::Potassium ? "potassium" : "sodium";
        detail::SectionReader(j[key], key)
            .get("channel", channel)
            .get("probes", p.probes)
            .get("amp_min", p.amp_min)
            .get("amp_max", p.amp_max)
            .get("hold", p.hold)
            .get("step_duration", p.step_duration)
            .get("impulse_phase", p.impulse_phase)
            .get("impulse_amplitude", p.impulse_amplitude)
            .get("step_samples", p.step_samples)
            .get("impulse_samples", p.impulse_samples)
            .get("horizon", p.horizon)
            .get("dt", p.dt)
            .kernel("kernel", p.kernel)
            .get("gamma", p.gamma)
            .get("test_current", p.test_current)
            .get("test_duration", p.test_duration)
            .finish();
        if (channel != key) {
            throw FormatError(std::string("config ") + key + ".channel must be '" + key + "'");
        }
    }
    if (j.contains("closed_loop")) {
        auto& p = cfg.closed_loop;
        const auto& s = j["closed_loop"];
        detail::SectionReader reader(s, "closed_loop");
        json circuit = json::object();
        json noise = json::object();
        reader.get("circuit", circuit)
            .get("duration", p.duration)
            .get("reference_dt", p.reference_dt)
            .get("noise", noise)
            .get("spike_threshold", p.spike_threshold)
            .get("refractory", p.refractory)
            .finish();
        p.circuit = circuit_from_json(circuit, p.circuit);
        detail::SectionReader(noise, "closed_loop.noise")
            .get("cutoff", p.noise.cutoff)
            .get("amplitude", p.noise.amplitude)
            .get("baseline", p.noise.baseline)
            .finish();
    }
    validate(cfg);
    return cfg;
}

// ---------------------------------------------------------------------------
// Probes and datasets

/// One probe experiment: the input applied to the plant and the sample indices taken from it.
struct Probe {
    Trajectory input;
    std::vector<std::size_t> samples;
};

struct GeneratedDataset {
    Dataset data;
    std::vector<Probe> probes;
    PlantSpec plant;
    std::vector<double> initial_state;
    double input_offset = 0.0;
};

inline std::size_t steps_for(double duration, double dt) {
    return static_cast<std::size_t>(std::llround(duration / dt));
}

/// count values a + (b - a) * i / (count - 1).
inline std::vector<double> linspace(double a, double b, int count) {
    std::vector<double> out(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        out[static_cast<std::size_t>(i)] = count == 1 ? a : a + (b - a) * i / (count - 1);
    }
    return out;
}

/// count indices uniformly spread over (first, last]: first + round((last - first) i / count), i = 1..count.
inline std::vector<std::size_t> uniform_indices(std::size_t first, std::size_t last, int count) {
    std::vector<std::size_t> out;
    out.reserve(static_cast<std::size_t>(count));
    const double span = static_cast<double>(last - first);
    for (int i = 1; i <= count; ++i) {
        out.push_back(first + static_cast<std::size_t>(std::llround(span * i / count)));
    }
    return out;
}

inline Trajectory sine_input(double amplitude, double omega, double duration, double dt) {
    const std::size_t n = steps_for(duration, dt) + 1;
    std::vector<double> v(n);
    for (std::size_t k = 0; k < n; ++k) {
        v[k] = amplitude * std::sin(omega * static_cast<double>(k) * dt);
    }
    return Trajectory(0.0, dt, std::move(v));
}

/// Rest value at t = 0, `level` from the next sample on.
inline Trajectory step_input(double rest, double level, double duration, double dt) {
    const std::size_t n = steps_for(duration, dt) + 1;
    std::vector<double> v(n, level);
    v[0] = rest;
    return Trajectory(0.0, dt, std::move(v));
}

namespace detail {

inline GeneratedDataset sample_probes(std::vector<Probe> probes, const PlantSpec& plant,
                                      const std::vector<double>& x0, const TimeGrid& grid, double offset) {
    std::vector<PastWindow> windows;
    std::vector<double> targets;
    for (const auto& probe : probes) {
        const auto out = simulate_plant(plant, probe.input, x0);
        for (std::size_t idx : probe.samples) {
            windows.push_back(window_at_index(probe.input, idx, grid, offset));
            targets.push_back(out.values[idx]);
        }
    }
    return GeneratedDataset{Dataset(std::move(windows), std::move(targets)), std::move(probes), plant, x0, offset};
}

}  // namespace detail

/// 100 log-spaced sine probes on the LTI example; one (window, y(sample_time)) pair each.
inline GeneratedDataset gen_lti_dataset(const LtiProtocol& p) {
    const TimeGrid grid = TimeGrid::with_horizon(p.dt, p.horizon);
    const std::size_t idx = steps_for(p.sample_time, p.dt);
    std::vector<Probe> probes;
    for (double logw : linspace(p.log_freq_min, p.log_freq_max, p.probes)) {
        probes.push_back({sine_input(1.0, std::exp(logw), p.sample_time, p.dt), {idx}});
    }
    const PlantSpec plant = LtiExample{};
    return detail::sample_probes(std::move(probes), plant, resting_state(plant), grid, 0.0);
}

/// Sine grid on the saturated lag, sampled at the configured times (nearest grid sample).
inline GeneratedDataset gen_satlag_dataset(const SatlagProtocol& p) {
    const TimeGrid grid = TimeGrid::with_horizon(p.dt, p.horizon);
    const double record = *std::max_element(p.sample_times.begin(), p.sample_times.end());
    std::vector<std::size_t> idx;
    for (double t : p.sample_times) {
        idx.push_back(steps_for(t, p.dt));
    }
    std::vector<Probe> probes;
    for (int i = 1; i <= p.freq_count; ++i) {
        for (int a = 1; a <= p.amp_count; ++a) {
            const double omega = p.max_freq * i / p.freq_count;
            const double amp = p.max_amp * a / p.amp_count;
            probes.push_back({sine_input(amp, omega, record, p.dt), idx});
        }
    }
    const PlantSpec plant = SatLag{p.threshold};
    return detail::sample_probes(std::move(probes), plant, resting_state(plant), grid, 0.0);
}

struct LpvDatasets {
    GeneratedDataset steps;
    GeneratedDataset sines;
};

inline std::vector<double> lpv_step_amplitudes(const LpvCompareProtocol& p) {
    return linspace(p.step_min, p.step_max, p.step_count);
}

inline GeneratedDataset gen_lpv_step_dataset(const LpvCompareProtocol& p) {
    const TimeGrid grid = TimeGrid::with_horizon(p.dt, p.horizon);
    const std::size_t last = steps_for(p.record_duration, p.dt);
    const auto idx = uniform_indices(0, last, p.samples_per_response);
    std::vector<Probe> probes;
    for (double a : lpv_step_amplitudes(p)) {
        probes.push_back({step_input(0.0, a, p.record_duration, p.dt), idx});
    }
    const PlantSpec plant = SatLag{p.threshold};
    return detail::sample_probes(std::move(probes), plant, resting_state(plant), grid, 0.0);
}

inline GeneratedDataset gen_lpv_sine_dataset(const LpvCompareProtocol& p) {
    const TimeGrid grid = TimeGrid::with_horizon(p.dt, p.horizon);
    const std::size_t last = steps_for(p.record_duration, p.dt);
    const auto idx = uniform_indices(0, last, p.samples_per_response);
    std::vector<Probe> probes;
    for (double omega : p.sine_freqs) {
        for (double amp : linspace(0.0, p.sine_amp_max, p.sine_amp_count)) {
            probes.push_back({sine_input(amp, omega, p.record_duration, p.dt), idx});
        }
    }
    const PlantSpec plant = SatLag{p.threshold};
    return detail::sample_probes(std::move(probes), plant, resting_state(plant), grid, 0.0);
}

inline LpvDatasets gen_lpv_compare_datasets(const LpvCompareProtocol& p) {
    return {gen_lpv_step_dataset(p), gen_lpv_sine_dataset(p)};
}

/**
 * Channel probes: hold at V_r, step by each amplitude, optionally a one-sample
 * impulse after step_duration, recorded impulse_phase longer. Step-phase
 * samples span the whole record; impulse-phase samples span the part after the impulse.
 */
inline GeneratedDataset gen_hh_channel_dataset(const HhChannelProtocol& p) {
    const TimeGrid grid = TimeGrid::with_horizon(p.dt, p.horizon);
    const std::size_t impulse = steps_for(p.step_duration, p.dt);
    const std::size_t last = steps_for(p.step_duration + p.impulse_phase, p.dt);
    std::vector<std::size_t> idx = uniform_indices(0, last, p.step_samples);
    if (p.impulse_samples > 0) {
        const auto tail = uniform_indices(impulse, last, p.impulse_samples);
        idx.insert(idx.end(), tail.begin(), tail.end());
    }
    std::vector<Probe> probes;
    for (double a : linspace(p.amp_min, p.amp_max, p.probes)) {
        auto input = step_input(p.hold, p.hold + a, p.step_duration + p.impulse_phase, p.dt);
        if (p.impulse_phase > 0.0) {
            input.values[impulse] += p.impulse_amplitude;
        }
        probes.push_back({std::move(input), idx});
    }
    const PlantSpec plant = p.plant();
    return detail::sample_probes(std::move(probes), plant, resting_state(plant, p.hold), grid, p.reversal());
}

inline void require_experiment(const ExperimentConfig& cfg, std::initializer_list<ExperimentId> allowed,
                               const char* what) {
    if (std::find(allowed.begin(), allowed.end(), cfg.id) == allowed.end()) {
        throw InvalidArgument(std::string(what) + ": not applicable to experiment '" + to_string(cfg.id) + "'");
    }
}

inline GeneratedDataset gen_lti_dataset(const ExperimentConfig& cfg) {
    require_experiment(cfg, {ExperimentId::Lti}, "gen_lti_dataset");
    return gen_lti_dataset(cfg.lti);
}

inline GeneratedDataset gen_satlag_dataset(const ExperimentConfig& cfg) {
    require_experiment(cfg, {ExperimentId::SatlagRbf}, "gen_satlag_dataset");
    return gen_satlag_dataset(cfg.satlag);
}

inline LpvDatasets gen_lpv_compare_datasets(const ExperimentConfig& cfg) {
    require_experiment(cfg, {ExperimentId::LpvCompare}, "gen_lpv_compare_datasets");
    return gen_lpv_compare_datasets(cfg.lpv);
}

inline GeneratedDataset gen_hh_channel_dataset(const ExperimentConfig& cfg) {
    require_experiment(cfg, {ExperimentId::HhK, ExperimentId::HhNa}, "gen_hh_channel_dataset");
    return gen_hh_channel_dataset(cfg.id == ExperimentId::HhK ? cfg.potassium : cfg.sodium);
}

/// Sidecar metadata for a generated dataset: plant, initial state, protocol echo.
inline json dataset_metadata(const GeneratedDataset& g, const json& protocol) {
    json plant = {{"name", plant_name(g.plant)}};
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, SatLag>) {
                plant["threshold"] = p.threshold;
            } else if constexpr (std::is_same_v<P, HhPotassium>) {
                plant["V_r"] = hh::kRest;
                plant["V_K"] = hh::kPotassiumReversal;
                plant["g_K"] = hh::kPotassiumConductance;
            } else if constexpr (std::is_same_v<P, HhSodium>) {
                plant["V_r"] = hh::kRest;
                plant["V_Na"] = hh::kSodiumReversal;
                plant["g_Na"] = hh::kSodiumConductance;
            } else if constexpr (std::is_same_v<P, LtiExample>) {
                plant["transfer_function"] = "(s+1)/((s+3)(s+10))";
            }
        },
        g.plant);
    return {{"plant", plant},
            {"initial_state", g.initial_state},
            {"input_offset", g.input_offset},
            {"probes", g.probes.size()},
            {"protocol", protocol}};
}

// ---------------------------------------------------------------------------
// Test signals

/// Seeded band-limited noise: exact discretization of an Ornstein-Uhlenbeck
/// process (cutoff rad/unit, stationary std = amplitude) started at zero, plus baseline.
inline Trajectory band_limited_noise(std::uint64_t seed, const NoiseSpec& spec, double duration, double dt) {
    const std::size_t n = steps_for(duration, dt) + 1;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double a = std::exp(-spec.cutoff * dt);
    const double scale = spec.amplitude * std::sqrt(1.0 - a * a);
    std::vector<double> v(n);
    double x = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        v[k] = spec.baseline + x;
        x = a * x + scale * normal(rng);
    }
    return Trajectory(0.0, dt, std::move(v));
}

/// Membrane voltage of the HH circuit (RK4, from rest) under a constant current.
inline Trajectory spike_train_voltage(const HhCircuit& circuit, double current, double duration, double dt) {
    const Trajectory i_ext(0.0, dt, std::vector<double>(steps_for(duration, dt) + 1, current));
    const PlantSpec plant = circuit;
    return simulate_plant(plant, i_ext, resting_state(plant));
}

inline TrainedModel train_channel(const HhChannelProtocol& p, unsigned threads = default_threads()) {
    const auto g = gen_hh_channel_dataset(p);
    return with_input_offset(fit(g.data, p.kernel, p.gamma, threads), p.reversal());
}

// ---------------------------------------------------------------------------
// Reports and output management

struct ExperimentReport {
    json metrics = json::object();
    json traces = json::object();  // trace file -> metric it is scored by
    std::vector<std::string> files;
    json config;
    json notes = json::object();

    void metric(const std::string& name, double value) {
        if (!std::isfinite(value)) {
            throw NumericalFailure("report: metric '" + name + "' is not finite");
        }
        metrics[name] = value;
    }

    [[nodiscard]] json to_json() const {
        return {{"metrics", metrics}, {"traces", traces}, {"files", files}, {"config", config}, {"notes", notes}};
    }
};

/// Tracks files written into an output directory and removes them unless committed.
class OutputDir {
public:
    explicit OutputDir(std::filesystem::path dir) : dir_(std::move(dir)) {
        created_dir_ = !std::filesystem::exists(dir_);
        std::filesystem::create_directories(dir_);
    }
    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;
    ~OutputDir() {
        if (committed_) {
            return;
        }
        std::error_code ec;
        for (const auto& f : written_) {
            std::filesystem::remove(dir_ / f, ec);
        }
        if (created_dir_ && std::filesystem::is_empty(dir_, ec)) {
            std::filesystem::remove(dir_, ec);
        }
    }

    std::filesystem::path add(const std::string& name) {
        written_.push_back(name);
        return dir_ / name;
    }
    void trajectory(const std::string& name, const Trajectory& t, const std::string& value_name = "value") {
        io::write_trajectory(add(name), t, value_name);
    }
    void model(const std::string& name, const TrainedModel& m) { io::save_model(add(name), m); }
    void json_file(const std::string& name, const json& j) { io::write_json(add(name), j); }
    void dataset(const std::string& name, const GeneratedDataset& g, const json& protocol) {
        const auto path = add(name);
        written_.push_back(io::dataset_sidecar(path).filename().string());
        io::write_dataset(path, g.data, dataset_metadata(g, protocol));
    }
    void spikes(const std::string& name, const std::vector<double>& s) { io::write_spikes(add(name), s); }

    [[nodiscard]] const std::vector<std::string>& written() const noexcept { return written_; }
    [[nodiscard]] const std::filesystem::path& path() const noexcept { return dir_; }
    void commit() noexcept { committed_ = true; }

private:
    std::filesystem::path dir_;
    std::vector<std::string> written_;
    bool created_dir_ = false;
    bool committed_ = false;
};

inline std::string tag(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
}

// ---------------------------------------------------------------------------
// Experiments

namespace detail {

inline json circuit_note(const HhCircuit& c) {
    json j = to_json(c);
    j["assumed"] = "leak parameters are not given by the reference model; classic squid-axon values";
    return j;
}

inline void run_lti(const ExperimentConfig& cfg, OutputDir& out, ExperimentReport& rep, unsigned threads) {
    const auto& p = cfg.lti;
    const auto g = gen_lti_dataset(p);
    out.dataset("dataset.csv", g, to_json(p));
    const auto input = step_input(0.0, 1.0, p.test_duration, p.dt);
    const auto truth = simulate_plant(LtiExample{}, input, resting_state(LtiExample{}));
    out.trajectory("trace_step_input.csv", input);
    out.trajectory("trace_step_true.csv", truth);
    rep.metric("step_final_true", truth.values.back());
    rep.traces["trace_step_true.csv"] = "step_final_true";
    for (double lambda : p.lambdas) {
        const auto model = fit(g.data, BilinearKernel{ExpWeight(lambda)}, p.gamma, threads);
        const auto pred = simulate_open_loop(model, input);
        const std::string t = tag(lambda);
        out.model("model_lambda_" + t + ".json", model);
        out.trajectory("trace_step_lambda_" + t + ".csv", pred);
        rep.metric("step_rel_l2_lambda_" + t, relative_l2_error(pred.values, truth.values));
        rep.metric("step_final_lambda_" + t, pred.values.back());
        rep.metric("rkhs_norm_lambda_" + t, rkhs_norm(model));
        rep.traces["trace_step_lambda_" + t + ".csv"] = "step_rel_l2_lambda_" + t;
    }
    rep.notes["regime"] = "slowest plant pole is 3; lambda below it keeps the whole impulse response in view";
}

inline void run_satlag(const ExperimentConfig& cfg, OutputDir& out, ExperimentReport& rep, unsigned threads) {
    const auto& p = cfg.satlag;
    const auto g = gen_satlag_dataset(p);
    out.dataset("dataset.csv", g, to_json(p));
    const RbfKernel kernel(ExpWeight(p.lambda), p.sigma);
    const PlantSpec plant = SatLag{p.threshold};
    const double r = 1.0 / p.sigma;
    rep.notes["sample_times_used"] = [&] {
        json ts = json::array();
        for (double t : p.sample_times) {
            ts.push_back(static_cast<double>(steps_for(t, p.dt)) * p.dt);
        }
        return ts;
    }();
    rep.notes["kernel_lipschitz_r"] = "r = 1/sigma";
    rep.notes["sigma_reading"] = "printed v = 0.25 taken as 1/sigma^2 (sigma = 2); sigma is configurable";
    for (double gamma : p.gammas) {
        const auto model = fit(g.data, kernel, gamma, threads);
        const std::string gt = tag(gamma);
        out.model("model_gamma_" + gt + ".json", model);
        const auto cert = small_gain_check(model, r, kernel.weight, std::numeric_limits<double>::infinity());
        rep.metric("beta_gamma_" + gt, cert.beta);
        rep.metric("c_gamma_" + gt, cert.c);
        rep.metric("certified_gamma_" + gt, cert.certified ? 1.0 : 0.0);
        rep.metric("rkhs_norm_gamma_" + gt, rkhs_norm(model));
        for (double a : p.test_steps) {
            const auto input = step_input(0.0, a, p.test_duration, p.dt);
            const auto truth = simulate_plant(plant, input, resting_state(plant));
            const auto pred = simulate_open_loop(model, input);
            const std::string st = tag(a);
            if (gamma == p.gammas.front()) {
                out.trajectory("trace_step_" + st + "_input.csv", input);
                out.trajectory("trace_step_" + st + "_true.csv", truth);
                rep.metric("step_final_true_" + st, truth.values.back());
                rep.traces["trace_step_" + st + "_true.csv"] = "step_final_true_" + st;
            }
            const std::string name = "trace_step_" + st + "_gamma_" + gt + ".csv";
            out.trajectory(name, pred);
            rep.metric("step_rel_l2_" + st + "_gamma_" + gt, relative_l2_error(pred.values, truth.values));
            rep.traces[name] = "step_rel_l2_" + st + "_gamma_" + gt;
        }
    }
}

inline double nearest_amplitude(const std::vector<double>& amps, double target) {
    return *std::min_element(amps.begin(), amps.end(),
                             [&](double a, double b) { return std::abs(a - target) < std::abs(b - target); });
}

inline void run_lpv_compare(const ExperimentConfig& cfg, OutputDir& out, ExperimentReport& rep, unsigned threads) {
    const auto& p = cfg.lpv;
    const auto sets = gen_lpv_compare_datasets(p);
    out.dataset("dataset_step.csv", sets.steps, to_json(p));
    out.dataset("dataset_sine.csv", sets.sines, to_json(p));
    const PlantSpec plant = SatLag{p.threshold};
    const ExpWeight w(p.lambda);
    const KernelSpec lpv = LpvKernel(w, p.sigma);
    const KernelSpec rbf = RbfKernel(w, p.sigma);

    const auto sine = sine_input(p.test_sine_amp, p.test_sine_freq, p.test_duration, p.dt);
    const double step_amp = nearest_amplitude(lpv_step_amplitudes(p), p.test_step_target);
    const auto step = step_input(0.0, step_amp, p.test_duration, p.dt);
    rep.notes["test_step_amplitude"] = step_amp;

    struct Case {
        const GeneratedDataset* train;
        const Trajectory* test;
        std::string name;
    };
    for (const auto& c : {Case{&sets.steps, &sine, "step_to_sine"}, Case{&sets.sines, &step, "sine_to_step"}}) {
        const auto truth = simulate_plant(plant, *c.test, resting_state(plant));
        const std::string test_name = c.name.substr(c.name.rfind('_') + 1);
        out.trajectory("trace_" + test_name + "_input.csv", *c.test);
        out.trajectory("trace_" + test_name + "_true.csv", truth);
        rep.metric(test_name + "_true_rms", rms_difference(truth.values, std::vector<double>(truth.size(), 0.0)));
        rep.traces["trace_" + test_name + "_true.csv"] = test_name + "_true_rms";
        for (const auto& [kname, kspec] : {std::pair{std::string("lpv"), lpv}, std::pair{std::string("rbf"), rbf}}) {
            const auto model = fit(c.train->data, kspec, p.gamma, threads);
            const auto pred = simulate_open_loop(model, *c.test);
            const std::string metric = kname + "_" + c.name + "_rel_l2";
            out.model("model_" + kname + "_" + c.name.substr(0, c.name.find('_')) + ".json", model);
            out.trajectory("trace_" + test_name + "_" + kname + ".csv", pred);
            rep.metric(metric, relative_l2_error(pred.values, truth.values));
            rep.traces["trace_" + test_name + "_" + kname + ".csv"] = metric;
        }
    }
}

inline void run_channel(const HhChannelProtocol& p, const HhCircuit& circuit, const std::string& prefix,
                        OutputDir& out, ExperimentReport& rep, unsigned threads) {
    const auto g = gen_hh_channel_dataset(p);
    out.dataset("dataset" + prefix + ".csv", g, to_json(p));
    const auto model = with_input_offset(fit(g.data, p.kernel, p.gamma, threads), p.reversal());
    out.model("model" + prefix + ".json", model);
    const auto v = spike_train_voltage(circuit, p.test_current, p.test_duration, p.dt);
    const PlantSpec plant = p.plant();
    const auto truth = simulate_plant(plant, v, resting_state(plant, v.values.front()));
    const auto pred = simulate_open_loop(model, v);
    out.trajectory("trace" + prefix + "_test_voltage.csv", v);
    out.trajectory("trace" + prefix + "_true_current.csv", truth);
    out.trajectory("trace" + prefix + "_model_current.csv", pred);
    const std::string m = "open_loop_rel_l2" + prefix;
    rep.metric(m, relative_l2_error(pred.values, truth.values));
    rep.metric("rkhs_norm" + prefix, rkhs_norm(model));
    rep.metric("jitter_applied" + prefix, model.metadata().jitter_applied ? 1.0 : 0.0);
    rep.metric("test_spikes" + prefix, static_cast<double>(detect_spikes(v).size()));
    rep.traces["trace" + prefix + "_test_voltage.csv"] = "test_spikes" + prefix;
    rep.traces["trace" + prefix + "_true_current.csv"] = m;
    rep.traces["trace" + prefix + "_model_current.csv"] = m;
}

inline void run_closed_loop(const ExperimentConfig& cfg, OutputDir& out, ExperimentReport& rep, unsigned threads) {
    const auto& p = cfg.closed_loop;
    const auto k_data = gen_hh_channel_dataset(cfg.potassium);
    const auto na_data = gen_hh_channel_dataset(cfg.sodium);
    out.dataset("dataset_k.csv", k_data, to_json(cfg.potassium));
    out.dataset("dataset_na.csv", na_data, to_json(cfg.sodium));
    const auto k_model =
        with_input_offset(fit(k_data.data, cfg.potassium.kernel, cfg.potassium.gamma, threads), cfg.potassium.reversal());
    const auto na_model =
        with_input_offset(fit(na_data.data, cfg.sodium.kernel, cfg.sodium.gamma, threads), cfg.sodium.reversal());
    out.model("model_k.json", k_model);
    out.model("model_na.json", na_model);

    const auto i_ext = band_limited_noise(cfg.seed, p.noise, p.duration, p.reference_dt);
    out.trajectory("trace_input_current.csv", i_ext);
    const PlantSpec plant = p.circuit;
    const auto v_true = simulate_plant(plant, i_ext, resting_state(plant));

    ClosedLoopConfig loop;
    loop.circuit = p.circuit;
    loop.dt = cfg.potassium.dt;
    loop.duration = p.duration;
    loop.v0 = hh::kRest;
    loop.i_ext = i_ext;
    const auto v_kernel = simulate_closed_loop(k_model, na_model, loop);

    ClosedLoopConfig oracle = loop;
    oracle.dt = p.reference_dt;
    const auto v_oracle = simulate_closed_loop_oracle(oracle);

    out.trajectory("trace_true_voltage.csv", v_true);
    out.trajectory("trace_kernel_voltage.csv", v_kernel);
    out.trajectory("trace_oracle_voltage.csv", v_oracle);

    const auto s_true = detect_spikes(v_true, p.spike_threshold, p.refractory);
    const auto s_kernel = detect_spikes(v_kernel, p.spike_threshold, p.refractory);
    out.spikes("spikes_true.csv", s_true);
    out.spikes("spikes_kernel.csv", s_kernel);
    const auto match = match_spikes(s_true, s_kernel);

    rep.metric("spikes_true", static_cast<double>(s_true.size()));
    rep.metric("spikes_kernel", static_cast<double>(s_kernel.size()));
    rep.metric("spike_count_difference", static_cast<double>(s_kernel.size()) - static_cast<double>(s_true.size()));
    rep.metric("matched_spikes", static_cast<double>(match.pairs.size()));
    rep.metric("max_spike_misalignment", match.max_misalignment);
    rep.metric("oracle_rms_mV", rms_difference(v_oracle.values, v_true.values));
    rep.metric("input_mean", [&] {
        double s = 0.0;
        for (double x : i_ext.values) {
            s += x;
        }
        return s / static_cast<double>(i_ext.size());
    }());
    rep.traces["trace_input_current.csv"] = "input_mean";
    rep.traces["trace_true_voltage.csv"] = "spikes_true";
    rep.traces["trace_kernel_voltage.csv"] = "spikes_kernel";
    rep.traces["trace_oracle_voltage.csv"] = "oracle_rms_mV";
    rep.notes["circuit"] = circuit_note(p.circuit);
    rep.notes["noise"] = "Ornstein-Uhlenbeck current, cutoff " + tag(p.noise.cutoff) + " rad/unit, std " +
                         tag(p.noise.amplitude) + ", baseline " + tag(p.noise.baseline) + ", seed " +
                         std::to_string(cfg.seed);
    rep.notes["integrators"] = "reference: RK4 at reference_dt; kernel loop: explicit Euler at model dt; "
                               "oracle loop: explicit Euler at reference_dt";
}

}  // namespace detail

/// Generates data, fits, evaluates and writes every artifact plus report.json
/// into out_dir. Files written by a failed run are removed.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                       unsigned threads = default_threads()) {
    validate(cfg);
    OutputDir out(out_dir);
    ExperimentReport rep;
    rep.config = to_json(cfg);
    switch (cfg.id) {
        case ExperimentId::Lti: detail::run_lti(cfg, out, rep, threads); break;
        case ExperimentId::SatlagRbf: detail::run_satlag(cfg, out, rep, threads); break;
        case ExperimentId::LpvCompare: detail::run_lpv_compare(cfg, out, rep, threads); break;
        case ExperimentId::HhK:
            detail::run_channel(cfg.potassium, cfg.closed_loop.circuit, "", out, rep, threads);
            rep.notes["circuit"] = detail::circuit_note(cfg.closed_loop.circuit);
            break;
        case ExperimentId::HhNa:
            detail::run_channel(cfg.sodium, cfg.closed_loop.circuit, "", out, rep, threads);
            rep.notes["circuit"] = detail::circuit_note(cfg.closed_loop.circuit);
            break;
        case ExperimentId::HhClosedLoop: detail::run_closed_loop(cfg, out, rep, threads); break;
    }
    out.add("report.json");
    rep.files = out.written();
    io::write_json(out.path() / "report.json", rep.to_json());
    out.commit();
    return rep;
}

}  // namespace fmk::harness
