#pragma once

// File formats: trajectory and spike CSVs, dataset CSV (+ JSON sidecar),
// kernel spec and model JSON. Numbers are written with 17 significant digits
// so that a save/load round trip is bit-exact.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmk/error.hpp"
#include "fmk/kernel.hpp"
#include "fmk/regression.hpp"
#include "fmk/signal.hpp"

namespace fmk::io {

using json = nlohmann::json;

inline std::string format_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw FormatError("write failed for " + path.string());
    }
}

namespace detail {

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, sep)) {
        if (!field.empty() && field.back() == '\r') {
            field.pop_back();
        }
        out.push_back(field);
    }
    if (!line.empty() && line.back() == sep) {
        out.emplace_back();
    }
    return out;
}

inline double parse_number(const std::string& s, const std::string& where) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !std::isfinite(v)) {
            throw FormatError(where + ": invalid number '" + s + "'");
        }
        return v;
    } catch (const std::invalid_argument&) {
        throw FormatError(where + ": invalid number '" + s + "'");
    } catch (const std::out_of_range&) {
        throw FormatError(where + ": number out of range '" + s + "'");
    }
}

inline std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            lines.push_back(line);
        }
    }
    return lines;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Trajectory CSV: header "t,value", uniform step.

inline std::string trajectory_to_csv(const Trajectory& traj, const std::string& value_name = "value") {
    std::string out = "t," + value_name + "\n";
    for (std::size_t k = 0; k < traj.size(); ++k) {
        out += format_number(traj.time(k));
        out += ',';
        out += format_number(traj.values[k]);
        out += '\n';
    }
    return out;
}

/// Parses a trajectory, rejecting rows whose time deviates from the uniform lattice by more than 1e-9 dt.
inline Trajectory trajectory_from_csv(const std::string& text, const std::string& source = "trajectory") {
    const auto lines = detail::lines_of(text);
    if (lines.empty()) {
        throw FormatError(source + ": empty file");
    }
    const auto header = detail::split(lines[0]);
    if (header.size() != 2 || header[0] != "t") {
        throw FormatError(source + ": expected header 't,value'");
    }
    if (lines.size() < 3) {
        throw FormatError(source + ": need at least two samples");
    }
    std::vector<double> times;
    std::vector<double> values;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto fields = detail::split(lines[i]);
        const std::string where = source + " line " + std::to_string(i + 1);
        if (fields.size() != 2) {
            throw FormatError(where + ": expected 2 fields");
        }
        times.push_back(detail::parse_number(fields[0], where));
        values.push_back(detail::parse_number(fields[1], where));
    }
    const double t0 = times.front();
    const double dt = (times.back() - t0) / static_cast<double>(times.size() - 1);
    if (!(dt > 0.0)) {
        throw FormatError(source + ": times must increase");
    }
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double expected = t0 + static_cast<double>(k) * dt;
        if (std::abs(times[k] - expected) > 1e-9 * dt) {
            throw FormatError(source + ": non-uniform time step at row " + std::to_string(k + 2));
        }
    }
    // Prefer the first-step value when it is consistent; it round-trips exactly for files we wrote.
    const double first_step = times[1] - t0;
    const double step = std::abs(first_step - dt) <= 1e-12 * dt ? first_step : dt;
    return Trajectory(t0, step, std::move(values));
}

inline Trajectory read_trajectory(const std::filesystem::path& path) {
    return trajectory_from_csv(read_text(path), path.string());
}

inline void write_trajectory(const std::filesystem::path& path, const Trajectory& traj,
                             const std::string& value_name = "value") {
    write_text(path, trajectory_to_csv(traj, value_name));
}

inline void write_spikes(const std::filesystem::path& path, const std::vector<double>& spikes) {
    std::string out = "spike_time\n";
    for (double s : spikes) {
        out += format_number(s) + "\n";
    }
    write_text(path, out);
}

inline std::vector<double> read_spikes(const std::filesystem::path& path) {
    const auto lines = detail::lines_of(read_text(path));
    if (lines.empty() || lines[0] != "spike_time") {
        throw FormatError(path.string() + ": expected header 'spike_time'");
    }
    std::vector<double> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        out.push_back(detail::parse_number(lines[i], path.string()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Kernel spec JSON: {"variant": ..., "lambda": ..., "sigma": ..., "lambda2": ..., "sigma2": ...}

inline json kernel_to_json(const KernelSpec& spec) {
    json j;
    j["variant"] = kernel_name(spec);
    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            j["lambda"] = k.weight.rate();
            if constexpr (!std::is_same_v<K, BilinearKernel>) {
                j["sigma"] = k.sigma;
            }
            if constexpr (std::is_same_v<K, TwoScaleConductanceLpvKernel>) {
                j["lambda2"] = k.weight2.rate();
                j["sigma2"] = k.sigma2;
            }
        },
        spec);
    return j;
}

inline KernelSpec kernel_from_json(const json& j) {
    auto number = [&](const char* key) -> double {
        if (!j.contains(key) || !j[key].is_number()) {
            throw FormatError(std::string("kernel spec: missing numeric field '") + key + "'");
        }
        return j[key].get<double>();
    };
    if (!j.is_object() || !j.contains("variant") || !j["variant"].is_string()) {
        throw FormatError("kernel spec: missing 'variant'");
    }
    const auto variant = j["variant"].get<std::string>();
    try {
        if (variant == "bilinear") {
            return BilinearKernel{ExpWeight(number("lambda"))};
        }
        if (variant == "rbf") {
            return RbfKernel(ExpWeight(number("lambda")), number("sigma"));
        }
        if (variant == "lpv") {
            return LpvKernel(ExpWeight(number("lambda")), number("sigma"));
        }
        if (variant == "conductance_lpv") {
            return ConductanceLpvKernel(ExpWeight(number("lambda")), number("sigma"));
        }
        if (variant == "two_scale_conductance_lpv") {
            return TwoScaleConductanceLpvKernel(ExpWeight(number("lambda")), number("sigma"),
                                                ExpWeight(number("lambda2")), number("sigma2"));
        }
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("kernel spec: ") + e.what());
    }
    throw FormatError("kernel spec: unknown variant '" + variant + "'");
}

// ---------------------------------------------------------------------------
// Model JSON

inline json model_to_json(const TrainedModel& m) {
    json j;
    j["format"] = "fmk-model";
    j["version"] = 1;
    j["kernel"] = kernel_to_json(m.spec());
    j["gamma"] = m.gamma();
    j["grid"] = {{"dt", m.grid().dt()}, {"n", m.grid().size()}};
    std::vector<double> flat;
    flat.reserve(m.size() * m.grid().size());
    for (const auto& w : m.windows()) {
        flat.insert(flat.end(), w.samples().begin(), w.samples().end());
    }
    j["windows"] = flat;
    j["alpha"] = m.alpha();
    j["rkhs_norm_sq"] = m.rkhs_norm_sq();
    j["input_offset"] = m.metadata().input_offset;
    j["metadata"] = {{"dataset_hash", m.metadata().dataset_hash},
                     {"jitter_applied", m.metadata().jitter_applied},
                     {"jitter", m.metadata().jitter}};
    return j;
}

inline TrainedModel model_from_json(const json& j) {
    try {
        if (j.value("format", std::string()) != "fmk-model") {
            throw FormatError("model: not an fmk-model file");
        }
        const auto spec = kernel_from_json(j.at("kernel"));
        const TimeGrid grid(j.at("grid").at("dt").get<double>(), j.at("grid").at("n").get<std::size_t>());
        const auto flat = j.at("windows").get<std::vector<double>>();
        const auto alpha = j.at("alpha").get<std::vector<double>>();
        if (flat.size() != alpha.size() * grid.size()) {
            throw FormatError("model: windows array has " + std::to_string(flat.size()) + " values, expected " +
                              std::to_string(alpha.size() * grid.size()));
        }
        std::vector<PastWindow> windows;
        windows.reserve(alpha.size());
        for (std::size_t i = 0; i < alpha.size(); ++i) {
            const auto first = flat.begin() + static_cast<std::ptrdiff_t>(i * grid.size());
            windows.emplace_back(grid, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(grid.size())));
        }
        ModelMetadata meta;
        meta.input_offset = j.value("input_offset", 0.0);
        if (j.contains("metadata")) {
            const auto& md = j["metadata"];
            meta.dataset_hash = md.value("dataset_hash", std::string());
            meta.jitter_applied = md.value("jitter_applied", false);
            meta.jitter = md.value("jitter", 0.0);
        }
        return TrainedModel(spec, std::move(windows), alpha, j.at("gamma").get<double>(),
                            j.at("rkhs_norm_sq").get<double>(), std::move(meta));
    } catch (const json::exception& e) {
        throw FormatError(std::string("model: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("model: ") + e.what());
    }
}

inline void save_model(const std::filesystem::path& path, const TrainedModel& m) {
    write_text(path, model_to_json(m).dump(1) + "\n");
}

inline TrainedModel load_model(const std::filesystem::path& path) {
    try {
        return model_from_json(json::parse(read_text(path)));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline json read_json(const std::filesystem::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Dataset CSV: header "target,s0,...,s{n-1}", one row per pair (target then
// window samples oldest to newest). The grid step lives in the sidecar
// "<stem>.meta.json" next to it.

inline std::filesystem::path dataset_sidecar(const std::filesystem::path& csv) {
    auto p = csv;
    p.replace_extension(".meta.json");
    return p;
}

inline std::string dataset_to_csv(const Dataset& data) {
    std::string out = "target";
    for (std::size_t k = 0; k < data.grid().size(); ++k) {
        out += ",s" + std::to_string(k);
    }
    out += '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        out += format_number(data.targets()[i]);
        for (double s : data.windows()[i].samples()) {
            out += ',';
            out += format_number(s);
        }
        out += '\n';
    }
    return out;
}

inline Dataset dataset_from_csv(const std::string& text, double dt, const std::string& source = "dataset") {
    const auto lines = detail::lines_of(text);
    if (lines.size() < 2) {
        throw FormatError(source + ": need a header and at least one row");
    }
    const auto header = detail::split(lines[0]);
    if (header.size() < 3 || header[0] != "target") {
        throw FormatError(source + ": expected header 'target,s0,...'");
    }
    const TimeGrid grid(dt, header.size() - 1);
    std::vector<PastWindow> windows;
    std::vector<double> targets;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto fields = detail::split(lines[i]);
        const std::string where = source + " line " + std::to_string(i + 1);
        if (fields.size() != header.size()) {
            throw FormatError(where + ": expected " + std::to_string(header.size()) + " fields");
        }
        targets.push_back(detail::parse_number(fields[0], where));
        std::vector<double> samples(grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k) {
            samples[k] = detail::parse_number(fields[k + 1], where);
        }
        windows.emplace_back(grid, std::move(samples));
    }
    return Dataset(std::move(windows), std::move(targets));
}

inline void write_dataset(const std::filesystem::path& csv, const Dataset& data, json meta = json::object()) {
    write_text(csv, dataset_to_csv(data));
    meta["dt"] = data.grid().dt();
    meta["n"] = data.grid().size();
    meta["pairs"] = data.size();
    meta["dataset_hash"] = data.hash();
    write_json(dataset_sidecar(csv), meta);
}

/// Reads a dataset CSV; dt comes from the sidecar unless given explicitly (> 0).
inline Dataset read_dataset(const std::filesystem::path& csv, double dt = 0.0) {
    if (!(dt > 0.0)) {
        const auto side = dataset_sidecar(csv);
        if (!std::filesystem::exists(side)) {
            throw FormatError(csv.string() + ": missing sidecar " + side.string() + " (or pass dt)");
        }
        const auto meta = read_json(side);
        if (!meta.contains("dt") || !meta["dt"].is_number()) {
            throw FormatError(side.string() + ": missing 'dt'");
        }
        dt = meta["dt"].get<double>();
    }
    return dataset_from_csv(read_text(csv), dt, csv.string());
}

}  // namespace fmk::io
