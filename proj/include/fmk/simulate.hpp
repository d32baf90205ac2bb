#pragma once

// Forward simulation of identified memory functionals: sliding the functional
// along an input (open loop) and closing the HH circuit around two channel
// models (closed loop).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fmk/error.hpp"
#include "fmk/plants.hpp"
#include "fmk/regression.hpp"
#include "fmk/signal.hpp"

namespace fmk {

/// y(t_k) = F(window of (input - input_offset) ending at t_k) for every sample.
inline Trajectory simulate_open_loop(const TrainedModel& model, const Trajectory& input) {
    if (!same_step(input.dt, model.grid().dt())) {
        throw GridMismatch("simulate_open_loop: input step " + std::to_string(input.dt) +
                           " differs from model grid step " + std::to_string(model.grid().dt()));
    }
    Trajectory out(input.t0, input.dt, std::vector<double>(input.size()));
    const double offset = model.metadata().input_offset;
    for (std::size_t k = 0; k < input.size(); ++k) {
        out.values[k] = model(window_at_index(input, k, model.grid(), offset));
    }
    return out;
}

/// Linear interpolation of a sampled signal; constant outside the recorded span.
inline double sample_at(const Trajectory& traj, double t) {
    if (traj.size() == 0) {
        throw InvalidArgument("sample_at: empty trajectory");
    }
    const double pos = (t - traj.t0) / traj.dt;
    if (pos <= 0.0) {
        return traj.values.front();
    }
    const auto last = static_cast<double>(traj.size() - 1);
    if (pos >= last) {
        return traj.values.back();
    }
    const double k = std::floor(pos);
    const auto i = static_cast<std::size_t>(k);
    const double frac = pos - k;
    if (frac < 1e-9) {
        return traj.values[i];
    }
    return traj.values[i] + frac * (traj.values[i + 1] - traj.values[i]);
}

struct ClosedLoopConfig {
    HhCircuit circuit;
    double dt = 0.05;
    double duration = 100.0;
    double v0 = hh::kRest;
    Trajectory i_ext;
};

/// Channel current from a kernel model of the voltage history.
class KernelChannel {
public:
    explicit KernelChannel(const TrainedModel& model)
        : model_(&model), buffer_(model.grid().size()) {}

    [[nodiscard]] std::size_t history_length() const noexcept { return buffer_.size(); }
    [[nodiscard]] double step_size() const noexcept { return model_->grid().dt(); }

    /// `history` holds at least history_length() samples, newest last.
    double current(std::span<const double> history) {
        const double offset = model_->metadata().input_offset;
        const auto tail = history.last(buffer_.size());
        for (std::size_t k = 0; k < buffer_.size(); ++k) {
            buffer_[k] = tail[k] - offset;
        }
        return (*model_)(std::span<const double>(buffer_));
    }

private:
    const TrainedModel* model_;
    std::vector<double> buffer_;
};

/// Exact potassium channel, gates advanced by explicit Euler in step with the loop.
class PotassiumOracle {
public:
    PotassiumOracle(double dt, double v0) : dt_(dt), n_(hh::n_inf(v0)) {}
    [[nodiscard]] std::size_t history_length() const noexcept { return 1; }
    [[nodiscard]] double step_size() const noexcept { return dt_; }
    double current(std::span<const double> history) {
        const double v = history.back();
        const double i = hh::potassium_current(v, n_);
        n_ = std::clamp(n_ + dt_ * hh::gate_rhs(n_, hh::alpha_n(v), hh::beta_n(v)), 0.0, 1.0);
        return i;
    }

private:
    double dt_;
    double n_;
};

/// Exact sodium channel, gates advanced by explicit Euler in step with the loop.
class SodiumOracle {
public:
    SodiumOracle(double dt, double v0) : dt_(dt), m_(hh::m_inf(v0)), h_(hh::h_inf(v0)) {}
    [[nodiscard]] std::size_t history_length() const noexcept { return 1; }
    [[nodiscard]] double step_size() const noexcept { return dt_; }
    double current(std::span<const double> history) {
        const double v = history.back();
        const double i = hh::sodium_current(v, m_, h_);
        m_ = std::clamp(m_ + dt_ * hh::gate_rhs(m_, hh::alpha_m(v), hh::beta_m(v)), 0.0, 1.0);
        h_ = std::clamp(h_ + dt_ * hh::gate_rhs(h_, hh::alpha_h(v), hh::beta_h(v)), 0.0, 1.0);
        return i;
    }

private:
    double dt_;
    double m_;
    double h_;
};

template <typename C>
concept CurrentElement = requires(C c, std::span<const double> history) {
    { c.current(history) } -> std::convertible_to<double>;
    { c.history_length() } -> std::convertible_to<std::size_t>;
    { c.step_size() } -> std::convertible_to<double>;
};

/**
 * Explicit-Euler loop of C V' = I_ext - I_K - I_Na - g_L (V - E_L).
 *
 * The voltage history before t = 0 is the constant V0. Each step evaluates
 * both channel elements on the history ending at the current voltage.
 */
template <CurrentElement Potassium, CurrentElement Sodium>
Trajectory simulate_closed_loop(Potassium& potassium, Sodium& sodium, const ClosedLoopConfig& cfg) {
    if (!(cfg.dt > 0.0) || !(cfg.duration > 0.0)) {
        throw InvalidArgument("simulate_closed_loop: dt and duration must be positive");
    }
    if (!same_step(potassium.step_size(), cfg.dt) || !same_step(sodium.step_size(), cfg.dt)) {
        throw GridMismatch("simulate_closed_loop: channel step sizes must equal the loop step " +
                           std::to_string(cfg.dt));
    }
    if (!(cfg.circuit.capacitance > 0.0)) {
        throw InvalidArgument("simulate_closed_loop: capacitance must be positive");
    }
    const auto steps = static_cast<std::size_t>(std::llround(cfg.duration / cfg.dt));
    const std::size_t pre = std::max(potassium.history_length(), sodium.history_length());

    std::vector<double> history(pre, cfg.v0);
    history.reserve(pre + steps + 1);
    Trajectory out(0.0, cfg.dt, std::vector<double>(steps + 1));
    for (std::size_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * cfg.dt;
        const double v = history.back();
        out.values[k] = v;
        if (k == steps) {
            break;
        }
        const std::span<const double> view(history);
        const double i_k = potassium.current(view);
        const double i_na = sodium.current(view);
        const double i_ext = cfg.i_ext.size() == 0 ? 0.0 : sample_at(cfg.i_ext, t);
        const double leak = cfg.circuit.leak_conductance * (v - cfg.circuit.leak_reversal);
        const double next = v + cfg.dt * (i_ext - i_k - i_na - leak) / cfg.circuit.capacitance;
        if (!std::isfinite(next) || std::abs(next) > 500.0) {
            const double tf = t + cfg.dt;
            throw NumericalFailure("simulate_closed_loop: voltage diverged at t = " + std::to_string(tf), tf);
        }
        history.push_back(next);
    }
    return out;
}

/// Closed loop with two kernel channel models (each reads V - its input offset).
inline Trajectory simulate_closed_loop(const TrainedModel& k_model, const TrainedModel& na_model,
                                       const ClosedLoopConfig& cfg) {
    KernelChannel potassium(k_model);
    KernelChannel sodium(na_model);
    return simulate_closed_loop(potassium, sodium, cfg);
}

/// Closed loop with the exact HH channels in place of the models.
inline Trajectory simulate_closed_loop_oracle(const ClosedLoopConfig& cfg) {
    PotassiumOracle potassium(cfg.dt, cfg.v0);
    SodiumOracle sodium(cfg.dt, cfg.v0);
    return simulate_closed_loop(potassium, sodium, cfg);
}

/// Upward threshold crossings, linearly interpolated, at least `refractory` apart.
inline std::vector<double> detect_spikes(const Trajectory& v, double threshold = 0.0, double refractory = 2.0) {
    if (refractory < 0.0) {
        throw InvalidArgument("detect_spikes: refractory must be non-negative");
    }
    std::vector<double> spikes;
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
        const double a = v.values[k];
        const double b = v.values[k + 1];
        if (a < threshold && b >= threshold) {
            const double t = v.time(k) + v.dt * (threshold - a) / (b - a);
            if (spikes.empty() || t - spikes.back() >= refractory) {
                spikes.push_back(t);
            }
        }
    }
    return spikes;
}

}  // namespace fmk
