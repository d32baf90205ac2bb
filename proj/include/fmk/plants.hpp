#pragma once

// Reference continuous-time systems used as data generators and ground truth,
// integrated by classic fixed-step RK4.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "fmk/error.hpp"
#include "fmk/signal.hpp"

namespace fmk {

namespace hh {

inline constexpr double kRest = -65.1;
inline constexpr double kPotassiumReversal = -77.0;
inline constexpr double kSodiumReversal = 50.0;
inline constexpr double kPotassiumConductance = 36.0;
inline constexpr double kSodiumConductance = 120.0;

// Below this |e^z - 1| the rate z / (e^z - 1) is replaced by its series 1 - z/2.
inline constexpr double kSingularityGuard = 1e-7;

/// z / (e^z - 1), continuous through the removable singularity at z = 0.
inline double exprel_inverse(double z) noexcept {
    const double denom = std::expm1(z);
    if (std::abs(denom) < kSingularityGuard) {
        return 1.0 - 0.5 * z;
    }
    return z / denom;
}

// Rates take the membrane voltage u and use the displacement x = u - V_r.
inline double alpha_n(double u) noexcept {
    const double z = 1.0 - 0.1 * (u - kRest);
    return 0.1 * exprel_inverse(z);
}
inline double beta_n(double u) noexcept { return 0.125 * std::exp(-0.0125 * (u - kRest)); }
inline double alpha_m(double u) noexcept { return exprel_inverse(2.5 - 0.1 * (u - kRest)); }
inline double beta_m(double u) noexcept { return 4.0 * std::exp(-(u - kRest) / 18.0); }
inline double alpha_h(double u) noexcept { return 0.07 * std::exp(-0.05 * (u - kRest)); }
inline double beta_h(double u) noexcept { return 1.0 / (std::exp(3.0 - 0.1 * (u - kRest)) + 1.0); }

inline double gate_rhs(double gate, double a, double b) noexcept { return a * (1.0 - gate) - b * gate; }

inline double n_inf(double u) noexcept { return alpha_n(u) / (alpha_n(u) + beta_n(u)); }
inline double m_inf(double u) noexcept { return alpha_m(u) / (alpha_m(u) + beta_m(u)); }
inline double h_inf(double u) noexcept { return alpha_h(u) / (alpha_h(u) + beta_h(u)); }

inline double potassium_current(double v, double n) noexcept {
    const double n2 = n * n;
    return kPotassiumConductance * n2 * n2 * (v - kPotassiumReversal);
}
inline double sodium_current(double v, double m, double h) noexcept {
    return kSodiumConductance * m * m * m * h * (v - kSodiumReversal);
}

}  // namespace hh

/// H(s) = (s + 1) / ((s + 3)(s + 10)) in controllable canonical form.
struct LtiExample {
    friend bool operator==(const LtiExample&, const LtiExample&) = default;
};

/// x' = -5 x + u, y = sat(x) with saturation at +/- threshold.
struct SatLag {
    double threshold = 5.0;
    friend bool operator==(const SatLag&, const SatLag&) = default;
};

/// Input: membrane voltage. Output: 36 n^4 (u - V_K).
struct HhPotassium {
    friend bool operator==(const HhPotassium&, const HhPotassium&) = default;
};

/// Input: membrane voltage. Output: 120 m^3 h (u - V_Na).
struct HhSodium {
    friend bool operator==(const HhSodium&, const HhSodium&) = default;
};

/// C V' = I_ext - I_K - I_Na - g_L (V - E_L). Input: I_ext. Output: V.
/// The leak parameters are not part of the channel models and default to the
/// classic squid-axon values.
struct HhCircuit {
    double capacitance = 1.0;
    double leak_conductance = 0.3;
    double leak_reversal = -54.4;
    friend bool operator==(const HhCircuit&, const HhCircuit&) = default;
};

using PlantSpec = std::variant<LtiExample, SatLag, HhPotassium, HhSodium, HhCircuit>;

inline std::string plant_name(const PlantSpec& spec) {
    static constexpr const char* names[] = {"lti_example", "sat_lag", "hh_potassium", "hh_sodium", "hh_circuit"};
    return names[spec.index()];
}

struct GateValues {
    double n = 0.0;
    double m = 0.0;
    double h = 0.0;
};

/// Gate fixed points alpha / (alpha + beta) at constant voltage V.
inline GateValues gate_steady_state(double v) {
    if (!std::isfinite(v)) {
        throw InvalidArgument("gate_steady_state: voltage must be finite");
    }
    return {hh::n_inf(v), hh::m_inf(v), hh::h_inf(v)};
}

namespace detail {

template <std::size_t N>
using State = std::array<double, N>;

struct LtiDynamics {
    static constexpr std::size_t dim = 2;
    State<2> derivative(const State<2>& x, double u) const noexcept {
        return {x[1], -30.0 * x[0] - 13.0 * x[1] + u};
    }
    double output(const State<2>& x, double) const noexcept { return x[0] + x[1]; }
    std::size_t clamp(State<2>&) const noexcept { return 0; }
};

struct SatLagDynamics {
    static constexpr std::size_t dim = 1;
    double threshold;
    State<1> derivative(const State<1>& x, double u) const noexcept { return {-5.0 * x[0] + u}; }
    double output(const State<1>& x, double) const noexcept { return std::clamp(x[0], -threshold, threshold); }
    std::size_t clamp(State<1>&) const noexcept { return 0; }
};

template <std::size_t N>
std::size_t clamp_gates(State<N>& x, std::size_t first) noexcept {
    std::size_t events = 0;
    for (std::size_t i = first; i < N; ++i) {
        if (x[i] < 0.0 || x[i] > 1.0) {
            x[i] = std::clamp(x[i], 0.0, 1.0);
            ++events;
        }
    }
    return events;
}

struct PotassiumDynamics {
    static constexpr std::size_t dim = 1;
    State<1> derivative(const State<1>& x, double u) const noexcept {
        return {hh::gate_rhs(x[0], hh::alpha_n(u), hh::beta_n(u))};
    }
    double output(const State<1>& x, double u) const noexcept { return hh::potassium_current(u, x[0]); }
    std::size_t clamp(State<1>& x) const noexcept { return clamp_gates(x, 0); }
};

struct SodiumDynamics {
    static constexpr std::size_t dim = 2;
    State<2> derivative(const State<2>& x, double u) const noexcept {
        return {hh::gate_rhs(x[0], hh::alpha_m(u), hh::beta_m(u)),
                hh::gate_rhs(x[1], hh::alpha_h(u), hh::beta_h(u))};
    }
    double output(const State<2>& x, double u) const noexcept { return hh::sodium_current(u, x[0], x[1]); }
    std::size_t clamp(State<2>& x) const noexcept { return clamp_gates(x, 0); }
};

/// State (V, n, m, h).
struct CircuitDynamics {
    static constexpr std::size_t dim = 4;
    HhCircuit p;
    State<4> derivative(const State<4>& x, double i_ext) const noexcept {
        const double v = x[0];
        const double i_ion = hh::potassium_current(v, x[1]) + hh::sodium_current(v, x[2], x[3]) +
                             p.leak_conductance * (v - p.leak_reversal);
        return {(i_ext - i_ion) / p.capacitance, hh::gate_rhs(x[1], hh::alpha_n(v), hh::beta_n(v)),
                hh::gate_rhs(x[2], hh::alpha_m(v), hh::beta_m(v)),
                hh::gate_rhs(x[3], hh::alpha_h(v), hh::beta_h(v))};
    }
    double output(const State<4>& x, double) const noexcept { return x[0]; }
    std::size_t clamp(State<4>& x) const noexcept { return clamp_gates(x, 1); }
};

template <std::size_t N>
State<N> axpy(const State<N>& x, double a, const State<N>& k) noexcept {
    State<N> r;
    for (std::size_t i = 0; i < N; ++i) {
        r[i] = x[i] + a * k[i];
    }
    return r;
}

}  // namespace detail

/// Output samples plus the full state history of one plant run.
struct PlantRun {
    Trajectory output;
    std::vector<std::vector<double>> states;  // states[k] is the state at input sample k
    std::size_t clamp_events = 0;
};

namespace detail {

template <typename Dynamics>
PlantRun integrate(const Dynamics& dyn, const Trajectory& input, const std::vector<double>& x0) {
    constexpr std::size_t N = Dynamics::dim;
    if (x0.size() != N) {
        throw InvalidArgument("simulate_plant: initial state has " + std::to_string(x0.size()) +
                              " entries, plant needs " + std::to_string(N));
    }
    if (input.size() == 0) {
        throw InvalidArgument("simulate_plant: empty input");
    }
    State<N> x;
    std::copy(x0.begin(), x0.end(), x.begin());

    PlantRun run;
    run.output = Trajectory(input.t0, input.dt, std::vector<double>(input.size()));
    run.states.reserve(input.size());
    run.clamp_events = dyn.clamp(x);

    const double h = input.dt;
    for (std::size_t k = 0;; ++k) {
        const double uk = input.values[k];
        run.output.values[k] = dyn.output(x, uk);
        run.states.emplace_back(x.begin(), x.end());
        if (k + 1 == input.size()) {
            break;
        }
        const double u1 = input.values[k + 1];
        const double umid = 0.5 * (uk + u1);
        const auto k1 = dyn.derivative(x, uk);
        const auto k2 = dyn.derivative(axpy(x, 0.5 * h, k1), umid);
        const auto k3 = dyn.derivative(axpy(x, 0.5 * h, k2), umid);
        const auto k4 = dyn.derivative(axpy(x, h, k3), u1);
        for (std::size_t i = 0; i < N; ++i) {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        run.clamp_events += dyn.clamp(x);
        const double t = input.time(k + 1);
        for (double xi : x) {
            if (!std::isfinite(xi)) {
                throw NumericalFailure("simulate_plant: non-finite state at t = " + std::to_string(t), t);
            }
            if (std::abs(xi) > 1e8) {
                throw NumericalFailure("simulate_plant: state exceeded 1e8 at t = " + std::to_string(t) +
                                           " (step too large?)",
                                       t);
            }
        }
    }
    return run;
}

}  // namespace detail

/// Number of state variables of the plant.
inline std::size_t state_dimension(const PlantSpec& spec) {
    static constexpr std::size_t dims[] = {2, 1, 1, 2, 4};
    return dims[spec.index()];
}

/**
 * Initial condition at rest. For the channels the gates sit at their steady
 * state for the holding voltage `input_rest`; the circuit starts at V_r with
 * gates at steady state.
 */
inline std::vector<double> resting_state(const PlantSpec& spec, double input_rest = hh::kRest) {
    return std::visit(
        [&](const auto& p) -> std::vector<double> {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, LtiExample>) {
                return {0.0, 0.0};
            } else if constexpr (std::is_same_v<P, SatLag>) {
                return {0.0};
            } else if constexpr (std::is_same_v<P, HhPotassium>) {
                return {hh::n_inf(input_rest)};
            } else if constexpr (std::is_same_v<P, HhSodium>) {
                return {hh::m_inf(input_rest), hh::h_inf(input_rest)};
            } else {
                const auto g = gate_steady_state(hh::kRest);
                return {hh::kRest, g.n, g.m, g.h};
            }
        },
        spec);
}

/// RK4 with step input.dt; the input is linear between samples inside a step.
inline PlantRun simulate_plant_run(const PlantSpec& spec, const Trajectory& input, const std::vector<double>& x0) {
    return std::visit(
        [&](const auto& p) -> PlantRun {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, LtiExample>) {
                return detail::integrate(detail::LtiDynamics{}, input, x0);
            } else if constexpr (std::is_same_v<P, SatLag>) {
                if (!(p.threshold > 0.0)) {
                    throw InvalidArgument("SatLag: threshold must be positive");
                }
                return detail::integrate(detail::SatLagDynamics{p.threshold}, input, x0);
            } else if constexpr (std::is_same_v<P, HhPotassium>) {
                return detail::integrate(detail::PotassiumDynamics{}, input, x0);
            } else if constexpr (std::is_same_v<P, HhSodium>) {
                return detail::integrate(detail::SodiumDynamics{}, input, x0);
            } else {
                if (!(p.capacitance > 0.0)) {
                    throw InvalidArgument("HhCircuit: capacitance must be positive");
                }
                return detail::integrate(detail::CircuitDynamics{p}, input, x0);
            }
        },
        spec);
}

inline Trajectory simulate_plant(const PlantSpec& spec, const Trajectory& input, const std::vector<double>& x0) {
    return simulate_plant_run(spec, input, x0).output;
}

}  // namespace fmk
