#pragma once

// Invariant suites behind `fmk verify`. Each check reports a name, a verdict
// and the observed quantity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fmk/kernel.hpp"
#include "fmk/plants.hpp"
#include "fmk/regression.hpp"
#include "fmk/signal.hpp"
#include "fmk/simulate.hpp"

namespace fmk::verify {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Random smooth windows: offset plus three random sinusoids.
inline std::vector<PastWindow> random_windows(std::size_t count, const TimeGrid& grid, std::uint64_t seed,
                                              double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::vector<PastWindow> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double c = unit(rng);
        double a[3], f[3], ph[3];
        for (int j = 0; j < 3; ++j) {
            a[j] = unit(rng);
            f[j] = 3.0 * (unit(rng) + 1.0);
            ph[j] = 3.2 * unit(rng);
        }
        std::vector<double> s(grid.size());
        for (std::size_t k = 0; k < s.size(); ++k) {
            const double t = grid.time(k);
            double v = c;
            for (int j = 0; j < 3; ++j) {
                v += a[j] * std::sin(f[j] * t + ph[j]);
            }
            s[k] = scale * v;
        }
        out.emplace_back(grid, std::move(s));
    }
    return out;
}

inline std::vector<KernelSpec> kernel_zoo() {
    const ExpWeight w(1.0);
    return {BilinearKernel{w}, RbfKernel(w, 0.7), LpvKernel(w, 0.8), ConductanceLpvKernel(w, 1.5),
            TwoScaleConductanceLpvKernel(w, 1.5, ExpWeight(3.0), 0.6)};
}

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

/// Gram matrices are symmetric and positive semidefinite; RBF obeys its Lipschitz bound.
inline std::vector<CheckResult> kernel_suite(std::uint64_t seed = 1) {
    std::vector<CheckResult> out;
    const TimeGrid grid(0.05, 41);
    const auto windows = random_windows(50, grid, seed);
    for (const auto& spec : kernel_zoo()) {
        const Eigen::MatrixXd K = gram(spec, windows, 1);
        const bool symmetric = (K - K.transpose()).cwiseAbs().maxCoeff() == 0.0;
        const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(K, Eigen::EigenvaluesOnly)
                                   .eigenvalues()
                                   .minCoeff();
        const double floor = -1e-8 * K.trace();
        out.push_back({"gram_symmetric_psd/" + kernel_name(spec), symmetric && min_eig >= floor,
                       "min eigenvalue " + fmt(min_eig) + ", floor " + fmt(floor)});
    }
    const double sigma = 0.7;
    const RbfKernel rbf(ExpWeight(1.0), sigma);
    const auto a = random_windows(1000, grid, seed + 1);
    const auto b = random_windows(1000, grid, seed + 2);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, lipschitz_defect(rbf, a[i], b[i], rbf.weight));
    }
    const double bound = 1.0 / (sigma * sigma) + 1e-9;
    out.push_back({"rbf_lipschitz", worst <= bound, "max defect " + fmt(worst) + ", bound " + fmt(bound)});
    return out;
}

/// Representer solution solves the regularized normal equations.
inline std::vector<CheckResult> regression_suite(std::uint64_t seed = 2) {
    std::vector<CheckResult> out;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> size(5, 200);
    std::normal_distribution<double> normal(0.0, 1.0);
    const TimeGrid grid(0.05, 31);
    const auto zoo = kernel_zoo();
    double worst_residual = 0.0;
    double worst_train = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto n = static_cast<std::size_t>(size(rng));
        auto windows = random_windows(n, grid, seed * 1000 + static_cast<std::uint64_t>(trial));
        std::vector<double> y(n);
        for (auto& v : y) {
            v = normal(rng);
        }
        const auto& spec = zoo[static_cast<std::size_t>(trial) % zoo.size()];
        const double gamma = std::pow(10.0, -1.0 - trial % 4);
        const Dataset data(windows, y);
        const auto model = fit(data, spec, gamma, 1);
        const Eigen::MatrixXd K = gram(spec, windows, 1);
        const Eigen::Map<const Eigen::VectorXd> alpha(model.alpha().data(), static_cast<Eigen::Index>(n));
        const Eigen::Map<const Eigen::VectorXd> Y(y.data(), static_cast<Eigen::Index>(n));
        const double ynorm = Y.cwiseAbs().maxCoeff();
        const double residual = ((K * alpha + gamma * alpha) - Y).cwiseAbs().maxCoeff() / ynorm;
        double train = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double expect = y[i] - gamma * model.alpha()[i];
            train = std::max(train, std::abs(model(windows[i]) - expect) / std::max(std::abs(expect), ynorm));
        }
        worst_residual = std::max(worst_residual, residual);
        worst_train = std::max(worst_train, train);
    }
    out.push_back({"representer_residual", worst_residual <= 1e-8, "max relative residual " + fmt(worst_residual)});
    out.push_back({"training_predictions", worst_train <= 1e-8, "max relative deviation " + fmt(worst_train)});

    const double c = weight_energy_c(ExpWeight(4.0), std::numeric_limits<double>::infinity());
    out.push_back({"weight_energy_c", c == 0.5, "c(4, inf) = " + fmt(c)});
    return out;
}

namespace detail {

inline double lti_step_exact(double t) {
    return 1.0 / 30.0 + (2.0 / 21.0) * std::exp(-3.0 * t) - (9.0 / 70.0) * std::exp(-10.0 * t);
}

inline double lti_rk4_error(double dt) {
    const auto n = static_cast<std::size_t>(std::llround(1.0 / dt)) + 1;
    const Trajectory u(0.0, dt, std::vector<double>(n, 1.0));
    const PlantSpec plant = LtiExample{};
    const auto y = simulate_plant(plant, u, resting_state(plant));
    double err = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        err = std::max(err, std::abs(y.values[k] - lti_step_exact(y.time(k))));
    }
    return err;
}

inline double quadrature_error(double dt) {
    // <sin t, cos 2t> with weight e^{t} over [-2, 0]
    const auto grid = TimeGrid::with_horizon(dt, 2.0);
    std::vector<double> a(grid.size()), b(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        a[k] = std::sin(grid.time(k));
        b[k] = std::cos(2.0 * grid.time(k));
    }
    const double approx = weighted_inner(PastWindow(grid, a), PastWindow(grid, b), ExpWeight(1.0));
    // antiderivative of e^t sin t cos 2t = (e^t/2)(sin 3t - sin t) pieces
    auto F = [](double t) {
        const double e = std::exp(t);
        return 0.5 * e * ((std::sin(3.0 * t) - 3.0 * std::cos(3.0 * t)) / 10.0 - (std::sin(t) - std::cos(t)) / 2.0);
    };
    return std::abs(approx - (F(0.0) - F(-2.0)));
}

}  // namespace detail

/// Observed orders of the integrators and quadrature; HH gate bounds.
inline std::vector<CheckResult> plant_suite() {
    std::vector<CheckResult> out;
    const double rk4 = std::log2(detail::lti_rk4_error(0.1) / detail::lti_rk4_error(0.05));
    out.push_back({"rk4_order", rk4 >= 3.5, "observed order " + fmt(rk4)});
    const double quad = std::log2(detail::quadrature_error(0.02) / detail::quadrature_error(0.01));
    out.push_back({"quadrature_order", quad >= 1.9, "observed order " + fmt(quad)});

    ClosedLoopConfig cfg;
    cfg.duration = 5.0;
    cfg.i_ext = Trajectory(0.0, 0.001, std::vector<double>(5001, 10.0));
    auto v_at = [&](double dt) {
        cfg.dt = dt;
        return simulate_closed_loop_oracle(cfg).values.back();
    };
    const double v_ref = v_at(0.0005);
    const double euler = std::log2(std::abs(v_at(0.004) - v_ref) / std::abs(v_at(0.002) - v_ref));
    out.push_back({"closed_loop_euler_order", euler >= 0.9, "observed order " + fmt(euler)});

    const HhCircuit circuit;
    const Trajectory i_ext(0.0, 0.01, std::vector<double>(5001, 20.0));
    const auto run = simulate_plant_run(circuit, i_ext, resting_state(circuit));
    bool bounded = true;
    for (const auto& x : run.states) {
        for (std::size_t j = 1; j < x.size(); ++j) {
            bounded = bounded && x[j] >= 0.0 && x[j] <= 1.0;
        }
    }
    out.push_back({"gates_in_unit_interval", bounded, std::to_string(run.clamp_events) + " clamp events"});
    return out;
}

inline std::vector<CheckResult> run_suite(const std::string& suite) {
    std::vector<CheckResult> out;
    auto append = [&out](std::vector<CheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
    if (suite == "kernels" || suite == "all") {
        append(kernel_suite());
    }
    if (suite == "regression" || suite == "all") {
        append(regression_suite());
    }
    if (suite == "plants" || suite == "all") {
        append(plant_suite());
    }
    if (out.empty()) {
        throw InvalidArgument("unknown suite '" + suite + "'");
    }
    return out;
}

}  // namespace fmk::verify
