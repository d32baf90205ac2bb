// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fmk/harness.hpp"
#include "fmk/metrics.hpp"
#include "oracles.hpp"

using namespace fmk;
using namespace fmk::harness;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

Outcome kernel_validity() {
    const TimeGrid grid(0.05, 41);
    const auto windows = oracle::random_windows(50, grid, 2024, 2.0);
    const ExpWeight w(1.0);
    const std::vector<KernelSpec> specs{BilinearKernel{w}, RbfKernel(w, 0.7), LpvKernel(w, 0.8),
                                        ConductanceLpvKernel(w, 1.5),
                                        TwoScaleConductanceLpvKernel(w, 1.5, ExpWeight(3.0), 0.6)};
    bool ok = true;
    double worst = std::numeric_limits<double>::infinity();
    for (const auto& spec : specs) {
        const auto K = gram(spec, windows);
        const double asym = (K - K.transpose()).cwiseAbs().maxCoeff();
        const double min_eig =
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(K, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
        ok = ok && asym == 0.0 && min_eig >= -1e-8 * K.trace();
        worst = std::min(worst, min_eig / K.trace());
    }
    const double sigma = 0.7;
    const RbfKernel rbf(w, sigma);
    const auto a = oracle::random_windows(1000, grid, 1, 2.0);
    const auto b = oracle::random_windows(1000, grid, 2, 2.0);
    double defect = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        defect = std::max(defect, lipschitz_defect(rbf, a[i], b[i], w));
    }
    ok = ok && defect <= 1.0 / (sigma * sigma) + 1e-9;
    return {ok, fmt("min eig/trace %.2e (>= -1e-8), rbf defect %.4f <= %.4f", worst, defect, 1.0 / (sigma * sigma))};
}

Outcome representer() {
    const TimeGrid grid(0.05, 31);
    const ExpWeight w(1.0);
    const std::vector<KernelSpec> specs{BilinearKernel{w}, RbfKernel(w, 0.8), LpvKernel(w, 0.6),
                                        ConductanceLpvKernel(w, 1.2)};
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> size(2, 200);
    std::normal_distribution<double> normal(0.0, 1.0);
    double res = 0.0, train = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = size(rng);
        auto windows = oracle::random_windows(n, grid, 300 + static_cast<std::uint64_t>(trial));
        std::vector<double> y(n);
        for (auto& v : y) {
            v = normal(rng);
        }
        const auto& spec = specs[static_cast<std::size_t>(trial) % specs.size()];
        const double gamma = std::pow(10.0, -1.0 - trial % 4);
        const auto m = fit(Dataset(windows, y), spec, gamma);
        const auto K = gram(spec, windows);
        const Eigen::Map<const Eigen::VectorXd> alpha(m.alpha().data(), static_cast<Eigen::Index>(n));
        const Eigen::Map<const Eigen::VectorXd> Y(y.data(), static_cast<Eigen::Index>(n));
        const double ymax = Y.cwiseAbs().maxCoeff();
        res = std::max(res, (K * alpha + gamma * alpha - Y).cwiseAbs().maxCoeff() / ymax);
        for (std::size_t i = 0; i < n; ++i) {
            const double expect = y[i] - gamma * m.alpha()[i];
            train = std::max(train, std::abs(m(windows[i]) - expect) / std::max(std::abs(expect), ymax));
        }
    }
    return {res <= 1e-8 && train <= 1e-8, fmt("max residual %.2e, max train deviation %.2e (<= 1e-8)", res, train)};
}

Outcome small_gain() {
    const double inf = std::numeric_limits<double>::infinity();
    const double c = weight_energy_c(ExpWeight(4.0), inf);
    const TimeGrid grid(0.01, 201);
    const auto u = oracle::random_windows(1, grid, 5).front();
    const BilinearKernel spec{ExpWeight(4.0)};
    const double kappa = eval(spec, u, u);
    bool ok = c == 0.5;
    for (double beta : {2.0 - 1e-3, 2.0 + 1e-3}) {
        const double alpha = beta / std::sqrt(kappa);
        const TrainedModel m(spec, {u}, {alpha}, 0.1, alpha * alpha * kappa);
        const auto cert = small_gain_check(m, 1.0, spec.weight, inf);
        ok = ok && cert.certified == (cert.beta * cert.beta < 1.0 / (c * c)) && cert.certified == (beta < 2.0);
    }
    return {ok, fmt("c(4, inf) = %.17g; beta 1.999 certified, 2.001 not", c)};
}

Outcome lti_regimes() {
    const LtiProtocol p;
    const auto g = gen_lti_dataset(p);
    const auto input = step_input(0.0, 1.0, 3.0, p.dt);
    const auto truth = simulate_plant(LtiExample{}, input, resting_state(LtiExample{}));
    auto err = [&](double lambda) {
        const auto m = fit(g.data, BilinearKernel{ExpWeight(lambda)}, p.gamma);
        return relative_l2_error(simulate_open_loop(m, input).values, truth.values);
    };
    const double slow = err(1.0);
    const double fast = err(30.0);
    return {slow < 0.05 && fast > 0.20,
            fmt("lambda=1 rel L2 %.4f (< 0.05), lambda=30 rel L2 %.4f (> 0.20)", slow, fast)};
}

Outcome satlag_beta() {
    const SatlagProtocol p;
    const auto g = gen_satlag_dataset(p);
    const RbfKernel spec(ExpWeight(p.lambda), p.sigma);
    const double r = 1.0 / p.sigma;
    const double b_strong = lipschitz_bound(fit(g.data, spec, 0.01), r);
    const double b_weak = lipschitz_bound(fit(g.data, spec, 1e-4), r);
    return {b_strong >= 5.5 && b_strong <= 22.0 && b_weak > b_strong,
            fmt("sigma %.2f: beta(0.01) %.3f in [5.5, 22], beta(1e-4) %.3f > beta(0.01)", p.sigma, b_strong, b_weak)};
}

Outcome lpv_generalization() {
    const LpvCompareProtocol p;
    const auto sets = gen_lpv_compare_datasets(p);
    const SatLag plant{p.threshold};
    const ExpWeight w(p.lambda);
    auto err = [&](const Dataset& d, const KernelSpec& spec, const Trajectory& input) {
        const auto truth = simulate_plant(plant, input, resting_state(plant));
        return relative_l2_error(simulate_open_loop(fit(d, spec, p.gamma), input).values, truth.values);
    };
    const auto sine = sine_input(p.test_sine_amp, p.test_sine_freq, p.test_duration, p.dt);
    double step_amp = lpv_step_amplitudes(p).front();
    for (double a : lpv_step_amplitudes(p)) {
        if (std::abs(a - p.test_step_target) < std::abs(step_amp - p.test_step_target)) {
            step_amp = a;
        }
    }
    const auto step = step_input(0.0, step_amp, p.test_duration, p.dt);
    const double lpv_sine = err(sets.steps.data, LpvKernel(w, p.sigma), sine);
    const double rbf_sine = err(sets.steps.data, RbfKernel(w, p.sigma), sine);
    const double lpv_step = err(sets.sines.data, LpvKernel(w, p.sigma), step);
    const double rbf_step = err(sets.sines.data, RbfKernel(w, p.sigma), step);
    const bool ok = lpv_sine < 0.10 && lpv_sine < rbf_sine && lpv_step < rbf_step;
    return {ok, fmt("step->sine LPV %.4f (< 0.10) vs RBF %.4f; sine->step LPV %.4f vs RBF %.4f (LPV smaller)", lpv_sine,
                    rbf_sine, lpv_step, rbf_step)};
}

Outcome hh_channels() {
    const HhCircuit circuit;
    auto err = [&](const HhChannelProtocol& p) {
        const auto m = train_channel(p);
        const auto v = spike_train_voltage(circuit, p.test_current, p.test_duration, p.dt);
        const PlantSpec plant = p.plant();
        const auto truth = simulate_plant(plant, v, resting_state(plant, v.values.front()));
        return relative_l2_error(simulate_open_loop(m, v).values, truth.values);
    };
    const double k = err(HhChannelProtocol::potassium());
    const double na = err(HhChannelProtocol::sodium());
    return {k < 0.15 && na < 0.25, fmt("potassium rel L2 %.4f (< 0.15), sodium rel L2 %.4f (< 0.25)", k, na)};
}

Outcome closed_loop() {
    const auto cfg = default_config(ExperimentId::HhClosedLoop);
    const auto& p = cfg.closed_loop;
    const auto k = train_channel(cfg.potassium);
    const auto na = train_channel(cfg.sodium);
    const auto i_ext = band_limited_noise(cfg.seed, p.noise, p.duration, p.reference_dt);
    const auto v_true = simulate_plant(p.circuit, i_ext, resting_state(p.circuit));

    ClosedLoopConfig loop;
    loop.circuit = p.circuit;
    loop.dt = cfg.potassium.dt;
    loop.duration = p.duration;
    loop.i_ext = i_ext;
    const auto v_kernel = simulate_closed_loop(k, na, loop);
    loop.dt = 0.01;
    const auto v_oracle = simulate_closed_loop_oracle(loop);

    const auto s_true = detect_spikes(v_true, p.spike_threshold, p.refractory);
    const auto s_kernel = detect_spikes(v_kernel, p.spike_threshold, p.refractory);
    const auto match = match_spikes(s_true, s_kernel);
    const double diff = std::abs(static_cast<double>(s_kernel.size()) - static_cast<double>(s_true.size()));
    const double rms = rms_difference(v_oracle.values, v_true.values);
    const bool ok = diff <= 1.0 && match.max_misalignment <= 2.0 && !match.pairs.empty() && rms < 1.0;
    return {ok, fmt("spikes true %.0f kernel %.0f (+-1), max misalignment %.3f (<= 2), oracle RMS %.3f mV (< 1)",
                    static_cast<double>(s_true.size()), static_cast<double>(s_kernel.size()), match.max_misalignment,
                    rms)};
}

Outcome numerics() {
    auto lti_err = [](double dt) {
        const auto n = static_cast<std::size_t>(std::llround(2.0 / dt)) + 1;
        const auto y = simulate_plant(LtiExample{}, Trajectory(0.0, dt, std::vector<double>(n, 1.0)), {0.0, 0.0});
        double e = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            e = std::max(e, std::abs(y.values[i] - oracle::lti_step(y.time(i))));
        }
        return e;
    };
    const double rk4 = std::log2(lti_err(0.1) / lti_err(0.05));

    const double exact =
        oracle::simpson([](double t) { return std::sin(t) * std::cos(t) * std::exp(t); }, -3.0, 0.0, 200000);
    auto quad_err = [&](double dt) {
        const auto g = TimeGrid::with_horizon(dt, 3.0);
        std::vector<double> s(g.size()), c(g.size());
        for (std::size_t k = 0; k < g.size(); ++k) {
            s[k] = std::sin(g.time(k));
            c[k] = std::cos(g.time(k));
        }
        return std::abs(weighted_inner(PastWindow(g, s), PastWindow(g, c), ExpWeight(1.0)) - exact);
    };
    const double quad = std::log2(quad_err(0.02) / quad_err(0.01));

    ClosedLoopConfig cfg;
    cfg.duration = 5.0;
    cfg.i_ext = Trajectory(0.0, 0.001, std::vector<double>(5001, 10.0));
    const Trajectory fine(0.0, 1e-4, std::vector<double>(50001, 10.0));
    const double v_ref = simulate_plant(HhCircuit{}, fine, resting_state(HhCircuit{})).values.back();
    auto euler_err = [&](double dt) {
        cfg.dt = dt;
        return std::abs(simulate_closed_loop_oracle(cfg).values.back() - v_ref);
    };
    const double euler = std::log2(euler_err(0.004) / euler_err(0.002));
    return {rk4 >= 3.5 && quad >= 1.9 && euler >= 0.9,
            fmt("RK4 order %.2f (>= 3.5), quadrature order %.2f (>= 1.9), closed-loop Euler order %.2f (>= 0.9)", rk4,
                quad, euler)};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"1 kernel validity", kernel_validity},
        {"2 representer correctness", representer},
        {"3 small-gain machinery", small_gain},
        {"4 LTI memory regimes", lti_regimes},
        {"5 saturated-lag Lipschitz bound", satlag_beta},
        {"6 LPV generalization", lpv_generalization},
        {"7 HH channels open loop", hh_channels},
        {"8 HH closed loop", closed_loop},
        {"9 numerics", numerics},
    };
    int failed = 0;
    for (const auto& [name, check] : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s criterion %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
        std::fflush(stdout);
        failed += o.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
