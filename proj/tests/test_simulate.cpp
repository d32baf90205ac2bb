#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fmk/harness.hpp"
#include "fmk/metrics.hpp"
#include "fmk/simulate.hpp"
#include "oracles.hpp"

using namespace fmk;

namespace {

const TimeGrid kGrid(0.05, 31);

TrainedModel small_model(const KernelSpec& spec, std::uint64_t seed) {
    auto windows = oracle::random_windows(40, kGrid, seed);
    std::vector<double> y;
    for (const auto& w : windows) {
        y.push_back(std::sin(w.newest()) + 0.2 * w[0]);
    }
    return fit(Dataset(windows, y), spec, 1e-3);
}

Trajectory random_input(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Trajectory(0.0, kGrid.dt(), oracle::random_samples(rng, n, 2.0));
}

}  // namespace

TEST(OpenLoop, ZeroModelGivesZero) {
    const TrainedModel m(RbfKernel(ExpWeight(1.0), 1.0), oracle::random_windows(3, kGrid, 1), {0.0, 0.0, 0.0}, 0.1,
                         0.0);
    for (double y : simulate_open_loop(m, random_input(80, 2)).values) {
        EXPECT_EQ(y, 0.0);
    }
}

TEST(OpenLoop, ConstantInputGivesConstantOutput) {
    const auto m = small_model(LpvKernel(ExpWeight(1.0), 0.7), 3);
    const Trajectory u(0.0, kGrid.dt(), std::vector<double>(60, 0.7));
    const double expect = m(PastWindow::constant(kGrid, 0.7));
    for (double y : simulate_open_loop(m, u).values) {
        EXPECT_EQ(y, expect);
    }
}

TEST(OpenLoop, ConsistentWithStandalonePredict) {
    const auto m = small_model(ConductanceLpvKernel(ExpWeight(1.0), 1.0), 4);
    const auto u = random_input(90, 5);
    const auto y = simulate_open_loop(m, u);
    for (std::size_t k = 0; k < u.size(); ++k) {
        EXPECT_EQ(y.values[k], m(window_from_trajectory(u, u.time(k), kGrid)));
    }
}

TEST(OpenLoop, TimeInvariance) {
    const auto m = small_model(RbfKernel(ExpWeight(1.0), 0.8), 6);
    const auto u = random_input(70, 7);
    const std::size_t delay = 9;
    std::vector<double> shifted(delay, u.values.front());
    shifted.insert(shifted.end(), u.values.begin(), u.values.end());
    const auto y = simulate_open_loop(m, u);
    const auto ys = simulate_open_loop(m, Trajectory(0.0, kGrid.dt(), shifted));
    for (std::size_t k = 0; k < y.size(); ++k) {
        EXPECT_EQ(ys.values[k + delay], y.values[k]);
    }
}

TEST(OpenLoop, InputOffsetIsSubtracted) {
    const auto m = small_model(BilinearKernel{ExpWeight(1.0)}, 8);
    const auto u = random_input(50, 9);
    auto raised = u;
    for (auto& x : raised.values) {
        x += 50.0;
    }
    const auto y = simulate_open_loop(m, u);
    const auto yo = simulate_open_loop(with_input_offset(m, 50.0), raised);
    for (std::size_t k = 0; k < y.size(); ++k) {
        EXPECT_NEAR(yo.values[k], y.values[k], 1e-12 * (1.0 + std::abs(y.values[k])));
    }
}

TEST(OpenLoop, StepMismatch) {
    const auto m = small_model(BilinearKernel{ExpWeight(1.0)}, 10);
    EXPECT_THROW(simulate_open_loop(m, Trajectory(0.0, 0.1, std::vector<double>(10, 0.0))), GridMismatch);
}

TEST(OpenLoop, LtiBilinearModelStepSteadyState) {
    const harness::LtiProtocol p;
    const auto g = harness::gen_lti_dataset(p);
    const auto m = fit(g.data, BilinearKernel{ExpWeight(1.0)}, p.gamma);
    const auto y = simulate_open_loop(m, harness::step_input(0.0, 1.0, 3.0, p.dt));
    EXPECT_NEAR(y.values.back(), 1.0 / 30.0, 0.05 / 30.0);
}

TEST(SampleAt, Interpolation) {
    const Trajectory t(1.0, 0.5, {0.0, 1.0, 4.0});
    EXPECT_EQ(sample_at(t, 0.0), 0.0);
    EXPECT_EQ(sample_at(t, 1.5), 1.0);
    EXPECT_DOUBLE_EQ(sample_at(t, 1.75), 2.5);
    EXPECT_EQ(sample_at(t, 9.0), 4.0);
}

TEST(ClosedLoop, OracleModeMatchesMonolithicCircuit) {
    ClosedLoopConfig cfg;
    cfg.dt = 0.01;
    cfg.duration = 100.0;
    cfg.i_ext = harness::band_limited_noise(42, {}, 100.0, 0.01);
    const auto v_loop = simulate_closed_loop_oracle(cfg);
    const auto v_true = simulate_plant(HhCircuit{}, cfg.i_ext, resting_state(HhCircuit{}));
    ASSERT_EQ(v_loop.size(), v_true.size());
    EXPECT_LT(rms_difference(v_loop.values, v_true.values), 1.0);
}

TEST(ClosedLoop, OracleModeQuietWithoutCurrent) {
    ClosedLoopConfig cfg;
    cfg.dt = 0.01;
    const auto v = simulate_closed_loop_oracle(cfg);
    EXPECT_TRUE(detect_spikes(v).empty());
    for (double x : v.values) {
        ASSERT_NEAR(x, hh::kRest, 1.0);
    }
}

TEST(ClosedLoop, EulerFirstOrderConvergence) {
    ClosedLoopConfig cfg;
    cfg.duration = 5.0;
    cfg.i_ext = Trajectory(0.0, 0.001, std::vector<double>(5001, 10.0));
    const Trajectory i_fine(0.0, 1e-4, std::vector<double>(50001, 10.0));
    const double v_ref = simulate_plant(HhCircuit{}, i_fine, resting_state(HhCircuit{})).values.back();
    auto err = [&](double dt) {
        cfg.dt = dt;
        return std::abs(simulate_closed_loop_oracle(cfg).values.back() - v_ref);
    };
    const double e1 = err(0.004);
    const double e2 = err(0.002);
    EXPECT_GE(e1 / e2, 1.8);
}

TEST(ClosedLoop, DeterministicAndDivergenceGuard) {
    ClosedLoopConfig cfg;
    cfg.dt = 0.05;
    cfg.duration = 20.0;
    cfg.i_ext = harness::band_limited_noise(3, {}, 20.0, 0.01);
    EXPECT_EQ(simulate_closed_loop_oracle(cfg).values, simulate_closed_loop_oracle(cfg).values);

    cfg.i_ext = Trajectory(0.0, 0.05, std::vector<double>(401, 1e5));
    try {
        simulate_closed_loop_oracle(cfg);
        FAIL() << "expected divergence";
    } catch (const NumericalFailure& e) {
        EXPECT_GT(e.time(), 0.0);
        EXPECT_LE(e.time(), 20.0);
    }
}

TEST(ClosedLoop, RejectsMismatchedSteps) {
    ClosedLoopConfig cfg;
    cfg.dt = 0.05;
    PotassiumOracle k(0.05, cfg.v0);
    SodiumOracle na(0.01, cfg.v0);
    EXPECT_THROW(simulate_closed_loop(k, na, cfg), GridMismatch);
    cfg.duration = 0.0;
    SodiumOracle na2(0.05, cfg.v0);
    EXPECT_THROW(simulate_closed_loop(k, na2, cfg), InvalidArgument);
}

TEST(Spikes, Detection) {
    EXPECT_TRUE(detect_spikes(Trajectory(0.0, 0.1, std::vector<double>(100, -10.0))).empty());
    std::vector<double> v(3001);
    for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = 20.0 * std::sin(0.01 * static_cast<double>(k) - 1e-3);
    }
    const auto s = detect_spikes(Trajectory(0.0, 0.01, v), 0.0, 1.0);
    ASSERT_EQ(s.size(), 5u);
    for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_NEAR(s[i], 2.0 * std::numbers::pi * static_cast<double>(i) + 1e-3, 1e-4);
    }
    EXPECT_THROW(detect_spikes(Trajectory(0.0, 0.1, v), 0.0, -1.0), InvalidArgument);
}

TEST(Spikes, RefractorySuppression) {
    const Trajectory v(0.0, 1.0, {-1.0, 1.0, -1.0, 1.0, -1.0, -1.0, -1.0, 1.0});
    const auto s = detect_spikes(v, 0.0, 3.0);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_DOUBLE_EQ(s[0], 0.5);
    EXPECT_DOUBLE_EQ(s[1], 6.5);
}

TEST(Metrics, SpikeMatching) {
    const auto m = match_spikes({1.0, 10.0, 20.0}, {1.5, 19.0, 30.0});
    ASSERT_EQ(m.pairs.size(), 2u);
    EXPECT_DOUBLE_EQ(m.max_misalignment, 1.0);
    EXPECT_TRUE(match_spikes({}, {1.0}).pairs.empty());
    EXPECT_DOUBLE_EQ(relative_l2_error(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 0.0}), 1.0);
    EXPECT_DOUBLE_EQ(rms_difference(std::vector<double>{1.0, 3.0}, std::vector<double>{1.0, 1.0}), std::sqrt(2.0));
    EXPECT_THROW(relative_l2_error(std::vector<double>{1.0}, std::vector<double>{}), InvalidArgument);
}
