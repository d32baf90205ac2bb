#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "fmk/harness.hpp"
#include "oracles.hpp"

using namespace fmk;
using namespace fmk::harness;

namespace {

/// Re-simulates every probe from scratch and compares each sampled target.
void expect_provenance(const GeneratedDataset& g, std::size_t per_probe) {
    ASSERT_EQ(g.data.size(), g.probes.size() * per_probe);
    std::size_t row = 0;
    for (const auto& probe : g.probes) {
        ASSERT_EQ(probe.samples.size(), per_probe);
        const auto y = simulate_plant(g.plant, probe.input, g.initial_state);
        for (std::size_t idx : probe.samples) {
            const double t = g.data.targets()[row];
            ASSERT_NEAR(t, y.values[idx], 1e-9 * std::max(1.0, std::abs(y.values[idx])));
            const auto w = window_at_index(probe.input, idx, g.data.grid(), g.input_offset);
            ASSERT_EQ(std::vector<double>(w.samples().begin(), w.samples().end()),
                      std::vector<double>(g.data.windows()[row].samples().begin(), g.data.windows()[row].samples().end()));
            ++row;
        }
    }
}

}  // namespace

TEST(Protocols, LtiDataset) {
    const LtiProtocol p;
    const auto g = gen_lti_dataset(p);
    EXPECT_EQ(g.data.size(), 100u);
    EXPECT_EQ(g.data.grid(), TimeGrid(0.01, 201));
    const auto first = g.probes.front().input;
    const auto last = g.probes.back().input;
    EXPECT_NEAR(std::asin(first.values[1]) / 0.01, std::exp(-5.0), 1e-9);
    EXPECT_NEAR(std::exp(-5.0), 0.00674, 1e-5);
    EXPECT_NEAR(std::exp(5.0), 148.4, 0.05);
    EXPECT_NEAR(last.values[1], std::sin(std::exp(5.0) * 0.01), 1e-15);
    EXPECT_DOUBLE_EQ(g.probes.front().input.time(g.probes.front().samples.front()), 2.0);
    expect_provenance(g, 1);
}

TEST(Protocols, SatlagDataset) {
    const SatlagProtocol p;
    const auto g = gen_satlag_dataset(p);
    EXPECT_EQ(g.data.size(), 300u);
    EXPECT_EQ(p.lambda, 4.0);
    const auto& probe = g.probes.front();
    ASSERT_EQ(probe.samples.size(), 3u);
    EXPECT_NEAR(probe.input.time(probe.samples[0]), 0.666, 0.005);
    EXPECT_NEAR(probe.input.time(probe.samples[1]), 1.333, 0.005);
    EXPECT_NEAR(probe.input.time(probe.samples[2]), 2.0, 1e-12);
    expect_provenance(g, 3);
}

TEST(Protocols, LpvCompareDatasets) {
    const LpvCompareProtocol p;
    const auto sets = gen_lpv_compare_datasets(p);
    EXPECT_EQ(sets.steps.data.size(), 1000u);
    EXPECT_EQ(sets.sines.data.size(), 1000u);
    const auto amps = lpv_step_amplitudes(p);
    ASSERT_EQ(amps.size(), 20u);
    EXPECT_EQ(amps.front(), -10.0);
    EXPECT_EQ(amps.back(), 10.0);
    for (std::size_t i = 1; i < amps.size(); ++i) {
        EXPECT_NEAR(amps[i] - amps[i - 1], 20.0 / 19.0, 1e-12);
    }
    for (std::size_t i = 0; i < amps.size(); ++i) {
        EXPECT_EQ(sets.steps.probes[i].input.values.back(), amps[i]);
    }
    expect_provenance(sets.steps, 50);
    expect_provenance(sets.sines, 50);
}

TEST(Protocols, PotassiumDataset) {
    const auto p = HhChannelProtocol::potassium();
    const auto g = gen_hh_channel_dataset(p);
    EXPECT_EQ(g.data.size(), 1000u);
    EXPECT_NEAR(g.data.grid().horizon(), 10.0, 1e-12);
    EXPECT_EQ(g.input_offset, hh::kPotassiumReversal);
    EXPECT_NEAR(g.probes.front().input.values.back(), -65.1 - 4.9, 1e-12);
    EXPECT_NEAR(g.probes.back().input.values.back(), -65.1 + 95.1, 1e-12);
    EXPECT_EQ(g.probes.front().input.values.front(), -65.1);
    expect_provenance(g, 20);
}

TEST(Protocols, SodiumDataset) {
    const auto p = HhChannelProtocol::sodium();
    const auto g = gen_hh_channel_dataset(p);
    EXPECT_EQ(g.data.size(), 2000u);
    EXPECT_NEAR(g.data.grid().horizon(), 15.0, 1e-12);
    EXPECT_EQ(g.input_offset, hh::kSodiumReversal);
    for (const auto& probe : g.probes) {
        EXPECT_EQ(probe.input.values.front(), -65.1);
        for (std::size_t i = 25; i < 50; ++i) {
            EXPECT_GT(probe.input.time(probe.samples[i]), 13.0);
            EXPECT_LE(probe.input.time(probe.samples[i]), 15.0 + 1e-9);
        }
        EXPECT_NEAR(probe.input.values[260] - probe.input.values[259], 20.0, 1e-12);
    }
    EXPECT_NEAR(g.probes.front().input.values[10], -65.1 - 4.9, 1e-12);
    EXPECT_NEAR(g.probes.back().input.values[10], -65.1 + 95.1, 1e-12);
    expect_provenance(g, 50);
}

TEST(Protocols, HyperparameterDefaults) {
    const auto k = HhChannelProtocol::potassium();
    EXPECT_EQ(k.gamma, 1e-4);
    EXPECT_EQ(k.kernel, KernelSpec(ConductanceLpvKernel(ExpWeight(0.2), 10.0)));
    const auto na = HhChannelProtocol::sodium();
    EXPECT_EQ(na.gamma, 1e-7);
    EXPECT_EQ(na.kernel, KernelSpec(TwoScaleConductanceLpvKernel(ExpWeight(0.2), 9.5, ExpWeight(1.7), 2.5)));
    const LpvCompareProtocol lpv;
    EXPECT_EQ(lpv.gamma, 6e-4);
    EXPECT_EQ(lpv.sigma, 1.0);
    EXPECT_EQ(lpv.lambda, 5.0);
    const SatlagProtocol s;
    EXPECT_EQ(s.gammas, (std::vector<double>{1e-4, 1e-2}));
}

TEST(Protocols, WrongExperimentRejected) {
    const auto cfg = default_config(ExperimentId::Lti);
    EXPECT_THROW(gen_hh_channel_dataset(cfg), InvalidArgument);
    EXPECT_THROW(gen_satlag_dataset(cfg), InvalidArgument);
}

TEST(Noise, SeededAndStationary) {
    const NoiseSpec spec;
    const auto a = band_limited_noise(42, spec, 2000.0, 0.01);
    EXPECT_EQ(a.values, band_limited_noise(42, spec, 2000.0, 0.01).values);
    EXPECT_NE(a.values, band_limited_noise(43, spec, 2000.0, 0.01).values);
    EXPECT_EQ(a.values.front(), spec.baseline);
    double mean = 0.0;
    for (double x : a.values) {
        mean += x;
    }
    mean /= static_cast<double>(a.size());
    double var = 0.0;
    for (double x : a.values) {
        var += (x - mean) * (x - mean);
    }
    var /= static_cast<double>(a.size());
    EXPECT_NEAR(mean, spec.baseline, 3.0);
    EXPECT_NEAR(std::sqrt(var), spec.amplitude, 0.2 * spec.amplitude);
}

TEST(Config, OverridesAndValidation) {
    const json j = {{"experiment", "hh-k"}, {"seed", 7}, {"potassium", {{"gamma", 1e-3}, {"probes", 10}}}};
    const auto cfg = config_from_json(j);
    EXPECT_EQ(cfg.id, ExperimentId::HhK);
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_EQ(cfg.potassium.gamma, 1e-3);
    EXPECT_EQ(cfg.potassium.probes, 10);
    EXPECT_EQ(cfg.potassium.dt, 0.05);

    EXPECT_THROW(config_from_json({{"experiment", "hh-k"}, {"bogus", 1}}), FormatError);
    EXPECT_THROW(config_from_json({{"experiment", "hh-k"}, {"potassium", {{"gama", 1}}}}), FormatError);
    EXPECT_THROW(config_from_json({{"experiment", "hh-k"}, {"potassium", {{"gamma", -1.0}}}}), InvalidArgument);
    EXPECT_THROW(config_from_json({{"experiment", "hh-k"}, {"potassium", {{"gamma", "x"}}}}), FormatError);
    EXPECT_THROW(config_from_json({{"experiment", "nope"}}), InvalidArgument);
    EXPECT_THROW(config_from_json(json::object()), FormatError);
    EXPECT_THROW(config_from_json({{"experiment", "lti"}}, ExperimentId::HhK), InvalidArgument);
    EXPECT_EQ(config_from_json(json::object(), ExperimentId::LpvCompare).id, ExperimentId::LpvCompare);

    const auto echo = to_json(cfg);
    EXPECT_EQ(config_from_json(echo).potassium.gamma, 1e-3);
    EXPECT_EQ(echo["potassium"]["kernel"]["variant"], "conductance_lpv");
}

TEST(Experiment, LtiWritesReportWithMetricPerTrace) {
    const auto dir = oracle::scratch_dir("exp_lti");
    const auto rep = run_experiment(default_config(ExperimentId::Lti), dir / "run");
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "report.json"));
    EXPECT_TRUE(std::filesystem::exists(dir / "run" / "dataset.csv"));
    std::size_t traces = 0;
    for (const auto& entry : std::filesystem::directory_iterator(dir / "run")) {
        const auto name = entry.path().filename().string();
        if (name.rfind("trace_", 0) == 0 && name.find("_input") == std::string::npos) {
            ++traces;
            ASSERT_TRUE(rep.traces.contains(name)) << name;
            EXPECT_TRUE(rep.metrics.contains(rep.traces[name].get<std::string>())) << name;
        }
    }
    EXPECT_EQ(traces, 6u);
    for (const auto& f : rep.files) {
        EXPECT_TRUE(std::filesystem::exists(dir / "run" / f)) << f;
    }
    const auto report = io::read_json(dir / "run" / "report.json");
    EXPECT_EQ(report["config"]["experiment"], "lti");
}

TEST(Experiment, ReproducibleBytes) {
    const auto dir = oracle::scratch_dir("exp_repro");
    auto cfg = default_config(ExperimentId::SatlagRbf);
    cfg.satlag.freq_count = 4;
    cfg.satlag.amp_count = 4;
    run_experiment(cfg, dir / "a");
    run_experiment(cfg, dir / "b", 1);
    for (const auto& entry : std::filesystem::directory_iterator(dir / "a")) {
        const auto name = entry.path().filename();
        EXPECT_EQ(io::read_text(entry.path()), io::read_text(dir / "b" / name)) << name;
    }
}

TEST(Experiment, FailureRemovesPartialOutputs) {
    const auto dir = oracle::scratch_dir("exp_fail");
    auto cfg = default_config(ExperimentId::HhK);
    cfg.potassium.probes = 3;
    cfg.potassium.step_samples = 4;
    cfg.potassium.test_duration = 20.0;
    cfg.potassium.test_current = 1e7;  // blows up the test-voltage simulation after the dataset is written
    EXPECT_THROW(run_experiment(cfg, dir / "run"), NumericalFailure);
    EXPECT_FALSE(std::filesystem::exists(dir / "run"));
}
