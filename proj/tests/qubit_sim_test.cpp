#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "dephase/qubit_sim.hpp"

using namespace dephase;

namespace {

constexpr double pi = 3.14159265358979323846;
constexpr double t_g = 100e-9;

Eigen::Matrix2cd rx(double a) {
    const std::complex<double> i(0, 1);
    Eigen::Matrix2cd m;
    m << std::cos(a / 2), -i * std::sin(a / 2), -i * std::sin(a / 2), std::cos(a / 2);
    return m;
}

Eigen::Matrix2cd rz(double a) {
    Eigen::Matrix2cd m = Eigen::Matrix2cd::Zero();
    m(0, 0) = std::polar(1.0, -a / 2);
    m(1, 1) = std::polar(1.0, a / 2);
    return m;
}

// Dense-matrix circuit: prep, per slot R_z then the slot gate, then whichever
// closing half rotation returns the noiseless state to |1>.
double oracle_survival(const PulseSequence& seq, const std::vector<double>& phases, double eps,
                       const std::vector<double>& delta) {
    auto body = [&](const std::vector<double>& ph, double e, const std::vector<double>& d) {
        Eigen::Vector2cd psi(1.0, 0.0);
        psi = rx(pi / 2) * psi;
        std::size_t p = 0;
        for (int j = 1; j <= seq.n_slots; ++j) {
            psi = rz(ph[j - 1]) * psi;
            if (p < seq.pulse_slots.size() && seq.pulse_slots[p] == j) {
                psi = rx(seq.pulse_signs[p] * (pi + e + d[p])) * psi;
                ++p;
            }
        }
        return psi;
    };
    const std::vector<double> none(seq.n_pulses(), 0.0);
    const auto clean = body(std::vector<double>(seq.n_slots, 0.0), 0.0, none);
    const double close = std::norm((rx(pi / 2) * clean)(1)) > 0.5 ? pi / 2 : -pi / 2;
    const Eigen::Vector2cd out = rx(close) * body(phases, eps, delta);
    return std::norm(out(1));
}

std::vector<double> random_phases(std::mt19937_64& rng, int n, double scale) {
    std::normal_distribution<double> d(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

PulseSequence random_sequence(std::mt19937_64& rng) {
    PulseSequence s;
    s.n_slots = 4 + static_cast<int>(rng() % 30);
    s.gate_period = t_g;
    for (int j = 1; j <= s.n_slots; ++j) {
        if (rng() % 3 == 0) {
            s.pulse_slots.push_back(j);
            s.pulse_signs.push_back(rng() % 2 ? 1 : -1);
        }
    }
    return s;
}

}  // namespace

TEST(QubitSim, PerfectPulsesFollowAccumulatedPhase) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const auto seq = random_sequence(rng);
        const auto ph = random_phases(rng, seq.n_slots, 0.4);
        const auto y = switching_function(seq);
        double phi = 0.0;
        for (int j = 0; j < seq.n_slots; ++j) phi += y[j] * ph[j];
        const double p = survival_probability(seq, ph, {}, {}, nullptr);
        EXPECT_NEAR(p, 0.5 * (1 + std::cos(phi)), 1e-12);
        EXPECT_NEAR(p, oracle_survival(seq, ph, 0.0, std::vector<double>(seq.n_pulses(), 0.0)), 1e-12);
    }
}

TEST(QubitSim, ImperfectPulsesMatchDenseOracle) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto seq = random_sequence(rng);
        const auto ph = random_phases(rng, seq.n_slots, 0.3);
        const double eps = 0.05 * (trial % 5);
        PulseErrorModel perr{eps, 0.0};
        EXPECT_NEAR(survival_probability(seq, ph, {}, perr, nullptr),
                    oracle_survival(seq, ph, eps, std::vector<double>(seq.n_pulses(), 0.0)), 1e-12);
    }
}

TEST(QubitSim, NativePhasesAddToInjected) {
    std::mt19937_64 rng(3);
    const auto seq = make_fttps(6, 32, t_g)[5];
    const auto a = random_phases(rng, 32, 0.2);
    const auto b = random_phases(rng, 32, 0.2);
    std::vector<double> sum(32);
    for (int j = 0; j < 32; ++j) sum[j] = a[j] + b[j];
    EXPECT_NEAR(survival_probability(seq, a, b, {}, nullptr), survival_probability(seq, sum, {}, {}, nullptr), 1e-13);
}

TEST(QubitSim, TargetZeroIsComplement) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const auto seq = random_sequence(rng);
        const auto ph = random_phases(rng, seq.n_slots, 0.5);
        const double one = survival_probability(seq, ph, {}, {}, nullptr, TargetState::one);
        const double zero = survival_probability(seq, ph, {}, {}, nullptr, TargetState::zero);
        EXPECT_NEAR(one, zero, 1e-12);
        EXPECT_NEAR(survival_probability(seq, std::vector<double>(seq.n_slots, 0.0), {}, {}, nullptr, TargetState::zero),
                    1.0, 1e-12);
    }
}

TEST(QubitSim, EchoExamples) {
    const auto seqs = make_fttps(2, 128, t_g);
    const std::vector<double> zero(128, 0.0);
    const std::vector<double> flat(128, pi / 128);
    EXPECT_NEAR(survival_probability(seqs[0], zero, {}, {}, nullptr), 1.0, 1e-12);
    EXPECT_NEAR(survival_probability(seqs[0], flat, {}, {}, nullptr), 0.0, 1e-12);
    for (double c : {0.01, 0.3, 1.7, -2.2}) {
        EXPECT_NEAR(survival_probability(seqs[1], std::vector<double>(128, c), {}, {}, nullptr), 1.0, 1e-12) << c;
    }
}

TEST(QubitSim, SignEquivalenceBitExact) {
    const auto f = make_fttps(64, 128, t_g);
    const auto r = make_rfttps(64, 128, t_g);
    const auto tr = generate_trajectory(design_bandpass(1e6, 0.2e6, 5e-4, t_g), 128, SeedLineage(5));
    for (std::size_t k = 0; k < f.size(); ++k) {
        EXPECT_EQ(survival_probability(f[k], tr.phases, {}, {}, nullptr),
                  survival_probability(r[k], tr.phases, {}, {}, nullptr))
            << k;
    }
}

TEST(QubitSim, JitterAveragedMatchesSampledOracle) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 6; ++trial) {
        const auto seq = random_sequence(rng);
        const auto ph = random_phases(rng, seq.n_slots, 0.2);
        const PulseErrorModel perr{0.03, 0.15};
        const double exact = jitter_averaged_survival(seq, ph, {}, perr);
        std::normal_distribution<double> jit(0.0, perr.jitter_std);
        const int n = 20000;
        double s = 0.0, s2 = 0.0;
        for (int i = 0; i < n; ++i) {
            std::vector<double> d(seq.n_pulses());
            for (auto& x : d) x = jit(rng);
            const double p = oracle_survival(seq, ph, perr.over_rotation, d);
            s += p;
            s2 += p * p;
        }
        const double mean = s / n;
        const double se = std::sqrt(std::max(s2 / n - mean * mean, 0.0) / n);
        EXPECT_NEAR(exact, mean, 4 * se + 1e-12) << trial;
    }
}

TEST(QubitSim, JitterAveragedReducesToExactWithoutJitter) {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const auto seq = random_sequence(rng);
        const auto ph = random_phases(rng, seq.n_slots, 0.3);
        const PulseErrorModel perr{0.02 * (trial % 3), 0.0};
        EXPECT_NEAR(jitter_averaged_survival(seq, ph, {}, perr), survival_probability(seq, ph, {}, perr, nullptr),
                    1e-12);
    }
}

TEST(QubitSim, JitterNeedsRandomStream) {
    const auto seq = make_fttps(3, 8, t_g)[2];
    EXPECT_THROW(survival_probability(seq, std::vector<double>(8, 0.0), {}, {0.0, 0.1}, nullptr), std::invalid_argument);
}

TEST(QubitSim, ShortTrajectoryRejected) {
    const auto seq = make_fttps(3, 8, t_g)[2];
    EXPECT_THROW(survival_probability(seq, std::vector<double>(7, 0.0), {}, {}, nullptr), std::invalid_argument);
    Trajectory tr;
    tr.phases.assign(5, 0.0);
    EXPECT_THROW(run_shot(seq, tr, nullptr, {}, SeedLineage(1)), std::invalid_argument);
}

TEST(QubitSim, RunShotIsDeterministic) {
    const auto seq = make_fttps(9, 32, t_g)[8];
    const auto tr = generate_trajectory(ArmaModel::white(0.1, t_g), 32, SeedLineage(8));
    const PulseErrorModel perr{0.01, 0.05};
    EXPECT_EQ(run_shot(seq, tr, nullptr, perr, SeedLineage(9)), run_shot(seq, tr, nullptr, perr, SeedLineage(9)));
}

TEST(QubitSim, ResampleToSlots) {
    const std::vector<double> steps = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    EXPECT_EQ(resample_to_slots(steps, 4, 1.0, 0.0), (std::vector<double>{1, 2, 3, 4}));
    EXPECT_EQ(resample_to_slots(steps, 4, 2.0, 0.0), (std::vector<double>{3, 7, 11, 15}));
    const auto half = resample_to_slots(steps, 3, 1.0, 0.5);
    EXPECT_NEAR(half[0], 1.5, 1e-15);
    EXPECT_NEAR(half[2], 3.5, 1e-15);
    const auto third = resample_to_slots(steps, 2, 1.5, 0.0);
    EXPECT_NEAR(third[0], 1 + 0.5 * 2, 1e-15);
    EXPECT_NEAR(third[1], 0.5 * 2 + 3, 1e-15);
    EXPECT_EQ(sdr_steps_needed(4, 2.0, 0.0), 8u);
    EXPECT_EQ(sdr_steps_needed(4, 1.0, 0.5), 5u);
    EXPECT_THROW(resample_to_slots(steps, 5, 2.0, 0.0), std::invalid_argument);
}

TEST(QubitSim, ResamplePreservesCoveredPhase) {
    std::mt19937_64 rng(10);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 20);
        const double ratio = std::uniform_real_distribution<double>(0.2, 4.0)(rng);
        const double off = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const auto steps = random_phases(rng, static_cast<int>(sdr_steps_needed(n, ratio, off)), 1.0);
        const auto slots = resample_to_slots(steps, n, ratio, off);
        double want = 0.0;
        for (std::size_t i = 0; i < steps.size(); ++i) {
            const double lo = std::max(static_cast<double>(i), off);
            const double hi = std::min(i + 1.0, off + n * ratio);
            if (hi > lo) want += steps[i] * (hi - lo);
        }
        double got = 0.0;
        for (double v : slots) got += v;
        EXPECT_NEAR(got, want, 1e-12 * (1 + std::abs(want)));
    }
}

TEST(QubitSim, SummaryStderr) {
    SequenceOutcomes unit;
    for (int i = 0; i < 100; ++i) unit.outcomes.push_back({i < 70 ? 1 : 0, 1});
    const auto a = summarize_outcomes(unit);
    EXPECT_DOUBLE_EQ(a.survival_mean, 0.7);
    EXPECT_NEAR(a.survival_stderr, std::sqrt(0.7 * 0.3 / 100), 1e-15);

    SequenceOutcomes traj;
    traj.outcomes = {{80, 100}, {60, 100}, {70, 100}};
    const auto b = summarize_outcomes(traj);
    EXPECT_DOUBLE_EQ(b.survival_mean, 0.7);
    EXPECT_EQ(b.shots, 300);
    EXPECT_EQ(b.trajectories, 3);
    EXPECT_NEAR(b.survival_stderr, 0.1 / std::sqrt(3.0), 1e-15);

    EXPECT_THROW(summarize_outcomes(SequenceOutcomes{}), std::invalid_argument);
}

TEST(QubitSim, ZeroNoiseSurvivesExactly) {
    const auto seqs = make_fttps(16, 64, t_g);
    for (const InjectionMode mode : {InjectionMode{GateMode{4, 50}}, InjectionMode{SdrMode{30, t_g, true}}}) {
        const auto res = run_experiment(seqs, ArmaModel::white(0.0, t_g), std::nullopt, {}, mode, 1);
        for (const auto& r : res.records) EXPECT_EQ(r.survival_mean, 1.0);
    }
}

TEST(QubitSim, AnalyticSurvivalClosedForms) {
    const auto seqs = make_fttps(64, 128, t_g);
    const auto white = ArmaModel::white(0.1, t_g);
    EXPECT_NEAR(analytic_survival(seqs[7], white), 0.5 + 0.5 * std::exp(-0.64), 1e-12);
    EXPECT_NEAR(analytic_survival(seqs[7], white), 0.7636, 1e-4);
    EXPECT_EQ(analytic_survival(seqs[3], ArmaModel::white(0.0, t_g)), 1.0);
    const auto both = analytic_survival(seqs[5], white, white);
    EXPECT_NEAR(both, 0.5 + 0.5 * std::exp(-1.28), 1e-12);
}

TEST(QubitSim, GateWhiteNoiseMatchesClosedForm) {
    const auto seqs = make_fttps(64, 128, t_g);
    const auto res = run_experiment(seqs, ArmaModel::white(0.1, t_g), std::nullopt, {}, GateMode{200, 1000}, 21);
    const double want = 0.5 + 0.5 * std::exp(-0.64);
    double pooled = 0.0, var = 0.0;
    for (const auto& r : res.records) {
        // Family-wise 5% over 64 sequences.
        EXPECT_NEAR(r.survival_mean, want, 3.5 * r.survival_stderr) << r.seq_index;
        EXPECT_EQ(r.shots, 200000);
        EXPECT_EQ(r.trajectories, 200);
        pooled += r.survival_mean;
        var += r.survival_stderr * r.survival_stderr;
    }
    EXPECT_NEAR(pooled / 64, want, 3 * std::sqrt(var) / 64);
}

TEST(QubitSim, StderrNotBelowBinomialBound) {
    const auto seqs = make_fttps(32, 64, t_g);
    const auto res = run_experiment(seqs, design_bandpass(1e6, 0.3e6, 1e-3, t_g), std::nullopt, {}, GateMode{50, 200}, 22);
    for (const auto& r : res.records) {
        const double bound = std::sqrt(r.survival_mean * (1 - r.survival_mean) / r.shots);
        EXPECT_GE(r.survival_stderr, bound / 3) << r.seq_index;
    }
}

TEST(QubitSim, BandpassMonteCarloMatchesAnalytic) {
    const auto seqs = make_fttps(64, 128, t_g);
    const auto model = design_bandpass(1e6, 0.2e6, 5e-4, t_g);
    const auto res = run_experiment(seqs, model, std::nullopt, {}, GateMode{200, 1000}, 23);
    const auto r = autocovariance(model, 127);
    for (std::size_t k = 0; k < seqs.size(); ++k) {
        const double p = analytic_survival(seqs[k], r);
        const double binom = std::sqrt(p * (1 - p) / res.records[k].shots);
        const double se = std::max(res.records[k].survival_stderr, binom);
        EXPECT_NEAR(res.records[k].survival_mean, p, 5 * se) << k;
    }
}

TEST(QubitSim, SdrMatchesGateForWhiteNoise) {
    const auto seqs = make_fttps(16, 128, t_g);
    const auto white = ArmaModel::white(0.1, t_g);
    const auto g = run_experiment(seqs, white, std::nullopt, {}, GateMode{100, 100}, 31);
    const auto s = run_experiment(seqs, white, std::nullopt, {}, SdrMode{10000, t_g, false}, 32);
    double dg = 0, ds = 0, vg = 0, vs = 0;
    for (std::size_t k = 0; k < seqs.size(); ++k) {
        dg += g.records[k].survival_mean;
        ds += s.records[k].survival_mean;
        vg += std::pow(g.records[k].survival_stderr, 2);
        vs += std::pow(s.records[k].survival_stderr, 2);
        EXPECT_EQ(s.records[k].trajectories, 10000);
    }
    EXPECT_NEAR(dg, ds, 3 * std::sqrt(vg + vs));
}

TEST(QubitSim, SdrFinerClockMatchesAnalyticOnSlots) {
    // Half-period steps of white noise sum onto slots as white noise of twice the variance.
    const auto seqs = make_fttps(8, 64, t_g);
    const auto fine = ArmaModel::white(0.05, t_g / 2);
    const auto s = run_experiment(seqs, fine, std::nullopt, {}, SdrMode{20000, t_g / 2, false}, 33);
    const double want = 0.5 + 0.5 * std::exp(-64 * 2 * 0.0025 / 2);
    for (const auto& r : s.records) EXPECT_NEAR(r.survival_mean, want, 4 * r.survival_stderr) << r.seq_index;
}

TEST(QubitSim, OverRotationArtifactDirection) {
    const auto f = make_fttps(64, 128, t_g);
    const auto r = make_rfttps(64, 128, t_g);
    const auto quiet = ArmaModel::white(0.0, t_g);
    const PulseErrorModel perr{0.02, 0.0};
    const auto rf = run_experiment(f, quiet, std::nullopt, perr, GateMode{1, 4000}, 41);
    const auto rr = run_experiment(r, quiet, std::nullopt, perr, GateMode{1, 4000}, 41);
    const std::vector<double> zero(128, 0.0);
    double prev = 1.0, top_f = 0, top_r = 0;
    for (int k = 0; k < 64; ++k) {
        const double pf = survival_probability(f[k], zero, {}, perr, nullptr);
        EXPECT_LE(pf, prev + 1e-12) << k;
        prev = pf;
        if (k >= 48) {
            top_f += rf.records[k].survival_mean;
            top_r += rr.records[k].survival_mean;
        }
    }
    EXPECT_LT(top_f / 16, top_r / 16 - 0.05);
}

TEST(QubitSim, ReproducibleAcrossWorkerCounts) {
    const auto seqs = make_rfttps(24, 64, t_g);
    const auto model = design_bandpass(1e6, 0.3e6, 1e-3, t_g);
    const auto native = design_lorentzian(1e-10, 2 * pi * 1e5, 1e-12, t_g);
    const PulseErrorModel perr{0.01, 0.05};
    for (const InjectionMode mode : {InjectionMode{GateMode{10, 50}}, InjectionMode{SdrMode{200, t_g, true}}}) {
        ExperimentOptions one;
        one.workers = 1;
        ExperimentOptions many;
        many.workers = 7;
        const auto a = run_experiment(seqs, model, native, perr, mode, 99, one);
        const auto b = run_experiment(seqs, model, native, perr, mode, 99, many);
        ASSERT_EQ(a.records.size(), b.records.size());
        for (std::size_t k = 0; k < a.records.size(); ++k) {
            EXPECT_EQ(a.records[k].survival_mean, b.records[k].survival_mean);
            EXPECT_EQ(a.records[k].survival_stderr, b.records[k].survival_stderr);
            EXPECT_EQ(a.records[k].seed, b.records[k].seed);
            ASSERT_EQ(a.raw[k].outcomes.size(), b.raw[k].outcomes.size());
            for (std::size_t i = 0; i < a.raw[k].outcomes.size(); ++i) {
                EXPECT_EQ(a.raw[k].outcomes[i].successes, b.raw[k].outcomes[i].successes);
            }
        }
    }
}

TEST(QubitSim, InvalidInputsRejected) {
    const auto seqs = make_fttps(4, 16, t_g);
    const auto white = ArmaModel::white(0.1, t_g);
    EXPECT_THROW(run_experiment(seqs, white, std::nullopt, {}, GateMode{0, 10}, 1), std::invalid_argument);
    EXPECT_THROW(run_experiment(seqs, white, std::nullopt, {}, GateMode{1, 0}, 1), std::invalid_argument);
    EXPECT_THROW(run_experiment(seqs, white, std::nullopt, {}, SdrMode{0, t_g, false}, 1), std::invalid_argument);
    EXPECT_THROW(run_experiment(seqs, ArmaModel::white(0.1, 2 * t_g), std::nullopt, {}, GateMode{1, 1}, 1),
                 std::invalid_argument);
    EXPECT_THROW(run_experiment(seqs, white, std::nullopt, {0.0, -1.0}, GateMode{1, 1}, 1), std::invalid_argument);
}
