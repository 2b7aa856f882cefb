#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dephase/predictor.hpp"

using namespace dephase;

namespace {

constexpr double pi = 3.14159265358979323846;
constexpr double t_g = 100e-9;
constexpr std::size_t grid = 1025;

struct Setup {
    std::vector<PulseSequence> seqs = make_fttps(64, 128, t_g);
    std::vector<FilterFunction> filters = filter_functions(seqs, grid);
    Spectrum injected = psd(design_bandpass(1e6, 0.2e6, 5e-5, t_g), grid);
    std::vector<int> n_pulses;
    Setup() {
        for (const auto& s : seqs) n_pulses.push_back(s.n_pulses());
    }
};

const Setup& setup() {
    static const Setup s;
    return s;
}

FitParams truth() {
    FitParams p;
    p.amplitude = 2e-10;
    p.omega_c = 2 * pi * 1e5;
    p.sigma2 = 1.6e-10;
    p.c1 = 5e-3;
    p.c2 = 3e-5;
    return p;
}

std::vector<ExperimentRecord> synth(const FitParams& p, double noise, std::uint64_t seed) {
    const auto& s = setup();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    std::vector<ExperimentRecord> out;
    for (std::size_t k = 0; k < s.seqs.size(); ++k) {
        ExperimentRecord r;
        r.seq_index = s.seqs[k].label;
        r.n_pulses = s.n_pulses[k];
        r.survival_mean = std::clamp(predict_survival(p, s.filters[k], r.n_pulses, s.injected) + noise * n01(rng), 0.0, 1.0);
        r.survival_stderr = noise > 0 ? noise : 1e-3;
        r.shots = 1000;
        out.push_back(r);
    }
    return out;
}

FitParams random_params(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    FitParams p;
    p.amplitude = 1e-9 * u(rng);
    p.omega_c = 2 * pi * std::pow(10.0, 4.0 + 2.5 * u(rng));
    p.sigma2 = 3e-10 * u(rng);
    p.c1 = 1e-2 * u(rng);
    p.c2 = 1e-4 * u(rng);
    p.kind = rng() % 4 ? ModelKind::lorentzian_plus_white : ModelKind::white_only;
    return p;
}

}  // namespace

TEST(Predictor, ZeroParametersSurviveFully) {
    const auto& s = setup();
    const Spectrum zero{s.injected.freqs, std::vector<double>(grid, 0.0), t_g};
    for (std::size_t k = 0; k < s.filters.size(); ++k) EXPECT_EQ(predict_survival({}, s.filters[k], s.n_pulses[k], zero), 1.0);
}

TEST(Predictor, WhiteOnlyIsFlatAcrossSequences) {
    const auto& s = setup();
    const Spectrum zero{s.injected.freqs, std::vector<double>(grid, 0.0), t_g};
    FitParams p;
    p.kind = ModelKind::white_only;
    p.sigma2 = 2e-10;
    p.amplitude = 5e-9;  // ignored by the white-only model
    const double p0 = predict_survival(p, s.filters[0], 0, zero);
    EXPECT_LT(p0, 1.0);
    for (std::size_t k = 0; k < s.filters.size(); ++k) EXPECT_NEAR(predict_survival(p, s.filters[k], 0, zero), p0, 1e-12);
}

TEST(Predictor, CoherentTermIsQuadratic) {
    const auto& s = setup();
    const Spectrum zero{s.injected.freqs, std::vector<double>(grid, 0.0), t_g};
    FitParams p;
    p.c2 = 2e-4;
    for (std::size_t k = 0; k < s.filters.size(); ++k) {
        const double n = s.n_pulses[k];
        EXPECT_NEAR(std::log(2 * predict_survival(p, s.filters[k], s.n_pulses[k], zero) - 1), -p.c2 * n * n, 1e-12);
    }
}

TEST(Predictor, NativePsdShape) {
    auto p = truth();
    EXPECT_NEAR(native_psd(p, 1e5), p.amplitude / 2 + p.sigma2, 1e-22);
    EXPECT_NEAR(native_psd(p, 0.0), p.amplitude + p.sigma2, 1e-22);
    p.kind = ModelKind::white_only;
    EXPECT_EQ(native_psd(p, 1e5), p.sigma2);
}

TEST(Predictor, MatchesExplicitExponent) {
    const auto& s = setup();
    const auto p = truth();
    for (std::size_t k : {0u, 5u, 30u, 63u}) {
        double e = p.c1 * s.n_pulses[k] + p.c2 * s.n_pulses[k] * s.n_pulses[k];
        const auto& f = s.filters[k];
        for (std::size_t i = 0; i < grid; ++i) {
            const double w = 2 * pi * f.freqs[i];
            e += f.weights[i] * (p.amplitude / (1 + w * w / (p.omega_c * p.omega_c)) + p.sigma2 + s.injected.values[i]);
        }
        EXPECT_NEAR(predict_survival(p, f, s.n_pulses[k], s.injected), 0.5 + 0.5 * std::exp(-e), 1e-14);
    }
}

TEST(Predictor, ValidationRejectsNegatives) {
    auto p = truth();
    p.c1 = -1e-3;
    EXPECT_THROW(p.validate(), std::invalid_argument);
    p = truth();
    p.sigma2 = std::nan("");
    EXPECT_THROW(p.validate(), std::invalid_argument);
}

TEST(Predictor, JacobianMatchesFiniteDifferences) {
    const auto& s = setup();
    std::mt19937_64 rng(91);
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_params(rng);
        const auto chk = check_jacobian(p, s.filters, s.n_pulses, s.injected);
        EXPECT_LT(chk.max_relative_error, 1e-4) << trial;
        EXPECT_EQ(chk.analytic.cols(), p.kind == ModelKind::white_only ? 3 : 5);
        EXPECT_EQ(chk.analytic.rows(), 64);
    }
}

TEST(Predictor, NoiselessRecovery) {
    const auto& s = setup();
    const auto p = truth();
    const auto recs = synth(p, 0.0, 1);
    const auto res = fit(recs, s.filters, s.injected, ModelKind::lorentzian_plus_white, {});
    EXPECT_TRUE(res.converged) << res.diagnostic;
    EXPECT_NEAR(res.params.amplitude, p.amplitude, 1e-6 * p.amplitude);
    EXPECT_NEAR(res.params.omega_c, p.omega_c, 1e-6 * p.omega_c);
    EXPECT_NEAR(res.params.sigma2, p.sigma2, 1e-6 * p.sigma2);
    EXPECT_NEAR(res.params.c1, p.c1, 1e-6 * p.c1);
    EXPECT_NEAR(res.params.c2, p.c2, 1e-6 * p.c2);
    EXPECT_LT(res.rms_residual(), 1e-10);
    EXPECT_LT(res.jacobian_check_error, 1e-4);
}

TEST(Predictor, NoiselessWhiteOnlyRecovery) {
    const auto& s = setup();
    FitParams p;
    p.kind = ModelKind::white_only;
    p.sigma2 = 1e-10;
    p.c1 = 2e-3;
    p.c2 = 4e-5;
    const auto res = fit(synth(p, 0.0, 2), s.filters, s.injected, ModelKind::white_only, {});
    EXPECT_NEAR(res.params.sigma2, p.sigma2, 1e-6 * p.sigma2);
    EXPECT_NEAR(res.params.c1, p.c1, 1e-6 * p.c1);
    EXPECT_NEAR(res.params.c2, p.c2, 1e-6 * p.c2);
    EXPECT_EQ(res.names.size(), 3u);
}

// Each free column is orthogonal to the residual at an interior optimum.
TEST(Predictor, ResidualOrthogonality) {
    const auto& s = setup();
    const auto recs = synth(truth(), 3e-3, 3);
    const auto res = fit(recs, s.filters, s.injected, ModelKind::lorentzian_plus_white, {});
    ASSERT_TRUE(res.converged);
    const auto chk = check_jacobian(res.params, s.filters, s.n_pulses, s.injected);
    Eigen::VectorXd r(64);
    for (int k = 0; k < 64; ++k) r(k) = res.residuals[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < chk.analytic.cols(); ++i) {
        if (res.at_bound[static_cast<std::size_t>(i)]) continue;
        const Eigen::VectorXd col = chk.analytic.col(i);
        EXPECT_LT(std::abs(col.dot(r)), 1e-6 * col.norm() * r.norm()) << res.names[static_cast<std::size_t>(i)];
    }
}

TEST(Predictor, NestedModelsLossOrder) {
    const auto& s = setup();
    for (std::uint64_t seed = 10; seed < 14; ++seed) {
        const auto recs = synth(truth(), 4e-3, seed);
        const auto full = fit(recs, s.filters, s.injected, ModelKind::lorentzian_plus_white, {});
        const auto white = fit(recs, s.filters, s.injected, ModelKind::white_only, {});
        EXPECT_GE(white.loss, full.loss) << seed;
    }
}

TEST(Predictor, InjectedSpectrumHeldFixed) {
    const auto& s = setup();
    const auto recs = synth(truth(), 2e-3, 5);
    Spectrum injected = s.injected;
    const Spectrum before = injected;
    const auto a = fit(recs, s.filters, injected, ModelKind::lorentzian_plus_white, {});
    EXPECT_EQ(injected.values, before.values);
    EXPECT_EQ(injected.freqs, before.freqs);
    // A perturbed injected spectrum moves only the ancillary parameters.
    for (auto& v : injected.values) v *= 1.1;
    const auto b = fit(recs, s.filters, injected, ModelKind::lorentzian_plus_white, {});
    EXPECT_NE(a.params.sigma2, b.params.sigma2);
    EXPECT_EQ(a.names, b.names);
    for (std::size_t k = 0; k < recs.size(); ++k) EXPECT_EQ(a.measured[k], b.measured[k]);
}

TEST(Predictor, MaskingResonantSequences) {
    const auto& s = setup();
    const auto clean = synth(truth(), 2e-3, 6);
    auto resonant = clean;
    resonant[0].survival_mean -= 0.08;
    resonant[8].survival_mean -= 0.08;
    const auto base = fit(clean, s.filters, s.injected, ModelKind::lorentzian_plus_white, {});
    const auto masked = fit(resonant, s.filters, s.injected, ModelKind::lorentzian_plus_white, {0, 8});
    const auto naive = fit(resonant, s.filters, s.injected, ModelKind::lorentzian_plus_white, {});
    const char* names[] = {"sigma2", "c1", "c2"};
    const double b[] = {base.params.sigma2, base.params.c1, base.params.c2};
    const double m[] = {masked.params.sigma2, masked.params.c1, masked.params.c2};
    for (int i = 0; i < 3; ++i) {
        const auto idx = static_cast<Eigen::Index>(2 + i);
        const double sd = std::sqrt(base.covariance(idx, idx));
        EXPECT_LE(std::abs(m[i] - b[i]), sd) << names[i];
    }
    EXPECT_TRUE(masked.masked[0]);
    EXPECT_TRUE(masked.masked[8]);
    EXPECT_FALSE(masked.masked[1]);
    EXPECT_GT(naive.loss, masked.loss);
}

TEST(Predictor, NonConvergenceReportsBestIterate) {
    const auto& s = setup();
    FitOptions opt;
    opt.max_iterations = 1;
    opt.starts = 1;
    const auto res = fit(synth(truth(), 2e-3, 7), s.filters, s.injected, ModelKind::white_only, {}, opt);
    EXPECT_FALSE(res.converged);
    EXPECT_NE(res.diagnostic.find("no convergence"), std::string::npos);
    EXPECT_TRUE(std::isfinite(res.loss));
}

TEST(Predictor, FlatDirectionWarning) {
    const auto& s = setup();
    FitParams p = truth();
    p.amplitude = 0.0;
    FitOptions opt;
    FitParams init = truth();
    init.amplitude = 0.0;
    opt.init = init;
    opt.starts = 1;
    const auto res = fit(synth(p, 0.0, 8), s.filters, s.injected, ModelKind::lorentzian_plus_white, {}, opt);
    bool named = false;
    for (const auto& w : res.warnings) named = named || w.find("omega_c") != std::string::npos;
    EXPECT_TRUE(named);
}

TEST(Predictor, TooFewRecordsRejected) {
    const auto& s = setup();
    const auto recs = synth(truth(), 0.0, 9);
    const std::vector<ExperimentRecord> five(recs.begin(), recs.begin() + 5);
    EXPECT_THROW(fit(five, s.filters, s.injected, ModelKind::lorentzian_plus_white, {}), std::invalid_argument);
    EXPECT_NO_THROW(fit(five, s.filters, s.injected, ModelKind::white_only, {}));
    std::vector<int> mask;
    for (int k = 0; k < 60; ++k) mask.push_back(k);
    EXPECT_THROW(fit(recs, s.filters, s.injected, ModelKind::lorentzian_plus_white, mask), std::invalid_argument);
}

TEST(Predictor, DeterministicAcrossWorkers) {
    const auto& s = setup();
    const auto recs = synth(truth(), 3e-3, 10);
    FitOptions one;
    one.workers = 1;
    FitOptions many;
    many.workers = 8;
    const auto a = fit(recs, s.filters, s.injected, ModelKind::lorentzian_plus_white, {}, one);
    const auto b = fit(recs, s.filters, s.injected, ModelKind::lorentzian_plus_white, {}, many);
    EXPECT_EQ(a.values, b.values);
    EXPECT_EQ(a.best_start, b.best_start);
}
