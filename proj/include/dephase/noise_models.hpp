#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dephase/seed.hpp"

namespace dephase {

/// Discrete-time ARMA generator for per-step phase increments:
///   phi_t = sum_i ar[i-1] * phi_{t-i} + sum_j ma[j] * w_{t-j},
///   w ~ iid Normal(0, drive_std^2), one step per sample_period seconds.
struct ArmaModel {
    std::vector<double> ar;
    std::vector<double> ma{1.0};
    double drive_std = 0.0;
    double sample_period = 1.0;

    static ArmaModel white(double std, double sample_period);

    std::size_t ar_order() const { return ar.size(); }
    std::size_t ma_order() const { return ma.empty() ? 0 : ma.size() - 1; }
    double nyquist_hz() const { return 0.5 / sample_period; }

    /// Throws std::invalid_argument naming the violated invariant.
    void validate() const;
};

struct StabilityReport {
    bool stable = true;
    double spectral_radius = 0.0;  // largest |root| of the AR polynomial
    std::string diagnostic;
};

StabilityReport check_stability(const ArmaModel& model);

/// One-sided physical PSD in rad^2/Hz sampled on an ascending grid in Hz.
struct Spectrum {
    std::vector<double> freqs;
    std::vector<double> values;
    double sample_period = 1.0;

    std::size_t size() const { return freqs.size(); }
    /// Trapezoidal integral of values over freqs.
    double integrated_power() const;
    void validate() const;
};

struct Trajectory {
    std::vector<double> phases;
    double sample_period = 1.0;
    SeedLineage seed_lineage;
};

/// Number of discarded warm-up samples used by generate_trajectory.
std::size_t burn_in_length(const ArmaModel& model);

Trajectory generate_trajectory(const ArmaModel& model, std::size_t length, const SeedLineage& seed);

/// Discrete-time PSD drive_std^2 |B(e^{-i theta})|^2 / |A(e^{-i theta})|^2.
double discrete_psd(const ArmaModel& model, double theta);

/// Physical one-sided PSD S_f(f) = 2 t_s S(2 pi f t_s) on grid_size points
/// spanning [0, 1/(2 t_s)].
Spectrum psd(const ArmaModel& model, std::size_t grid_size);

double physical_psd_at(const ArmaModel& model, double freq_hz);

/// r(0..max_lag), by inverse Fourier transform of the discrete PSD on a grid
/// refined until the aliasing change drops below 1e-12 of r(0).
std::vector<double> autocovariance(const ArmaModel& model, std::size_t max_lag);

inline constexpr int default_taps = 257;

/// Windowed frequency-sampling FIR (MA-only) design on sqrt of a target
/// physical PSD. The returned model has unit-energy `ma` and drive_std equal
/// to the realized process standard deviation (zero for a zero target).
ArmaModel design_from_psd(const std::function<double(double)>& target_psd_hz, double t_s, int taps);

ArmaModel design_bandpass(double center_hz, double bandwidth_hz, double total_power, double t_s,
                          int taps = default_taps);

struct Band {
    double center_hz = 0.0;
    double width_hz = 0.0;
    double power = 0.0;
};

ArmaModel design_multiband(std::span<const Band> bands, double t_s, int taps = default_taps);

/// S(f) proportional to f^-alpha on [f_lo, f_hi], constant below f_lo, raised-cosine
/// roll-off over [f_hi, 1.25 f_hi] (clipped at Nyquist), scaled to pass through
/// (anchor_hz, anchor_psd).
ArmaModel design_power_law(double alpha, double anchor_hz, double anchor_psd, double f_lo_hz, double f_hi_hz,
                           double t_s, int taps = default_taps);

inline constexpr double power_law_rolloff_fraction = 0.25;

/// A / (1 + omega^2 / omega_c^2) + white_floor, omega = 2 pi f. The tap count is
/// raised when needed to resolve the cutoff.
ArmaModel design_lorentzian(double amplitude, double cutoff_rad_s, double white_floor, double t_s,
                            int taps = default_taps);

/// Smallest odd tap count design_lorentzian uses for a given cutoff.
int lorentzian_min_taps(double cutoff_rad_s, double t_s);

}  // namespace dephase
