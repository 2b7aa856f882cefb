#include "dephase/noise_models.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace dephase {

namespace {

constexpr double pi = std::numbers::pi;

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// cos(pi * j / intervals) for j in [0, 2*intervals).
std::vector<double> cos_table(std::size_t intervals) {
    std::vector<double> table(2 * intervals);
    for (std::size_t j = 0; j < table.size(); ++j) table[j] = std::cos(pi * static_cast<double>(j) / intervals);
    return table;
}

ArmaModel zero_model(double t_s, std::vector<double> ma = {1.0}) {
    ArmaModel m;
    m.ma = std::move(ma);
    m.drive_std = 0.0;
    m.sample_period = t_s;
    return m;
}

void require_odd_taps(int taps) {
    if (taps < 1 || taps % 2 == 0) {
        throw std::invalid_argument("FIR design requires an odd, positive tap count (got " + std::to_string(taps) + ")");
    }
}

}  // namespace

ArmaModel ArmaModel::white(double std, double sample_period) {
    ArmaModel m;
    m.ma = {1.0};
    m.drive_std = std;
    m.sample_period = sample_period;
    return m;
}

void ArmaModel::validate() const {
    if (ma.empty()) throw std::invalid_argument("ArmaModel: ma must contain at least b0");
    if (!all_finite(ma) || !all_finite(ar)) throw std::invalid_argument("ArmaModel: non-finite coefficient");
    if (!(drive_std >= 0.0) || !std::isfinite(drive_std)) throw std::invalid_argument("ArmaModel: drive_std must be >= 0");
    if (!(sample_period > 0.0) || !std::isfinite(sample_period)) {
        throw std::invalid_argument("ArmaModel: sample_period must be > 0");
    }
    if (drive_std > 0.0 && std::all_of(ma.begin(), ma.end(), [](double b) { return b == 0.0; })) {
        throw std::invalid_argument("ArmaModel: all MA coefficients are zero with nonzero drive");
    }
}

StabilityReport check_stability(const ArmaModel& model) {
    StabilityReport report;
    const std::size_t p = model.ar.size();
    if (p == 0) return report;
    // Companion matrix of z^p - a1 z^{p-1} - ... - ap.
    Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t i = 0; i < p; ++i) companion(0, i) = model.ar[i];
    for (std::size_t i = 1; i < p; ++i) companion(i, i - 1) = 1.0;
    Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
    report.spectral_radius = solver.eigenvalues().cwiseAbs().maxCoeff();
    report.stable = report.spectral_radius < 1.0 - 1e-12;
    if (!report.stable) {
        std::ostringstream os;
        os << "AR polynomial has a root of modulus " << report.spectral_radius
           << " (must be < 1 for a stationary process)";
        report.diagnostic = os.str();
    }
    return report;
}

double Spectrum::integrated_power() const {
    double total = 0.0;
    for (std::size_t i = 1; i < freqs.size(); ++i) {
        total += 0.5 * (values[i] + values[i - 1]) * (freqs[i] - freqs[i - 1]);
    }
    return total;
}

void Spectrum::validate() const {
    if (freqs.size() != values.size()) throw std::invalid_argument("Spectrum: freqs/values size mismatch");
    for (std::size_t i = 1; i < freqs.size(); ++i) {
        if (!(freqs[i] > freqs[i - 1])) throw std::invalid_argument("Spectrum: freqs must be strictly ascending");
    }
    for (double v : values) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("Spectrum: values must be finite and >= 0");
    }
}

std::size_t burn_in_length(const ArmaModel& model) {
    const std::size_t p = model.ar_order();
    const std::size_t q = model.ma_order();
    // Past q steps an MA output no longer depends on the zero initial state.
    if (p == 0) return q;
    std::size_t burn = 10 * (p + q + 1);
    const auto stability = check_stability(model);
    if (stability.spectral_radius > 0.0 && stability.spectral_radius < 1.0) {
        const double decay = std::log(1e-9) / std::log(stability.spectral_radius);
        burn = std::max(burn, q + static_cast<std::size_t>(std::ceil(decay)));
    }
    return burn;
}

Trajectory generate_trajectory(const ArmaModel& model, std::size_t length, const SeedLineage& seed) {
    model.validate();
    if (length < 1) throw std::invalid_argument("generate_trajectory: length must be >= 1");
    const auto stability = check_stability(model);
    if (!stability.stable) throw std::invalid_argument("generate_trajectory: unstable model: " + stability.diagnostic);

    Trajectory out;
    out.sample_period = model.sample_period;
    out.seed_lineage = seed;
    out.phases.assign(length, 0.0);
    if (model.drive_std == 0.0) return out;

    const std::size_t burn = burn_in_length(model);
    const std::size_t total = burn + length;
    auto engine = seed.engine();
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w(total);
    for (auto& x : w) x = model.drive_std * normal(engine);

    const auto& a = model.ar;
    const auto& b = model.ma;
    std::vector<double> phi(total, 0.0);
    for (std::size_t t = 0; t < total; ++t) {
        double acc = 0.0;
        const std::size_t jmax = std::min(b.size() - 1, t);
        for (std::size_t j = 0; j <= jmax; ++j) acc += b[j] * w[t - j];
        const std::size_t imax = std::min(a.size(), t);
        for (std::size_t i = 1; i <= imax; ++i) acc += a[i - 1] * phi[t - i];
        phi[t] = acc;
    }
    std::copy(phi.begin() + static_cast<std::ptrdiff_t>(burn), phi.end(), out.phases.begin());
    return out;
}

double discrete_psd(const ArmaModel& model, double theta) {
    const std::complex<double> z = std::polar(1.0, -theta);
    std::complex<double> num = 0.0;
    for (std::size_t j = model.ma.size(); j-- > 0;) num = num * z + model.ma[j];
    std::complex<double> den = 0.0;
    for (std::size_t i = model.ar.size(); i-- > 0;) den = den * z + model.ar[i];
    den = 1.0 - den * z;
    return model.drive_std * model.drive_std * std::norm(num) / std::norm(den);
}

double physical_psd_at(const ArmaModel& model, double freq_hz) {
    return 2.0 * model.sample_period * discrete_psd(model, 2.0 * pi * freq_hz * model.sample_period);
}

Spectrum psd(const ArmaModel& model, std::size_t grid_size) {
    model.validate();
    if (grid_size < 2) throw std::invalid_argument("psd: grid_size must be >= 2");
    Spectrum s;
    s.sample_period = model.sample_period;
    s.freqs.resize(grid_size);
    s.values.resize(grid_size);
    const double intervals = static_cast<double>(grid_size - 1);
    for (std::size_t m = 0; m < grid_size; ++m) {
        const double theta = pi * static_cast<double>(m) / intervals;
        s.freqs[m] = theta / (2.0 * pi * model.sample_period);
        s.values[m] = 2.0 * model.sample_period * discrete_psd(model, theta);
    }
    s.freqs.back() = model.nyquist_hz();
    return s;
}

std::vector<double> autocovariance(const ArmaModel& model, std::size_t max_lag) {
    model.validate();
    const auto stability = check_stability(model);
    if (!stability.stable) throw std::invalid_argument("autocovariance: unstable model: " + stability.diagnostic);

    auto evaluate = [&](std::size_t intervals) {
        std::vector<double> s(intervals + 1);
        for (std::size_t m = 0; m <= intervals; ++m) {
            s[m] = discrete_psd(model, pi * static_cast<double>(m) / static_cast<double>(intervals));
        }
        const auto table = cos_table(intervals);
        const std::size_t period = 2 * intervals;
        std::vector<double> r(max_lag + 1);
        for (std::size_t k = 0; k <= max_lag; ++k) {
            double acc = 0.5 * s[0] + 0.5 * s[intervals] * ((k % 2) ? -1.0 : 1.0);
            std::size_t idx = 0;
            const std::size_t step = k % period;
            for (std::size_t m = 1; m < intervals; ++m) {
                idx += step;
                if (idx >= period) idx -= period;
                acc += s[m] * table[idx];
            }
            r[k] = acc / static_cast<double>(intervals);
        }
        return r;
    };

    std::size_t intervals = std::max<std::size_t>(256, next_pow2(2 * (model.ma_order() + max_lag + 1)));
    auto r = evaluate(intervals);
    constexpr std::size_t max_intervals = std::size_t{1} << 24;
    while (intervals < max_intervals) {
        intervals *= 2;
        auto refined = evaluate(intervals);
        double change = 0.0;
        for (std::size_t k = 0; k <= max_lag; ++k) change = std::max(change, std::abs(refined[k] - r[k]));
        r = std::move(refined);
        if (change <= 1e-12 * std::abs(r[0])) return r;
    }
    throw std::runtime_error("autocovariance: aliasing did not converge; AR roots too close to the unit circle");
}

ArmaModel design_from_psd(const std::function<double(double)>& target_psd_hz, double t_s, int taps) {
    require_odd_taps(taps);
    if (!(t_s > 0.0)) throw std::invalid_argument("FIR design requires t_s > 0");
    const std::size_t intervals = std::max<std::size_t>(8192, 16 * static_cast<std::size_t>(taps));
    std::vector<double> amplitude(intervals + 1);
    for (std::size_t m = 0; m <= intervals; ++m) {
        const double theta = pi * static_cast<double>(m) / static_cast<double>(intervals);
        const double f = theta / (2.0 * pi * t_s);
        const double target = target_psd_hz(f);
        if (!std::isfinite(target)) throw std::invalid_argument("FIR design: target PSD is not finite");
        amplitude[m] = std::sqrt(std::max(target, 0.0) / (2.0 * t_s));
    }

    const auto table = cos_table(intervals);
    const std::size_t period = 2 * intervals;
    const int half = (taps - 1) / 2;
    std::vector<double> b(static_cast<std::size_t>(taps));
    for (int n = -half; n <= half; ++n) {
        const std::size_t step = static_cast<std::size_t>(std::abs(n)) % period;
        double acc = 0.5 * amplitude[0] + 0.5 * amplitude[intervals] * ((n % 2) ? -1.0 : 1.0);
        std::size_t idx = 0;
        for (std::size_t m = 1; m < intervals; ++m) {
            idx += step;
            if (idx >= period) idx -= period;
            acc += amplitude[m] * table[idx];
        }
        const double window = 0.5 + 0.5 * std::cos(2.0 * pi * n / (taps + 1));
        b[static_cast<std::size_t>(n + half)] = window * acc / static_cast<double>(intervals);
    }

    double energy = 0.0;
    for (double x : b) energy += x * x;
    if (!(energy > 0.0)) return zero_model(t_s);
    const double norm = std::sqrt(energy);
    for (double& x : b) x /= norm;
    ArmaModel m;
    m.ma = std::move(b);
    m.drive_std = norm;
    m.sample_period = t_s;
    return m;
}

namespace {

void validate_band(const Band& band, double t_s) {
    const double nyquist = 0.5 / t_s;
    if (!(band.width_hz > 0.0)) throw std::invalid_argument("band width must be > 0");
    if (!(band.power >= 0.0)) throw std::invalid_argument("band power must be >= 0");
    if (!(band.center_hz - 0.5 * band.width_hz > 0.0)) {
        throw std::invalid_argument("band lower edge must be above 0 Hz");
    }
    if (!(band.center_hz + 0.5 * band.width_hz < nyquist)) {
        std::ostringstream os;
        os << "band upper edge " << band.center_hz + 0.5 * band.width_hz << " Hz exceeds Nyquist " << nyquist
           << " Hz";
        throw std::invalid_argument(os.str());
    }
}

bool in_band(double f, const Band& band) {
    return std::abs(f - band.center_hz) <= 0.5 * band.width_hz;
}

}  // namespace

ArmaModel design_bandpass(double center_hz, double bandwidth_hz, double total_power, double t_s, int taps) {
    if (!(t_s > 0.0)) throw std::invalid_argument("design_bandpass: t_s must be > 0");
    const Band band{center_hz, bandwidth_hz, total_power};
    validate_band(band, t_s);
    ArmaModel m = design_from_psd([&](double f) { return in_band(f, band) ? 1.0 : 0.0; }, t_s, taps);
    m.drive_std = std::sqrt(total_power);
    return m;
}

ArmaModel design_multiband(std::span<const Band> bands, double t_s, int taps) {
    if (!(t_s > 0.0)) throw std::invalid_argument("design_multiband: t_s must be > 0");
    if (bands.empty()) throw std::invalid_argument("design_multiband: at least one band required");
    double total = 0.0;
    for (const auto& band : bands) {
        validate_band(band, t_s);
        total += band.power;
    }
    auto target = [&](double f) {
        double s = 0.0;
        for (const auto& band : bands) {
            if (in_band(f, band)) s += (total > 0.0 ? band.power : 1.0) / band.width_hz;
        }
        return s;
    };
    ArmaModel m = design_from_psd(target, t_s, taps);
    m.drive_std = std::sqrt(total);
    return m;
}

ArmaModel design_power_law(double alpha, double anchor_hz, double anchor_psd, double f_lo_hz, double f_hi_hz,
                           double t_s, int taps) {
    if (!(t_s > 0.0)) throw std::invalid_argument("design_power_law: t_s must be > 0");
    const double nyquist = 0.5 / t_s;
    if (!(f_lo_hz > 0.0 && f_lo_hz < f_hi_hz && f_hi_hz <= nyquist * (1.0 + 1e-12))) {
        throw std::invalid_argument("design_power_law: require 0 < f_lo < f_hi <= Nyquist");
    }
    if (!std::isfinite(alpha)) throw std::invalid_argument("design_power_law: alpha must be finite");
    if (!(anchor_psd >= 0.0)) throw std::invalid_argument("design_power_law: anchor PSD must be >= 0");
    if (!(anchor_hz >= 0.0 && anchor_hz <= nyquist)) {
        throw std::invalid_argument("design_power_law: anchor frequency outside [0, Nyquist]");
    }
    const double f_roll = std::min(f_hi_hz * (1.0 + power_law_rolloff_fraction), nyquist);
    auto shape = [=](double f) {
        const double base = std::pow(std::max(f, f_lo_hz) / f_lo_hz, -alpha);
        if (f <= f_hi_hz) return base;
        if (f_roll <= f_hi_hz || f >= f_roll) return f_roll <= f_hi_hz ? base : 0.0;
        const double c = std::cos(0.5 * pi * (f - f_hi_hz) / (f_roll - f_hi_hz));
        return base * c * c;
    };
    ArmaModel m = design_from_psd(shape, t_s, taps);
    if (anchor_psd == 0.0) {
        m.drive_std = 0.0;
        return m;
    }
    const double realized = physical_psd_at(m, anchor_hz);
    if (!(realized > 0.0)) throw std::invalid_argument("design_power_law: anchor lies where the designed PSD vanishes");
    m.drive_std *= std::sqrt(anchor_psd / realized);
    return m;
}

int lorentzian_min_taps(double cutoff_rad_s, double t_s) {
    const double fc_ts = cutoff_rad_s / (2.0 * pi) * t_s;
    const double needed = std::ceil(6.0 / fc_ts);
    int taps = static_cast<int>(std::min(needed, 16383.0));
    if (taps % 2 == 0) ++taps;
    return taps;
}

ArmaModel design_lorentzian(double amplitude, double cutoff_rad_s, double white_floor, double t_s, int taps) {
    if (!(t_s > 0.0)) throw std::invalid_argument("design_lorentzian: t_s must be > 0");
    if (!(amplitude >= 0.0)) throw std::invalid_argument("design_lorentzian: amplitude must be >= 0");
    if (!(cutoff_rad_s > 0.0)) throw std::invalid_argument("design_lorentzian: cutoff must be > 0");
    if (!(white_floor >= 0.0)) throw std::invalid_argument("design_lorentzian: white floor must be >= 0");
    require_odd_taps(taps);
    if (amplitude == 0.0 && white_floor == 0.0) return zero_model(t_s);
    if (amplitude == 0.0) return ArmaModel::white(std::sqrt(white_floor / (2.0 * t_s)), t_s);
    const int used = std::max(taps, lorentzian_min_taps(cutoff_rad_s, t_s));
    return design_from_psd(
        [=](double f) {
            const double x = 2.0 * pi * f / cutoff_rad_s;
            return amplitude / (1.0 + x * x) + white_floor;
        },
        t_s, used);
}

}  // namespace dephase
