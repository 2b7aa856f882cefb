#include "dephase/sequences.hpp"

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dephase {

namespace {
constexpr double pi = std::numbers::pi;
}

bool PulseSequence::all_positive() const {
    for (int s : pulse_signs) {
        if (s != 1) return false;
    }
    return true;
}

bool PulseSequence::alternating() const {
    for (std::size_t i = 0; i < pulse_signs.size(); ++i) {
        if (pulse_signs[i] != (i % 2 == 0 ? 1 : -1)) return false;
    }
    return true;
}

void PulseSequence::validate() const {
    if (n_slots < 1) throw std::invalid_argument("PulseSequence: n_slots must be >= 1");
    if (!(gate_period > 0.0)) throw std::invalid_argument("PulseSequence: gate_period must be > 0");
    if (pulse_slots.size() != pulse_signs.size()) {
        throw std::invalid_argument("PulseSequence: one sign required per pulse");
    }
    for (std::size_t i = 0; i < pulse_slots.size(); ++i) {
        if (pulse_slots[i] < 1 || pulse_slots[i] > n_slots) {
            throw std::invalid_argument("PulseSequence: pulse slot " + std::to_string(pulse_slots[i]) +
                                        " outside [1, " + std::to_string(n_slots) + "]");
        }
        if (i > 0 && pulse_slots[i] <= pulse_slots[i - 1]) {
            throw std::invalid_argument("PulseSequence: pulse slots must be strictly ascending");
        }
        if (pulse_signs[i] != 1 && pulse_signs[i] != -1) {
            throw std::invalid_argument("PulseSequence: pulse signs must be +1 or -1");
        }
    }
}

std::vector<PulseSequence> make_fttps(int n_sequences, int n_slots, double gate_period) {
    if (n_slots < 1) throw std::invalid_argument("make_fttps: N must be >= 1");
    if (n_sequences < 1 || n_sequences > n_slots) throw std::invalid_argument("make_fttps: require 1 <= K <= N");
    if (!(gate_period > 0.0)) throw std::invalid_argument("make_fttps: t_G must be > 0");
    std::vector<PulseSequence> out;
    out.reserve(static_cast<std::size_t>(n_sequences));
    for (int k = 0; k < n_sequences; ++k) {
        PulseSequence seq;
        seq.n_slots = n_slots;
        seq.gate_period = gate_period;
        seq.label = k;
        for (int j = 1; j <= k; ++j) {
            const int slot = static_cast<int>(std::lround((j - 0.5) * n_slots / k));
            if (!seq.pulse_slots.empty() && slot <= seq.pulse_slots.back()) {
                throw std::invalid_argument("make_fttps: duplicate pulse slot " + std::to_string(slot) +
                                            " in sequence " + std::to_string(k) + "; K too close to N");
            }
            seq.pulse_slots.push_back(slot);
            seq.pulse_signs.push_back(1);
        }
        seq.validate();
        out.push_back(std::move(seq));
    }
    return out;
}

std::vector<PulseSequence> make_rfttps(int n_sequences, int n_slots, double gate_period) {
    auto out = make_fttps(n_sequences, n_slots, gate_period);
    for (auto& seq : out) {
        for (std::size_t i = 0; i < seq.pulse_signs.size(); ++i) seq.pulse_signs[i] = (i % 2 == 0) ? 1 : -1;
    }
    return out;
}

std::vector<PulseSequence> make_sequences(SequenceFamily family, int n_sequences, int n_slots, double gate_period) {
    return family == SequenceFamily::fttps ? make_fttps(n_sequences, n_slots, gate_period)
                                           : make_rfttps(n_sequences, n_slots, gate_period);
}

std::vector<int> switching_function(const PulseSequence& seq) {
    seq.validate();
    std::vector<int> y(static_cast<std::size_t>(seq.n_slots));
    int sign = 1;
    std::size_t next = 0;
    for (int j = 1; j <= seq.n_slots; ++j) {
        y[static_cast<std::size_t>(j - 1)] = sign;
        if (next < seq.pulse_slots.size() && seq.pulse_slots[next] == j) {
            sign = -sign;
            ++next;
        }
    }
    return y;
}

double nominal_peak_frequency(const PulseSequence& seq) {
    return seq.n_pulses() / (2.0 * seq.total_time());
}

double FilterFunction::nominal_peak() const { return n_pulses / (2.0 * n_slots * sample_period); }

double FilterFunction::total_weight() const {
    double total = 0.0;
    for (double w : weights) total += w;
    return total;
}

FilterFunction filter_function(const PulseSequence& seq, std::size_t grid_size) {
    if (grid_size < 2) throw std::invalid_argument("filter_function: grid_size must be >= 2");
    const auto y = switching_function(seq);
    FilterFunction out;
    out.sample_period = seq.gate_period;
    out.label = seq.label;
    out.n_pulses = seq.n_pulses();
    out.n_slots = seq.n_slots;
    out.freqs.resize(grid_size);
    out.weights.resize(grid_size);
    const double intervals = static_cast<double>(grid_size - 1);
    const double df = 1.0 / (2.0 * seq.gate_period * intervals);
    for (std::size_t m = 0; m < grid_size; ++m) {
        const double theta = pi * static_cast<double>(m) / intervals;
        // Y(theta) = sum_j y_j e^{-i theta j}
        const std::complex<double> step = std::polar(1.0, -theta);
        std::complex<double> phasor = step;
        std::complex<double> acc = 0.0;
        for (std::size_t j = 0; j < y.size(); ++j) {
            acc += static_cast<double>(y[j]) * phasor;
            phasor *= step;
        }
        const double trapezoid = (m == 0 || m + 1 == grid_size) ? 0.5 : 1.0;
        out.freqs[m] = theta / (2.0 * pi * seq.gate_period);
        out.weights[m] = 0.5 * std::norm(acc) * trapezoid * df;
    }
    out.freqs.back() = 0.5 / seq.gate_period;
    return out;
}

std::vector<FilterFunction> filter_functions(std::span<const PulseSequence> seqs, std::size_t grid_size) {
    std::vector<FilterFunction> out;
    out.reserve(seqs.size());
    for (const auto& seq : seqs) out.push_back(filter_function(seq, grid_size));
    return out;
}

double chi_time_domain(const PulseSequence& seq, std::span<const double> autocov) {
    const auto y = switching_function(seq);
    const std::size_t n = y.size();
    if (autocov.size() < n) {
        throw std::invalid_argument("chi_time_domain: autocovariance needed up to lag " + std::to_string(n - 1));
    }
    // sum_{j,l} y_j y_l r(|j-l|) = N r(0) + 2 sum_{d>=1} r(d) sum_j y_j y_{j+d}
    double total = static_cast<double>(n) * autocov[0];
    for (std::size_t d = 1; d < n; ++d) {
        long corr = 0;
        for (std::size_t j = 0; j + d < n; ++j) corr += y[j] * y[j + d];
        total += 2.0 * autocov[d] * static_cast<double>(corr);
    }
    return 0.5 * total;
}

double chi_frequency_domain(const FilterFunction& filter, const Spectrum& spectrum) {
    if (filter.freqs.size() != spectrum.freqs.size()) {
        throw std::invalid_argument("chi_frequency_domain: filter and spectrum grids differ in size");
    }
    if (std::abs(filter.sample_period - spectrum.sample_period) > 1e-9 * spectrum.sample_period) {
        throw std::invalid_argument("chi_frequency_domain: filter and spectrum sample periods differ");
    }
    double chi = 0.0;
    for (std::size_t m = 0; m < filter.weights.size(); ++m) chi += filter.weights[m] * spectrum.values[m];
    return chi;
}

}  // namespace dephase
