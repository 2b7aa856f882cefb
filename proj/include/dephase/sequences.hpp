#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dephase/noise_models.hpp"

namespace dephase {

/// N gate-period slots; slots listed in pulse_slots carry an R_x(sign * pi)
/// instead of the identity. Slot indices are 1-based.
struct PulseSequence {
    int n_slots = 0;
    std::vector<int> pulse_slots;
    std::vector<int> pulse_signs;
    double gate_period = 0.0;
    int label = 0;

    int n_pulses() const { return static_cast<int>(pulse_slots.size()); }
    double total_time() const { return n_slots * gate_period; }
    bool all_positive() const;
    bool alternating() const;
    void validate() const;
};

enum class SequenceFamily { fttps, rfttps };

/// K fixed-total-time sequences over N slots; sequence k carries k pulses
/// at slots round((j - 1/2) N / k), j = 1..k.
std::vector<PulseSequence> make_fttps(int n_sequences, int n_slots, double gate_period);

/// Same slots as make_fttps with signs +1, -1, +1, ...
std::vector<PulseSequence> make_rfttps(int n_sequences, int n_slots, double gate_period);

std::vector<PulseSequence> make_sequences(SequenceFamily family, int n_sequences, int n_slots, double gate_period);

/// Toggling-frame sign of each slot's phase: a pulse at slot s follows that
/// slot's phase, so y_j = (-1)^(number of pulses at slots < j).
std::vector<int> switching_function(const PulseSequence& seq);

/// n_k / (2 N t_G).
double nominal_peak_frequency(const PulseSequence& seq);

/// Weights g on a physical frequency grid such that sum_m g[m] S_f[m] equals
/// the dephasing exponent chi = Var(sum_j y_j phi_j) / 2.
struct FilterFunction {
    std::vector<double> freqs;
    std::vector<double> weights;
    double sample_period = 0.0;
    int label = 0;
    int n_pulses = 0;
    int n_slots = 0;

    double total_weight() const;
    /// n_pulses / (2 n_slots sample_period).
    double nominal_peak() const;
};

/// grid_size points on [0, 1/(2 t_G)], the same grid psd() produces for a
/// model with sample_period t_G.
FilterFunction filter_function(const PulseSequence& seq, std::size_t grid_size);

std::vector<FilterFunction> filter_functions(std::span<const PulseSequence> seqs, std::size_t grid_size);

/// chi = 1/2 sum_{j,l} y_j y_l r(|j - l|).
double chi_time_domain(const PulseSequence& seq, std::span<const double> autocov);

/// chi = sum_m g[m] S[m]; grids must match.
double chi_frequency_domain(const FilterFunction& filter, const Spectrum& spectrum);

}  // namespace dephase
