#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "dephase/noise_models.hpp"
#include "dephase/sequences.hpp"

namespace dephase {

/// Forward model of pi-pulse imperfection: every pulse angle becomes
/// sign * (pi + over_rotation + delta_j), delta_j ~ Normal(0, jitter_std^2)
/// drawn afresh for every shot.
struct PulseErrorModel {
    double over_rotation = 0.0;
    double jitter_std = 0.0;

    bool perfect() const { return over_rotation == 0.0 && jitter_std == 0.0; }
    void validate() const;
};

enum class TargetState { zero = 0, one = 1 };

struct GateMode {
    int trajectories = 1;
    int shots_per_trajectory = 1;
};

/// Every shot draws its own trajectory sampled every phase_update_period
/// seconds; with random_time_offset the noise clock starts a uniform
/// fraction of a period before the sequence.
struct SdrMode {
    int shots = 1;
    double phase_update_period = 0.0;
    bool random_time_offset = false;
};

using InjectionMode = std::variant<GateMode, SdrMode>;

void validate_mode(const InjectionMode& mode);

struct ExperimentRecord {
    int seq_index = 0;
    int n_pulses = 0;
    double survival_mean = 0.0;
    double survival_stderr = 0.0;
    long shots = 0;
    long trajectories = 0;
    std::uint64_t seed = 0;
};

/// Successes out of shots for one trajectory (one shot in SDR mode).
struct TrajectoryOutcome {
    int successes = 0;
    int shots = 0;
};

/// Raw per-trajectory outcomes of one sequence, retained for bootstrapping.
struct SequenceOutcomes {
    int seq_index = 0;
    int n_pulses = 0;
    std::vector<TrajectoryOutcome> outcomes;
};

struct ExperimentResult {
    std::vector<ExperimentRecord> records;
    std::vector<SequenceOutcomes> raw;
};

/// Aggregates raw outcomes: mean = successes / shots; stderr from the spread
/// of per-trajectory fractions (binomial when each trajectory is one shot or
/// only one trajectory exists).
ExperimentRecord summarize_outcomes(const SequenceOutcomes& raw, std::uint64_t seed = 0);

/// Exact state-vector propagation of one shot's circuit: R_x(pi/2), then per
/// slot R_z(phase_j + native_j) followed by the slot gate, then the closing
/// R_x(+-pi/2) that maps the noiseless state onto `target`. Returns the
/// probability of measuring `target`.
double survival_probability(const PulseSequence& seq, std::span<const double> slot_phases,
                            std::span<const double> native_phases, const PulseErrorModel& perr,
                            std::mt19937_64* jitter_rng, TargetState target = TargetState::one);

/// Same circuit with the probability averaged over pulse jitter, computed
/// exactly by propagating the Bloch vector through the averaged pulse maps.
double jitter_averaged_survival(const PulseSequence& seq, std::span<const double> slot_phases,
                                std::span<const double> native_phases, const PulseErrorModel& perr,
                                TargetState target = TargetState::one);

double run_shot(const PulseSequence& seq, const Trajectory& trajectory, const Trajectory* native,
                const PulseErrorModel& perr, const SeedLineage& seed, TargetState target = TargetState::one);

/// Integrates per-step phase increments (one per `steps_per_slot`-scaled step)
/// onto gate slots: slot j covers [(j-1) rho + offset, j rho + offset) in step
/// units, rho = t_G / t_s, each step contributing in proportion to overlap.
std::vector<double> resample_to_slots(std::span<const double> step_phases, int n_slots, double slot_over_step,
                                      double offset_steps);

std::size_t sdr_steps_needed(int n_slots, double slot_over_step, double offset_steps);

struct ExperimentOptions {
    TargetState target = TargetState::one;
    unsigned workers = 0;  // 0: hardware concurrency
};

ExperimentResult run_experiment(std::span<const PulseSequence> seqs, const ArmaModel& model,
                                const std::optional<ArmaModel>& native_model, const PulseErrorModel& perr,
                                const InjectionMode& mode, std::uint64_t seed, const ExperimentOptions& options = {});

/// 1/2 + 1/2 exp(-chi_model - chi_native), perfect pulses.
double analytic_survival(const PulseSequence& seq, const ArmaModel& model,
                         const std::optional<ArmaModel>& native_model = std::nullopt);

/// Same, reusing precomputed autocovariances (lag >= N - 1).
double analytic_survival(const PulseSequence& seq, std::span<const double> autocov,
                         std::span<const double> native_autocov = {});

}  // namespace dephase
