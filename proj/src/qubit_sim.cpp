#include "dephase/qubit_sim.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

#include "dephase/parallel.hpp"

namespace dephase {

namespace {

constexpr double pi = std::numbers::pi;
using cplx = std::complex<double>;

struct Qubit {
    cplx c0{1.0, 0.0};
    cplx c1{0.0, 0.0};

    void rx(double angle) {
        const double c = std::cos(0.5 * angle);
        const double s = std::sin(0.5 * angle);
        const cplx m{0.0, -s};
        const cplx n0 = c * c0 + m * c1;
        const cplx n1 = m * c0 + c * c1;
        c0 = n0;
        c1 = n1;
    }

    // Exact R_x(sign * pi) = -i sign X, so both signs agree up to a global sign.
    void flip(int sign) {
        const cplx m{0.0, -static_cast<double>(sign)};
        const cplx n0 = m * c1;
        c1 = m * c0;
        c0 = n0;
    }

    void rz(double angle) {
        const cplx half = std::polar(1.0, 0.5 * angle);
        c0 *= std::conj(half);
        c1 *= half;
    }
};

bool same_period(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); }

}  // namespace

void PulseErrorModel::validate() const {
    if (!std::isfinite(over_rotation)) throw std::invalid_argument("PulseErrorModel: over_rotation must be finite");
    if (!(jitter_std >= 0.0) || !std::isfinite(jitter_std)) {
        throw std::invalid_argument("PulseErrorModel: jitter_std must be >= 0");
    }
}

void validate_mode(const InjectionMode& mode) {
    if (const auto* gate = std::get_if<GateMode>(&mode)) {
        if (gate->trajectories < 1) throw std::invalid_argument("gate mode: trajectories must be >= 1");
        if (gate->shots_per_trajectory < 1) throw std::invalid_argument("gate mode: shots_per_trajectory must be >= 1");
    } else {
        const auto& sdr = std::get<SdrMode>(mode);
        if (sdr.shots < 1) throw std::invalid_argument("sdr mode: shots must be >= 1");
        if (!(sdr.phase_update_period > 0.0)) throw std::invalid_argument("sdr mode: phase_update_period must be > 0");
    }
}

ExperimentRecord summarize_outcomes(const SequenceOutcomes& raw, std::uint64_t seed) {
    ExperimentRecord rec;
    rec.seq_index = raw.seq_index;
    rec.n_pulses = raw.n_pulses;
    rec.seed = seed;
    rec.trajectories = static_cast<long>(raw.outcomes.size());
    long successes = 0;
    bool unit_shots = true;
    for (const auto& o : raw.outcomes) {
        successes += o.successes;
        rec.shots += o.shots;
        unit_shots = unit_shots && o.shots == 1;
    }
    if (rec.shots == 0) throw std::invalid_argument("summarize_outcomes: no shots recorded");
    const double p = static_cast<double>(successes) / static_cast<double>(rec.shots);
    rec.survival_mean = p;
    const std::size_t r = raw.outcomes.size();
    if (unit_shots || r < 2) {
        rec.survival_stderr = std::sqrt(p * (1.0 - p) / static_cast<double>(rec.shots));
        return rec;
    }
    double mean = 0.0;
    for (const auto& o : raw.outcomes) mean += static_cast<double>(o.successes) / o.shots;
    mean /= static_cast<double>(r);
    double ss = 0.0;
    for (const auto& o : raw.outcomes) {
        const double d = static_cast<double>(o.successes) / o.shots - mean;
        ss += d * d;
    }
    rec.survival_stderr = std::sqrt(ss / static_cast<double>(r - 1) / static_cast<double>(r));
    return rec;
}

double survival_probability(const PulseSequence& seq, std::span<const double> slot_phases,
                            std::span<const double> native_phases, const PulseErrorModel& perr,
                            std::mt19937_64* jitter_rng, TargetState target) {
    const auto n = static_cast<std::size_t>(seq.n_slots);
    if (slot_phases.size() < n) {
        throw std::invalid_argument("survival_probability: trajectory has " + std::to_string(slot_phases.size()) +
                                    " samples, sequence needs " + std::to_string(n));
    }
    if (!native_phases.empty() && native_phases.size() < n) {
        throw std::invalid_argument("survival_probability: native trajectory shorter than sequence");
    }
    if (perr.jitter_std > 0.0 && jitter_rng == nullptr) {
        throw std::invalid_argument("survival_probability: pulse jitter requires a random stream");
    }
    std::normal_distribution<double> jitter(0.0, perr.jitter_std);

    Qubit q;
    q.rx(0.5 * pi);
    std::size_t next = 0;
    // z rotations commute, so the phases between pulses are applied at once.
    double pending = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        pending += slot_phases[j];
        if (!native_phases.empty()) pending += native_phases[j];
        if (next < seq.pulse_slots.size() && static_cast<std::size_t>(seq.pulse_slots[next]) == j + 1) {
            q.rz(pending);
            pending = 0.0;
            double error = perr.over_rotation;
            if (perr.jitter_std > 0.0) error += jitter(*jitter_rng);
            if (error == 0.0) {
                q.flip(seq.pulse_signs[next]);
            } else {
                q.rx(seq.pulse_signs[next] * (pi + error));
            }
            ++next;
        }
    }
    q.rz(pending);
    // Noiseless rotation so far is pi/2 + (odd/even) * pi about x.
    const bool odd = (seq.n_pulses() % 2) != 0;
    const bool want_one = target == TargetState::one;
    q.rx((odd != want_one) ? 0.5 * pi : -0.5 * pi);
    const double p = want_one ? std::norm(q.c1) : std::norm(q.c0);
    return std::clamp(p, 0.0, 1.0);
}

double jitter_averaged_survival(const PulseSequence& seq, std::span<const double> slot_phases,
                                std::span<const double> native_phases, const PulseErrorModel& perr, TargetState target) {
    const auto n = static_cast<std::size_t>(seq.n_slots);
    if (slot_phases.size() < n) {
        throw std::invalid_argument("jitter_averaged_survival: trajectory has " + std::to_string(slot_phases.size()) +
                                    " samples, sequence needs " + std::to_string(n));
    }
    if (!native_phases.empty() && native_phases.size() < n) {
        throw std::invalid_argument("jitter_averaged_survival: native trajectory shorter than sequence");
    }
    // Bloch vector after R_x(pi/2) on |0>.
    double x = 0.0, y = -1.0, z = 0.0;
    auto rot_z = [&](double a) {
        const double c = std::cos(a), s = std::sin(a);
        const double nx = c * x - s * y;
        y = s * x + c * y;
        x = nx;
    };
    auto rot_x = [&](double a) {
        const double c = std::cos(a), s = std::sin(a);
        const double ny = c * y - s * z;
        z = s * y + c * z;
        y = ny;
    };
    // Averaging a rotation over a Gaussian angle shrinks the components it moves.
    const double shrink = std::exp(-0.5 * perr.jitter_std * perr.jitter_std);
    std::size_t next = 0;
    double pending = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        pending += slot_phases[j];
        if (!native_phases.empty()) pending += native_phases[j];
        if (next < seq.pulse_slots.size() && static_cast<std::size_t>(seq.pulse_slots[next]) == j + 1) {
            rot_z(pending);
            pending = 0.0;
            if (perr.over_rotation == 0.0) {
                y = -y;
                z = -z;
            } else {
                rot_x(seq.pulse_signs[next] * (pi + perr.over_rotation));
            }
            y *= shrink;
            z *= shrink;
            ++next;
        }
    }
    rot_z(pending);
    const bool odd = (seq.n_pulses() % 2) != 0;
    const bool want_one = target == TargetState::one;
    rot_x((odd != want_one) ? 0.5 * pi : -0.5 * pi);
    return std::clamp(want_one ? 0.5 * (1.0 - z) : 0.5 * (1.0 + z), 0.0, 1.0);
}

double run_shot(const PulseSequence& seq, const Trajectory& trajectory, const Trajectory* native,
                const PulseErrorModel& perr, const SeedLineage& seed, TargetState target) {
    perr.validate();
    auto rng = seed.child(stream::pulse_jitter).engine();
    std::span<const double> native_span;
    if (native) native_span = native->phases;
    return survival_probability(seq, trajectory.phases, native_span, perr, &rng, target);
}

std::size_t sdr_steps_needed(int n_slots, double slot_over_step, double offset_steps) {
    const double end = n_slots * slot_over_step + offset_steps;
    return static_cast<std::size_t>(std::max(1.0, std::ceil(end - 1e-9)));
}

std::vector<double> resample_to_slots(std::span<const double> step_phases, int n_slots, double slot_over_step,
                                      double offset_steps) {
    if (!(slot_over_step > 0.0)) throw std::invalid_argument("resample_to_slots: ratio must be > 0");
    if (step_phases.size() < sdr_steps_needed(n_slots, slot_over_step, offset_steps)) {
        throw std::invalid_argument("resample_to_slots: trajectory does not cover the sequence");
    }
    std::vector<double> out(static_cast<std::size_t>(n_slots), 0.0);
    const auto last = static_cast<long>(step_phases.size()) - 1;
    for (int j = 0; j < n_slots; ++j) {
        const double start = j * slot_over_step + offset_steps;
        const double end = (j + 1) * slot_over_step + offset_steps;
        const long first = static_cast<long>(std::floor(start));
        const long stop = std::min(static_cast<long>(std::ceil(end)) - 1, last);
        double acc = 0.0;
        for (long i = first; i <= stop; ++i) {
            const double overlap = std::min(end, static_cast<double>(i + 1)) - std::max(start, static_cast<double>(i));
            if (overlap > 0.0) acc += step_phases[static_cast<std::size_t>(i)] * overlap;
        }
        out[static_cast<std::size_t>(j)] = acc;
    }
    return out;
}

ExperimentResult run_experiment(std::span<const PulseSequence> seqs, const ArmaModel& model,
                                const std::optional<ArmaModel>& native_model, const PulseErrorModel& perr,
                                const InjectionMode& mode, std::uint64_t seed, const ExperimentOptions& options) {
    validate_mode(mode);
    perr.validate();
    model.validate();
    if (native_model) native_model->validate();
    for (const auto& seq : seqs) {
        seq.validate();
        if (native_model && !same_period(native_model->sample_period, seq.gate_period)) {
            throw std::invalid_argument("run_experiment: native model sample period must equal t_G");
        }
        if (std::holds_alternative<GateMode>(mode) && !same_period(model.sample_period, seq.gate_period)) {
            throw std::invalid_argument("run_experiment: gate mode requires model sample period == t_G");
        }
    }
    const auto* sdr = std::get_if<SdrMode>(&mode);
    if (sdr && !same_period(sdr->phase_update_period, model.sample_period)) {
        throw std::invalid_argument("run_experiment: sdr phase_update_period must equal the model sample period");
    }

    const SeedLineage root(seed);
    ExperimentResult result;
    result.records.resize(seqs.size());
    result.raw.resize(seqs.size());

    parallel_for(seqs.size(), options.workers, [&](std::size_t s) {
        const auto& seq = seqs[s];
        const SeedLineage node = root.child(static_cast<std::uint64_t>(seq.label));
        const auto n = static_cast<std::size_t>(seq.n_slots);
        SequenceOutcomes raw;
        raw.seq_index = seq.label;
        raw.n_pulses = seq.n_pulses();

        auto native_for = [&](const SeedLineage& leaf) {
            std::vector<double> phases;
            if (native_model) phases = generate_trajectory(*native_model, n, leaf.child(stream::native)).phases;
            return phases;
        };

        if (const auto* gate = std::get_if<GateMode>(&mode)) {
            raw.outcomes.resize(static_cast<std::size_t>(gate->trajectories));
            for (int r = 0; r < gate->trajectories; ++r) {
                const SeedLineage leaf = node.child(static_cast<std::uint64_t>(r));
                const auto injected = generate_trajectory(model, n, leaf.child(stream::injected));
                const auto native = native_for(leaf);
                auto shot_rng = leaf.child(stream::shots).engine();
                // Jitter is drawn per shot, so the trajectory's shots share the
                // jitter-averaged survival.
                const double p = jitter_averaged_survival(seq, injected.phases, native, perr, options.target);
                const int successes = std::binomial_distribution<int>(gate->shots_per_trajectory, p)(shot_rng);
                raw.outcomes[static_cast<std::size_t>(r)] = {successes, gate->shots_per_trajectory};
            }
        } else {
            const double ratio = seq.gate_period / sdr->phase_update_period;
            raw.outcomes.resize(static_cast<std::size_t>(sdr->shots));
            for (int shot = 0; shot < sdr->shots; ++shot) {
                const SeedLineage leaf = node.child(static_cast<std::uint64_t>(shot));
                double offset = 0.0;
                if (sdr->random_time_offset) {
                    auto offset_rng = leaf.child(stream::time_offset).engine();
                    offset = std::uniform_real_distribution<double>(0.0, 1.0)(offset_rng);
                }
                const std::size_t steps = sdr_steps_needed(seq.n_slots, ratio, offset);
                const auto injected = generate_trajectory(model, steps, leaf.child(stream::injected));
                const auto slots = resample_to_slots(injected.phases, seq.n_slots, ratio, offset);
                const auto native = native_for(leaf);
                auto jitter_rng = leaf.child(stream::pulse_jitter).engine();
                const double p = survival_probability(seq, slots, native, perr, &jitter_rng, options.target);
                auto shot_rng = leaf.child(stream::shots).engine();
                std::bernoulli_distribution bernoulli(p);
                raw.outcomes[static_cast<std::size_t>(shot)] = {bernoulli(shot_rng) ? 1 : 0, 1};
            }
        }
        result.records[s] = summarize_outcomes(raw, node.value());
        result.raw[s] = std::move(raw);
    });
    return result;
}

double analytic_survival(const PulseSequence& seq, std::span<const double> autocov,
                         std::span<const double> native_autocov) {
    double chi = chi_time_domain(seq, autocov);
    if (!native_autocov.empty()) chi += chi_time_domain(seq, native_autocov);
    return 0.5 + 0.5 * std::exp(-chi);
}

double analytic_survival(const PulseSequence& seq, const ArmaModel& model,
                         const std::optional<ArmaModel>& native_model) {
    const auto lag = static_cast<std::size_t>(seq.n_slots - 1);
    const auto r = autocovariance(model, lag);
    if (!native_model) return analytic_survival(seq, r);
    const auto rn = autocovariance(*native_model, lag);
    return analytic_survival(seq, r, rn);
}

}  // namespace dephase
