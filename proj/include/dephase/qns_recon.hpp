#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dephase/noise_models.hpp"
#include "dephase/qubit_sim.hpp"
#include "dephase/sequences.hpp"

namespace dephase {

inline constexpr double default_saturation_floor = 0.02;

struct DecayEstimate {
    double chi = 0.0;
    bool saturated = false;  // chi is then only the lower bound -ln(2 floor)
};

DecayEstimate decay_from_survival(double p, double floor = default_saturation_floor);

/// Coarse frequency bins: bin m spans [lower[m], upper[m]) around centers[m].
struct BinLayout {
    std::vector<double> centers;
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t size() const { return centers.size(); }
    double width(std::size_t m) const { return upper[m] - lower[m]; }
    void validate() const;
};

/// Groups ascending probe frequencies into `bins` consecutive runs of
/// near-equal length; centers are group means, boundaries sit at midpoints,
/// the first bin starts at 0 and the last ends at nyquist_hz.
BinLayout make_bin_layout(std::span<const double> peak_freqs, double nyquist_hz, std::size_t bins);

/// G[k][m]: filter weight of each filter falling inside bin m.
std::vector<std::vector<double>> bin_matrix(std::span<const FilterFunction> filters, const BinLayout& layout);

/// Raised when the binned system cannot constrain every bin.
class RankDeficientError : public std::runtime_error {
public:
    RankDeficientError(const std::string& msg, std::vector<int> bins)
        : std::runtime_error(msg), bins_(std::move(bins)) {}
    const std::vector<int>& bins() const { return bins_; }

private:
    std::vector<int> bins_;
};

/// Row weights of the least-squares problem. `propagated` uses 1/var(chi)
/// from each record's stderr; `uniform` weighs every usable row equally
/// (uncertainty is then in units of unit chi variance).
enum class ChiWeighting { propagated, uniform };

struct ReconstructionOptions {
    std::optional<std::size_t> bins;  // default: one per usable sequence
    double ridge = 0.0;
    double saturation_floor = default_saturation_floor;
    /// Fixed layout and sequence set; saturated members are then kept at the
    /// chi lower bound instead of being dropped (used by the bootstrap).
    std::optional<BinLayout> layout;
    std::vector<int> fixed_labels;
    ChiWeighting weighting = ChiWeighting::propagated;
};

struct Reconstruction {
    Spectrum spectrum;  // freqs = bin centers, values = bin PSD
    BinLayout layout;
    std::vector<double> uncertainty;
    std::vector<int> used_labels;
    std::vector<int> excluded_labels;
    std::vector<double> chi;        // per used label
    std::vector<double> residuals;  // chi - G S, per used label
    double ridge = 0.0;
    double saturation_floor = default_saturation_floor;
    int solver_iterations = 0;

    /// Sum of bin value times bin width.
    double integrated_power() const;
};

Reconstruction reconstruct_spectrum(std::span<const ExperimentRecord> records, std::span<const FilterFunction> filters,
                                    const ReconstructionOptions& options = {});

struct NativeSubtraction {
    Spectrum delta;
    bool clipped = false;
    double clipped_power = 0.0;  // trapezoidal integral of the clipped excess
    std::vector<std::size_t> clipped_bins;
};

NativeSubtraction subtract_native(const Spectrum& injected, const Spectrum& native);

struct BootstrapOptions {
    int resamples = 200;
    double q_lo = 0.025;
    double q_hi = 0.975;
    std::uint64_t seed = 0;
    unsigned workers = 0;
};

struct BootstrapResult {
    Reconstruction point;
    std::vector<double> median;
    std::vector<double> ci_lo;
    std::vector<double> ci_hi;
    int resamples = 0;
    int failed_resamples = 0;
};

/// Resamples trajectories per sequence with replacement and reconstructs each
/// resample on the bin layout of the full data.
BootstrapResult bootstrap_spectrum(std::span<const SequenceOutcomes> raw, std::span<const FilterFunction> filters,
                                   const ReconstructionOptions& options, const BootstrapOptions& boot);

}  // namespace dephase
