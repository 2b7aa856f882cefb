#include "dephase/qns_recon.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "dephase/metrics.hpp"
#include "dephase/nnls.hpp"
#include "dephase/parallel.hpp"
#include "dephase/seed.hpp"

namespace dephase {

DecayEstimate decay_from_survival(double p, double floor) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("decay_from_survival: p must lie in [0, 1]");
    if (!(floor > 0.0 && floor < 0.5)) throw std::invalid_argument("decay_from_survival: floor must lie in (0, 0.5)");
    if (p <= 0.5 + floor) return {-std::log(2.0 * floor), true};
    return {-std::log(2.0 * p - 1.0), false};
}

void BinLayout::validate() const {
    if (centers.empty()) throw std::invalid_argument("BinLayout: no bins");
    if (lower.size() != centers.size() || upper.size() != centers.size()) {
        throw std::invalid_argument("BinLayout: centers/lower/upper sizes differ");
    }
    for (std::size_t m = 0; m < size(); ++m) {
        if (!(upper[m] > lower[m])) throw std::invalid_argument("BinLayout: bin " + std::to_string(m) + " is empty");
        if (m > 0 && std::abs(lower[m] - upper[m - 1]) > 1e-9 * upper[m]) {
            throw std::invalid_argument("BinLayout: bins must be contiguous");
        }
    }
}

double Reconstruction::integrated_power() const {
    double total = 0.0;
    for (std::size_t m = 0; m < layout.size(); ++m) total += spectrum.values[m] * layout.width(m);
    return total;
}

BinLayout make_bin_layout(std::span<const double> peak_freqs, double nyquist_hz, std::size_t bins) {
    if (bins == 0 || bins > peak_freqs.size()) {
        throw std::invalid_argument("make_bin_layout: bin count must lie in [1, " + std::to_string(peak_freqs.size()) +
                                    "]");
    }
    if (!std::is_sorted(peak_freqs.begin(), peak_freqs.end())) {
        throw std::invalid_argument("make_bin_layout: peak frequencies must be ascending");
    }
    BinLayout out;
    const std::size_t n = peak_freqs.size();
    const std::size_t base = n / bins;
    const std::size_t extra = n % bins;
    std::size_t pos = 0;
    for (std::size_t m = 0; m < bins; ++m) {
        const std::size_t len = base + (m < extra ? 1 : 0);
        double sum = 0.0;
        for (std::size_t i = pos; i < pos + len; ++i) sum += peak_freqs[i];
        out.centers.push_back(sum / static_cast<double>(len));
        pos += len;
    }
    for (std::size_t m = 0; m < bins; ++m) {
        out.lower.push_back(m == 0 ? 0.0 : 0.5 * (out.centers[m - 1] + out.centers[m]));
        out.upper.push_back(m + 1 == bins ? nyquist_hz : 0.5 * (out.centers[m] + out.centers[m + 1]));
    }
    out.validate();
    return out;
}

std::vector<std::vector<double>> bin_matrix(std::span<const FilterFunction> filters, const BinLayout& layout) {
    layout.validate();
    std::vector<std::vector<double>> g(filters.size(), std::vector<double>(layout.size(), 0.0));
    for (std::size_t k = 0; k < filters.size(); ++k) {
        const auto& f = filters[k];
        std::size_t m = 0;
        for (std::size_t i = 0; i < f.freqs.size(); ++i) {
            while (m + 1 < layout.size() && f.freqs[i] >= layout.upper[m]) ++m;
            if (f.freqs[i] < layout.lower[m]) continue;
            g[k][m] += f.weights[i];
        }
    }
    return g;
}

namespace {

struct UsableRow {
    int label;
    double chi;
    double var;
    const FilterFunction* filter;
};

std::vector<double> chi_variances(std::span<const ExperimentRecord> recs) {
    double min_positive = 0.0;
    for (const auto& r : recs) {
        if (r.survival_stderr > 0.0 && (min_positive == 0.0 || r.survival_stderr < min_positive)) {
            min_positive = r.survival_stderr;
        }
    }
    std::vector<double> var;
    var.reserve(recs.size());
    for (const auto& r : recs) {
        if (min_positive == 0.0) {
            var.push_back(1.0);
            continue;
        }
        const double se = std::max(r.survival_stderr, min_positive);
        const double denom = std::max(2.0 * r.survival_mean - 1.0, 1e-300);
        const double s = 2.0 * se / denom;
        var.push_back(s * s);
    }
    return var;
}

}  // namespace

Reconstruction reconstruct_spectrum(std::span<const ExperimentRecord> records, std::span<const FilterFunction> filters,
                                    const ReconstructionOptions& options) {
    if (!(options.ridge >= 0.0)) throw std::invalid_argument("reconstruct_spectrum: ridge must be >= 0");
    if (records.empty()) throw std::invalid_argument("reconstruct_spectrum: no records");
    std::map<int, const FilterFunction*> by_label;
    for (const auto& f : filters) {
        if (!by_label.emplace(f.label, &f).second) {
            throw std::invalid_argument("reconstruct_spectrum: duplicate filter label " + std::to_string(f.label));
        }
    }
    const bool fixed = options.layout.has_value();
    std::vector<ExperimentRecord> kept;
    Reconstruction out;
    out.ridge = options.ridge;
    out.saturation_floor = options.saturation_floor;
    for (const auto& r : records) {
        if (!by_label.count(r.seq_index)) {
            throw std::invalid_argument("reconstruct_spectrum: no filter for sequence " + std::to_string(r.seq_index));
        }
        if (!(r.survival_mean >= 0.0 && r.survival_mean <= 1.0)) {
            throw std::invalid_argument("reconstruct_spectrum: survival of sequence " + std::to_string(r.seq_index) +
                                        " outside [0, 1]");
        }
        if (fixed) {
            if (std::find(options.fixed_labels.begin(), options.fixed_labels.end(), r.seq_index) !=
                options.fixed_labels.end()) {
                kept.push_back(r);
            } else {
                out.excluded_labels.push_back(r.seq_index);
            }
            continue;
        }
        if (decay_from_survival(r.survival_mean, options.saturation_floor).saturated) {
            out.excluded_labels.push_back(r.seq_index);
        } else {
            kept.push_back(r);
        }
    }
    if (kept.empty()) throw RankDeficientError("reconstruct_spectrum: every sequence is saturated", {});

    auto variances = chi_variances(kept);
    if (options.weighting == ChiWeighting::uniform) std::fill(variances.begin(), variances.end(), 1.0);
    std::vector<UsableRow> rows;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const auto d = decay_from_survival(kept[i].survival_mean, options.saturation_floor);
        double var = variances[i];
        if (d.saturated && options.weighting == ChiWeighting::propagated) {
            // Only the lower bound is known; keep it with the floor's variance.
            const double se = std::max(kept[i].survival_stderr, 1e-12);
            const double s = 2.0 * se / (2.0 * options.saturation_floor);
            var = std::max(var, s * s);
        }
        rows.push_back({kept[i].seq_index, d.chi, var, by_label.at(kept[i].seq_index)});
    }
    std::sort(rows.begin(), rows.end(), [](const UsableRow& a, const UsableRow& b) {
        const double fa = a.filter->nominal_peak();
        const double fb = b.filter->nominal_peak();
        return fa != fb ? fa < fb : a.label < b.label;
    });

    if (fixed) {
        out.layout = *options.layout;
        out.layout.validate();
    } else {
        std::vector<double> peaks;
        for (const auto& r : rows) peaks.push_back(r.filter->nominal_peak());
        const std::size_t bins = options.bins.value_or(rows.size());
        if (bins > rows.size()) {
            throw RankDeficientError("reconstruct_spectrum: " + std::to_string(bins) + " bins requested but only " +
                                         std::to_string(rows.size()) + " usable sequences",
                                     {});
        }
        out.layout = make_bin_layout(peaks, 0.5 / rows.front().filter->sample_period, bins);
    }
    const std::size_t m_bins = out.layout.size();
    const std::size_t k_rows = rows.size();

    std::vector<FilterFunction> row_filters;
    row_filters.reserve(k_rows);
    for (const auto& r : rows) row_filters.push_back(*r.filter);
    const auto g = bin_matrix(row_filters, out.layout);

    const auto n_aug = static_cast<Eigen::Index>(k_rows + (options.ridge > 0.0 ? m_bins : 0));
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_aug, static_cast<Eigen::Index>(m_bins));
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n_aug);
    for (std::size_t k = 0; k < k_rows; ++k) {
        const double sw = 1.0 / std::sqrt(rows[k].var);
        for (std::size_t m = 0; m < m_bins; ++m) a(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m)) = sw * g[k][m];
        b(static_cast<Eigen::Index>(k)) = sw * rows[k].chi;
    }
    Eigen::VectorXd col_norm(static_cast<Eigen::Index>(m_bins));
    for (Eigen::Index m = 0; m < static_cast<Eigen::Index>(m_bins); ++m) {
        col_norm(m) = a.topRows(static_cast<Eigen::Index>(k_rows)).col(m).norm();
    }
    if (options.ridge == 0.0) {
        std::vector<int> empty;
        const double cmax = col_norm.maxCoeff();
        for (Eigen::Index m = 0; m < col_norm.size(); ++m) {
            if (!(col_norm(m) > 1e-12 * cmax)) empty.push_back(static_cast<int>(m));
        }
        Eigen::MatrixXd scaled = a.topRows(static_cast<Eigen::Index>(k_rows));
        for (Eigen::Index m = 0; m < scaled.cols(); ++m) {
            if (col_norm(m) > 0.0) scaled.col(m) /= col_norm(m);
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
        qr.setThreshold(1e-10);
        if (!empty.empty() || qr.rank() < scaled.cols()) {
            if (empty.empty()) {
                const auto perm = qr.colsPermutation().indices();
                for (Eigen::Index i = qr.rank(); i < perm.size(); ++i) empty.push_back(perm(i));
                std::sort(empty.begin(), empty.end());
            }
            std::string names;
            for (int m : empty) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%s%d (%.6g Hz)", names.empty() ? "" : ", ", m,
                              out.layout.centers[static_cast<std::size_t>(m)]);
                names += buf;
            }
            throw RankDeficientError("reconstruct_spectrum: binned system is rank deficient; unconstrained bins: " + names,
                                     empty);
        }
    } else {
        for (std::size_t m = 0; m < m_bins; ++m) {
            a(static_cast<Eigen::Index>(k_rows + m), static_cast<Eigen::Index>(m)) = std::sqrt(options.ridge);
        }
    }
    // Column scaling keeps the active-set tolerances meaningful across bins.
    Eigen::VectorXd scale(static_cast<Eigen::Index>(m_bins));
    for (Eigen::Index m = 0; m < scale.size(); ++m) {
        const double nrm = a.col(m).norm();
        scale(m) = nrm > 0.0 ? 1.0 / nrm : 1.0;
    }
    const Eigen::MatrixXd as = a * scale.asDiagonal();
    const auto sol = nnls(as, b);
    if (!sol.converged) throw std::runtime_error("reconstruct_spectrum: NNLS did not converge");
    const Eigen::VectorXd s = scale.cwiseProduct(sol.x);
    out.solver_iterations = sol.iterations;

    out.spectrum.freqs = out.layout.centers;
    out.spectrum.sample_period = rows.front().filter->sample_period;
    out.spectrum.values.resize(m_bins);
    for (std::size_t m = 0; m < m_bins; ++m) out.spectrum.values[m] = std::max(0.0, s(static_cast<Eigen::Index>(m)));

    for (std::size_t k = 0; k < k_rows; ++k) {
        double pred = 0.0;
        for (std::size_t m = 0; m < m_bins; ++m) pred += g[k][m] * out.spectrum.values[m];
        out.used_labels.push_back(rows[k].label);
        out.chi.push_back(rows[k].chi);
        out.residuals.push_back(rows[k].chi - pred);
    }

    // Gauss-Newton covariance on the passive set; bound bins report their
    // conditional spread.
    const Eigen::MatrixXd h = a.transpose() * a;
    std::vector<Eigen::Index> passive;
    for (Eigen::Index m = 0; m < static_cast<Eigen::Index>(m_bins); ++m) {
        if (out.spectrum.values[static_cast<std::size_t>(m)] > 0.0) passive.push_back(m);
    }
    out.uncertainty.assign(m_bins, 0.0);
    if (!passive.empty()) {
        Eigen::MatrixXd hp(passive.size(), passive.size());
        for (std::size_t i = 0; i < passive.size(); ++i) {
            for (std::size_t j = 0; j < passive.size(); ++j) hp(i, j) = h(passive[i], passive[j]);
        }
        Eigen::VectorXd d = hp.diagonal().cwiseSqrt().cwiseInverse();
        const Eigen::MatrixXd hs = d.asDiagonal() * hp * d.asDiagonal();
        const Eigen::MatrixXd inv = hs.completeOrthogonalDecomposition().pseudoInverse();
        for (std::size_t i = 0; i < passive.size(); ++i) {
            const double v = inv(i, i) * d(i) * d(i);
            out.uncertainty[static_cast<std::size_t>(passive[i])] = v > 0.0 ? std::sqrt(v) : 0.0;
        }
    }
    for (std::size_t m = 0; m < m_bins; ++m) {
        const double hmm = h(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        if (out.spectrum.values[m] == 0.0 && hmm > 0.0) out.uncertainty[m] = 1.0 / std::sqrt(hmm);
    }
    return out;
}

NativeSubtraction subtract_native(const Spectrum& injected, const Spectrum& native) {
    if (injected.freqs.size() != native.freqs.size() || injected.values.size() != native.values.size()) {
        throw std::invalid_argument("subtract_native: spectra are on different grids");
    }
    for (std::size_t i = 0; i < injected.freqs.size(); ++i) {
        const double f = injected.freqs[i];
        if (std::abs(f - native.freqs[i]) > 1e-9 * std::max(1.0, std::abs(f))) {
            throw std::invalid_argument("subtract_native: frequency grids differ at index " + std::to_string(i));
        }
    }
    NativeSubtraction out;
    out.delta = injected;
    std::vector<double> excess(injected.values.size(), 0.0);
    for (std::size_t i = 0; i < injected.values.size(); ++i) {
        const double d = injected.values[i] - native.values[i];
        if (d < 0.0) {
            out.clipped = true;
            out.clipped_bins.push_back(i);
            excess[i] = -d;
        }
        out.delta.values[i] = std::max(0.0, d);
    }
    if (out.clipped) {
        Spectrum ex{injected.freqs, excess, injected.sample_period};
        out.clipped_power = ex.size() > 1 ? ex.integrated_power() : excess[0];
    }
    return out;
}

BootstrapResult bootstrap_spectrum(std::span<const SequenceOutcomes> raw, std::span<const FilterFunction> filters,
                                   const ReconstructionOptions& options, const BootstrapOptions& boot) {
    if (boot.resamples < 1) throw std::invalid_argument("bootstrap_spectrum: resamples must be >= 1");
    if (!(boot.q_lo >= 0.0 && boot.q_lo < boot.q_hi && boot.q_hi <= 1.0)) {
        throw std::invalid_argument("bootstrap_spectrum: quantiles must satisfy 0 <= lo < hi <= 1");
    }
    std::vector<ExperimentRecord> records;
    for (const auto& r : raw) records.push_back(summarize_outcomes(r));

    BootstrapResult out;
    out.point = reconstruct_spectrum(records, filters, options);
    out.resamples = boot.resamples;
    const std::size_t m_bins = out.point.layout.size();
    if (boot.resamples == 1) {
        out.median = out.ci_lo = out.ci_hi = out.point.spectrum.values;
        return out;
    }

    ReconstructionOptions fixed = options;
    fixed.layout = out.point.layout;
    fixed.fixed_labels = out.point.used_labels;

    const SeedLineage root(boot.seed);
    std::vector<std::vector<double>> draws(static_cast<std::size_t>(boot.resamples));
    parallel_for(draws.size(), boot.workers, [&](std::size_t b) {
        const SeedLineage node = root.child(b);
        std::vector<ExperimentRecord> resampled;
        resampled.reserve(raw.size());
        for (const auto& seq : raw) {
            auto rng = node.child(static_cast<std::uint64_t>(seq.seq_index)).engine();
            SequenceOutcomes copy{seq.seq_index, seq.n_pulses, {}};
            const std::size_t r = seq.outcomes.size();
            const bool unit = std::all_of(seq.outcomes.begin(), seq.outcomes.end(),
                                          [](const TrajectoryOutcome& o) { return o.shots == 1; });
            if (unit) {
                // Resampling single-shot outcomes is a binomial draw at the observed rate.
                long succ = 0;
                for (const auto& o : seq.outcomes) succ += o.successes;
                const double p = static_cast<double>(succ) / static_cast<double>(r);
                std::binomial_distribution<long> binom(static_cast<long>(r), p);
                const long s = binom(rng);
                copy.outcomes.assign(r, TrajectoryOutcome{0, 1});
                for (long i = 0; i < s; ++i) copy.outcomes[static_cast<std::size_t>(i)].successes = 1;
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, r - 1);
                copy.outcomes.reserve(r);
                for (std::size_t i = 0; i < r; ++i) copy.outcomes.push_back(seq.outcomes[pick(rng)]);
            }
            resampled.push_back(summarize_outcomes(copy));
        }
        try {
            draws[b] = reconstruct_spectrum(resampled, filters, fixed).spectrum.values;
        } catch (const std::exception&) {
            draws[b].clear();
        }
    });

    std::vector<std::vector<double>> per_bin(m_bins);
    for (const auto& d : draws) {
        if (d.empty()) {
            ++out.failed_resamples;
            continue;
        }
        for (std::size_t m = 0; m < m_bins; ++m) per_bin[m].push_back(d[m]);
    }
    if (per_bin.empty() || per_bin[0].empty()) throw std::runtime_error("bootstrap_spectrum: every resample failed");
    for (std::size_t m = 0; m < m_bins; ++m) {
        out.median.push_back(quantile(per_bin[m], 0.5));
        out.ci_lo.push_back(quantile(per_bin[m], boot.q_lo));
        out.ci_hi.push_back(quantile(per_bin[m], boot.q_hi));
    }
    return out;
}

}  // namespace dephase
