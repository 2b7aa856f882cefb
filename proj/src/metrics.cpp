#include "dephase/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace dephase {

std::size_t argmax(std::span<const double> values, std::size_t begin, std::size_t end) {
    end = std::min(end, values.size());
    if (begin >= end) throw std::invalid_argument("argmax: empty range");
    std::size_t best = begin;
    for (std::size_t i = begin + 1; i < end; ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

double passband_center(std::span<const double> freqs, std::span<const double> values) {
    if (freqs.size() != values.size() || values.empty()) throw std::invalid_argument("passband_center: bad input");
    const std::size_t peak = argmax(values);
    const double half = 0.5 * values[peak];
    std::size_t lo = peak, hi = peak;
    while (lo > 0 && values[lo - 1] >= half) --lo;
    while (hi + 1 < values.size() && values[hi + 1] >= half) ++hi;
    double num = 0.0, den = 0.0;
    for (std::size_t i = lo; i <= hi; ++i) {
        num += freqs[i] * values[i];
        den += values[i];
    }
    return den > 0.0 ? num / den : freqs[peak];
}

double loglog_slope(std::span<const double> freqs, std::span<const double> values, double f_lo, double f_hi,
                    std::span<const double> value_stddev) {
    if (freqs.size() != values.size()) throw std::invalid_argument("loglog_slope: size mismatch");
    const bool weighted = !value_stddev.empty();
    if (weighted && value_stddev.size() != values.size()) throw std::invalid_argument("loglog_slope: size mismatch");
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        if (freqs[i] < f_lo || freqs[i] > f_hi || !(values[i] > 0.0) || !(freqs[i] > 0.0)) continue;
        double w = 1.0;
        if (weighted) {
            if (!(value_stddev[i] > 0.0)) continue;
            const double rel = values[i] / value_stddev[i];
            w = rel * rel;
        }
        const double x = std::log(freqs[i]);
        const double y = std::log(values[i]);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
        ++used;
    }
    if (used < 2) throw std::invalid_argument("loglog_slope: fewer than two usable points");
    const double denom = sw * sxx - sx * sx;
    if (!(std::abs(denom) > 0.0)) throw std::invalid_argument("loglog_slope: degenerate abscissae");
    return (sw * sxy - sx * sy) / denom;
}

double quantile(std::span<const double> data, double q) {
    if (data.empty()) throw std::invalid_argument("quantile: empty data");
    std::vector<double> sorted(data.begin(), data.end());
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace dephase
