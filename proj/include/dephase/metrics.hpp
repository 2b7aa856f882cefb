#pragma once

#include <span>

namespace dephase {

/// Power-weighted centroid of the contiguous region around the global maximum
/// where values stay at or above half of that maximum.
double passband_center(std::span<const double> freqs, std::span<const double> values);

/// Index of the largest value within [begin, end).
std::size_t argmax(std::span<const double> values, std::size_t begin = 0, std::size_t end = static_cast<std::size_t>(-1));

/// Least-squares slope of log(value) against log(freq) over points with
/// f_lo <= freq <= f_hi and value > 0. When `value_stddev` is non-empty the
/// fit is weighted by (value / stddev)^2, the inverse variance of log(value).
double loglog_slope(std::span<const double> freqs, std::span<const double> values, double f_lo, double f_hi,
                    std::span<const double> value_stddev = {});

/// Linear-interpolated quantile (type 7) of unsorted data.
double quantile(std::span<const double> data, double q);

}  // namespace dephase
