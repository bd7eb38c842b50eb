#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace poisonlab {

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_of: empty input");
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double stddev_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

// Nearest-rank percentile: value at index ceil(p/100 * n) - 1 of the sorted
// list. percentile(100) is the maximum, percentile of a singleton is itself.
inline double percentile_nearest_rank(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("percentile: empty input");
    if (p <= 0.0 || p > 100.0) throw std::invalid_argument("percentile: p must be in (0, 100]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
    if (rank == 0) rank = 1;
    return values[rank - 1];
}

struct Histogram {
    double lo = 0.0;
    double hi = 0.0;
    std::vector<std::int64_t> counts;

    double bin_lo(std::size_t i) const {
        return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(counts.size());
    }
    double bin_hi(std::size_t i) const {
        return lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(counts.size());
    }
};

inline Histogram make_histogram(const std::vector<double>& values, std::size_t n_bins) {
    if (values.empty()) throw std::invalid_argument("make_histogram: empty input");
    if (n_bins == 0) throw std::invalid_argument("make_histogram: n_bins must be > 0");
    Histogram h;
    h.lo = *std::min_element(values.begin(), values.end());
    h.hi = *std::max_element(values.begin(), values.end());
    h.counts.assign(n_bins, 0);
    const double span = h.hi - h.lo;
    for (double x : values) {
        std::size_t bin = 0;
        if (span > 0.0) {
            bin = static_cast<std::size_t>((x - h.lo) / span * static_cast<double>(n_bins));
            if (bin >= n_bins) bin = n_bins - 1;
        }
        ++h.counts[bin];
    }
    return h;
}

}  // namespace poisonlab
