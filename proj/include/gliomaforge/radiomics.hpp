#pragma once

// First-order intensity statistics over a voxel mask, following the
// PyRadiomics first-order definitions:
//
//   energy              sum x^2
//   total_energy        energy * voxel volume (mm^3)
//   entropy             -sum p log2 p over fixed-width bins (empty bins skipped)
//   minimum/maximum, p10/p90, median, interquartile_range (p75 - p25), range
//   mean_absolute_deviation         mean |x - mean|
//   robust_mean_absolute_deviation  the same over samples within [p10, p90]
//   root_mean_squared   sqrt(energy / N)
//   skewness            m3 / m2^1.5   (0 when m2 == 0)
//   kurtosis            m4 / m2^2     (not excess; 0 when m2 == 0)
//   variance            m2 (population)
//   uniformity          sum p^2
//
// Percentiles interpolate linearly between order statistics at (N-1)q.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gliomaforge/error.hpp"
#include "gliomaforge/volume_io.hpp"

namespace gliomaforge {

inline constexpr std::size_t kFeatureCount = 18;

inline constexpr std::array<const char*, kFeatureCount> kFeatureNames{
    "energy",
    "total_energy",
    "entropy",
    "minimum",
    "p10",
    "p90",
    "maximum",
    "mean",
    "median",
    "interquartile_range",
    "range",
    "mean_absolute_deviation",
    "robust_mean_absolute_deviation",
    "root_mean_squared",
    "skewness",
    "kurtosis",
    "variance",
    "uniformity",
};

inline constexpr double kDefaultBinWidth = 25.0;

struct FeatureVector {
    std::string case_id;
    double energy = 0, total_energy = 0, entropy = 0, minimum = 0, p10 = 0, p90 = 0, maximum = 0, mean = 0,
           median = 0, interquartile_range = 0, range = 0, mean_absolute_deviation = 0,
           robust_mean_absolute_deviation = 0, root_mean_squared = 0, skewness = 0, kurtosis = 0, variance = 0,
           uniformity = 0;

    /// Values in kFeatureNames order.
    std::array<double, kFeatureCount> values() const {
        return {energy,   total_energy,        entropy, minimum,
                p10,      p90,                 maximum, mean,
                median,   interquartile_range, range,   mean_absolute_deviation,
                robust_mean_absolute_deviation, root_mean_squared, skewness, kurtosis,
                variance, uniformity};
    }
};

/// Fixed-width histogram probabilities. Bin edges start at
/// floor(min / bin_width) * bin_width; a value x falls in bin
/// floor((x - edge0) / bin_width).
inline std::vector<double> discretize(std::span<const double> values, double bin_width) {
    require(bin_width > 0.0 && std::isfinite(bin_width), ErrorKind::config, "bin width must be positive");
    require(!values.empty(), ErrorKind::empty_foreground, "no values to discretize");
    double lo = values[0];
    for (double v : values) {
        require(std::isfinite(v), ErrorKind::validation, "non-finite value in discretize");
        lo = std::min(lo, v);
    }
    const double edge0 = std::floor(lo / bin_width) * bin_width;
    std::map<long long, std::size_t> counts;
    for (double v : values) ++counts[static_cast<long long>(std::floor((v - edge0) / bin_width))];

    const long long last = counts.rbegin()->first;
    std::vector<double> probs(static_cast<std::size_t>(last + 1), 0.0);
    const double n = static_cast<double>(values.size());
    for (const auto& [bin, count] : counts) probs[static_cast<std::size_t>(bin)] = static_cast<double>(count) / n;
    return probs;
}

namespace detail {

/// Linear-interpolated percentile of sorted data, q in [0, 1].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= sorted.size() || frac == 0.0) return sorted[i];
    return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

} // namespace detail

inline FeatureVector first_order_features(std::span<const double> samples, double voxel_volume,
                                          double bin_width = kDefaultBinWidth) {
    require(!samples.empty(), ErrorKind::empty_foreground, "feature mask selects no voxels");
    for (double x : samples) require(std::isfinite(x), ErrorKind::validation, "non-finite voxel value");

    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(sorted.size());

    FeatureVector f;
    double sum = 0.0, sum_sq = 0.0;
    for (double x : sorted) {
        sum += x;
        sum_sq += x * x;
    }
    f.mean = sum / n;
    f.energy = sum_sq;
    f.total_energy = sum_sq * voxel_volume;
    f.root_mean_squared = std::sqrt(sum_sq / n);

    double m2 = 0.0, m3 = 0.0, m4 = 0.0, mad = 0.0;
    for (double x : sorted) {
        const double d = x - f.mean;
        const double d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        mad += std::abs(d);
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    f.variance = m2;
    f.mean_absolute_deviation = mad / n;
    if (m2 > 0.0) {
        f.skewness = m3 / std::pow(m2, 1.5);
        f.kurtosis = m4 / (m2 * m2);
    }

    f.minimum = sorted.front();
    f.maximum = sorted.back();
    f.range = f.maximum - f.minimum;
    f.p10 = detail::percentile_sorted(sorted, 0.10);
    f.p90 = detail::percentile_sorted(sorted, 0.90);
    f.median = detail::percentile_sorted(sorted, 0.50);
    f.interquartile_range = detail::percentile_sorted(sorted, 0.75) - detail::percentile_sorted(sorted, 0.25);

    double robust_sum = 0.0;
    std::size_t robust_n = 0;
    for (double x : sorted)
        if (x >= f.p10 && x <= f.p90) {
            robust_sum += x;
            ++robust_n;
        }
    const double robust_mean = robust_sum / static_cast<double>(robust_n);
    double robust_mad = 0.0;
    for (double x : sorted)
        if (x >= f.p10 && x <= f.p90) robust_mad += std::abs(x - robust_mean);
    f.robust_mean_absolute_deviation = robust_mad / static_cast<double>(robust_n);

    for (double p : discretize(sorted, bin_width)) {
        if (p <= 0.0) continue;
        f.entropy -= p * std::log2(p);
        f.uniformity += p * p;
    }
    return f;
}

inline FeatureVector first_order_features(const Volume& v, std::span<const std::uint8_t> mask,
                                          double bin_width = kDefaultBinWidth) {
    require(mask.size() == v.size(), ErrorKind::shape, "mask length differs from volume");
    std::vector<double> samples;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) samples.push_back(v.data[i]);
    const auto& s = v.spacing();
    return first_order_features(samples, s[0] * s[1] * s[2], bin_width);
}

inline std::string features_csv_header() {
    std::string line = "case_id";
    for (const char* name : kFeatureNames) line += std::string(",") + name;
    return line + "\n";
}

inline std::string features_csv_row(const FeatureVector& f) {
    std::string line = f.case_id;
    for (double v : f.values()) line += "," + format_double(v);
    return line + "\n";
}

} // namespace gliomaforge
