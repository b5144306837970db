#pragma once

// Histogram matching against a reference intensity distribution and
// per-modality z-score normalization. Foreground is every strictly nonzero
// voxel; background zeros are never mapped.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "gliomaforge/error.hpp"
#include "gliomaforge/volume_io.hpp"

namespace gliomaforge {

using VoxelMask = std::vector<std::uint8_t>;

inline VoxelMask foreground_mask(const Volume& v) {
    VoxelMask mask(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) mask[i] = v.data[i] != 0.0f ? 1 : 0;
    return mask;
}

/// Empirical distribution with midpoint plotting positions: the i-th sorted
/// sample sits at level (i + 0.5) / n.
class EmpiricalCDF {
public:
    explicit EmpiricalCDF(std::vector<double> samples) : sorted_(std::move(samples)) {
        require(!sorted_.empty(), ErrorKind::empty_foreground, "CDF needs at least one sample");
        std::sort(sorted_.begin(), sorted_.end());
    }

    std::size_t size() const { return sorted_.size(); }
    const std::vector<double>& sorted_values() const { return sorted_; }

    /// F(x). Tied samples share the midpoint of their rank range, so a
    /// constant sample evaluates to 0.5. Between samples the plotting
    /// positions are interpolated linearly.
    double evaluate(double x) const {
        const double n = static_cast<double>(sorted_.size());
        const auto lo = std::lower_bound(sorted_.begin(), sorted_.end(), x);
        const auto hi = std::upper_bound(lo, sorted_.end(), x);
        if (lo != hi) {
            const double below = static_cast<double>(lo - sorted_.begin());
            const double through = static_cast<double>(hi - sorted_.begin());
            return (below + through) / (2.0 * n);
        }
        if (lo == sorted_.begin()) return 0.0;
        if (lo == sorted_.end()) return 1.0;
        const auto i = static_cast<std::size_t>(lo - sorted_.begin());
        const double x0 = sorted_[i - 1], x1 = sorted_[i];
        const double p0 = (static_cast<double>(i) - 0.5) / n, p1 = (static_cast<double>(i) + 0.5) / n;
        return p0 + (p1 - p0) * (x - x0) / (x1 - x0);
    }

    /// F^{-1}(p): piecewise-linear through the plotting positions, flat
    /// beyond the first and last sample.
    double quantile(double p) const {
        const std::size_t n = sorted_.size();
        const double pos = p * static_cast<double>(n) - 0.5;
        if (pos <= 0.0) return sorted_.front();
        if (pos >= static_cast<double>(n - 1)) return sorted_.back();
        const auto i = static_cast<std::size_t>(std::floor(pos));
        const double frac = pos - static_cast<double>(i);
        if (frac == 0.0) return sorted_[i];
        return sorted_[i] + frac * (sorted_[i + 1] - sorted_[i]);
    }

private:
    std::vector<double> sorted_;
};

inline EmpiricalCDF build_cdf(std::span<const float> values, std::span<const std::uint8_t> mask) {
    require(values.size() == mask.size(), ErrorKind::shape, "mask length differs from volume");
    std::vector<double> samples;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (mask[i]) samples.push_back(values[i]);
    require(!samples.empty(), ErrorKind::empty_foreground, "mask selects no voxels");
    return EmpiricalCDF(std::move(samples));
}

inline EmpiricalCDF build_cdf(const Volume& v) { return build_cdf(v.data, foreground_mask(v)); }

inline constexpr int kDefaultQuantiles = 256;

/// Monotone transfer function realised as matched quantile knots. Between
/// knots the map is linear; outside it is flat.
class HarmonizationMapping {
public:
    /// Matches `source` onto `reference` at Q levels. Level j sits on the
    /// source order statistic i_j = round(j (n-1) / (Q-1)), i.e. at plotting
    /// position (i_j + 0.5) / n, so knots are actual source samples and a
    /// second match against the same reference is the identity. Runs of
    /// equal source knots (ties) collapse into one knot whose target is the
    /// reference quantile at the run's centre level.
    HarmonizationMapping(const EmpiricalCDF& source, const EmpiricalCDF& reference, int quantiles) {
        require(quantiles >= 2, ErrorKind::config, "quantile count must be >= 2, got " + std::to_string(quantiles));
        const auto q = static_cast<std::size_t>(quantiles);
        const auto& sorted = source.sorted_values();
        const double n = static_cast<double>(sorted.size());
        std::vector<double> levels(q), src(q);
        for (std::size_t j = 0; j < q; ++j) {
            const auto i = static_cast<std::size_t>(
                std::llround(static_cast<double>(j) * (n - 1.0) / static_cast<double>(q - 1)));
            levels[j] = (static_cast<double>(i) + 0.5) / n;
            src[j] = sorted[i];
        }
        std::size_t j = 0;
        while (j < q) {
            std::size_t k = j;
            while (k + 1 < q && src[k + 1] == src[j]) ++k;
            source_knots_.push_back(src[j]);
            reference_knots_.push_back(reference.quantile(0.5 * (levels[j] + levels[k])));
            j = k + 1;
        }
    }

    const std::vector<double>& source_knots() const { return source_knots_; }
    const std::vector<double>& reference_knots() const { return reference_knots_; }

    double operator()(double x) const {
        if (x <= source_knots_.front()) return reference_knots_.front();
        if (x >= source_knots_.back()) return reference_knots_.back();
        const auto it = std::upper_bound(source_knots_.begin(), source_knots_.end(), x);
        const auto i = static_cast<std::size_t>(it - source_knots_.begin());
        const double x0 = source_knots_[i - 1], x1 = source_knots_[i];
        const double y0 = reference_knots_[i - 1], y1 = reference_knots_[i];
        if (x == x0) return y0;
        return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
    }

private:
    std::vector<double> source_knots_;
    std::vector<double> reference_knots_;
};

inline Volume match_histogram(const Volume& source, const EmpiricalCDF& reference, int quantiles = kDefaultQuantiles) {
    require(quantiles >= 2, ErrorKind::config, "quantile count must be >= 2, got " + std::to_string(quantiles));
    const HarmonizationMapping mapping(build_cdf(source), reference, quantiles);
    Volume out = source;
    for (float& x : out.data)
        if (x != 0.0f) x = static_cast<float>(mapping(x));
    return out;
}

/// (x - mean) / std over the mask using the population standard deviation;
/// voxels outside the mask become 0.
inline Volume zscore_normalize(const Volume& v, std::span<const std::uint8_t> mask) {
    require(mask.size() == v.size(), ErrorKind::shape, "mask length differs from volume");
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) {
            sum += v.data[i];
            ++count;
        }
    require(count >= 2, ErrorKind::insufficient_data, "z-score needs at least 2 masked voxels");
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) ss += (v.data[i] - mean) * (v.data[i] - mean);
    const double stddev = std::sqrt(ss / static_cast<double>(count));
    require(stddev > 0.0, ErrorKind::degenerate_input, "constant image cannot be z-score normalized");

    Volume out = v;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.data[i] = mask[i] ? static_cast<float>((v.data[i] - mean) / stddev) : 0.0f;
    return out;
}

inline Volume zscore_normalize(const Volume& v) { return zscore_normalize(v, foreground_mask(v)); }

/// Two-sample Kolmogorov-Smirnov statistic sup|F_a - F_b| over step CDFs.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

} // namespace gliomaforge
