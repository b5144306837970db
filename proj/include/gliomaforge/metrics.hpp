#pragma once

// Connected-component cleanup and region-wise segmentation metrics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include "gliomaforge/util.hpp"
#include "gliomaforge/volume_io.hpp"

namespace gliomaforge {

using BinaryMask = std::vector<std::uint8_t>;

struct Components {
    std::vector<std::int32_t> labels; // 0 = background, 1..count by first-seen scan order
    std::vector<std::int64_t> sizes;  // sizes[k-1] is the voxel count of component k
    std::int32_t count() const { return static_cast<std::int32_t>(sizes.size()); }
};

/// 26-connected components; the scan visits x fastest, then y, then z.
inline Components connected_components(const BinaryMask& mask, const Dims3& dims) {
    require(static_cast<std::int64_t>(mask.size()) == voxel_count(dims), ErrorKind::shape, "mask size does not match dims");
    const std::int64_t nx = dims[0], ny = dims[1], nz = dims[2];
    Components cc;
    cc.labels.assign(mask.size(), 0);
    std::deque<std::int64_t> queue;
    for (std::int64_t seed = 0; seed < static_cast<std::int64_t>(mask.size()); ++seed) {
        if (!mask[static_cast<std::size_t>(seed)] || cc.labels[static_cast<std::size_t>(seed)] != 0) continue;
        const std::int32_t id = cc.count() + 1;
        std::int64_t size = 0;
        cc.labels[static_cast<std::size_t>(seed)] = id;
        queue.push_back(seed);
        while (!queue.empty()) {
            const std::int64_t v = queue.front();
            queue.pop_front();
            ++size;
            const std::int64_t x = v % nx, y = (v / nx) % ny, z = v / (nx * ny);
            for (std::int64_t dz = -1; dz <= 1; ++dz)
                for (std::int64_t dy = -1; dy <= 1; ++dy)
                    for (std::int64_t dx = -1; dx <= 1; ++dx) {
                        const std::int64_t xx = x + dx, yy = y + dy, zz = z + dz;
                        if (xx < 0 || yy < 0 || zz < 0 || xx >= nx || yy >= ny || zz >= nz) continue;
                        const auto n = static_cast<std::size_t>(xx + nx * (yy + ny * zz));
                        if (mask[n] && cc.labels[n] == 0) {
                            cc.labels[n] = id;
                            queue.push_back(static_cast<std::int64_t>(n));
                        }
                    }
        }
        cc.sizes.push_back(size);
    }
    return cc;
}

/// For each label 1..3, keeps only its largest component (earliest on ties).
inline SegmentationMask keep_largest_per_class(const SegmentationMask& seg) {
    SegmentationMask out = seg;
    for (std::uint8_t cls = 1; cls <= 3; ++cls) {
        BinaryMask m(seg.labels.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = seg.labels[i] == cls;
        const Components cc = connected_components(m, seg.dims);
        if (cc.count() <= 1) continue;
        std::int32_t keep = 1;
        for (std::int32_t k = 2; k <= cc.count(); ++k)
            if (cc.sizes[static_cast<std::size_t>(k - 1)] > cc.sizes[static_cast<std::size_t>(keep - 1)]) keep = k;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i] && cc.labels[i] != keep) out.labels[i] = 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Regions and metrics.

struct RegionSpec {
    std::string name;
    std::array<bool, 4> members{false, false, false, false};

    bool contains(std::uint8_t label) const { return label < 4 && members[label]; }
};

inline const std::array<RegionSpec, 3>& brats_regions() {
    static const std::array<RegionSpec, 3> regions{{
        {"WT", {false, true, true, true}},
        {"TC", {false, true, false, true}},
        {"ET", {false, false, false, true}},
    }};
    return regions;
}

inline BinaryMask region_mask(const SegmentationMask& seg, const RegionSpec& region) {
    BinaryMask m(seg.labels.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = region.contains(seg.labels[i]);
    return m;
}

struct MetricConventions {
    double dice_both_empty = 1.0;
    double hd95_both_empty = 0.0;
    double hd95_one_empty = 373.13;
    double percentile = 95.0;
};

inline void require_same_grid(std::size_t a, std::size_t b) {
    require(a == b, ErrorKind::shape, "masks differ in voxel count (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

inline double dice(const BinaryMask& pred, const BinaryMask& truth, const MetricConventions& conv = {}) {
    require_same_grid(pred.size(), truth.size());
    std::int64_t inter = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += pred[i] && truth[i];
        p += pred[i] != 0;
        g += truth[i] != 0;
    }
    if (p + g == 0) return conv.dice_both_empty;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

struct Confusion {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& truth) {
    require_same_grid(pred.size(), truth.size());
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = truth[i] != 0;
        c.tp += p && g;
        c.fp += p && !g;
        c.fn += !p && g;
        c.tn += !p && !g;
    }
    return c;
}

/// Sensitivity TP/(TP+FN) and specificity TN/(TN+FP). With no positives in
/// the truth, sensitivity is 1 if nothing was predicted and 0 otherwise; with
/// no negatives, specificity is 1.
inline std::pair<double, double> sensitivity_specificity(const BinaryMask& pred, const BinaryMask& truth) {
    const Confusion c = confusion(pred, truth);
    const double sens = c.tp + c.fn == 0 ? (c.fp == 0 ? 1.0 : 0.0) : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    const double spec = c.tn + c.fp == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    return {sens, spec};
}

/// Region voxels with at least one of the six face neighbours outside the
/// region; off-grid neighbours count as outside.
inline BinaryMask boundary(const BinaryMask& m, const Dims3& dims) {
    const std::int64_t nx = dims[0], ny = dims[1], nz = dims[2];
    BinaryMask b(m.size(), 0);
    auto inside = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
        return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz && m[static_cast<std::size_t>(x + nx * (y + ny * z))];
    };
    for (std::int64_t z = 0; z < nz; ++z)
        for (std::int64_t y = 0; y < ny; ++y)
            for (std::int64_t x = 0; x < nx; ++x) {
                if (!inside(x, y, z)) continue;
                b[static_cast<std::size_t>(x + nx * (y + ny * z))] =
                    !inside(x - 1, y, z) || !inside(x + 1, y, z) || !inside(x, y - 1, z) || !inside(x, y + 1, z) ||
                    !inside(x, y, z - 1) || !inside(x, y, z + 1);
            }
    return b;
}

namespace detail {

/// Exact 1-D squared distance transform (lower envelope of parabolas) with
/// squared sample spacing `w`. Infinite entries are not sites.
inline void edt_1d(std::vector<double>& f, double w) {
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t n = f.size();
    std::vector<std::size_t> v;
    std::vector<double> z;
    for (std::size_t q = 0; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        const double qd = static_cast<double>(q);
        while (!v.empty()) {
            const double vd = static_cast<double>(v.back());
            const double s = ((f[q] + w * qd * qd) - (f[v.back()] + w * vd * vd)) / (2.0 * w * (qd - vd));
            if (s <= z.back()) {
                v.pop_back();
                z.pop_back();
            } else {
                z.push_back(s);
                break;
            }
        }
        if (v.empty()) z.assign(1, -inf);
        v.push_back(q);
    }
    if (v.empty()) return;
    std::vector<double> out(n);
    std::size_t k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double qd = static_cast<double>(q);
        while (k + 1 < v.size() && z[k + 1] < qd) ++k;
        const double d = qd - static_cast<double>(v[k]);
        out[q] = f[v[k]] + w * d * d;
    }
    f = std::move(out);
}

} // namespace detail

/// Squared Euclidean distance (in mm^2) from every voxel to the nearest set
/// voxel of `sites`; +inf everywhere when `sites` is empty.
inline std::vector<double> squared_distance_transform(const BinaryMask& sites, const Dims3& dims, const Spacing3& spacing) {
    const double inf = std::numeric_limits<double>::infinity();
    const std::int64_t nx = dims[0], ny = dims[1], nz = dims[2];
    std::vector<double> d(sites.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = sites[i] ? 0.0 : inf;
    std::vector<double> line;
    auto pass = [&](std::int64_t len, std::int64_t stride, std::int64_t count, auto base_of, double w) {
        line.resize(static_cast<std::size_t>(len));
        for (std::int64_t l = 0; l < count; ++l) {
            const std::int64_t base = base_of(l);
            for (std::int64_t i = 0; i < len; ++i) line[static_cast<std::size_t>(i)] = d[static_cast<std::size_t>(base + i * stride)];
            detail::edt_1d(line, w);
            for (std::int64_t i = 0; i < len; ++i) d[static_cast<std::size_t>(base + i * stride)] = line[static_cast<std::size_t>(i)];
        }
    };
    pass(nx, 1, ny * nz, [&](std::int64_t l) { return l * nx; }, spacing[0] * spacing[0]);
    pass(ny, nx, nx * nz, [&](std::int64_t l) { return (l % nx) + (l / nx) * nx * ny; }, spacing[1] * spacing[1]);
    pass(nz, nx * ny, nx * ny, [&](std::int64_t l) { return l; }, spacing[2] * spacing[2]);
    return d;
}

/// Linear-interpolated percentile of an unsorted sample, q in [0, 100].
/// Rounds exactly like numpy.percentile(method="linear"): the lerp is taken
/// from the nearer end so the result stays bit-identical.
inline double percentile_linear(std::vector<double> values, double q) {
    require(!values.empty(), ErrorKind::insufficient_data, "percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
    if (pos >= static_cast<double>(values.size() - 1)) return values.back();
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double t = pos - static_cast<double>(lo);
    const double a = values[lo], b = values[lo + 1];
    return t >= 0.5 ? b - (b - a) * (1 - t) : a + (b - a) * t;
}

/// 95th percentile of the pooled boundary-to-boundary distances in both
/// directions.
inline double hd95(const BinaryMask& pred, const BinaryMask& truth, const Dims3& dims, const Spacing3& spacing,
                   const MetricConventions& conv = {}) {
    require_same_grid(pred.size(), truth.size());
    require(static_cast<std::int64_t>(pred.size()) == voxel_count(dims), ErrorKind::shape, "mask size does not match dims");
    const bool p_empty = std::none_of(pred.begin(), pred.end(), [](std::uint8_t v) { return v != 0; });
    const bool t_empty = std::none_of(truth.begin(), truth.end(), [](std::uint8_t v) { return v != 0; });
    if (p_empty && t_empty) return conv.hd95_both_empty;
    if (p_empty || t_empty) return conv.hd95_one_empty;
    const BinaryMask bp = boundary(pred, dims), bt = boundary(truth, dims);
    const std::vector<double> to_truth = squared_distance_transform(bt, dims, spacing);
    const std::vector<double> to_pred = squared_distance_transform(bp, dims, spacing);
    std::vector<double> pooled;
    for (std::size_t i = 0; i < bp.size(); ++i) {
        if (bp[i]) pooled.push_back(std::sqrt(to_truth[i]));
        if (bt[i]) pooled.push_back(std::sqrt(to_pred[i]));
    }
    return percentile_linear(std::move(pooled), conv.percentile);
}

// ---------------------------------------------------------------------------
// Cohort evaluation.

struct RegionMetrics {
    double dice = 0.0;
    double hd95 = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
};

struct CaseMetrics {
    std::string case_id;
    std::array<RegionMetrics, 3> regions; // WT, TC, ET
};

inline CaseMetrics evaluate_case(const std::string& case_id, const SegmentationMask& pred, const SegmentationMask& truth,
                                 const MetricConventions& conv = {}, bool postprocess = true) {
    require(pred.dims == truth.dims, ErrorKind::shape, "case " + case_id + ": prediction and truth dims differ");
    const SegmentationMask cleaned = postprocess ? keep_largest_per_class(pred) : pred;
    CaseMetrics m;
    m.case_id = case_id;
    for (std::size_t r = 0; r < 3; ++r) {
        const BinaryMask p = region_mask(cleaned, brats_regions()[r]);
        const BinaryMask g = region_mask(truth, brats_regions()[r]);
        auto& out = m.regions[r];
        out.dice = dice(p, g, conv);
        out.hd95 = hd95(p, g, truth.dims, truth.spacing, conv);
        std::tie(out.sensitivity, out.specificity) = sensitivity_specificity(p, g);
    }
    return m;
}

/// Per-case rows, then population mean and std rows per region. Comment
/// lines record the conventions used.
inline std::string metrics_csv(const std::vector<CaseMetrics>& cases, const MetricConventions& conv) {
    std::string text;
    text += "# dice_both_empty=" + format_double(conv.dice_both_empty) + "\n";
    text += "# hd95_both_empty=" + format_double(conv.hd95_both_empty) + "\n";
    text += "# hd95_one_empty=" + format_double(conv.hd95_one_empty) + "\n";
    text += "# hd95=percentile " + format_double(conv.percentile) +
            " (linear) of pooled directed boundary distances; boundary=6-neighbour\n";
    text += "# postprocess=largest 26-connected component per label; std=population\n";
    text += "case_id,region,dice,hd95,sensitivity,specificity\n";
    auto row = [&](const std::string& id, const std::string& region, const std::array<double, 4>& v) {
        text += id + "," + region + "," + format_double(v[0]) + "," + format_double(v[1]) + "," + format_double(v[2]) + "," +
                format_double(v[3]) + "\n";
    };
    for (const auto& c : cases)
        for (std::size_t r = 0; r < 3; ++r) {
            const auto& m = c.regions[r];
            row(c.case_id, brats_regions()[r].name, {m.dice, m.hd95, m.sensitivity, m.specificity});
        }
    if (cases.empty()) return text;
    const double n = static_cast<double>(cases.size());
    for (std::size_t r = 0; r < 3; ++r) {
        std::array<double, 4> mean{}, sq{};
        for (const auto& c : cases) {
            const auto& m = c.regions[r];
            const std::array<double, 4> v{m.dice, m.hd95, m.sensitivity, m.specificity};
            for (std::size_t k = 0; k < 4; ++k) mean[k] += v[k];
        }
        for (auto& v : mean) v /= n;
        for (const auto& c : cases) {
            const auto& m = c.regions[r];
            const std::array<double, 4> v{m.dice, m.hd95, m.sensitivity, m.specificity};
            for (std::size_t k = 0; k < 4; ++k) sq[k] += (v[k] - mean[k]) * (v[k] - mean[k]);
        }
        for (auto& v : sq) v = std::sqrt(v / n);
        row("mean", brats_regions()[r].name, mean);
        row("std", brats_regions()[r].name, sq);
    }
    return text;
}

/// Case ids with a `<id>-seg.nii` (or .nii.gz) file in `directory`, sorted.
inline std::vector<std::string> discover_segmentations(const fs::path& directory) {
    require(fs::is_directory(directory), ErrorKind::missing_file, "not a directory: " + directory.string());
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(directory)) {
        const std::string name = entry.path().filename().string();
        for (const std::string suffix : {"-seg.nii", "-seg.nii.gz"})
            if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
                ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

inline std::vector<CaseMetrics> evaluate_directories(const fs::path& pred_dir, const fs::path& truth_dir, int jobs = 1,
                                                     const MetricConventions& conv = {}) {
    const auto pred_ids = discover_segmentations(pred_dir);
    const auto truth_ids = discover_segmentations(truth_dir);
    std::vector<std::string> only_pred, only_truth;
    std::set_difference(pred_ids.begin(), pred_ids.end(), truth_ids.begin(), truth_ids.end(), std::back_inserter(only_pred));
    std::set_difference(truth_ids.begin(), truth_ids.end(), pred_ids.begin(), pred_ids.end(), std::back_inserter(only_truth));
    if (!only_pred.empty() || !only_truth.empty()) {
        std::string msg = "unpaired cases:";
        for (const auto& id : only_pred) msg += " " + id + " (prediction only)";
        for (const auto& id : only_truth) msg += " " + id + " (truth only)";
        fail(ErrorKind::pairing, msg);
    }
    require(!pred_ids.empty(), ErrorKind::insufficient_data, "no -seg.nii files in " + pred_dir.string());
    std::vector<CaseMetrics> results(pred_ids.size());
    parallel_for(pred_ids.size(), jobs, [&](std::size_t i) {
        const auto& id = pred_ids[i];
        const SegmentationMask p = load_mask(*find_case_file(pred_dir, id, "seg"));
        const SegmentationMask g = load_mask(*find_case_file(truth_dir, id, "seg"));
        results[i] = evaluate_case(id, p, g, conv);
    });
    return results;
}

} // namespace gliomaforge
