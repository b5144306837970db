#pragma once

// Synthetic multi-modal cases: an ellipsoidal "brain" holding a nested
// spherical tumour (necrotic core inside an enhancing shell inside edema).
// Each tissue has its own mean intensity per modality.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "gliomaforge/random.hpp"
#include "gliomaforge/volume_io.hpp"

namespace gliomaforge {

struct SyntheticOptions {
    Dims3 dims{32, 32, 32};
    Spacing3 spacing{1.0, 1.0, 1.0};
    double noise = 4.0;
    /// Per-case multiplicative and additive scanner drift, drawn uniformly
    /// from [1 - gain_jitter, 1 + gain_jitter] and [-offset_jitter, offset_jitter].
    double gain_jitter = 0.0;
    double offset_jitter = 0.0;
    /// Tumour radii as fractions of the smallest dimension.
    double edema_radius = 0.36;
    double enhancing_radius = 0.25;
    double necrotic_radius = 0.14;
    double radius_jitter = 0.1;
};

// Mean intensity per tissue (background brain, necrotic, edema, enhancing)
// for t1, t1ce, t2, flair.
inline constexpr std::array<std::array<double, 4>, 4> kTissueMeans{{
    {{100.0, 60.0, 85.0, 110.0}},
    {{100.0, 50.0, 100.0, 220.0}},
    {{100.0, 210.0, 180.0, 150.0}},
    {{100.0, 130.0, 210.0, 165.0}},
}};

inline MultiModalCase synthesize_case(const std::string& case_id, std::uint64_t seed, const SyntheticOptions& opt = {}) {
    require(opt.dims[0] >= 8 && opt.dims[1] >= 8 && opt.dims[2] >= 8, ErrorKind::config, "synthetic cases need dims >= 8");
    Rng rng(seed);
    const double smallest = static_cast<double>(std::min({opt.dims[0], opt.dims[1], opt.dims[2]}));
    auto jitter = [&](double r) { return r * smallest * rng.uniform(1.0 - opt.radius_jitter, 1.0 + opt.radius_jitter); };
    const double r_ed = jitter(opt.edema_radius);
    const double r_et = std::min(jitter(opt.enhancing_radius), r_ed - 1.5);
    const double r_nc = std::min(jitter(opt.necrotic_radius), r_et - 1.5);

    std::array<double, 3> centre{};
    for (std::size_t a = 0; a < 3; ++a) {
        const double n = static_cast<double>(opt.dims[a]);
        const double slack = std::max(0.0, n / 2.0 - r_ed - 2.0);
        centre[a] = (n - 1) / 2.0 + rng.uniform(-slack, slack) * 0.5;
    }

    std::array<double, 4> gain{}, offset{};
    for (std::size_t m = 0; m < 4; ++m) {
        gain[m] = rng.uniform(1.0 - opt.gain_jitter, 1.0 + opt.gain_jitter);
        offset[m] = rng.uniform(-opt.offset_jitter, opt.offset_jitter);
    }

    MultiModalCase c;
    c.case_id = case_id;
    for (Modality m : kModalities) c.modalities.emplace(m, Volume(opt.dims, opt.spacing));
    c.label = SegmentationMask(opt.dims, opt.spacing);

    for (std::int64_t z = 0; z < opt.dims[2]; ++z)
        for (std::int64_t y = 0; y < opt.dims[1]; ++y)
            for (std::int64_t x = 0; x < opt.dims[0]; ++x) {
                const std::array<double, 3> p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
                double brain = 0.0, tumour = 0.0;
                for (std::size_t a = 0; a < 3; ++a) {
                    const double half = static_cast<double>(opt.dims[a]) / 2.0;
                    const double u = (p[a] - (static_cast<double>(opt.dims[a]) - 1) / 2.0) / (0.92 * half);
                    brain += u * u;
                    tumour += (p[a] - centre[a]) * (p[a] - centre[a]);
                }
                tumour = std::sqrt(tumour);
                std::uint8_t label = 0;
                std::size_t tissue = 0;
                if (tumour <= r_nc) {
                    label = 1;
                    tissue = 1;
                } else if (tumour <= r_et) {
                    label = 3;
                    tissue = 3;
                } else if (tumour <= r_ed) {
                    label = 2;
                    tissue = 2;
                }
                const std::size_t idx = c.label->index(x, y, z);
                if (brain > 1.0 && label == 0) {
                    for (std::size_t m = 0; m < 4; ++m) rng.normal(); // keep the stream position voxel-aligned
                    continue;
                }
                c.label->labels[idx] = label;
                for (std::size_t m = 0; m < 4; ++m) {
                    const double v = kTissueMeans[m][tissue] * gain[m] + offset[m] + opt.noise * rng.normal();
                    c.modalities[kModalities[m]].data[idx] = static_cast<float>(std::max(1.0, v));
                }
            }
    return c;
}

} // namespace gliomaforge
