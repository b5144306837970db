#pragma once

// Independent reference implementations used only by the tests. None of
// these call into the library code they check.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace oracle {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "gliomaforge-test-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

// ---------------------------------------------------------------------------
// NIfTI-1 byte builder with explicit byte order.

struct NiftiSpec {
    std::array<std::int16_t, 3> dims{4, 4, 4};
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
    std::int16_t datatype = 16; // 2 uint8, 4 int16, 16 float32, 64 float64
    float slope = 1.0f;
    float inter = 0.0f;
    float vox_offset = 352.0f;
    bool big_endian = false;
    std::string magic = std::string("n+1\0", 4);
};

inline void put(std::vector<std::uint8_t>& buf, std::size_t off, const void* src, std::size_t n, bool big) {
    const auto* p = static_cast<const std::uint8_t*>(src);
    const bool reverse = big != (std::endian::native == std::endian::big);
    for (std::size_t i = 0; i < n; ++i) buf[off + i] = reverse ? p[n - 1 - i] : p[i];
}

template <typename T>
void put_value(std::vector<std::uint8_t>& buf, std::size_t off, T v, bool big) {
    put(buf, off, &v, sizeof(T), big);
}

inline std::size_t bytes_for(std::int16_t datatype) {
    switch (datatype) {
    case 2: return 1;
    case 4: return 2;
    case 16: return 4;
    case 64: return 8;
    default: return 1;
    }
}

/// Header plus 4 extension bytes plus payload built from `raw` (stored
/// values before scaling).
inline std::vector<std::uint8_t> nifti_bytes(const NiftiSpec& s, const std::vector<double>& raw) {
    const auto offset = static_cast<std::size_t>(s.vox_offset);
    std::vector<std::uint8_t> buf(offset + raw.size() * bytes_for(s.datatype), 0);
    put_value<std::int32_t>(buf, 0, 348, s.big_endian);
    put_value<std::int16_t>(buf, 40, 3, s.big_endian);
    for (int i = 0; i < 3; ++i) put_value<std::int16_t>(buf, 42 + 2 * i, s.dims[i], s.big_endian);
    for (int i = 3; i < 7; ++i) put_value<std::int16_t>(buf, 42 + 2 * i, 1, s.big_endian);
    put_value<std::int16_t>(buf, 70, s.datatype, s.big_endian);
    put_value<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * bytes_for(s.datatype)), s.big_endian);
    put_value<float>(buf, 76, 1.0f, s.big_endian);
    for (int i = 0; i < 3; ++i) put_value<float>(buf, 80 + 4 * i, s.spacing[i], s.big_endian);
    put_value<float>(buf, 108, s.vox_offset, s.big_endian);
    put_value<float>(buf, 112, s.slope, s.big_endian);
    put_value<float>(buf, 116, s.inter, s.big_endian);
    std::memcpy(buf.data() + 344, s.magic.data(), 4);
    std::size_t pos = offset;
    for (double v : raw) {
        switch (s.datatype) {
        case 2: put_value<std::uint8_t>(buf, pos, static_cast<std::uint8_t>(v), s.big_endian); break;
        case 4: put_value<std::int16_t>(buf, pos, static_cast<std::int16_t>(v), s.big_endian); break;
        case 16: put_value<float>(buf, pos, static_cast<float>(v), s.big_endian); break;
        case 64: put_value<double>(buf, pos, v, s.big_endian); break;
        default: break;
        }
        pos += bytes_for(s.datatype);
    }
    return buf;
}

// ---------------------------------------------------------------------------
// Masks on an nx x ny x nz grid, x fastest.

struct Grid {
    int nx, ny, nz;
    int size() const { return nx * ny * nz; }
    int at(int x, int y, int z) const { return x + nx * (y + ny * z); }
    bool inside(int x, int y, int z) const { return x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz; }
};

/// Union-find 26-connectivity; components numbered by the scan position of
/// their first voxel.
inline std::vector<int> components_union_find(const std::vector<std::uint8_t>& m, Grid g, int* count = nullptr) {
    std::vector<int> parent(static_cast<std::size_t>(g.size()));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int a) {
        while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
        return a;
    };
    for (int z = 0; z < g.nz; ++z)
        for (int y = 0; y < g.ny; ++y)
            for (int x = 0; x < g.nx; ++x) {
                if (!m[static_cast<std::size_t>(g.at(x, y, z))]) continue;
                for (int dz = -1; dz <= 1; ++dz)
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            if (!g.inside(x + dx, y + dy, z + dz)) continue;
                            const int n = g.at(x + dx, y + dy, z + dz);
                            if (!m[static_cast<std::size_t>(n)]) continue;
                            const int a = find(g.at(x, y, z)), b = find(n);
                            if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
                        }
            }
    std::vector<int> labels(static_cast<std::size_t>(g.size()), 0), root_label(static_cast<std::size_t>(g.size()), 0);
    int next = 0;
    for (int i = 0; i < g.size(); ++i) {
        if (!m[static_cast<std::size_t>(i)]) continue;
        const int r = find(i);
        if (root_label[static_cast<std::size_t>(r)] == 0) root_label[static_cast<std::size_t>(r)] = ++next;
        labels[static_cast<std::size_t>(i)] = root_label[static_cast<std::size_t>(r)];
    }
    if (count) *count = next;
    return labels;
}

inline std::vector<std::uint8_t> keep_largest_oracle(const std::vector<std::uint8_t>& seg, Grid g) {
    std::vector<std::uint8_t> out = seg;
    for (int cls = 1; cls <= 3; ++cls) {
        std::vector<std::uint8_t> m(seg.size());
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = seg[i] == cls;
        int k = 0;
        const auto labels = components_union_find(m, g, &k);
        if (k <= 1) continue;
        std::vector<int> sizes(static_cast<std::size_t>(k + 1), 0);
        for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
        int best = 1;
        for (int c = 2; c <= k; ++c)
            if (sizes[static_cast<std::size_t>(c)] > sizes[static_cast<std::size_t>(best)]) best = c;
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m[i] && labels[i] != best) out[i] = 0;
    }
    return out;
}

inline double dice_oracle(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    double inter = 0, sa = 0, sb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        inter += (a[i] && b[i]) ? 1 : 0;
        sa += a[i] ? 1 : 0;
        sb += b[i] ? 1 : 0;
    }
    return sa + sb == 0 ? 1.0 : 2 * inter / (sa + sb);
}

/// numpy.percentile(..., method="linear"), including numpy's two-sided lerp.
inline double percentile_oracle(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double h = (q / 100.0) * (static_cast<double>(v.size()) - 1);
    const double lo = std::floor(h);
    const auto i = static_cast<std::size_t>(lo);
    if (i + 1 >= v.size()) return v.back();
    const double t = h - lo, d = v[i + 1] - v[i];
    if (t >= 0.5) return v[i + 1] - d * (1 - t);
    return v[i] + d * t;
}

/// All-pairs HD95 over 6-neighbour boundaries.
inline double hd95_oracle(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b, Grid g,
                          std::array<double, 3> sp = {1, 1, 1}, double one_empty = 373.13) {
    auto border = [&](const std::vector<std::uint8_t>& m) {
        std::vector<std::array<int, 3>> pts;
        const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        for (int z = 0; z < g.nz; ++z)
            for (int y = 0; y < g.ny; ++y)
                for (int x = 0; x < g.nx; ++x) {
                    if (!m[static_cast<std::size_t>(g.at(x, y, z))]) continue;
                    int outside = 0;
                    for (const auto& o : off) {
                        const int xx = x + o[0], yy = y + o[1], zz = z + o[2];
                        if (!g.inside(xx, yy, zz) || !m[static_cast<std::size_t>(g.at(xx, yy, zz))]) ++outside;
                    }
                    if (outside > 0) pts.push_back({x, y, z});
                }
        return pts;
    };
    const auto pa = border(a), pb = border(b);
    if (pa.empty() && pb.empty()) return 0.0;
    if (pa.empty() || pb.empty()) return one_empty;
    std::vector<double> d;
    auto directed = [&](const auto& from, const auto& to) {
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& q : to) {
                double s = 0;
                for (int k = 0; k < 3; ++k) {
                    const double diff = (p[static_cast<std::size_t>(k)] - q[static_cast<std::size_t>(k)]) * sp[static_cast<std::size_t>(k)];
                    s += diff * diff;
                }
                best = std::min(best, s);
            }
            d.push_back(std::sqrt(best));
        }
    };
    directed(pa, pb);
    directed(pb, pa);
    return percentile_oracle(d, 95.0);
}

// ---------------------------------------------------------------------------
// Statistics.

inline double ks_oracle(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<double> all = a;
    all.insert(all.end(), b.begin(), b.end());
    double worst = 0.0;
    for (double x : all) {
        const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), x) - a.begin()) / static_cast<double>(a.size());
        const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), x) - b.begin()) / static_cast<double>(b.size());
        worst = std::max(worst, std::abs(fa - fb));
    }
    return worst;
}

/// Textbook AdamW with bias correction, written out step by step.
struct AdamReference {
    double lr, b1, b2, eps, wd;
    double theta, m, v;
    long step;

    void update(double g) {
        step += 1;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double bc1 = 1 - std::pow(b1, static_cast<double>(step));
        const double bc2 = 1 - std::pow(b2, static_cast<double>(step));
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        theta = theta - lr * (mhat / (std::sqrt(vhat) + eps) + wd * theta);
    }
};

} // namespace oracle
