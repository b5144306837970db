#pragma once

// Minimal NIfTI-1 single-file reader/writer and multi-modal case assembly.
//
// Supported on read: uint8, int16 and float32 payloads, either byte order,
// scl_slope/scl_inter scaling. Writes are always little-endian float32 with
// slope 1, intercept 0 and the payload at byte 352.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#ifdef GLIOMAFORGE_WITH_ZLIB
#include <zlib.h>
#endif

#include "gliomaforge/error.hpp"
#include "gliomaforge/util.hpp"

namespace gliomaforge {

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::int64_t kNiftiDataOffset = 352;

enum class Datatype : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

inline std::size_t bytes_per_voxel(Datatype t) {
    switch (t) {
    case Datatype::uint8: return 1;
    case Datatype::int16: return 2;
    case Datatype::float32: return 4;
    }
    return 0;
}

using Dims3 = std::array<std::int64_t, 3>;
using Spacing3 = std::array<double, 3>;

inline std::int64_t voxel_count(const Dims3& d) { return d[0] * d[1] * d[2]; }

struct VolumeHeader {
    Dims3 dims{1, 1, 1};          // nx, ny, nz (x varies fastest on disk)
    Spacing3 spacing{1.0, 1.0, 1.0};
    Datatype datatype = Datatype::float32;
    float scl_slope = 1.0f;
    float scl_inter = 0.0f;
    bool byte_swapped = false;     // file byte order differs from host
    std::int64_t vox_offset = kNiftiDataOffset;
    bool single_file = true;       // "n+1" vs "ni1"
};

/// One scalar modality on a 3-D grid. Linear index is x + nx*(y + ny*z).
struct Volume {
    VolumeHeader header;
    std::vector<float> data;

    Volume() = default;
    Volume(const Dims3& dims, const Spacing3& spacing, float fill = 0.0f)
        : data(static_cast<std::size_t>(voxel_count(dims)), fill) {
        header.dims = dims;
        header.spacing = spacing;
    }

    const Dims3& dims() const { return header.dims; }
    const Spacing3& spacing() const { return header.spacing; }
    std::size_t size() const { return data.size(); }
    std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>(x + header.dims[0] * (y + header.dims[1] * z));
    }
    float& at(std::int64_t x, std::int64_t y, std::int64_t z) { return data[index(x, y, z)]; }
    float at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data[index(x, y, z)]; }
};

enum class Label : std::uint8_t { background = 0, necrotic = 1, edema = 2, enhancing = 3 };

struct SegmentationMask {
    Dims3 dims{1, 1, 1};
    Spacing3 spacing{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> labels;

    SegmentationMask() = default;
    SegmentationMask(const Dims3& d, const Spacing3& s)
        : dims(d), spacing(s), labels(static_cast<std::size_t>(voxel_count(d)), 0) {}

    std::size_t size() const { return labels.size(); }
    std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return static_cast<std::size_t>(x + dims[0] * (y + dims[1] * z));
    }
};

enum class Modality { t1, t1ce, t2, flair };

inline constexpr std::array<Modality, 4> kModalities{Modality::t1, Modality::t1ce, Modality::t2,
                                                     Modality::flair};

inline std::string modality_suffix(Modality m) {
    switch (m) {
    case Modality::t1: return "t1";
    case Modality::t1ce: return "t1ce";
    case Modality::t2: return "t2";
    case Modality::flair: return "flair";
    }
    return "";
}

inline Modality parse_modality(const std::string& name) {
    for (Modality m : kModalities)
        if (modality_suffix(m) == name) return m;
    fail(ErrorKind::config, "unknown modality '" + name + "'");
}

struct MultiModalCase {
    std::string case_id;
    std::map<Modality, Volume> modalities;
    std::optional<SegmentationMask> label;

    const Volume& modality(Modality m) const {
        const auto it = modalities.find(m);
        require(it != modalities.end(), ErrorKind::missing_file,
                "case " + case_id + " has no " + modality_suffix(m) + " volume");
        return it->second;
    }
    const Dims3& dims() const { return modality(Modality::flair).dims(); }
    const Spacing3& spacing() const { return modality(Modality::flair).spacing(); }
};

namespace detail {

template <typename T>
T load_scalar(std::span<const std::uint8_t> bytes, std::size_t offset, bool swap) {
    std::array<std::uint8_t, sizeof(T)> raw{};
    std::memcpy(raw.data(), bytes.data() + offset, sizeof(T));
    if (swap) std::reverse(raw.begin(), raw.end());
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
}

template <typename T>
void store_le(std::vector<std::uint8_t>& bytes, std::size_t offset, T value) {
    std::array<std::uint8_t, sizeof(T)> raw{};
    std::memcpy(raw.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    std::memcpy(bytes.data() + offset, raw.data(), sizeof(T));
}

inline bool spacing_equal(const Spacing3& a, const Spacing3& b) {
    for (int i = 0; i < 3; ++i)
        if (std::abs(a[i] - b[i]) > 1e-6 * std::max(1.0, std::abs(a[i]))) return false;
    return true;
}

} // namespace detail

/// Decodes the 348-byte NIfTI-1 header. Byte order is inferred from
/// sizeof_hdr, which must read 348 either natively or byte-swapped.
inline VolumeHeader parse_header(std::span<const std::uint8_t> bytes) {
    using detail::load_scalar;
    require(bytes.size() >= kNiftiHeaderSize, ErrorKind::format,
            "header needs 348 bytes, got " + std::to_string(bytes.size()));

    VolumeHeader h;
    const auto native_size = load_scalar<std::int32_t>(bytes, 0, false);
    if (native_size == 348) {
        h.byte_swapped = false;
    } else if (load_scalar<std::int32_t>(bytes, 0, true) == 348) {
        h.byte_swapped = true;
    } else {
        fail(ErrorKind::format, "sizeof_hdr is not 348 in either byte order");
    }
    const bool sw = h.byte_swapped;

    const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
    if (std::memcmp(magic, "n+1\0", 4) == 0) {
        h.single_file = true;
    } else if (std::memcmp(magic, "ni1\0", 4) == 0) {
        h.single_file = false;
    } else {
        fail(ErrorKind::format, "bad NIfTI-1 magic");
    }

    const auto ndim = load_scalar<std::int16_t>(bytes, 40, sw);
    require(ndim >= 1 && ndim <= 7, ErrorKind::corrupt_header, "dim[0] = " + std::to_string(ndim));
    for (int i = 0; i < 3; ++i) {
        const std::int64_t d = i < ndim ? load_scalar<std::int16_t>(bytes, 42 + 2 * i, sw) : 1;
        require(d >= 1, ErrorKind::corrupt_header, "nonpositive dim[" + std::to_string(i + 1) + "]");
        h.dims[static_cast<std::size_t>(i)] = d;
    }
    for (int i = 3; i < ndim; ++i) {
        const auto d = load_scalar<std::int16_t>(bytes, 42 + 2 * i, sw);
        require(d >= 1, ErrorKind::corrupt_header, "nonpositive dim[" + std::to_string(i + 1) + "]");
        require(d == 1, ErrorKind::unsupported_type, "only 3-D volumes are supported");
    }

    const auto code = load_scalar<std::int16_t>(bytes, 70, sw);
    switch (code) {
    case 2: h.datatype = Datatype::uint8; break;
    case 4: h.datatype = Datatype::int16; break;
    case 16: h.datatype = Datatype::float32; break;
    default: fail(ErrorKind::unsupported_type, "datatype code " + std::to_string(code));
    }

    for (int i = 0; i < 3; ++i) {
        const double s = load_scalar<float>(bytes, 80 + 4 * static_cast<std::size_t>(i), sw);
        require(std::isfinite(s) && s > 0.0, ErrorKind::corrupt_header,
                "nonpositive spacing pixdim[" + std::to_string(i + 1) + "]");
        h.spacing[static_cast<std::size_t>(i)] = s;
    }

    const float offset = load_scalar<float>(bytes, 108, sw);
    require(std::isfinite(offset) && offset >= 0.0f, ErrorKind::corrupt_header, "bad vox_offset");
    h.vox_offset = static_cast<std::int64_t>(offset);
    if (h.single_file)
        require(h.vox_offset >= kNiftiDataOffset, ErrorKind::corrupt_header,
                "vox_offset " + std::to_string(h.vox_offset) + " < 352");

    h.scl_slope = load_scalar<float>(bytes, 112, sw);
    h.scl_inter = load_scalar<float>(bytes, 116, sw);
    if (!std::isfinite(h.scl_slope)) h.scl_slope = 0.0f;
    if (!std::isfinite(h.scl_inter)) h.scl_inter = 0.0f;
    return h;
}

/// Decodes a complete single-file NIfTI-1 image. Stored values are scaled by
/// scl_slope (0 means 1) and offset by scl_inter.
inline Volume read_volume(std::span<const std::uint8_t> bytes) {
    Volume v;
    v.header = parse_header(bytes);
    require(v.header.single_file, ErrorKind::format, "two-file (ni1) images are not supported");

    const auto n = static_cast<std::size_t>(voxel_count(v.header.dims));
    const std::size_t width = bytes_per_voxel(v.header.datatype);
    const auto offset = static_cast<std::size_t>(v.header.vox_offset);
    require(bytes.size() >= offset && bytes.size() - offset >= n * width, ErrorKind::io,
            "truncated payload: need " + std::to_string(n * width) + " bytes after offset " +
                std::to_string(offset));

    const double slope = v.header.scl_slope == 0.0f ? 1.0 : v.header.scl_slope;
    const double inter = v.header.scl_inter;
    const bool sw = v.header.byte_swapped;
    v.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double raw = 0.0;
        switch (v.header.datatype) {
        case Datatype::uint8: raw = bytes[offset + i]; break;
        case Datatype::int16: raw = detail::load_scalar<std::int16_t>(bytes, offset + 2 * i, sw); break;
        case Datatype::float32: raw = detail::load_scalar<float>(bytes, offset + 4 * i, sw); break;
        }
        const auto value = static_cast<float>(raw * slope + inter);
        require(std::isfinite(value), ErrorKind::validation, "non-finite voxel value at index " + std::to_string(i));
        v.data[i] = value;
    }
    return v;
}

inline void validate_volume(const Volume& v) {
    for (std::size_t i = 0; i < 3; ++i) {
        require(v.header.dims[i] >= 1 && v.header.dims[i] <= INT16_MAX, ErrorKind::validation,
                "dimension out of NIfTI-1 range");
        require(std::isfinite(v.header.spacing[i]) && v.header.spacing[i] > 0.0, ErrorKind::validation,
                "spacing must be positive");
    }
    require(v.data.size() == static_cast<std::size_t>(voxel_count(v.header.dims)), ErrorKind::validation,
            "data length does not match dims");
    for (std::size_t i = 0; i < v.data.size(); ++i)
        require(std::isfinite(v.data[i]), ErrorKind::validation, "non-finite value at index " + std::to_string(i));
}

inline std::vector<std::uint8_t> write_volume(const Volume& v) {
    using detail::store_le;
    validate_volume(v);
    const std::size_t n = v.data.size();
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(kNiftiDataOffset) + 4 * n, 0);

    store_le<std::int32_t>(bytes, 0, 348);
    bytes[38] = 'r';
    store_le<std::int16_t>(bytes, 40, 3);
    for (std::size_t i = 0; i < 3; ++i)
        store_le<std::int16_t>(bytes, 42 + 2 * i, static_cast<std::int16_t>(v.header.dims[i]));
    for (std::size_t i = 3; i < 7; ++i) store_le<std::int16_t>(bytes, 42 + 2 * i, 1);
    store_le<std::int16_t>(bytes, 70, static_cast<std::int16_t>(Datatype::float32));
    store_le<std::int16_t>(bytes, 72, 32);
    store_le<float>(bytes, 76, 1.0f);
    for (std::size_t i = 0; i < 3; ++i)
        store_le<float>(bytes, 80 + 4 * i, static_cast<float>(v.header.spacing[i]));
    store_le<float>(bytes, 108, static_cast<float>(kNiftiDataOffset));
    store_le<float>(bytes, 112, 1.0f);
    store_le<float>(bytes, 116, 0.0f);
    bytes[123] = 2; // xyzt_units: millimetres
    std::memcpy(bytes.data() + 344, "n+1\0", 4);

    for (std::size_t i = 0; i < n; ++i)
        store_le<float>(bytes, static_cast<std::size_t>(kNiftiDataOffset) + 4 * i, v.data[i]);
    return bytes;
}

inline Volume mask_to_volume(const SegmentationMask& m) {
    Volume v(m.dims, m.spacing);
    for (std::size_t i = 0; i < m.labels.size(); ++i) v.data[i] = static_cast<float>(m.labels[i]);
    return v;
}

/// Converts a decoded label image to a mask, validating closure over
/// {0,1,2,3}. Legacy label 4 becomes 3 when `remap_legacy_et` is set.
inline SegmentationMask volume_to_mask(const Volume& v, bool remap_legacy_et = true) {
    SegmentationMask m(v.dims(), v.spacing());
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        const float value = v.data[i];
        const float rounded = std::round(value);
        require(rounded == value, ErrorKind::label, "non-integer label value " + format_double(value));
        if (rounded == 4.0f && remap_legacy_et) {
            m.labels[i] = 3;
            continue;
        }
        require(rounded >= 0.0f && rounded <= 3.0f, ErrorKind::label,
                "label value " + format_double(value) + " outside {0,1,2,3}");
        m.labels[i] = static_cast<std::uint8_t>(rounded);
    }
    return m;
}

inline bool is_gzip_path(const fs::path& path) { return path.extension() == ".gz"; }

inline std::vector<std::uint8_t> read_image_bytes(const fs::path& path) {
    if (!is_gzip_path(path)) return read_file_bytes(path);
#ifdef GLIOMAFORGE_WITH_ZLIB
    require(fs::exists(path), ErrorKind::missing_file, "cannot open " + path.string());
    gzFile file = gzopen(path.string().c_str(), "rb");
    require(file != nullptr, ErrorKind::io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes;
    std::array<std::uint8_t, 1 << 16> chunk{};
    while (true) {
        const int got = gzread(file, chunk.data(), static_cast<unsigned>(chunk.size()));
        if (got < 0) {
            gzclose(file);
            fail(ErrorKind::io, "decompression failed for " + path.string());
        }
        if (got == 0) break;
        bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + got);
    }
    gzclose(file);
    return bytes;
#else
    fail(ErrorKind::unsupported_type, path.string() + " is compressed; decompress it first (built without zlib)");
#endif
}

inline Volume load_volume(const fs::path& path) { return read_volume(read_image_bytes(path)); }

inline void save_volume(const fs::path& path, const Volume& v) { write_file_atomic(path, write_volume(v)); }

inline void save_mask(const fs::path& path, const SegmentationMask& m) { save_volume(path, mask_to_volume(m)); }

inline SegmentationMask load_mask(const fs::path& path, bool remap_legacy_et = true) {
    return volume_to_mask(load_volume(path), remap_legacy_et);
}

/// Locates `<case_id>-<suffix>.nii`, falling back to `.nii.gz`.
inline std::optional<fs::path> find_case_file(const fs::path& directory, const std::string& case_id,
                                              const std::string& suffix) {
    const fs::path plain = directory / (case_id + "-" + suffix + ".nii");
    if (fs::exists(plain)) return plain;
    const fs::path gz = directory / (case_id + "-" + suffix + ".nii.gz");
    if (fs::exists(gz)) return gz;
    return std::nullopt;
}

inline MultiModalCase load_case(const fs::path& directory, const std::string& case_id, bool remap_legacy_et = true) {
    MultiModalCase c;
    c.case_id = case_id;
    for (Modality m : kModalities) {
        const auto path = find_case_file(directory, case_id, modality_suffix(m));
        require(path.has_value(), ErrorKind::missing_file,
                "case " + case_id + ": missing " + modality_suffix(m) + " volume in " + directory.string());
        c.modalities.emplace(m, load_volume(*path));
    }
    const Volume& ref = c.modalities.at(Modality::t1);
    for (const auto& [m, v] : c.modalities) {
        require(v.dims() == ref.dims(), ErrorKind::alignment,
                "case " + case_id + ": " + modality_suffix(m) + " dims differ from t1");
        require(detail::spacing_equal(v.spacing(), ref.spacing()), ErrorKind::alignment,
                "case " + case_id + ": " + modality_suffix(m) + " spacing differs from t1");
    }
    if (const auto seg = find_case_file(directory, case_id, "seg")) {
        SegmentationMask mask = load_mask(*seg, remap_legacy_et);
        require(mask.dims == ref.dims(), ErrorKind::alignment, "case " + case_id + ": seg dims differ");
        c.label = std::move(mask);
    }
    return c;
}

inline void save_case(const fs::path& directory, const MultiModalCase& c) {
    for (const auto& [m, v] : c.modalities)
        save_volume(directory / (c.case_id + "-" + modality_suffix(m) + ".nii"), v);
    if (c.label) save_mask(directory / (c.case_id + "-seg.nii"), *c.label);
}

/// Case ids present in a directory, identified by their FLAIR file. Sorted.
inline std::vector<std::string> discover_cases(const fs::path& directory) {
    require(fs::is_directory(directory), ErrorKind::missing_file, directory.string() + " is not a directory");
    std::set<std::string> ids;
    for (const auto& entry : fs::directory_iterator(directory)) {
        const std::string name = entry.path().filename().string();
        for (const std::string tail : {"-flair.nii", "-flair.nii.gz"}) {
            if (name.size() > tail.size() && name.compare(name.size() - tail.size(), tail.size(), tail) == 0)
                ids.insert(name.substr(0, name.size() - tail.size()));
        }
    }
    return {ids.begin(), ids.end()};
}

} // namespace gliomaforge
