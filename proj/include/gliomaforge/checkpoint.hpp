#pragma once

// Named-parameter checkpoints.
//
// Layout (little-endian): magic "GFCK0001", then one record per tensor:
//   u32 name length, name bytes, u32 rank, rank x i64 dims, float32 payload.

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "gliomaforge/error.hpp"
#include "gliomaforge/tensor.hpp"
#include "gliomaforge/util.hpp"

namespace gliomaforge {

inline constexpr char kCheckpointMagic[8] = {'G', 'F', 'C', 'K', '0', '0', '0', '1'};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

struct CheckpointRecord {
    Shape shape;
    std::vector<float> values;
};

namespace detail {

template <typename U>
void append_le(std::vector<std::uint8_t>& out, U v) {
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    out.insert(out.end(), raw, raw + sizeof(U));
}

template <typename U>
U take_le(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    require(pos + sizeof(U) <= in.size(), ErrorKind::checkpoint, "checkpoint truncated");
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, in.data() + pos, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    pos += sizeof(U);
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
}

} // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor<T>>& params) {
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
    for (const auto& p : params) {
        detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        detail::append_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (auto d : p.tensor.shape()) detail::append_le<std::int64_t>(out, d);
        for (T v : p.tensor.values()) detail::append_le<float>(out, static_cast<float>(v));
    }
    return out;
}

inline std::vector<std::pair<std::string, CheckpointRecord>> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    require(bytes.size() >= 8 && std::memcmp(bytes.data(), kCheckpointMagic, 8) == 0, ErrorKind::checkpoint,
            "not a GFCK0001 checkpoint");
    std::vector<std::pair<std::string, CheckpointRecord>> records;
    std::size_t pos = 8;
    while (pos < bytes.size()) {
        const auto name_len = detail::take_le<std::uint32_t>(bytes, pos);
        require(pos + name_len <= bytes.size(), ErrorKind::checkpoint, "checkpoint truncated in name");
        std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        const auto rank = detail::take_le<std::uint32_t>(bytes, pos);
        require(rank <= 8, ErrorKind::checkpoint, "implausible rank for " + name);
        CheckpointRecord rec;
        for (std::uint32_t i = 0; i < rank; ++i) {
            rec.shape.push_back(detail::take_le<std::int64_t>(bytes, pos));
            require(rec.shape.back() >= 1, ErrorKind::checkpoint, "nonpositive dim for " + name);
        }
        const auto count = static_cast<std::size_t>(shape_numel(rec.shape));
        require(pos + 4 * count <= bytes.size(), ErrorKind::checkpoint, "checkpoint truncated in " + name);
        rec.values.resize(count);
        for (auto& v : rec.values) v = detail::take_le<float>(bytes, pos);
        records.emplace_back(std::move(name), std::move(rec));
    }
    return records;
}

/// Copies checkpoint values into `params`. Names and shapes must match
/// exactly in both directions.
template <typename T>
void restore_checkpoint(const std::vector<std::uint8_t>& bytes, std::vector<NamedTensor<T>>& params) {
    const auto records = decode_checkpoint(bytes);
    std::map<std::string, const CheckpointRecord*> by_name;
    for (const auto& [name, rec] : records) by_name[name] = &rec;
    require(by_name.size() == params.size(), ErrorKind::checkpoint,
            "checkpoint holds " + std::to_string(by_name.size()) + " tensors, model expects " +
                std::to_string(params.size()));
    for (auto& p : params) {
        const auto it = by_name.find(p.name);
        require(it != by_name.end(), ErrorKind::checkpoint, "checkpoint lacks parameter " + p.name);
        require(it->second->shape == p.tensor.shape(), ErrorKind::checkpoint,
                "shape mismatch for " + p.name + ": checkpoint " + shape_str(it->second->shape) + " vs model " +
                    shape_str(p.tensor.shape()));
        auto& dst = p.tensor.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    }
}

} // namespace gliomaforge
