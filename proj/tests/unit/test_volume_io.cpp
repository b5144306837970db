#include <gtest/gtest.h>

#include "gliomaforge/random.hpp"
#include "gliomaforge/volume_io.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"

using namespace gliomaforge;

namespace {

Volume random_volume(std::uint64_t seed) {
    Rng rng(seed);
    Volume v({static_cast<std::int64_t>(1 + rng.below(9)), static_cast<std::int64_t>(1 + rng.below(9)),
              static_cast<std::int64_t>(1 + rng.below(9))},
             {0.25 + rng.uniform() * 3, 0.25 + rng.uniform() * 3, 0.25 + rng.uniform() * 3});
    for (auto& x : v.data) x = static_cast<float>(rng.normal(0, 1000));
    return v;
}

} // namespace

TEST(ParseHeader, DecodesHandBuiltHeader) {
    oracle::NiftiSpec s;
    s.spacing = {1.0f, 1.0f, 1.0f};
    const auto bytes = oracle::nifti_bytes(s, std::vector<double>(64, 0.0));
    const VolumeHeader h = parse_header(bytes);
    EXPECT_EQ(h.dims, (Dims3{4, 4, 4}));
    EXPECT_EQ(h.datatype, Datatype::float32);
    EXPECT_EQ(h.spacing, (Spacing3{1.0, 1.0, 1.0}));
    EXPECT_FALSE(h.byte_swapped);
    EXPECT_EQ(h.vox_offset, 352);
}

TEST(ParseHeader, ByteSwappedHeaderMatches) {
    oracle::NiftiSpec s;
    s.dims = {5, 3, 2};
    s.spacing = {0.5f, 1.5f, 2.0f};
    s.datatype = 4;
    s.slope = 2.0f;
    s.inter = -3.0f;
    const auto little = parse_header(oracle::nifti_bytes(s, std::vector<double>(30, 0.0)));
    s.big_endian = true;
    const auto big = parse_header(oracle::nifti_bytes(s, std::vector<double>(30, 0.0)));
    EXPECT_NE(little.byte_swapped, big.byte_swapped);
    EXPECT_EQ(little.dims, big.dims);
    EXPECT_EQ(little.spacing, big.spacing);
    EXPECT_EQ(little.datatype, big.datatype);
    EXPECT_EQ(little.scl_slope, big.scl_slope);
    EXPECT_EQ(little.scl_inter, big.scl_inter);
}

TEST(ParseHeader, RejectsFloat64) {
    oracle::NiftiSpec s;
    s.datatype = 64;
    EXPECT_ERROR_KIND(parse_header(oracle::nifti_bytes(s, std::vector<double>(64, 0.0))), ErrorKind::unsupported_type);
}

TEST(ParseHeader, RejectsBadMagic) {
    oracle::NiftiSpec s;
    s.magic = std::string("n+2\0", 4);
    EXPECT_ERROR_KIND(parse_header(oracle::nifti_bytes(s, std::vector<double>(64, 0.0))), ErrorKind::format);
}

TEST(ParseHeader, AcceptsTwoFileMagic) {
    oracle::NiftiSpec s;
    s.magic = std::string("ni1\0", 4);
    EXPECT_FALSE(parse_header(oracle::nifti_bytes(s, std::vector<double>(64, 0.0))).single_file);
}

TEST(ParseHeader, RejectsNonpositiveDims) {
    oracle::NiftiSpec s;
    s.dims = {4, 0, 4};
    EXPECT_ERROR_KIND(parse_header(oracle::nifti_bytes(s, {})), ErrorKind::corrupt_header);
    s.dims = {4, -2, 4};
    EXPECT_ERROR_KIND(parse_header(oracle::nifti_bytes(s, {})), ErrorKind::corrupt_header);
}

TEST(ParseHeader, RejectsShortBuffer) {
    std::vector<std::uint8_t> bytes(100, 0);
    EXPECT_ERROR_KIND(parse_header(bytes), ErrorKind::format);
}

TEST(ReadVolume, AppliesSlopeAndIntercept) {
    oracle::NiftiSpec s;
    s.datatype = 2;
    s.slope = 2.0f;
    s.inter = 1.0f;
    std::vector<double> raw(64);
    for (int i = 0; i < 64; ++i) raw[static_cast<std::size_t>(i)] = i;
    const Volume v = read_volume(oracle::nifti_bytes(s, raw));
    for (int i = 0; i < 64; ++i) EXPECT_EQ(v.data[static_cast<std::size_t>(i)], 2.0f * static_cast<float>(i) + 1.0f);
    EXPECT_EQ(v.data.back(), 127.0f);
}

TEST(ReadVolume, ZeroSlopeMeansOne) {
    oracle::NiftiSpec s;
    s.datatype = 4;
    s.slope = 0.0f;
    s.inter = 5.0f;
    std::vector<double> raw(64, -7.0);
    const Volume v = read_volume(oracle::nifti_bytes(s, raw));
    EXPECT_EQ(v.data[0], -2.0f);
}

TEST(ReadVolume, Int16BigEndianMatchesLittleEndian) {
    oracle::NiftiSpec s;
    s.datatype = 4;
    std::vector<double> raw(64);
    for (int i = 0; i < 64; ++i) raw[static_cast<std::size_t>(i)] = (i - 32) * 997;
    const Volume a = read_volume(oracle::nifti_bytes(s, raw));
    s.big_endian = true;
    const Volume b = read_volume(oracle::nifti_bytes(s, raw));
    EXPECT_EQ(a.data, b.data);
    EXPECT_EQ(a.data[0], -32.0f * 997.0f);
}

TEST(ReadVolume, TruncatedPayloadIsIoError) {
    oracle::NiftiSpec s;
    auto bytes = oracle::nifti_bytes(s, std::vector<double>(64, 1.0));
    bytes.pop_back();
    EXPECT_ERROR_KIND(read_volume(bytes), ErrorKind::io);
}

TEST(WriteVolume, ZeroCubeSize) {
    const Volume v({2, 2, 2}, {1, 1, 1});
    EXPECT_EQ(write_volume(v).size(), 352u + 32u);
}

TEST(WriteVolume, RejectsNonFinite) {
    Volume v({2, 2, 2}, {1, 1, 1});
    v.data[3] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_ERROR_KIND(write_volume(v), ErrorKind::validation);
    v.data[3] = std::numeric_limits<float>::infinity();
    EXPECT_ERROR_KIND(write_volume(v), ErrorKind::validation);
}

TEST(WriteVolume, CanonicalHeader) {
    Volume v({3, 2, 1}, {0.5, 1, 2});
    const auto h = parse_header(write_volume(v));
    EXPECT_EQ(h.datatype, Datatype::float32);
    EXPECT_EQ(h.scl_slope, 1.0f);
    EXPECT_EQ(h.scl_inter, 0.0f);
    EXPECT_EQ(h.vox_offset, 352);
}

// Property: read(write(v)) reproduces data and geometry exactly.
TEST(VolumeRoundTrip, RandomVolumesBitExact) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Volume v = random_volume(seed);
        const Volume back = read_volume(write_volume(v));
        ASSERT_EQ(back.dims(), v.dims()) << seed;
        for (std::size_t i = 0; i < 3; ++i) ASSERT_EQ(static_cast<float>(back.spacing()[i]), static_cast<float>(v.spacing()[i]));
        ASSERT_EQ(0, std::memcmp(back.data.data(), v.data.data(), v.data.size() * sizeof(float))) << seed;
    }
}

// Property: a byte-swapped copy of any float32 file decodes identically.
TEST(VolumeRoundTrip, ByteSwappedFloatFilesDecodeIdentically) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Volume v = random_volume(seed + 1000);
        oracle::NiftiSpec s;
        s.dims = {static_cast<std::int16_t>(v.dims()[0]), static_cast<std::int16_t>(v.dims()[1]),
                  static_cast<std::int16_t>(v.dims()[2])};
        s.spacing = {static_cast<float>(v.spacing()[0]), static_cast<float>(v.spacing()[1]), static_cast<float>(v.spacing()[2])};
        std::vector<double> raw(v.data.begin(), v.data.end());
        s.big_endian = true;
        const Volume big = read_volume(oracle::nifti_bytes(s, raw));
        EXPECT_TRUE(big.header.byte_swapped);
        EXPECT_EQ(big.data, v.data);
        EXPECT_EQ(big.dims(), v.dims());
    }
}

TEST(Masks, LegacyLabelRemap) {
    Volume v({2, 1, 1}, {1, 1, 1});
    v.data = {4.0f, 2.0f};
    EXPECT_EQ(volume_to_mask(v, true).labels, (std::vector<std::uint8_t>{3, 2}));
    EXPECT_ERROR_KIND(volume_to_mask(v, false), ErrorKind::label);
    v.data = {0.5f, 0.0f};
    EXPECT_ERROR_KIND(volume_to_mask(v), ErrorKind::label);
    v.data = {-1.0f, 0.0f};
    EXPECT_ERROR_KIND(volume_to_mask(v), ErrorKind::label);
}

class CaseDirectory : public ::testing::Test {
protected:
    oracle::TempDir dir;

    void write_modalities(const std::string& id, Dims3 dims, Dims3 t2_dims) {
        for (Modality m : kModalities) {
            Volume v(m == Modality::t2 ? t2_dims : dims, {1, 1, 1}, 1.0f);
            save_volume(dir / (id + "-" + modality_suffix(m) + ".nii"), v);
        }
    }
};

TEST_F(CaseDirectory, LoadsAlignedCaseWithoutLabel) {
    write_modalities("a", {4, 4, 4}, {4, 4, 4});
    const MultiModalCase c = load_case(dir.path(), "a");
    EXPECT_EQ(c.modalities.size(), 4u);
    EXPECT_FALSE(c.label.has_value());
    EXPECT_EQ(discover_cases(dir.path()), std::vector<std::string>{"a"});
}

TEST_F(CaseDirectory, RemapsLegacyEnhancingLabel) {
    write_modalities("a", {2, 2, 2}, {2, 2, 2});
    Volume seg({2, 2, 2}, {1, 1, 1});
    seg.data[0] = 4.0f;
    seg.data[1] = 1.0f;
    save_volume(dir / "a-seg.nii", seg);
    const MultiModalCase c = load_case(dir.path(), "a");
    ASSERT_TRUE(c.label.has_value());
    EXPECT_EQ(c.label->labels[0], 3);
    EXPECT_EQ(c.label->labels[1], 1);
    EXPECT_ERROR_KIND(load_case(dir.path(), "a", false), ErrorKind::label);
}

TEST_F(CaseDirectory, MismatchedDimsIsAlignmentError) {
    write_modalities("a", {4, 4, 4}, {4, 4, 5});
    EXPECT_ERROR_KIND(load_case(dir.path(), "a"), ErrorKind::alignment);
}

TEST_F(CaseDirectory, MissingModalityIsMissingFileError) {
    write_modalities("a", {2, 2, 2}, {2, 2, 2});
    fs::remove(dir / "a-t1ce.nii");
    EXPECT_ERROR_KIND(load_case(dir.path(), "a"), ErrorKind::missing_file);
}

TEST_F(CaseDirectory, SaveCaseRoundTrip) {
    MultiModalCase c;
    c.case_id = "x";
    for (Modality m : kModalities) {
        Volume v({3, 2, 2}, {1, 1, 2});
        for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<float>(i) + static_cast<float>(m);
        c.modalities.emplace(m, v);
    }
    c.label = SegmentationMask({3, 2, 2}, {1, 1, 2});
    c.label->labels[5] = 2;
    save_case(dir.path(), c);
    const MultiModalCase back = load_case(dir.path(), "x");
    for (Modality m : kModalities) EXPECT_EQ(back.modality(m).data, c.modality(m).data);
    EXPECT_EQ(back.label->labels, c.label->labels);
}

#ifdef GLIOMAFORGE_WITH_ZLIB
TEST_F(CaseDirectory, ReadsGzipCompressedFiles) {
    Volume v({3, 3, 3}, {1, 1, 1});
    for (std::size_t i = 0; i < v.size(); ++i) v.data[i] = static_cast<float>(i);
    const auto raw = write_volume(v);
    const fs::path plain = dir / "v.nii";
    write_file_atomic(plain, raw);
    const std::string cmd = "gzip -c " + plain.string() + " > " + (dir / "v.nii.gz").string();
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_EQ(load_volume(dir / "v.nii.gz").data, v.data);
}
#endif
