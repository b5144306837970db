#include <gtest/gtest.h>

#include "gliomaforge/harmonize.hpp"
#include "gliomaforge/random.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"

using namespace gliomaforge;

namespace {

Volume line_volume(const std::vector<float>& values) {
    Volume v({static_cast<std::int64_t>(values.size()), 1, 1}, {1, 1, 1});
    v.data = values;
    return v;
}

Volume lognormal_volume(std::uint64_t seed, Dims3 dims, double mu, double sigma, double scale, double shift,
                        double background_fraction = 0.2) {
    Rng rng(seed);
    Volume v(dims, {1, 1, 1});
    for (auto& x : v.data) {
        if (rng.uniform() < background_fraction) continue;
        x = static_cast<float>(scale * std::exp(rng.normal(mu, sigma)) + shift);
    }
    return v;
}

std::vector<double> foreground(const Volume& v) {
    std::vector<double> out;
    for (float x : v.data)
        if (x != 0.0f) out.push_back(x);
    return out;
}

} // namespace

TEST(BuildCdf, SortsMaskedValues) {
    const std::vector<float> values{3, 1, 2};
    const std::vector<std::uint8_t> mask{1, 1, 1};
    EXPECT_EQ(build_cdf(values, mask).sorted_values(), (std::vector<double>{1, 2, 3}));
}

TEST(BuildCdf, ExcludesZeroBackground) {
    const EmpiricalCDF cdf = build_cdf(line_volume({0, 5, 0, 7, 0}));
    EXPECT_EQ(cdf.sorted_values(), (std::vector<double>{5, 7}));
}

TEST(BuildCdf, EmptyMaskIsEmptyForegroundError) {
    EXPECT_ERROR_KIND(build_cdf(line_volume({0, 0, 0})), ErrorKind::empty_foreground);
}

TEST(BuildCdf, MedianEvaluatesToHalf) {
    Rng rng(4);
    std::vector<double> samples(10000);
    for (auto& s : samples) s = rng.normal(10, 3);
    const EmpiricalCDF cdf(samples);
    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    const double median = 0.5 * (sorted[4999] + sorted[5000]);
    EXPECT_NEAR(cdf.evaluate(median), 0.5, 1.0 / 10000);
}

TEST(BuildCdf, MidpointPlottingPositions) {
    const EmpiricalCDF cdf(std::vector<double>{10, 20, 30, 40});
    EXPECT_DOUBLE_EQ(cdf.evaluate(10), 0.125);
    EXPECT_DOUBLE_EQ(cdf.evaluate(40), 0.875);
    EXPECT_DOUBLE_EQ(cdf.quantile(0.125), 10);
    EXPECT_DOUBLE_EQ(cdf.quantile(0.375), 20);
    EXPECT_DOUBLE_EQ(cdf.quantile(0.0), 10);
    EXPECT_DOUBLE_EQ(cdf.quantile(1.0), 40);
    EXPECT_DOUBLE_EQ(cdf.evaluate(5), 0.0);
    EXPECT_DOUBLE_EQ(cdf.evaluate(50), 1.0);
}

TEST(MatchHistogram, RankMatchingOracle) {
    const Volume out = match_histogram(line_volume({1, 2, 3, 4}), build_cdf(line_volume({10, 20, 30, 40})), 256);
    const std::vector<float> expected{10, 20, 30, 40};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(out.data[i], expected[i], 1e-4);
}

TEST(MatchHistogram, ConstantSourceMapsToReferenceMedian) {
    const Volume ref = line_volume({1, 2, 3, 4, 100});
    const Volume out = match_histogram(line_volume({7, 7, 0, 7}), build_cdf(ref), 256);
    EXPECT_EQ(out.data[0], 3.0f);
    EXPECT_EQ(out.data[1], 3.0f);
    EXPECT_EQ(out.data[2], 0.0f);
    EXPECT_EQ(out.data[3], 3.0f);
}

TEST(MatchHistogram, SelfMatchIsIdentity) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Volume v = lognormal_volume(seed, {20, 20, 20}, 4.0, 0.6, 1.0, 0.0);
        const Volume out = match_histogram(v, build_cdf(v), 256);
        for (std::size_t i = 0; i < v.size(); ++i)
            ASSERT_NEAR(out.data[i], v.data[i], 1e-6 * std::max(1.0f, std::abs(v.data[i])));
    }
}

TEST(MatchHistogram, BackgroundUntouched) {
    const Volume v = lognormal_volume(3, {10, 10, 10}, 2.0, 0.5, 1.0, 0.0, 0.5);
    const Volume ref = lognormal_volume(4, {10, 10, 10}, 5.0, 0.5, 1.0, 0.0);
    const Volume out = match_histogram(v, build_cdf(ref));
    for (std::size_t i = 0; i < v.size(); ++i)
        if (v.data[i] == 0.0f) {
            EXPECT_EQ(out.data[i], 0.0f);
        }
}

TEST(MatchHistogram, RejectsTooFewQuantiles) {
    const Volume v = line_volume({1, 2, 3});
    EXPECT_ERROR_KIND(match_histogram(v, build_cdf(v), 1), ErrorKind::config);
}

// Property: x1 <= x2 implies M(x1) <= M(x2).
TEST(MatchHistogram, MappingIsMonotone) {
    const Volume src = lognormal_volume(10, {16, 16, 16}, 3.0, 0.7, 2.0, 5.0);
    const Volume ref = lognormal_volume(11, {16, 16, 16}, 4.5, 0.3, 1.0, 0.0);
    const HarmonizationMapping m(build_cdf(src), build_cdf(ref), 256);
    Rng rng(12);
    for (int i = 0; i < 100000; ++i) {
        double a = rng.uniform(-50, 500), b = rng.uniform(-50, 500);
        if (a > b) std::swap(a, b);
        ASSERT_LE(m(a), m(b)) << a << " " << b;
    }
}

TEST(MatchHistogram, KnotsAreNondecreasing) {
    const Volume src = lognormal_volume(20, {12, 12, 12}, 3.0, 0.7, 2.0, 5.0);
    const Volume ref = lognormal_volume(21, {12, 12, 12}, 4.5, 0.3, 1.0, 0.0);
    const HarmonizationMapping m(build_cdf(src), build_cdf(ref), 256);
    EXPECT_TRUE(std::is_sorted(m.source_knots().begin(), m.source_knots().end()));
    EXPECT_TRUE(std::is_sorted(m.reference_knots().begin(), m.reference_knots().end()));
    EXPECT_EQ(m.source_knots().size(), m.reference_knots().size());
}

// Property: KS(harmonized, reference) <= 0.02 for n >= 1e4 and Q >= 256.
TEST(MatchHistogram, DistributionTransfer) {
    const Volume ref = lognormal_volume(30, {32, 32, 32}, 4.0, 0.4, 1.0, 0.0);
    const Volume src = lognormal_volume(31, {32, 32, 32}, 3.0, 0.6, 1.7, 25.0);
    const Volume out = match_histogram(src, build_cdf(ref), 256);
    const double before = oracle::ks_oracle(foreground(src), foreground(ref));
    const double after = oracle::ks_oracle(foreground(out), foreground(ref));
    EXPECT_GT(before, 0.1);
    EXPECT_LE(after, 0.02);
    EXPECT_NEAR(ks_statistic(foreground(out), foreground(ref)), after, 1e-12);
}

// Property: matching twice equals matching once.
TEST(MatchHistogram, Idempotent) {
    const Volume ref = lognormal_volume(40, {16, 16, 16}, 4.0, 0.4, 1.0, 0.0);
    const Volume src = lognormal_volume(41, {16, 16, 16}, 3.0, 0.6, 1.7, 25.0);
    const EmpiricalCDF rc = build_cdf(ref);
    const Volume once = match_histogram(src, rc);
    const Volume twice = match_histogram(once, rc);
    for (std::size_t i = 0; i < once.size(); ++i)
        ASSERT_NEAR(twice.data[i], once.data[i], 1e-6 * std::max(1.0f, std::abs(once.data[i])));
}

TEST(ZScore, ClosedFormThreeValues) {
    const Volume out = zscore_normalize(line_volume({1, 2, 3, 0}));
    EXPECT_NEAR(out.data[0], -1.2247449, 1e-6);
    EXPECT_NEAR(out.data[1], 0.0, 1e-6);
    EXPECT_NEAR(out.data[2], 1.2247449, 1e-6);
    EXPECT_EQ(out.data[3], 0.0f);
}

TEST(ZScore, MomentsAndIdempotence) {
    const Volume v = lognormal_volume(50, {16, 16, 16}, 4.0, 0.5, 1.0, 0.0);
    const VoxelMask mask = foreground_mask(v);
    const Volume once = zscore_normalize(v, mask);
    double sum = 0, sq = 0, n = 0;
    for (std::size_t i = 0; i < once.size(); ++i)
        if (mask[i]) {
            sum += once.data[i];
            sq += static_cast<double>(once.data[i]) * once.data[i];
            n += 1;
        }
    const double mean = sum / n;
    EXPECT_LE(std::abs(mean), 1e-6);
    EXPECT_LE(std::abs(std::sqrt(sq / n - mean * mean) - 1.0), 1e-6);
    const Volume twice = zscore_normalize(once, mask);
    for (std::size_t i = 0; i < once.size(); ++i) ASSERT_NEAR(twice.data[i], once.data[i], 1e-6);
}

TEST(ZScore, ConstantForegroundIsDegenerate) {
    EXPECT_ERROR_KIND(zscore_normalize(line_volume({5, 5, 5})), ErrorKind::degenerate_input);
}

TEST(ZScore, SingleVoxelIsInsufficient) {
    EXPECT_ERROR_KIND(zscore_normalize(line_volume({5, 0, 0})), ErrorKind::insufficient_data);
}
