#pragma once

// Quick oracle and gradient checks bundled into the binary.

#include <cmath>
#include <functional>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include "gliomaforge/gradcheck.hpp"
#include "gliomaforge/harmonize.hpp"
#include "gliomaforge/loss.hpp"
#include "gliomaforge/metrics.hpp"
#include "gliomaforge/model.hpp"
#include "gliomaforge/radiomics.hpp"
#include "gliomaforge/stratify.hpp"
#include "gliomaforge/train.hpp"
#include "gliomaforge/volume_io.hpp"

namespace gliomaforge {

struct SelfTestResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace selftest {

inline bool close(double a, double b, double tol) { return std::abs(a - b) <= tol; }

inline std::string check_nifti() {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        Volume v({static_cast<std::int64_t>(2 + rng.below(6)), static_cast<std::int64_t>(2 + rng.below(6)),
                  static_cast<std::int64_t>(2 + rng.below(6))},
                 {0.5 + rng.uniform(), 1.0, 2.0});
        for (auto& x : v.data) x = static_cast<float>(rng.normal(0, 100));
        const Volume back = read_volume(write_volume(v));
        if (back.dims() != v.dims() || back.data != v.data) return "round trip altered trial " + std::to_string(trial);
    }
    return {};
}

inline std::string check_harmonize() {
    Volume src({4, 1, 1}, {1, 1, 1});
    src.data = {1, 2, 3, 4};
    Volume ref({4, 1, 1}, {1, 1, 1});
    ref.data = {10, 20, 30, 40};
    const Volume out = match_histogram(src, build_cdf(ref), 4);
    for (std::size_t i = 0; i < 4; ++i)
        if (!close(out.data[i], ref.data[i], 1e-6)) return "rank matching oracle failed";
    Rng rng(3);
    Volume v({16, 16, 8}, {1, 1, 1});
    for (auto& x : v.data) x = static_cast<float>(std::exp(rng.normal(4, 0.5)));
    const Volume self = match_histogram(v, build_cdf(v));
    for (std::size_t i = 0; i < v.size(); ++i)
        if (!close(self.data[i], v.data[i], 1e-6 * std::max(1.0, std::abs(static_cast<double>(v.data[i])))))
            return "self match is not the identity";
    return {};
}

inline std::string check_radiomics() {
    std::vector<double> four{1, 2, 3, 4};
    const FeatureVector f = first_order_features(four, 1.0, 1.0);
    if (!close(f.mean, 2.5, 1e-12) || !close(f.variance, 1.25, 1e-12) || !close(f.energy, 30.0, 1e-12) ||
        !close(f.entropy, 2.0, 1e-12) || !close(f.uniformity, 0.25, 1e-12) || !close(f.kurtosis, 1.64, 1e-12))
        return "4-value oracle mismatch";
    std::vector<double> flat(10, 7.0);
    const FeatureVector g = first_order_features(flat, 1.0, 25.0);
    if (g.variance != 0.0 || g.skewness != 0.0 || g.kurtosis != 0.0 || g.entropy != 0.0 || g.uniformity != 1.0)
        return "constant oracle mismatch";
    return {};
}

inline std::string check_stratify() {
    FeatureMatrix m;
    Rng rng(5);
    m.values.resize(30, 2);
    const double centres[3][2] = {{0, 0}, {50, 0}, {0, 50}};
    for (int i = 0; i < 30; ++i) {
        m.case_ids.push_back("c" + std::to_string(i));
        m.values(i, 0) = centres[i / 10][0] + rng.normal();
        m.values(i, 1) = centres[i / 10][1] + rng.normal();
    }
    const KMeansResult km = kmeans(m, 3, 42);
    for (int i = 0; i < 30; ++i)
        if (km.labels[static_cast<std::size_t>(i)] != km.labels[static_cast<std::size_t>(i / 10 * 10)]) return "blobs not recovered";
    const PCAResult p = pca_fit_transform(standardize(m).matrix, 2);
    const Eigen::MatrixXd gram = p.model.components * p.model.components.transpose();
    if (!gram.isApprox(Eigen::MatrixXd::Identity(2, 2), 1e-8)) return "PCA components not orthonormal";
    return {};
}

inline std::string check_gradients_suite() {
    using D = double;
    const GradCheckOptions opt{1e-5, 1e-4, 1e-6, 0, 7};
    struct Case {
        const char* name;
        std::function<Tensor<D>(const std::vector<Tensor<D>>&)> f;
        std::vector<Tensor<D>> inputs;
    };
    std::vector<Case> cases;
    cases.push_back({"matmul", [](const auto& x) { return sum(mul(matmul(x[0], x[1]), matmul(x[0], x[1]))); },
                     {random_tensor<D>({2, 3, 4}, 1), random_tensor<D>({2, 4, 2}, 2)}});
    cases.push_back({"softmax", [](const auto& x) { return sum(mul(softmax(x[0], 1), x[1])); },
                     {random_tensor<D>({2, 5, 3}, 3), random_tensor<D>({2, 5, 3}, 4)}});
    cases.push_back({"layer_norm", [](const auto& x) { return sum(mul(layer_norm(x[0], x[1], x[2]), x[3])); },
                     {random_tensor<D>({3, 6}, 5), random_tensor<D>({6}, 6), random_tensor<D>({6}, 7), random_tensor<D>({3, 6}, 8)}});
    cases.push_back({"conv3d", [](const auto& x) { return sum(mul(conv3d(x[0], x[1], std::optional<Tensor<D>>(x[2]), ConvOptions{2, 1, 1}), x[3])); },
                     {random_tensor<D>({1, 2, 4, 4, 4}, 9), random_tensor<D>({3, 2, 3, 3, 3}, 10), random_tensor<D>({3}, 11),
                      random_tensor<D>({1, 3, 2, 2, 2}, 12)}});
    cases.push_back({"conv_transpose3d",
                     [](const auto& x) { return sum(mul(conv_transpose3d(x[0], x[1], std::optional<Tensor<D>>(x[2]), 2), x[3])); },
                     {random_tensor<D>({1, 2, 2, 2, 2}, 13), random_tensor<D>({2, 3, 2, 2, 2}, 14), random_tensor<D>({3}, 15),
                      random_tensor<D>({1, 3, 4, 4, 4}, 16)}});
    cases.push_back({"gelu_sigmoid", [](const auto& x) { return sum(mul(gelu(x[0]), sigmoid(x[0]))); },
                     {random_tensor<D>({10}, 17)}});
    const std::vector<std::uint8_t> labels{0, 1, 2, 3, 3, 2, 1, 0};
    cases.push_back({"composite_loss", [labels](const auto& x) { return composite_loss(x[0], labels); },
                     {random_tensor<D>({1, 4, 2, 2, 2}, 18)}});
    for (auto& c : cases) {
        const GradCheckResult r = check_gradients(c.f, c.inputs, opt);
        if (!r.passed) return std::string(c.name) + " relative error " + format_double(r.max_relative_error);
    }
    return {};
}

inline std::string check_loss_optimizer() {
    const Tensor<double> zeros = Tensor<double>::zeros({1, 4, 2, 2, 2});
    const std::vector<std::uint8_t> labels{0, 1, 2, 3, 0, 1, 2, 3};
    if (!close(cross_entropy(zeros, labels).item(), std::log(4.0), 1e-12)) return "uniform cross-entropy is not ln 4";
    std::vector<double> logits(32, -30.0);
    for (std::size_t i = 0; i < 8; ++i) logits[labels[i] * 8 + i] = 30.0;
    if (composite_loss(Tensor<double>::from({1, 4, 2, 2, 2}, logits), labels).item() > 1e-4) return "perfect prediction loss too large";
    double theta = 0.0, m = 0.0, v = 0.0;
    adamw_scalar(theta, 1.0, m, v, 1, 1e-4, AdamHyper{0.9, 0.999, 1e-8, 1e-5});
    if (!close(theta, -1e-4 / (1.0 + 1e-8), 1e-15)) return "first AdamW step mismatch";
    if (cosine_lr(0, 25, 1e-4) != 1e-4 || cosine_lr(25, 25, 1e-4) != 0.0) return "cosine endpoints wrong";
    return {};
}

inline std::string check_metrics() {
    const Dims3 dims{8, 8, 8};
    BinaryMask a(512, 0), b(512, 0);
    a[0] = 1;
    b[3] = 1;
    if (hd95(a, b, dims, {1, 1, 1}) != 3.0) return "hd95 of voxels 3 apart is not 3";
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        for (auto& x : a) x = rng.uniform() < 0.2;
        for (auto& x : b) x = rng.uniform() < 0.2;
        const BinaryMask ba = boundary(a, dims), bb = boundary(b, dims);
        std::vector<double> pooled;
        auto directed = [&](const BinaryMask& from, const BinaryMask& to) {
            for (std::int64_t i = 0; i < 512; ++i) {
                if (!from[static_cast<std::size_t>(i)]) continue;
                double best = std::numeric_limits<double>::infinity();
                for (std::int64_t j = 0; j < 512; ++j) {
                    if (!to[static_cast<std::size_t>(j)]) continue;
                    const double dx = static_cast<double>(i % 8 - j % 8), dy = static_cast<double>(i / 8 % 8 - j / 8 % 8),
                                 dz = static_cast<double>(i / 64 - j / 64);
                    best = std::min(best, dx * dx + dy * dy + dz * dz);
                }
                pooled.push_back(std::sqrt(best));
            }
        };
        directed(ba, bb);
        directed(bb, ba);
        if (hd95(a, b, dims, {1, 1, 1}) != percentile_linear(pooled, 95.0)) return "hd95 differs from brute force";
    }
    SegmentationMask seg(dims, {1, 1, 1});
    for (int x = 0; x < 5; ++x) seg.labels[seg.index(x, 0, 0)] = 3;
    seg.labels[seg.index(0, 5, 5)] = 3;
    const SegmentationMask kept = keep_largest_per_class(seg);
    if (kept.labels[kept.index(0, 5, 5)] != 0 || kept.labels[kept.index(4, 0, 0)] != 3) return "largest component filter wrong";
    return {};
}

inline std::string check_model_shapes() {
    ModelConfig cfg;
    cfg.stage_depths = {1, 1, 1, 1};
    const SegFormer3DPlus<float> model(cfg, 3);
    NoGradGuard guard;
    const auto trace = model.forward_traced(random_tensor<float>({1, 4, 32, 32, 32}, 1));
    for (std::size_t i = 0; i < 4; ++i)
        if (trace.pyramid[i].dim(1) != cfg.stage_channels[i]) return "pyramid channels wrong at stage " + std::to_string(i);
    if (trace.logits.shape() != Shape{1, 4, 32, 32, 32}) return "logits shape " + shape_str(trace.logits.shape());
    for (float v : trace.attention.spatial.values())
        if (!(v > 0.0f && v < 1.0f)) return "spatial attention outside (0,1)";
    for (float v : trace.attention.channel.values())
        if (!(v > 0.0f && v < 1.0f)) return "channel attention outside (0,1)";
    const auto& lo = trace.stem.low.values();
    const auto& hi = trace.stem.high.values();
    const auto& hp = trace.stem.high_path.values();
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (std::abs(lo[i] + hi[i] - hp[i]) > 1e-6f * std::max(1.0f, std::abs(hp[i]))) return "stem identity broken";
    return {};
}

} // namespace selftest

/// Runs every check, printing one PASS/FAIL line each to `out`.
inline std::vector<SelfTestResult> run_selftest(std::ostream& out) {
    const std::vector<std::pair<std::string, std::function<std::string()>>> checks{
        {"nifti_round_trip", selftest::check_nifti},
        {"histogram_matching", selftest::check_harmonize},
        {"radiomics_oracles", selftest::check_radiomics},
        {"pca_kmeans", selftest::check_stratify},
        {"gradient_checks", selftest::check_gradients_suite},
        {"loss_and_optimizer", selftest::check_loss_optimizer},
        {"metrics_oracles", selftest::check_metrics},
        {"model_shape_contract", selftest::check_model_shapes},
    };
    std::vector<SelfTestResult> results;
    for (const auto& [name, fn] : checks) {
        SelfTestResult r{name, false, {}};
        try {
            r.detail = fn();
            r.passed = r.detail.empty();
        } catch (const std::exception& e) {
            r.detail = e.what();
        }
        out << (r.passed ? "PASS " : "FAIL ") << name << (r.detail.empty() ? "" : ": " + r.detail) << "\n";
        results.push_back(r);
    }
    return results;
}

} // namespace gliomaforge
