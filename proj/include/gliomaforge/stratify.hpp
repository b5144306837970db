#pragma once

// Feature standardization, PCA, k-means and cluster-stratified folds.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gliomaforge/error.hpp"
#include "gliomaforge/random.hpp"
#include "gliomaforge/util.hpp"

namespace gliomaforge {

struct FeatureMatrix {
    std::vector<std::string> case_ids;
    std::vector<std::string> columns;
    Eigen::MatrixXd values; // rows = cases

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
};

struct Standardized {
    FeatureMatrix matrix;
    Eigen::VectorXd means;
    Eigen::VectorXd stds;
    std::vector<std::string> warnings; // one per zero-variance column
};

/// Column-wise z-scores with population std. Constant columns become zeros
/// and are reported in `warnings`.
inline Standardized standardize(const FeatureMatrix& m) {
    require(m.rows() >= 2, ErrorKind::insufficient_data, "standardize needs at least 2 rows");
    require(m.values.allFinite(), ErrorKind::validation, "feature matrix has non-finite entries");
    Standardized out;
    out.matrix = m;
    const auto n = static_cast<double>(m.rows());
    out.means = m.values.colwise().mean();
    out.stds.resize(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const Eigen::VectorXd centered = m.values.col(c).array() - out.means(c);
        const double sd = std::sqrt(centered.squaredNorm() / n);
        out.stds(c) = sd;
        if (sd > 0.0) {
            out.matrix.values.col(c) = centered / sd;
        } else {
            out.matrix.values.col(c).setZero();
            const std::string name = c < static_cast<Eigen::Index>(m.columns.size())
                                         ? m.columns[static_cast<std::size_t>(c)]
                                         : std::to_string(c);
            out.warnings.push_back("column '" + name + "' has zero variance; set to 0");
        }
    }
    return out;
}

struct PCAModel {
    Eigen::VectorXd means;             // d
    Eigen::MatrixXd components;        // d x m, orthonormal columns
    Eigen::VectorXd explained_variance_ratio; // m, descending
};

struct PCAResult {
    PCAModel model;
    FeatureMatrix projected;
};

/// PCA through a thin SVD of the centered data. Each component is signed so
/// its largest-magnitude entry is positive.
inline PCAResult pca_fit_transform(const FeatureMatrix& m, int components = 10) {
    const Eigen::Index n = m.rows(), d = m.cols();
    require(components >= 1 && components <= std::min<Eigen::Index>(n - 1, d), ErrorKind::config,
            "PCA components " + std::to_string(components) + " exceed min(n-1, d) = " +
                std::to_string(std::min<Eigen::Index>(n - 1, d)));

    PCAResult result;
    result.model.means = m.values.colwise().mean();
    const Eigen::MatrixXd centered = m.values.rowwise() - result.model.means.transpose();

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    const double total = sv.squaredNorm();

    Eigen::MatrixXd basis = svd.matrixV().leftCols(components);
    for (Eigen::Index c = 0; c < components; ++c) {
        Eigen::Index arg = 0;
        for (Eigen::Index r = 1; r < d; ++r)
            if (std::abs(basis(r, c)) > std::abs(basis(arg, c))) arg = r;
        if (basis(arg, c) < 0.0) basis.col(c) *= -1.0;
    }
    result.model.components = basis;
    result.model.explained_variance_ratio.resize(components);
    for (Eigen::Index c = 0; c < components; ++c)
        result.model.explained_variance_ratio(c) = total > 0.0 ? sv(c) * sv(c) / total : 0.0;

    result.projected.case_ids = m.case_ids;
    for (int c = 0; c < components; ++c) result.projected.columns.push_back("pc" + std::to_string(c + 1));
    result.projected.values = centered * basis;
    return result;
}

struct KMeansResult {
    std::vector<int> labels;
    Eigen::MatrixXd centroids;        // k x d
    std::vector<double> wcss_history; // objective after each Lloyd iteration
    int iterations = 0;

    double wcss() const { return wcss_history.empty() ? 0.0 : wcss_history.back(); }
};

namespace detail {

inline double squared_distance(const Eigen::MatrixXd& a, Eigen::Index i, const Eigen::MatrixXd& b, Eigen::Index j) {
    return (a.row(i) - b.row(j)).squaredNorm();
}

} // namespace detail

/// Lloyd's algorithm from k-means++ seeding. Stops when assignments repeat
/// or after `max_iterations`. Cluster ids are renumbered by first appearance
/// in row order.
inline KMeansResult kmeans(const FeatureMatrix& m, int k = 3, std::uint64_t seed = 42, int max_iterations = 300) {
    const Eigen::Index n = m.rows();
    require(k >= 1, ErrorKind::config, "k must be positive");
    require(n >= k, ErrorKind::insufficient_data,
            "k-means needs at least k=" + std::to_string(k) + " rows, got " + std::to_string(n));
    const Eigen::MatrixXd& X = m.values;
    Rng rng(seed);

    Eigen::MatrixXd centroids(k, X.cols());
    std::vector<bool> chosen(static_cast<std::size_t>(n), false);
    Eigen::Index first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    centroids.row(0) = X.row(first);
    chosen[static_cast<std::size_t>(first)] = true;
    std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& d = nearest[static_cast<std::size_t>(i)];
            d = std::min(d, detail::squared_distance(X, i, centroids, c - 1));
            total += d;
        }
        Eigen::Index pick = -1;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                acc += nearest[static_cast<std::size_t>(i)];
                if (nearest[static_cast<std::size_t>(i)] > 0.0 && acc > target) {
                    pick = i;
                    break;
                }
            }
            if (pick < 0)
                for (Eigen::Index i = n - 1; i >= 0; --i)
                    if (nearest[static_cast<std::size_t>(i)] > 0.0) {
                        pick = i;
                        break;
                    }
        } else {
            // Every remaining point coincides with a centroid.
            std::vector<Eigen::Index> free;
            for (Eigen::Index i = 0; i < n; ++i)
                if (!chosen[static_cast<std::size_t>(i)]) free.push_back(i);
            pick = free[static_cast<std::size_t>(rng.below(free.size()))];
        }
        centroids.row(c) = X.row(pick);
        chosen[static_cast<std::size_t>(pick)] = true;
    }

    KMeansResult result;
    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    for (int iter = 0; iter < max_iterations; ++iter) {
        std::vector<int> next(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            int best = 0;
            double best_d = detail::squared_distance(X, i, centroids, 0);
            for (int c = 1; c < k; ++c) {
                const double d = detail::squared_distance(X, i, centroids, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            next[static_cast<std::size_t>(i)] = best;
        }

        // Empty clusters take the point farthest from its own centroid.
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int l : next) ++counts[static_cast<std::size_t>(l)];
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) continue;
            Eigen::Index far = -1;
            double far_d = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                const int owner = next[static_cast<std::size_t>(i)];
                if (counts[static_cast<std::size_t>(owner)] <= 1) continue;
                const double d = detail::squared_distance(X, i, centroids, owner);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            if (far < 0) continue;
            --counts[static_cast<std::size_t>(next[static_cast<std::size_t>(far)])];
            next[static_cast<std::size_t>(far)] = c;
            counts[static_cast<std::size_t>(c)] = 1;
        }

        const bool stable = next == labels;
        labels = std::move(next);

        centroids.setZero();
        for (Eigen::Index i = 0; i < n; ++i) centroids.row(labels[static_cast<std::size_t>(i)]) += X.row(i);
        for (int c = 0; c < k; ++c)
            if (counts[static_cast<std::size_t>(c)] > 0) centroids.row(c) /= counts[static_cast<std::size_t>(c)];

        double wcss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) wcss += detail::squared_distance(X, i, centroids, labels[static_cast<std::size_t>(i)]);
        result.wcss_history.push_back(wcss);
        result.iterations = iter + 1;
        if (stable) break;
    }

    std::vector<int> remap(static_cast<std::size_t>(k), -1);
    int next_id = 0;
    for (int l : labels)
        if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = next_id++;
    for (int c = 0; c < k; ++c)
        if (remap[static_cast<std::size_t>(c)] < 0) remap[static_cast<std::size_t>(c)] = next_id++;
    result.centroids.resize(k, X.cols());
    for (int c = 0; c < k; ++c) result.centroids.row(remap[static_cast<std::size_t>(c)]) = centroids.row(c);
    result.labels.reserve(labels.size());
    for (int l : labels) result.labels.push_back(remap[static_cast<std::size_t>(l)]);
    return result;
}

struct FoldAssignment {
    std::vector<std::string> case_ids;
    std::vector<int> clusters;
    std::vector<int> folds;
};

/// Shuffles each cluster with the seeded generator and deals its members
/// round-robin across folds. The dealing position carries over between
/// clusters so overall fold sizes also stay within one of each other.
inline std::vector<int> stratified_folds(const std::vector<int>& labels, int n_folds = 5, std::uint64_t seed = 42) {
    require(n_folds >= 1, ErrorKind::config, "fold count must be positive");
    require(labels.size() >= static_cast<std::size_t>(n_folds), ErrorKind::insufficient_data,
            "stratified folds need at least " + std::to_string(n_folds) + " cases");
    std::map<int, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);

    Rng rng(seed);
    std::vector<int> folds(labels.size(), 0);
    int cursor = 0;
    for (auto& [cluster, idx] : members) {
        rng.shuffle(idx);
        for (std::size_t i : idx) {
            folds[i] = cursor;
            cursor = (cursor + 1) % n_folds;
        }
    }
    return folds;
}

inline FeatureMatrix read_feature_csv(const std::string& text) {
    const CsvTable table = parse_csv(text);
    const std::size_t id_col = table.column("case_id");
    FeatureMatrix m;
    for (std::size_t c = 0; c < table.header.size(); ++c)
        if (c != id_col) m.columns.push_back(table.header[c]);
    m.values.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(m.columns.size()));
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        m.case_ids.push_back(table.rows[r][id_col]);
        Eigen::Index col = 0;
        for (std::size_t c = 0; c < table.header.size(); ++c) {
            if (c == id_col) continue;
            const double v = parse_double(table.rows[r][c], table.header[c]);
            require(std::isfinite(v), ErrorKind::validation, "non-finite feature in row " + std::to_string(r));
            m.values(static_cast<Eigen::Index>(r), col++) = v;
        }
    }
    return m;
}

inline std::string fold_csv(const FoldAssignment& a) {
    std::string text = "case_id,cluster,fold\n";
    for (std::size_t i = 0; i < a.case_ids.size(); ++i)
        text += a.case_ids[i] + "," + std::to_string(a.clusters[i]) + "," + std::to_string(a.folds[i]) + "\n";
    return text;
}

inline FoldAssignment read_fold_csv(const std::string& text) {
    const CsvTable table = parse_csv(text);
    const std::size_t id = table.column("case_id"), cl = table.column("cluster"), fo = table.column("fold");
    FoldAssignment a;
    for (const auto& row : table.rows) {
        a.case_ids.push_back(row[id]);
        a.clusters.push_back(static_cast<int>(parse_int(row[cl], "cluster")));
        a.folds.push_back(static_cast<int>(parse_int(row[fo], "fold")));
    }
    return a;
}

struct StratifyOptions {
    int k = 3;
    int pca_components = 10;
    int folds = 5;
    std::uint64_t seed = 42;
};

struct StratifyOutcome {
    FoldAssignment assignment;
    PCAModel pca;
    KMeansResult clustering;
    std::vector<std::string> warnings;
};

/// standardize -> PCA -> k-means -> stratified folds.
inline StratifyOutcome stratify_cases(const FeatureMatrix& features, const StratifyOptions& opt) {
    StratifyOutcome out;
    Standardized z = standardize(features);
    out.warnings = z.warnings;
    PCAResult pca = pca_fit_transform(z.matrix, opt.pca_components);
    out.pca = pca.model;
    out.clustering = kmeans(pca.projected, opt.k, opt.seed);
    out.assignment.case_ids = features.case_ids;
    out.assignment.clusters = out.clustering.labels;
    out.assignment.folds = stratified_folds(out.clustering.labels, opt.folds, derive_seed(opt.seed, 0x5f01d));
    return out;
}

} // namespace gliomaforge
