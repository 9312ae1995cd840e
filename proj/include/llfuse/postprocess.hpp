#pragma once

// Post-processing of fused embeddings: cosine similarity series and matrices,
// and a PCA projection backed by a cyclic Jacobi eigensolver.

#include "llfuse/common.hpp"
#include "llfuse/fusion_model.hpp"
#include "llfuse/io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace llfuse::post {

using fusion::EmbeddingFrame;

/// Cosine of the angle between a and b; nullopt when either norm is zero.
inline std::optional<double> cosine_similarity(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    const double aa = a.squaredNorm();
    const double bb = b.squaredNorm();
    if (!(aa > 0.0) || !(bb > 0.0)) return std::nullopt;
    // sqrt(aa * bb) is exact for a == b, so S(z, z) comes out as exactly 1.
    const double prod = aa * bb;
    const double norm = std::isnormal(prod) ? std::sqrt(prod) : std::sqrt(aa) * std::sqrt(bb);
    const double c = a.dot(b) / norm;
    return std::clamp(c, -1.0, 1.0);
}

struct SimilarityPoint {
    Timestamp window_end = 0;
    std::optional<double> value;
};

struct SimilaritySeries {
    std::string first;
    std::string second;
    std::vector<SimilarityPoint> points;
};

namespace detail {

inline std::map<Timestamp, const Vector*> by_date(const EmbeddingFrame& frame, const std::string& asset) {
    std::map<Timestamp, const Vector*> out;
    for (const auto& r : frame.rows)
        if (r.asset == asset) out[r.window_end] = &r.z;
    return out;
}

}  // namespace detail

/// Cosine per window end shared by both assets, chronological.
inline SimilaritySeries similarity_series(const EmbeddingFrame& frame, const std::string& first,
                                          const std::string& second) {
    const auto a = detail::by_date(frame, first);
    const auto b = detail::by_date(frame, second);
    if (a.empty()) throw std::invalid_argument("unknown asset: " + first);
    if (b.empty()) throw std::invalid_argument("unknown asset: " + second);
    SimilaritySeries s{first, second, {}};
    for (const auto& [t, za] : a) {
        const auto it = b.find(t);
        if (it == b.end()) continue;
        s.points.push_back({t, cosine_similarity(*za, *it->second)});
    }
    return s;
}

/// Header `window_end,cosine`; undefined values are left empty.
inline std::string to_csv(const SimilaritySeries& s) {
    std::string out = "window_end,cosine\n";
    for (const auto& p : s.points) {
        out += std::to_string(p.window_end) + ",";
        if (p.value) out += io::format_double(*p.value);
        out += '\n';
    }
    return out;
}

struct SimilarityMatrix {
    std::vector<std::string> assets;
    Matrix values;  // NaN where undefined
};

/// Pairwise cosine between all assets present at `window_end`, in frame order.
inline SimilarityMatrix similarity_matrix(const EmbeddingFrame& frame, Timestamp window_end) {
    SimilarityMatrix m;
    std::vector<const Vector*> zs;
    for (const auto& r : frame.rows) {
        if (r.window_end != window_end) continue;
        m.assets.push_back(r.asset);
        zs.push_back(&r.z);
    }
    if (zs.empty()) throw std::invalid_argument("no embeddings at window end " + std::to_string(window_end));
    const auto n = static_cast<Eigen::Index>(zs.size());
    m.values = Matrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i; j < n; ++j) {
            const auto c = cosine_similarity(*zs[static_cast<std::size_t>(i)], *zs[static_cast<std::size_t>(j)]);
            if (!c) continue;
            m.values(i, j) = *c;
            m.values(j, i) = *c;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition

struct EigenDecomposition {
    Vector values;   // descending
    Matrix vectors;  // column k pairs with values(k)
    int sweeps = 0;
};

/// Cyclic Jacobi rotations until the off-diagonal mass vanishes relative to
/// the matrix norm. Eigenpairs are returned sorted by descending eigenvalue.
inline EigenDecomposition jacobi_eigen(const Matrix& symmetric, int max_sweeps = 100) {
    const Eigen::Index n = symmetric.rows();
    if (symmetric.cols() != n) throw std::invalid_argument("jacobi_eigen: matrix must be square");
    Matrix a = symmetric;
    Matrix v = Matrix::Identity(n, n);
    const double scale = std::max(a.norm(), std::numeric_limits<double>::min());

    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (std::sqrt(off) <= 1e-15 * scale) break;

        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (sweep == max_sweeps) throw NumericError("jacobi_eigen did not converge");

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return a(x, x) > a(y, y); });
    EigenDecomposition out;
    out.values.resize(n);
    out.vectors.resize(n, n);
    out.sweeps = sweep;
    for (Eigen::Index k = 0; k < n; ++k) {
        out.values(k) = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
        out.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
    Vector mean;
    Matrix components;           // k x d, orthonormal rows
    Vector explained_variance;   // k, non-increasing
    double total_variance = 0.0;
    Matrix coordinates;          // samples x k
    std::vector<std::string> warnings;
};

/// Flips each component so its largest-magnitude loading is positive.
inline void canonicalize_signs(Matrix& components) {
    for (Eigen::Index k = 0; k < components.rows(); ++k) {
        Eigen::Index arg = 0;
        components.row(k).cwiseAbs().maxCoeff(&arg);
        if (components(k, arg) < 0.0) components.row(k) *= -1.0;
    }
}

inline PcaResult pca(const Matrix& samples, int components = 2) {
    const Eigen::Index count = samples.rows();
    const Eigen::Index dim = samples.cols();
    if (components < 1) throw std::invalid_argument("pca: need at least one component");
    if (count < components + 1)
        throw std::invalid_argument("pca: need at least " + std::to_string(components + 1) +
                                    " samples, got " + std::to_string(count));
    PcaResult r;
    r.mean = samples.colwise().mean().transpose();
    const Matrix centered = samples.rowwise() - r.mean.transpose();
    const Matrix cov = (centered.transpose() * centered) / static_cast<double>(count - 1);
    const auto eig = jacobi_eigen(cov);

    Eigen::Index k = components;
    if (k > dim) {
        r.warnings.push_back("requested " + std::to_string(components) + " components but data has dimension " +
                             std::to_string(dim));
        k = dim;
    }
    r.total_variance = cov.trace();
    r.components = eig.vectors.leftCols(k).transpose();
    r.explained_variance = eig.values.head(k).cwiseMax(0.0);
    canonicalize_signs(r.components);
    for (Eigen::Index c = 0; c < k; ++c)
        if (!(r.explained_variance(c) > 1e-10 * r.total_variance))
            r.warnings.push_back("component " + std::to_string(c + 1) +
                                 " carries no variance; embeddings have rank < " + std::to_string(c + 1));
    r.coordinates = centered * r.components.transpose();
    return r;
}

inline PcaResult pca_project(const EmbeddingFrame& frame, int components = 2) {
    return pca(frame.stacked(), components);
}

/// Header `asset,window_end,pc1,...`.
inline std::string to_csv(const EmbeddingFrame& frame, const PcaResult& r) {
    std::string out = "asset,window_end";
    for (Eigen::Index k = 0; k < r.coordinates.cols(); ++k) out += ",pc" + std::to_string(k + 1);
    out += '\n';
    for (std::size_t i = 0; i < frame.rows.size(); ++i) {
        out += frame.rows[i].asset + "," + std::to_string(frame.rows[i].window_end);
        for (Eigen::Index k = 0; k < r.coordinates.cols(); ++k)
            out += "," + io::format_double(r.coordinates(static_cast<Eigen::Index>(i), k));
        out += '\n';
    }
    return out;
}

}  // namespace llfuse::post
