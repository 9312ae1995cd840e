#pragma once

// Random walk with restart on a binary graph, accumulated over K steps, and
// the PPMI transform of the accumulated walk mass.

#include "llfuse/common.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace llfuse::diffusion {

struct RwrConfig {
    double restart_keep = 0.98;  // alpha: probability of continuing the walk
    int steps = 3;               // K

    void validate() const {
        if (!(restart_keep >= 0.0 && restart_keep < 1.0))
            throw ConfigError("RWR alpha must lie in [0, 1)");
        if (steps < 1) throw ConfigError("RWR step count must be >= 1");
    }
};

struct NodeFeatureSet {
    Matrix rwr;
    Matrix ppmi;
    std::string graph_id;
};

inline Matrix row_normalize(const Matrix& adjacency) {
    Matrix out = adjacency;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double s = out.row(i).sum();
        if (!(s > 0.0))
            throw std::invalid_argument("adjacency row " + std::to_string(i) +
                                        " has no entries; isolated nodes need a self-loop");
        out.row(i) /= s;
    }
    return out;
}

/// Row i of the result is sum_{t=1..K} p_i^(t) where
/// p_i^(t) = alpha p_i^(t-1) A_hat + (1 - alpha) e_i. All rows are iterated
/// together as one n x n stack starting from the identity.
///
/// `trace`, when given, receives every intermediate stack p^(1)..p^(K).
inline Matrix rwr_accumulate(const Matrix& adjacency, const RwrConfig& cfg,
                             std::vector<Matrix>* trace = nullptr) {
    cfg.validate();
    const Matrix transition = row_normalize(adjacency);
    const Eigen::Index n = adjacency.rows();
    const Matrix restart = Matrix::Identity(n, n);
    Matrix state = restart;
    Matrix accumulated = Matrix::Zero(n, n);
    for (int t = 1; t <= cfg.steps; ++t) {
        state = cfg.restart_keep * (state * transition) + (1.0 - cfg.restart_keep) * restart;
        accumulated += state;
        if (trace) trace->push_back(state);
    }
    return accumulated;
}

/// P(i,j) = max(0, ln(n V(i,j) / sum_q V(q,j))); zero wherever V(i,j) or the
/// column mass is zero. Ratios within the rounding error of the column sum
/// count as exactly 1, so a uniform V maps to zeros.
inline Matrix ppmi(const Matrix& v) {
    const Eigen::Index n = v.rows();
    const RowVector colsum = v.colwise().sum();
    const double slack = 1.0 + 2.0 * static_cast<double>(n) * std::numeric_limits<double>::epsilon();
    Matrix p = Matrix::Zero(n, v.cols());
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
        if (!(colsum(j) > 0.0)) continue;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!(v(i, j) > 0.0)) continue;
            const double ratio = static_cast<double>(n) * v(i, j) / colsum(j);
            p(i, j) = ratio <= slack ? 0.0 : std::log(ratio);
        }
    }
    return p;
}

inline NodeFeatureSet node_features(const Matrix& adjacency, const RwrConfig& cfg,
                                    std::string graph_id = {}) {
    NodeFeatureSet f;
    f.rwr = rwr_accumulate(adjacency, cfg);
    f.ppmi = ppmi(f.rwr);
    f.graph_id = std::move(graph_id);
    return f;
}

}  // namespace llfuse::diffusion
