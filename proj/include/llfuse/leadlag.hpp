#pragma once

// Lagged mutual-information matrices and the lead-lag graphs derived from them.
//
// For a lag T the return window is split into an "earlier" block (rows
// 0..p-1-T) and a "later" block (rows T..p-1). Entry (m, q) of the MI matrix
// relates asset m at time t to asset q at time t + T, so a validated (m, q)
// link reads "m leads q by T periods".

#include "llfuse/common.hpp"
#include "llfuse/infotheory.hpp"
#include "llfuse/io.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace llfuse {

struct LagSpec {
    int period_minutes = 1;
    int lag = 0;

    std::string label() const {
        return "d" + std::to_string(period_minutes) + "_T" + std::to_string(lag);
    }
    friend bool operator==(const LagSpec&, const LagSpec&) = default;
    friend auto operator<=>(const LagSpec&, const LagSpec&) = default;
};

struct LeadLagGraph {
    LagSpec spec;
    Timestamp window_end = 0;
    std::vector<std::string> assets;
    Matrix directed;   // filtered MI before symmetrization, zero diagonal
    Matrix weights;    // (directed + directed^T) / 2
    Matrix adjacency;  // binary, self-loop only on isolated nodes
    long validated_link_count = 0;
    long sample_size = 0;
    double threshold = 0.0;

    Eigen::Index size() const { return weights.rows(); }
};

namespace leadlag {

/// Earlier block (rows 0..p-1-T) and later block (rows T..p-1).
inline std::pair<Matrix, Matrix> shift_split(const Matrix& returns, int lag) {
    const Eigen::Index p = returns.rows();
    if (lag < 0) throw std::invalid_argument("lag must be nonnegative");
    if (lag >= p)
        throw std::invalid_argument("lag " + std::to_string(lag) + " leaves no overlap in " +
                                    std::to_string(p) + " rows");
    const Eigen::Index rows = p - lag;
    return {returns.topRows(rows), returns.bottomRows(rows)};
}

/// MI (bits) between every earlier-block column m and later-block column q.
/// Each column is discretized on its own.
inline Matrix lagged_mi_matrix(const Matrix& returns, int lag, int states = 4) {
    auto [earlier, later] = shift_split(returns, lag);
    if (earlier.rows() < states)
        throw std::invalid_argument("window of " + std::to_string(earlier.rows()) +
                                    " shifted rows is shorter than the state count");
    const Eigen::Index n = returns.cols();
    std::vector<info::DiscreteSeries> lead(static_cast<std::size_t>(n));
    std::vector<info::DiscreteSeries> follow(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
        const Vector a = earlier.col(j);
        const Vector b = later.col(j);
        lead[static_cast<std::size_t>(j)] =
            info::discretize_equal_frequency(std::span<const double>(a.data(), a.size()), states);
        follow[static_cast<std::size_t>(j)] =
            info::discretize_equal_frequency(std::span<const double>(b.data(), b.size()), states);
    }
    Matrix c(n, n);
    for (Eigen::Index m = 0; m < n; ++m)
        for (Eigen::Index q = 0; q < n; ++q)
            c(m, q) = info::mutual_information_bits(lead[static_cast<std::size_t>(m)],
                                                    follow[static_cast<std::size_t>(q)]);
    return c;
}

struct FilteredLinks {
    Matrix directed;
    Matrix weights;
};

/// Zeroes entries at or below the threshold and the diagonal, then symmetrizes.
inline FilteredLinks validate_and_symmetrize(const Matrix& mi, double threshold) {
    if (mi.rows() != mi.cols()) throw std::invalid_argument("MI matrix must be square");
    FilteredLinks out;
    out.directed = Matrix::Zero(mi.rows(), mi.cols());
    for (Eigen::Index i = 0; i < mi.rows(); ++i)
        for (Eigen::Index j = 0; j < mi.cols(); ++j)
            if (i != j && info::test_link(mi(i, j), threshold)) out.directed(i, j) = mi(i, j);
    out.weights.resize(mi.rows(), mi.cols());
    for (Eigen::Index i = 0; i < mi.rows(); ++i)
        for (Eigen::Index j = 0; j < mi.cols(); ++j)
            out.weights(i, j) = (out.directed(i, j) + out.directed(j, i)) / 2.0;
    return out;
}

inline FilteredLinks validate_and_symmetrize(const Matrix& mi, const info::MiTestConfig& cfg) {
    return validate_and_symmetrize(mi, info::significance_threshold(cfg));
}

/// Off-diagonal 1 where weight > 0; a node with no edge gets a self-loop.
inline Matrix binarize(const Matrix& weights) {
    const Eigen::Index n = weights.rows();
    Matrix adj = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        bool isolated = true;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j && weights(i, j) > 0.0) {
                adj(i, j) = 1.0;
                isolated = false;
            }
        }
        if (isolated) adj(i, i) = 1.0;
    }
    return adj;
}

inline long count_validated_links(const Matrix& directed) {
    long count = 0;
    for (Eigen::Index i = 0; i < directed.rows(); ++i)
        for (Eigen::Index j = 0; j < directed.cols(); ++j)
            if (i != j && directed(i, j) != 0.0) ++count;
    return count;
}

/// Full construction for one return window: MI, Bonferroni test with m = n^2
/// and N = rows - lag, symmetrization and binarization.
inline LeadLagGraph build_graph(const Matrix& window_returns, const std::vector<std::string>& assets,
                                LagSpec spec, Timestamp window_end, int states,
                                double uncorrected_p) {
    const Eigen::Index n = window_returns.cols();
    if (static_cast<std::size_t>(n) != assets.size())
        throw std::invalid_argument("asset list does not match return columns");
    LeadLagGraph g;
    g.spec = spec;
    g.window_end = window_end;
    g.assets = assets;
    g.sample_size = static_cast<long>(window_returns.rows()) - spec.lag;

    info::MiTestConfig cfg;
    cfg.states_x = states;
    cfg.states_y = states;
    cfg.sample_size = g.sample_size;
    cfg.uncorrected_p = uncorrected_p;
    cfg.num_tests = static_cast<long>(n) * static_cast<long>(n);
    g.threshold = info::significance_threshold(cfg);

    const Matrix mi = lagged_mi_matrix(window_returns, spec.lag, states);
    auto filtered = validate_and_symmetrize(mi, g.threshold);
    g.directed = std::move(filtered.directed);
    g.weights = std::move(filtered.weights);
    g.adjacency = binarize(g.weights);
    g.validated_link_count = count_validated_links(g.directed);
    return g;
}

// ---------------------------------------------------------------------------
// Export: edge list `source,target,weight` (upper triangle, positive weights)
// plus a JSON sidecar with the metadata needed to rebuild the graph.

inline std::string edge_list_csv(const LeadLagGraph& g) {
    std::string out = "source,target,weight\n";
    const auto n = g.size();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            if (g.weights(i, j) > 0.0)
                out += g.assets[static_cast<std::size_t>(i)] + "," +
                       g.assets[static_cast<std::size_t>(j)] + "," +
                       io::format_double(g.weights(i, j)) + "\n";
    return out;
}

inline nlohmann::json sidecar_json(const LeadLagGraph& g) {
    nlohmann::json directed_links = nlohmann::json::array();
    for (Eigen::Index i = 0; i < g.size(); ++i)
        for (Eigen::Index j = 0; j < g.size(); ++j)
            if (i != j && g.directed(i, j) != 0.0)
                directed_links.push_back({{"source", g.assets[static_cast<std::size_t>(i)]},
                                          {"target", g.assets[static_cast<std::size_t>(j)]},
                                          {"mi_bits", g.directed(i, j)}});
    return {
        {"spec", {{"period_minutes", g.spec.period_minutes}, {"lag", g.spec.lag}}},
        {"window_end", g.window_end},
        {"n", g.size()},
        {"validated_link_count", g.validated_link_count},
        {"sample_size", g.sample_size},
        {"threshold_bits", g.threshold},
        {"assets", g.assets},
        {"directed_links", directed_links},
    };
}

inline void write_graph(const LeadLagGraph& g, const std::filesystem::path& csv_path) {
    io::write_text(csv_path, edge_list_csv(g));
    auto json_path = csv_path;
    json_path.replace_extension(".json");
    io::write_text(json_path, sidecar_json(g).dump(2) + "\n");
}

/// Rebuilds a graph from its edge list and sidecar.
inline LeadLagGraph read_graph(const std::filesystem::path& csv_path) {
    auto json_path = csv_path;
    json_path.replace_extension(".json");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(io::read_text(json_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("graph sidecar " + json_path.string() + ": " + e.what());
    }
    LeadLagGraph g;
    try {
        g.spec.period_minutes = meta.at("spec").at("period_minutes").get<int>();
        g.spec.lag = meta.at("spec").at("lag").get<int>();
        g.window_end = meta.at("window_end").get<Timestamp>();
        g.assets = meta.at("assets").get<std::vector<std::string>>();
        g.validated_link_count = meta.at("validated_link_count").get<long>();
        g.sample_size = meta.at("sample_size").get<long>();
        g.threshold = meta.at("threshold_bits").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("graph sidecar " + json_path.string() + ": " + e.what());
    }
    const auto n = static_cast<Eigen::Index>(g.assets.size());
    std::map<std::string, Eigen::Index> index;
    for (Eigen::Index i = 0; i < n; ++i) index[g.assets[static_cast<std::size_t>(i)]] = i;

    g.directed = Matrix::Zero(n, n);
    for (const auto& link : meta.value("directed_links", nlohmann::json::array())) {
        const auto s = index.find(link.at("source").get<std::string>());
        const auto t = index.find(link.at("target").get<std::string>());
        if (s == index.end() || t == index.end()) throw DataError("unknown asset in " + json_path.string());
        g.directed(s->second, t->second) = link.at("mi_bits").get<double>();
    }

    g.weights = Matrix::Zero(n, n);
    const auto lines = io::read_lines(csv_path);
    if (lines.empty() || lines.front() != "source,target,weight")
        throw DataError("edge list header malformed: " + csv_path.string());
    for (std::size_t row = 1; row < lines.size(); ++row) {
        const auto f = io::split_fields(lines[row]);
        double w = 0.0;
        if (f.size() != 3 || !io::parse_double(f[2], w))
            throw DataError(csv_path.string() + ": malformed row " + std::to_string(row));
        const auto s = index.find(std::string(f[0]));
        const auto t = index.find(std::string(f[1]));
        if (s == index.end() || t == index.end())
            throw DataError(csv_path.string() + ": unknown asset at row " + std::to_string(row));
        g.weights(s->second, t->second) = w;
        g.weights(t->second, s->second) = w;
    }
    g.adjacency = binarize(g.weights);
    return g;
}

}  // namespace leadlag
}  // namespace llfuse
