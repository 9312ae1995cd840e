#pragma once

// Dynamic fusion end to end: per window end and per (period, lag) spec, slice
// the lookback window of returns, build the lead-lag graph, turn every graph
// into PPMI node features, train one fusion model over all (asset, date)
// samples, and extract one embedding per sample.

#include "llfuse/common.hpp"
#include "llfuse/config.hpp"
#include "llfuse/diffusion.hpp"
#include "llfuse/fusion_model.hpp"
#include "llfuse/leadlag.hpp"
#include "llfuse/market_data.hpp"
#include "llfuse/parallel.hpp"
#include "llfuse/postprocess.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace llfuse {

/// Receives warnings from the pipeline; default discards them.
using WarningSink = std::function<void(const std::string&)>;

struct SkipRecord {
    Timestamp window_end = 0;
    std::string spec;
    std::string reason;
};

struct ConstantColumnFlag {
    Timestamp window_end = 0;
    std::string spec;
    std::string asset;
};

struct GraphStage {
    std::vector<std::string> assets;
    std::vector<LagSpec> specs;
    std::vector<Timestamp> window_ends;            // usable dates only
    std::vector<std::vector<LeadLagGraph>> graphs; // [date][spec]
    std::vector<SkipRecord> skips;
    std::vector<ConstantColumnFlag> constant_columns;

    std::size_t graph_count() const { return window_ends.size() * specs.size(); }
};

/// Window ends to try: the configured list, or every UTC day boundary
/// (shifted by day_offset_minutes) strictly after the first price.
inline std::vector<Timestamp> candidate_window_ends(const RunConfig& cfg, const PricePanel& panel) {
    if (cfg.date_mode == "list") return cfg.window_ends;
    std::vector<Timestamp> out;
    const Timestamp offset = cfg.day_offset_minutes * kMillisPerMinute;
    for (std::size_t i = 1; i < panel.timestamps.size(); ++i) {
        const Timestamp t = panel.timestamps[i];
        if (((t - offset) % kMillisPerDay + kMillisPerDay) % kMillisPerDay == 0) out.push_back(t);
    }
    return out;
}

/// Return matrices for every distinct sampling period in the specs.
inline std::map<int, ReturnMatrix> returns_by_period(const RunConfig& cfg, const PricePanel& panel) {
    std::map<int, ReturnMatrix> out;
    for (const auto& s : cfg.specs)
        if (!out.contains(s.period_minutes))
            out.emplace(s.period_minutes, log_returns(resample(panel, s.period_minutes)));
    return out;
}

namespace detail {

/// Row index range [first, last] of the window ending at `end`, or a reason it is unusable.
inline std::optional<std::pair<Eigen::Index, Eigen::Index>> locate_window(const ReturnMatrix& r, Timestamp end,
                                                                          int rows, std::string& reason) {
    const auto it = std::lower_bound(r.timestamps.begin(), r.timestamps.end(), end);
    if (it == r.timestamps.end() || *it != end) {
        reason = "window end not on the " + std::to_string(r.period_minutes) + "-minute return grid";
        return std::nullopt;
    }
    const auto last = static_cast<Eigen::Index>(std::distance(r.timestamps.begin(), it));
    const Eigen::Index first = last - rows + 1;
    if (first < 0) {
        reason = "insufficient rows: window needs " + std::to_string(rows) + ", only " +
                 std::to_string(last + 1) + " available";
        return std::nullopt;
    }
    return std::make_pair(first, last);
}

inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

/// Builds every (date, spec) graph. A date is usable only if all specs have a
/// full window there; otherwise each failing spec is recorded as a skip.
inline GraphStage build_graphs(const RunConfig& cfg, const PricePanel& panel, const WarningSink& warn = {}) {
    cfg.validate();
    const auto returns = returns_by_period(cfg, panel);

    GraphStage stage;
    stage.assets = panel.assets;
    stage.specs = cfg.specs;

    struct Task {
        std::size_t date;
        std::size_t spec;
        Eigen::Index first;
        Eigen::Index last;
    };
    std::vector<Task> tasks;
    for (Timestamp end : candidate_window_ends(cfg, panel)) {
        std::vector<Task> date_tasks;
        bool usable = true;
        for (std::size_t s = 0; s < cfg.specs.size(); ++s) {
            const auto& spec = cfg.specs[s];
            std::string reason;
            const auto range = detail::locate_window(returns.at(spec.period_minutes), end,
                                                     cfg.window_rows(spec.period_minutes), reason);
            if (!range) {
                usable = false;
                stage.skips.push_back({end, spec.label(), reason});
                if (warn) warn("skipping window end " + std::to_string(end) + " for " + spec.label() + ": " + reason);
                continue;
            }
            date_tasks.push_back({stage.window_ends.size(), s, range->first, range->second});
        }
        if (!usable) continue;
        stage.window_ends.push_back(end);
        tasks.insert(tasks.end(), date_tasks.begin(), date_tasks.end());
    }
    if (stage.window_ends.empty()) throw DataError("no usable window ends: every date was skipped");

    stage.graphs.assign(stage.window_ends.size(), std::vector<LeadLagGraph>(cfg.specs.size()));
    parallel_for(tasks.size(), cfg.threads, [&](std::size_t k) {
        const auto& task = tasks[k];
        const auto& spec = cfg.specs[task.spec];
        const auto& r = returns.at(spec.period_minutes);
        const Matrix window = r.returns.middleRows(task.first, task.last - task.first + 1);
        stage.graphs[task.date][task.spec] = leadlag::build_graph(
            window, r.assets, spec, stage.window_ends[task.date], cfg.states, cfg.p_value);
    });

    for (const auto& task : tasks) {
        const auto& spec = cfg.specs[task.spec];
        const auto& r = returns.at(spec.period_minutes);
        for (Eigen::Index j = 0; j < r.asset_count(); ++j) {
            const auto col = r.returns.col(j).segment(task.first, task.last - task.first + 1);
            if (col.maxCoeff() == col.minCoeff()) {
                stage.constant_columns.push_back({stage.window_ends[task.date], spec.label(),
                                                  r.assets[static_cast<std::size_t>(j)]});
                if (warn) warn("constant returns for " + r.assets[static_cast<std::size_t>(j)] + " in " +
                               spec.label() + " window ending " + std::to_string(stage.window_ends[task.date]));
            }
        }
    }
    return stage;
}

/// PPMI features of every graph, [date][spec].
inline std::vector<std::vector<diffusion::NodeFeatureSet>> graph_features(const GraphStage& stage,
                                                                          const diffusion::RwrConfig& rwr,
                                                                          int threads = 1) {
    std::vector<std::vector<diffusion::NodeFeatureSet>> out(
        stage.window_ends.size(), std::vector<diffusion::NodeFeatureSet>(stage.specs.size()));
    parallel_for(stage.graph_count(), threads, [&](std::size_t k) {
        const auto d = k / stage.specs.size();
        const auto s = k % stage.specs.size();
        out[d][s] = diffusion::node_features(stage.graphs[d][s].adjacency, rwr,
                                             stage.specs[s].label() + "@" + std::to_string(stage.window_ends[d]));
    });
    return out;
}

/// One sample per (date, asset), ordered by date then asset.
inline fusion::FusionDataset build_dataset(const GraphStage& stage,
                                           const std::vector<std::vector<diffusion::NodeFeatureSet>>& features) {
    const auto n = static_cast<Eigen::Index>(stage.assets.size());
    const auto dates = static_cast<Eigen::Index>(stage.window_ends.size());
    fusion::FusionDataset data;
    for (std::size_t s = 0; s < stage.specs.size(); ++s) {
        Matrix m(dates * n, n);
        for (Eigen::Index d = 0; d < dates; ++d) m.middleRows(d * n, n) = features[static_cast<std::size_t>(d)][s].ppmi;
        data.features.push_back(std::move(m));
    }
    for (Eigen::Index d = 0; d < dates; ++d)
        for (Eigen::Index i = 0; i < n; ++i)
            data.keys.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(d)});
    return data;
}

struct FusionOutcome {
    fusion::FusionModel model;
    fusion::TrainReport report;
    fusion::EmbeddingFrame frame;
};

inline FusionOutcome fuse(const RunConfig& cfg, const GraphStage& stage, int threads = 1) {
    const auto features = graph_features(stage, cfg.rwr, threads);
    const auto data = build_dataset(stage, features);
    auto arch = cfg.arch;
    arch.graph_count = static_cast<int>(stage.specs.size());
    arch.input_dim = static_cast<int>(stage.assets.size());
    FusionOutcome out{fusion::make_model(arch, cfg.seed_init), {}, {}};
    out.report = fusion::train(out.model, data, cfg.train);
    out.frame = fusion::extract_embeddings(out.model, data, stage.assets, stage.window_ends);
    return out;
}

struct RunResult {
    GraphStage graphs;
    FusionOutcome fusion;
};

inline RunResult run_dynamic_fusion(const RunConfig& cfg, const PricePanel& panel, const WarningSink& warn = {}) {
    RunResult r;
    r.graphs = build_graphs(cfg, panel, warn);
    r.fusion = fuse(cfg, r.graphs, cfg.threads);
    return r;
}

// ---------------------------------------------------------------------------
// Reporting

/// Validated-link counts per spec and date, plus min / quartiles / max across
/// dates per lag, grouped by sampling period.
inline nlohmann::json link_count_summary(const GraphStage& stage) {
    nlohmann::json per_spec = nlohmann::json::object();
    std::map<int, std::map<int, std::vector<double>>> by_period;
    for (std::size_t s = 0; s < stage.specs.size(); ++s) {
        std::vector<long> counts;
        for (std::size_t d = 0; d < stage.window_ends.size(); ++d)
            counts.push_back(stage.graphs[d][s].validated_link_count);
        per_spec[stage.specs[s].label()] = counts;
        auto& v = by_period[stage.specs[s].period_minutes][stage.specs[s].lag];
        v.assign(counts.begin(), counts.end());
    }
    nlohmann::json tables = nlohmann::json::object();
    for (const auto& [period, lags] : by_period) {
        nlohmann::json t;
        for (const auto& [lag, v] : lags) {
            t["lag"].push_back(lag);
            t["min"].push_back(*std::min_element(v.begin(), v.end()));
            t["quantile_25"].push_back(detail::quantile(v, 0.25));
            t["median"].push_back(detail::quantile(v, 0.5));
            t["quantile_75"].push_back(detail::quantile(v, 0.75));
            t["max"].push_back(*std::max_element(v.begin(), v.end()));
        }
        tables["d" + std::to_string(period)] = t;
    }
    return {{"window_ends", stage.window_ends}, {"per_spec", per_spec}, {"tables", tables}};
}

inline nlohmann::json skips_json(const GraphStage& stage) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& s : stage.skips) a.push_back({{"window_end", s.window_end}, {"spec", s.spec}, {"reason", s.reason}});
    return a;
}

inline nlohmann::json constant_columns_json(const GraphStage& stage) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& c : stage.constant_columns)
        a.push_back({{"window_end", c.window_end}, {"spec", c.spec}, {"asset", c.asset}});
    return a;
}

}  // namespace llfuse
