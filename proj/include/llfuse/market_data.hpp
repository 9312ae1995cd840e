#pragma once

// Price ingestion, resampling onto coarser grids, and log-return matrices.
//
// Input files hold one asset each: header `timestamp,price`, epoch-millisecond
// timestamps on the base-period grid, strictly increasing. The asset id is the
// file stem.

#include "llfuse/common.hpp"
#include "llfuse/io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace llfuse {

/// Aligned prices: row i is timestamp i, column j is asset j.
struct PricePanel {
    int base_period_minutes = 1;
    std::vector<Timestamp> timestamps;
    std::vector<std::string> assets;
    Matrix prices;

    Eigen::Index rows() const { return prices.rows(); }
    Eigen::Index asset_count() const { return prices.cols(); }
};

/// Log-returns at sampling period `period_minutes`; timestamps[i] closes return i.
struct ReturnMatrix {
    int period_minutes = 1;
    std::vector<Timestamp> timestamps;
    std::vector<std::string> assets;
    Matrix returns;

    Eigen::Index rows() const { return returns.rows(); }
    Eigen::Index asset_count() const { return returns.cols(); }
};

namespace detail {

struct PriceRecord {
    Timestamp ts;
    double price;
};

inline std::vector<PriceRecord> read_price_file(const std::filesystem::path& path,
                                                Timestamp step_ms) {
    const std::string asset = path.stem().string();
    const auto lines = io::read_lines(path);
    if (lines.empty()) throw DataError("empty price file: " + path.string());
    const auto header = io::split_fields(lines.front());
    if (header.size() != 2 || header[0] != "timestamp" || header[1] != "price")
        throw DataError(path.string() + ": expected header `timestamp,price`");
    if (lines.size() == 1) throw DataError("empty price file (header only): " + path.string());

    std::vector<PriceRecord> records;
    records.reserve(lines.size() - 1);
    for (std::size_t row = 1; row < lines.size(); ++row) {
        const auto fields = io::split_fields(lines[row]);
        PriceRecord rec{};
        if (fields.size() != 2 || !io::parse_int(fields[0], rec.ts) ||
            !io::parse_double(fields[1], rec.price))
            throw DataError(path.string() + ": malformed row " + std::to_string(row));
        if (!(rec.price > 0.0) || !std::isfinite(rec.price))
            throw DataError("asset " + asset + ": non-positive price at row " +
                            std::to_string(row) + " (timestamp " + std::to_string(rec.ts) + ")");
        if (rec.ts % step_ms != 0)
            throw DataError("asset " + asset + ": timestamp " + std::to_string(rec.ts) +
                            " at row " + std::to_string(row) + " is off the base-period grid");
        if (!records.empty() && rec.ts <= records.back().ts)
            throw DataError("asset " + asset + ": timestamps not strictly increasing at row " +
                            std::to_string(row));
        records.push_back(rec);
    }
    return records;
}

}  // namespace detail

/// Loads one CSV per asset and aligns them on the intersection of their time
/// ranges. Interior gaps are forward-filled from the last observed price.
/// Assets come out sorted lexicographically.
inline PricePanel load_prices(const std::vector<std::filesystem::path>& files,
                              int base_period_minutes, Eigen::Index min_overlap_rows = 2) {
    if (base_period_minutes <= 0) throw ConfigError("base period must be positive");
    if (files.size() < 2) throw DataError("need at least 2 price files, got " +
                                          std::to_string(files.size()));
    const Timestamp step = base_period_minutes * kMillisPerMinute;

    std::map<std::string, std::vector<detail::PriceRecord>> by_asset;
    for (const auto& f : files) {
        if (!std::filesystem::exists(f)) throw MissingInputError("price file not found: " + f.string());
        auto asset = f.stem().string();
        if (by_asset.contains(asset)) throw DataError("duplicate asset id: " + asset);
        by_asset.emplace(std::move(asset), detail::read_price_file(f, step));
    }

    Timestamp start = std::numeric_limits<Timestamp>::min();
    Timestamp end = std::numeric_limits<Timestamp>::max();
    for (const auto& [_, recs] : by_asset) {
        start = std::max(start, recs.front().ts);
        end = std::min(end, recs.back().ts);
    }
    const Eigen::Index rows = end >= start ? (end - start) / step + 1 : 0;
    if (rows < min_overlap_rows)
        throw DataError("overlapping time range has " + std::to_string(rows) +
                        " rows, need at least " + std::to_string(min_overlap_rows));

    PricePanel panel;
    panel.base_period_minutes = base_period_minutes;
    panel.timestamps.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index i = 0; i < rows; ++i) panel.timestamps[i] = start + i * step;
    panel.prices.resize(rows, static_cast<Eigen::Index>(by_asset.size()));

    Eigen::Index col = 0;
    for (const auto& [asset, recs] : by_asset) {
        panel.assets.push_back(asset);
        // Last record at or before `start` seeds the fill.
        auto it = std::upper_bound(recs.begin(), recs.end(), start,
                                   [](Timestamp t, const auto& r) { return t < r.ts; });
        std::size_t k = static_cast<std::size_t>(std::distance(recs.begin(), it)) - 1;
        for (Eigen::Index i = 0; i < rows; ++i) {
            const Timestamp t = panel.timestamps[i];
            while (k + 1 < recs.size() && recs[k + 1].ts <= t) ++k;
            panel.prices(i, col) = recs[k].price;
        }
        ++col;
    }
    return panel;
}

/// Keeps the rows whose timestamp is a multiple of `period_minutes`; each kept
/// row carries the last observed price of its (t - d, t] bucket.
inline PricePanel resample(const PricePanel& panel, int period_minutes) {
    if (period_minutes <= 0 || period_minutes % panel.base_period_minutes != 0)
        throw ConfigError("sampling period " + std::to_string(period_minutes) +
                          " is not a positive multiple of the base period " +
                          std::to_string(panel.base_period_minutes));
    if (period_minutes == panel.base_period_minutes) return panel;

    const Timestamp step = period_minutes * kMillisPerMinute;
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < panel.timestamps.size(); ++i)
        if (panel.timestamps[i] % step == 0) keep.push_back(static_cast<Eigen::Index>(i));

    PricePanel out;
    out.base_period_minutes = period_minutes;
    out.assets = panel.assets;
    out.prices.resize(static_cast<Eigen::Index>(keep.size()), panel.asset_count());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        out.timestamps.push_back(panel.timestamps[keep[r]]);
        out.prices.row(static_cast<Eigen::Index>(r)) = panel.prices.row(keep[r]);
    }
    return out;
}

/// returns(i, j) = ln P_j(t_{i+1}) - ln P_j(t_i).
inline ReturnMatrix log_returns(const PricePanel& panel) {
    ReturnMatrix r;
    r.period_minutes = panel.base_period_minutes;
    r.assets = panel.assets;
    const Eigen::Index p = std::max<Eigen::Index>(panel.rows() - 1, 0);
    r.returns.resize(p, panel.asset_count());
    if (p == 0) return r;
    const Matrix logp = panel.prices.array().log().matrix();
    r.returns = logp.bottomRows(p) - logp.topRows(p);
    r.timestamps.assign(panel.timestamps.begin() + 1, panel.timestamps.end());
    return r;
}

/// CSV with header `timestamp,<asset1>,...,<assetN>`.
inline std::string to_csv(const std::vector<Timestamp>& timestamps,
                          const std::vector<std::string>& assets, const Matrix& values) {
    std::string out = "timestamp";
    for (const auto& a : assets) out += "," + a;
    out += '\n';
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
        out += std::to_string(timestamps[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < values.cols(); ++j) {
            out += ',';
            out += io::format_double(values(i, j));
        }
        out += '\n';
    }
    return out;
}

inline std::string to_csv(const ReturnMatrix& r) { return to_csv(r.timestamps, r.assets, r.returns); }
inline std::string to_csv(const PricePanel& p) { return to_csv(p.timestamps, p.assets, p.prices); }

/// Reads a wide panel cache written by to_csv(PricePanel).
inline PricePanel read_panel_csv(const std::filesystem::path& path, int base_period_minutes) {
    const auto lines = io::read_lines(path);
    if (lines.size() < 2) throw DataError("panel cache has no rows: " + path.string());
    const auto header = io::split_fields(lines.front());
    if (header.size() < 3 || header[0] != "timestamp")
        throw DataError("panel cache header malformed: " + path.string());

    PricePanel panel;
    panel.base_period_minutes = base_period_minutes;
    for (std::size_t j = 1; j < header.size(); ++j) panel.assets.emplace_back(header[j]);
    const auto n = static_cast<Eigen::Index>(panel.assets.size());
    panel.prices.resize(static_cast<Eigen::Index>(lines.size() - 1), n);
    for (std::size_t row = 1; row < lines.size(); ++row) {
        const auto fields = io::split_fields(lines[row]);
        Timestamp ts = 0;
        if (fields.size() != header.size() || !io::parse_int(fields[0], ts))
            throw DataError(path.string() + ": malformed row " + std::to_string(row));
        panel.timestamps.push_back(ts);
        for (Eigen::Index j = 0; j < n; ++j) {
            double v = 0.0;
            if (!io::parse_double(fields[static_cast<std::size_t>(j) + 1], v) || !(v > 0.0))
                throw DataError(path.string() + ": bad price at row " + std::to_string(row));
            panel.prices(static_cast<Eigen::Index>(row - 1), j) = v;
        }
    }
    return panel;
}

}  // namespace llfuse
