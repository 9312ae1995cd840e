#pragma once

// Synthetic price universes with planted lead-lag couplings.
//
// Every asset follows a geometric random walk. A follower's log-return at step
// t is coupling * leader_return(t - lag) plus Gaussian noise whose standard
// deviation is noise * |coupling| * volatility. A zero coupling makes the
// follower an independent walk with the base volatility.

#include "llfuse/common.hpp"
#include "llfuse/io.hpp"
#include "llfuse/neural.hpp"

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace llfuse::synth {

struct Coupling {
    int leader = 0;
    int follower = 1;
    int lag = 1;              // in base periods
    double coupling = 0.8;
    double noise = 0.5;       // noise sd relative to the coupled signal sd
};

struct UniverseSpec {
    int assets = 10;
    int days = 30;
    int base_period_minutes = 1;
    Timestamp start_ms = 1'609'459'200'000;  // 2021-01-01T00:00:00Z
    double volatility = 1e-3;                // per-step log-return sd
    double initial_price = 100.0;
    std::vector<Coupling> couplings{Coupling{}};

    void validate() const {
        if (assets < 2) throw ConfigError("synthetic universe needs at least 2 assets");
        if (days < 1) throw ConfigError("synthetic universe needs at least 1 day");
        if (base_period_minutes < 1 || (24 * 60) % base_period_minutes != 0)
            throw ConfigError("synthetic base period must divide one day");
        if (start_ms % (base_period_minutes * kMillisPerMinute) != 0)
            throw ConfigError("synthetic start must lie on the base-period grid");
        if (!(volatility > 0.0) || !(initial_price > 0.0))
            throw ConfigError("synthetic volatility and initial price must be positive");
        std::set<int> followers;
        for (const auto& c : couplings) {
            if (c.leader < 0 || c.leader >= assets || c.follower < 0 || c.follower >= assets ||
                c.leader == c.follower)
                throw ConfigError("synthetic coupling references invalid assets");
            if (c.lag < 0) throw ConfigError("synthetic coupling lag must be nonnegative");
            if (!(c.noise >= 0.0)) throw ConfigError("synthetic noise level must be nonnegative");
            if (!followers.insert(c.follower).second)
                throw ConfigError("an asset can follow at most one leader");
        }
        for (const auto& c : couplings)
            if (followers.contains(c.leader)) throw ConfigError("a follower cannot also lead");
    }

    Eigen::Index steps() const {
        return static_cast<Eigen::Index>(days) * (24 * 60 / base_period_minutes);
    }
};

inline std::string asset_name(int index) {
    return (index < 10 ? "S0" : "S") + std::to_string(index);
}

struct Universe {
    std::vector<std::string> assets;
    std::vector<Timestamp> timestamps;  // steps + 1 price timestamps
    Matrix returns;                     // steps x assets
    Matrix prices;                      // (steps + 1) x assets
};

/// Box-Muller on the portable uniform draw.
class GaussianSource {
public:
    explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

    double next() {
        if (cached_) {
            cached_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = nn::uniform01(rng_);
        const double u2 = nn::uniform01(rng_);
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        cached_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool cached_ = false;
};

inline Universe generate(const UniverseSpec& spec, std::uint64_t seed) {
    spec.validate();
    const Eigen::Index steps = spec.steps();
    int max_lag = 0;
    for (const auto& c : spec.couplings) max_lag = std::max(max_lag, c.lag);

    GaussianSource gauss(seed);
    // Base innovations include a pre-sample of max_lag steps so lagged copies
    // are defined from the first step.
    Matrix base(steps + max_lag, spec.assets);
    for (Eigen::Index t = 0; t < base.rows(); ++t)
        for (int j = 0; j < spec.assets; ++j) base(t, j) = spec.volatility * gauss.next();

    Matrix full = base;
    for (const auto& c : spec.couplings) {
        if (c.coupling == 0.0) continue;
        const double noise_sd = c.noise * std::abs(c.coupling) * spec.volatility;
        for (Eigen::Index t = max_lag; t < full.rows(); ++t) {
            const double eps = base(t, c.follower) / spec.volatility;  // reuse the follower's own draw
            full(t, c.follower) = c.coupling * base(t - c.lag, c.leader) + noise_sd * eps;
        }
    }

    Universe u;
    for (int j = 0; j < spec.assets; ++j) u.assets.push_back(asset_name(j));
    u.returns = full.bottomRows(steps);
    u.prices.resize(steps + 1, spec.assets);
    u.prices.row(0).setConstant(std::log(spec.initial_price));
    for (Eigen::Index t = 0; t < steps; ++t) u.prices.row(t + 1) = u.prices.row(t) + u.returns.row(t);
    u.prices = u.prices.array().exp().matrix();
    const Timestamp step_ms = spec.base_period_minutes * kMillisPerMinute;
    for (Eigen::Index t = 0; t <= steps; ++t) u.timestamps.push_back(spec.start_ms + t * step_ms);
    return u;
}

/// Writes one `timestamp,price` CSV per asset into `dir`; returns the paths.
inline std::vector<std::filesystem::path> write_price_files(const Universe& u,
                                                            const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> paths;
    for (std::size_t j = 0; j < u.assets.size(); ++j) {
        std::string text = "timestamp,price\n";
        for (std::size_t t = 0; t < u.timestamps.size(); ++t)
            text += std::to_string(u.timestamps[t]) + "," +
                    io::format_double(u.prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j))) + "\n";
        auto path = dir / (u.assets[j] + ".csv");
        io::write_text(path, text);
        paths.push_back(std::move(path));
    }
    return paths;
}

}  // namespace llfuse::synth
