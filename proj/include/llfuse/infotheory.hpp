#pragma once

// Equal-frequency discretization, plug-in mutual information, and the Gamma
// approximation of the null distribution of plug-in MI between independent
// discrete variables.

#include "llfuse/common.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace llfuse::info {

struct DiscreteSeries {
    std::vector<int> states;
    int cardinality = 4;

    std::size_t size() const { return states.size(); }
};

struct MiTestConfig {
    int states_x = 4;
    int states_y = 4;
    long sample_size = 0;
    double uncorrected_p = 0.01;
    long num_tests = 1;

    double corrected_level() const { return uncorrected_p / static_cast<double>(num_tests); }

    void validate() const {
        if (states_x < 1 || states_y < 1) throw ConfigError("state counts must be positive");
        if (sample_size < 1) throw ConfigError("sample size must be positive");
        if (num_tests < 1) throw ConfigError("number of tests must be positive");
        const double level = corrected_level();
        if (!(level > 0.0 && level < 1.0))
            throw ConfigError("corrected significance level must lie in (0,1), got " +
                              std::to_string(level));
    }
};

/// The value of rank r (ties broken by original index) goes to state
/// floor(r * S / length).
inline DiscreteSeries discretize_equal_frequency(std::span<const double> values, int states = 4) {
    if (states < 1) throw std::invalid_argument("state count must be positive");
    const std::size_t len = values.size();
    if (len < static_cast<std::size_t>(states))
        throw std::invalid_argument("series of length " + std::to_string(len) +
                                    " is shorter than the state count " + std::to_string(states));
    std::vector<std::size_t> order(len);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    DiscreteSeries out;
    out.cardinality = states;
    out.states.resize(len);
    for (std::size_t r = 0; r < len; ++r)
        out.states[order[r]] = static_cast<int>(r * static_cast<std::size_t>(states) / len);
    return out;
}

/// Plug-in MI in bits from relative frequencies.
inline double mutual_information_bits(const DiscreteSeries& x, const DiscreteSeries& y) {
    if (x.size() != y.size())
        throw std::invalid_argument("mutual information needs equal lengths (" +
                                    std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
    if (x.size() == 0) return 0.0;
    const int sx = x.cardinality;
    const int sy = y.cardinality;
    std::vector<long> joint(static_cast<std::size_t>(sx * sy), 0);
    std::vector<long> mx(static_cast<std::size_t>(sx), 0);
    std::vector<long> my(static_cast<std::size_t>(sy), 0);
    for (std::size_t k = 0; k < x.size(); ++k) {
        const int a = x.states[k];
        const int b = y.states[k];
        ++joint[static_cast<std::size_t>(a * sy + b)];
        ++mx[static_cast<std::size_t>(a)];
        ++my[static_cast<std::size_t>(b)];
    }
    const double total = static_cast<double>(x.size());
    double mi = 0.0;
    for (int a = 0; a < sx; ++a) {
        for (int b = 0; b < sy; ++b) {
            const long c = joint[static_cast<std::size_t>(a * sy + b)];
            if (c == 0) continue;
            // p(a,b) / (p(a) p(b)) = c * total / (mx * my)
            const double ratio = static_cast<double>(c) * total /
                                 (static_cast<double>(mx[static_cast<std::size_t>(a)]) *
                                  static_cast<double>(my[static_cast<std::size_t>(b)]));
            mi += (static_cast<double>(c) / total) * std::log2(ratio);
        }
    }
    return std::max(mi, 0.0);
}

namespace detail {

inline constexpr int kGammaMaxIter = 10'000;
inline constexpr double kGammaEps = 1e-16;

// Regularized lower incomplete gamma by its power series; good for z < a + 1.
inline double gamma_p_series(double a, double z) {
    double term = 1.0 / a;
    double sum = term;
    for (int n = 1; n < kGammaMaxIter; ++n) {
        term *= z / (a + n);
        sum += term;
        if (std::abs(term) < std::abs(sum) * kGammaEps)
            return sum * std::exp(-z + a * std::log(z) - std::lgamma(a));
    }
    throw NumericError("incomplete gamma series did not converge (a=" + std::to_string(a) +
                       ", z=" + std::to_string(z) + ")");
}

// Regularized upper incomplete gamma by modified Lentz continued fraction; z >= a + 1.
inline double gamma_q_continued_fraction(double a, double z) {
    constexpr double tiny = 1e-300;
    double b = z + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kGammaMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kGammaEps)
            return std::exp(-z + a * std::log(z) - std::lgamma(a)) * h;
    }
    throw NumericError("incomplete gamma continued fraction did not converge (a=" +
                       std::to_string(a) + ", z=" + std::to_string(z) + ")");
}

inline void check_gamma_params(double alpha, double beta) {
    if (!(alpha > 0.0) || !(beta > 0.0) || !std::isfinite(alpha) || !std::isfinite(beta))
        throw std::domain_error("gamma distribution needs alpha > 0 and beta > 0");
}

}  // namespace detail

/// CDF of Gamma(shape alpha, scale beta) at x, i.e. P(alpha, x / beta).
inline double gamma_cdf(double x, double alpha, double beta) {
    detail::check_gamma_params(alpha, beta);
    if (!(x >= 0.0)) throw std::domain_error("gamma_cdf needs x >= 0");
    if (x == 0.0) return 0.0;
    if (std::isinf(x)) return 1.0;
    const double z = x / beta;
    if (z < alpha + 1.0) return detail::gamma_p_series(alpha, z);
    return 1.0 - detail::gamma_q_continued_fraction(alpha, z);
}

inline double gamma_pdf(double x, double alpha, double beta) {
    detail::check_gamma_params(alpha, beta);
    if (x < 0.0) return 0.0;
    if (x == 0.0) return alpha < 1.0 ? INFINITY : (alpha == 1.0 ? 1.0 / beta : 0.0);
    const double z = x / beta;
    return std::exp((alpha - 1.0) * std::log(z) - z - std::lgamma(alpha)) / beta;
}

/// Inverse of gamma_cdf in x: safeguarded Newton inside a shrinking bracket.
inline double gamma_quantile(double q, double alpha, double beta) {
    detail::check_gamma_params(alpha, beta);
    if (!(q > 0.0 && q < 1.0)) throw std::domain_error("gamma_quantile needs q in (0,1)");

    double lo = 0.0;
    double hi = alpha * beta;
    int expansions = 0;
    while (gamma_cdf(hi, alpha, beta) < q) {
        lo = hi;
        hi *= 2.0;
        if (++expansions > 2000)
            throw NumericError("gamma_quantile: could not bracket q=" + std::to_string(q));
    }

    double x = 0.5 * (lo + hi);
    constexpr int kMaxIter = 500;
    for (int iter = 0; iter < kMaxIter; ++iter) {
        const double f = gamma_cdf(x, alpha, beta) - q;
        if (f == 0.0) return x;
        if (f < 0.0) lo = x; else hi = x;

        const double pdf = gamma_pdf(x, alpha, beta);
        double next = pdf > 0.0 ? x - f / pdf : std::numeric_limits<double>::quiet_NaN();
        if (!(next > lo && next < hi)) {
            // Geometric midpoint reaches quantiles spanning many decades quickly.
            if (lo == 0.0) next = 0.5 * hi;
            else next = hi / lo > 4.0 ? std::sqrt(lo * hi) : 0.5 * (lo + hi);
        }
        if (std::abs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * x ||
            hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi)
            return next;
        x = next;
    }
    throw NumericError("gamma_quantile did not converge: q=" + std::to_string(q) +
                       " alpha=" + std::to_string(alpha) + " beta=" + std::to_string(beta) +
                       " bracket=[" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

/// Gamma shape for the MI null between variables with the given state counts.
inline double null_shape(int states_x, int states_y) {
    return 0.5 * (states_x - 1) * (states_y - 1);
}

/// Gamma scale (bits) for the MI null at sample size N: 1 / (N ln 2).
inline double null_scale(long sample_size) {
    return 1.0 / (static_cast<double>(sample_size) * std::log(2.0));
}

/// MI value (bits) above which independence is rejected at the
/// Bonferroni-corrected level.
inline double significance_threshold(const MiTestConfig& cfg) {
    cfg.validate();
    return gamma_quantile(1.0 - cfg.corrected_level(), null_shape(cfg.states_x, cfg.states_y),
                          null_scale(cfg.sample_size));
}

/// True when the link is significant: strictly above the threshold.
inline bool test_link(double mi_bits, double threshold) { return mi_bits > threshold; }

inline bool test_link(double mi_bits, const MiTestConfig& cfg) {
    return test_link(mi_bits, significance_threshold(cfg));
}

}  // namespace llfuse::info
