#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace llfuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Epoch milliseconds, UTC.
using Timestamp = std::int64_t;

inline constexpr Timestamp kMillisPerMinute = 60'000;
inline constexpr Timestamp kMillisPerDay = 86'400'000;

/// Malformed or inconsistent input data (price files, graph files, embeddings).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration value that cannot be used.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A file or directory the caller named does not exist.
class MissingInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An iterative numeric routine failed to converge or produced non-finite values.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace llfuse
