#include "llfuse/leadlag.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace llfuse;
using namespace llfuse::leadlag;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = g(rng);
    return m;
}

std::vector<int> states_of(const Vector& v) {
    return info::discretize_equal_frequency(std::span<const double>(v.data(), v.size())).states;
}

std::vector<std::string> names(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("A" + std::to_string(i));
    return out;
}

}  // namespace

TEST(ShiftSplit, ZeroLagReturnsBothCopies) {
    const Matrix r = gaussian(6, 3, 1);
    const auto [a, b] = shift_split(r, 0);
    EXPECT_TRUE(a == r);
    EXPECT_TRUE(b == r);
}

TEST(ShiftSplit, IndexArithmetic) {
    Matrix r(5, 1);
    r << 0, 1, 2, 3, 4;
    const auto [a, b] = shift_split(r, 2);
    ASSERT_EQ(a.rows(), 3);
    ASSERT_EQ(b.rows(), 3);
    EXPECT_EQ(a(0, 0), 0);
    EXPECT_EQ(a(2, 0), 2);
    EXPECT_EQ(b(0, 0), 2);
    EXPECT_EQ(b(2, 0), 4);
}

TEST(ShiftSplit, LagEqualToRowsRejected) {
    EXPECT_THROW(shift_split(gaussian(5, 2, 1), 5), std::invalid_argument);
    EXPECT_THROW(shift_split(gaussian(5, 2, 1), -1), std::invalid_argument);
}

TEST(LaggedMi, PlantedShiftedCopyMatchesOracle) {
    for (int lag : {0, 1, 2, 3}) {
        const Eigen::Index p = 400 + lag;  // p - lag divisible by 4
        Matrix r = gaussian(p, 2, 7 + static_cast<std::uint64_t>(lag));
        for (Eigen::Index t = lag; t < p; ++t) r(t, 1) = r(t - lag, 0);
        const Matrix c = lagged_mi_matrix(r, lag);
        EXPECT_NEAR(c(0, 1), 2.0, 1e-12) << "lag " << lag;

        const auto [a, b] = shift_split(r, lag);
        for (int m = 0; m < 2; ++m)
            for (int q = 0; q < 2; ++q)
                EXPECT_NEAR(c(m, q), oracle::mi_bits_entropy(states_of(a.col(m)), states_of(b.col(q))), 1e-12);
    }
}

TEST(LaggedMi, DiagonalAtZeroLagIsLog2States) {
    const Matrix c = lagged_mi_matrix(gaussian(64, 4, 3), 0);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(c(j, j), 2.0);
    const Matrix c3 = lagged_mi_matrix(gaussian(63, 2, 3), 0, 3);
    EXPECT_NEAR(c3(0, 0), std::log2(3.0), 1e-12);
}

TEST(LaggedMi, IndependentNoiseStaysBelowThreshold) {
    const int n = 8;
    const double threshold = info::significance_threshold({4, 4, 1440, 0.01, n * n});
    int exceed = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix c = lagged_mi_matrix(gaussian(1441, n, 100 + seed), 1);
        EXPECT_LT(c.maxCoeff(), 0.05);
        for (int m = 0; m < n; ++m)
            for (int q = 0; q < n; ++q) exceed += m != q && c(m, q) > threshold;
    }
    EXPECT_LE(exceed, 1);
}

TEST(LaggedMi, TooFewRowsRejected) {
    EXPECT_THROW(lagged_mi_matrix(gaussian(5, 2, 1), 2), std::invalid_argument);
}

TEST(Validate, HalvesOneWayLink) {
    Matrix c(2, 2);
    c << 2.0, 0.9, 0.0, 2.0;
    const auto f = validate_and_symmetrize(c, 0.5);
    Matrix expected(2, 2);
    expected << 0, 0.45, 0.45, 0;
    EXPECT_TRUE(f.weights == expected);
    EXPECT_EQ(count_validated_links(f.directed), 1);
}

TEST(Validate, AllBelowThresholdGivesZeroMatrix) {
    Matrix c = Matrix::Constant(3, 3, 0.01);
    const auto f = validate_and_symmetrize(c, 0.02);
    EXPECT_TRUE(f.weights.isZero(0.0));
    EXPECT_EQ(count_validated_links(f.directed), 0);
}

TEST(Validate, EntryAtThresholdIsNotALink) {
    Matrix c(2, 2);
    c << 0, 0.3, 0.3000001, 0;
    const auto f = validate_and_symmetrize(c, 0.3);
    EXPECT_EQ(f.directed(0, 1), 0.0);
    EXPECT_EQ(f.directed(1, 0), 0.3000001);
}

TEST(Validate, SymmetricInputUnchangedOffDiagonal) {
    Matrix c(3, 3);
    c << 1, 0.4, 0.7, 0.4, 1, 0.6, 0.7, 0.6, 1;
    const auto f = validate_and_symmetrize(c, 0.1);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_EQ(f.weights(i, j), i == j ? 0.0 : c(i, j));
    EXPECT_EQ(count_validated_links(f.directed), 6);
}

TEST(Validate, OutputBitwiseSymmetric) {
    const Matrix c = gaussian(9, 9, 5).cwiseAbs();
    const auto f = validate_and_symmetrize(c, 0.5);
    EXPECT_TRUE(f.weights == f.weights.transpose());
}

TEST(Binarize, ZeroMatrixGivesIdentity) {
    EXPECT_TRUE(binarize(Matrix::Zero(3, 3)) == Matrix::Identity(3, 3));
}

TEST(Binarize, IsolatedNodeGetsSelfLoop) {
    Matrix w = Matrix::Zero(3, 3);
    w(0, 1) = w(1, 0) = 0.2;
    Matrix expected = Matrix::Zero(3, 3);
    expected(0, 1) = expected(1, 0) = expected(2, 2) = 1.0;
    EXPECT_TRUE(binarize(w) == expected);
}

TEST(Binarize, CompleteGraphHasZeroDiagonal) {
    Matrix w = Matrix::Constant(4, 4, 0.3);
    w.diagonal().setZero();
    Matrix expected = Matrix::Ones(4, 4) - Matrix::Identity(4, 4);
    EXPECT_TRUE(binarize(w) == expected);
}

TEST(Binarize, EveryRowHasAnEntry) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto f = validate_and_symmetrize(gaussian(7, 7, seed).cwiseAbs(), 1.5);
        const Matrix a = binarize(f.weights);
        for (int i = 0; i < 7; ++i) EXPECT_GE(a.row(i).sum(), 1.0);
    }
}

TEST(CountLinks, ZeroAndSymmetricPair) {
    EXPECT_EQ(count_validated_links(Matrix::Zero(4, 4)), 0);
    Matrix d = Matrix::Zero(3, 3);
    d(0, 2) = d(2, 0) = 0.5;
    EXPECT_EQ(count_validated_links(d), 2);
}

TEST(BuildGraph, UsesShiftedSampleSizeAndSquaredTestCount) {
    const Matrix r = gaussian(1440, 5, 9);
    for (int lag : {0, 1, 2}) {
        const auto g = build_graph(r, names(5), {1, lag}, 0, 4, 0.01);
        EXPECT_EQ(g.sample_size, 1440 - lag);
        EXPECT_DOUBLE_EQ(g.threshold, info::significance_threshold({4, 4, 1440 - lag, 0.01, 25}));
    }
}

TEST(BuildGraph, ZeroLagGraphEqualsTranspose) {
    Matrix r = gaussian(800, 6, 12);
    r.col(3) = r.col(0) + 0.3 * r.col(3);
    r.col(5) = -r.col(1) + 0.2 * r.col(5);
    const auto g = build_graph(r, names(6), {1, 0}, 0, 4, 0.01);
    EXPECT_TRUE(g.directed == g.directed.transpose());
    EXPECT_TRUE(g.weights == g.weights.transpose());
    EXPECT_GT(g.weights(0, 3), 0.0);
    EXPECT_GT(g.weights(1, 5), 0.0);
    EXPECT_EQ(g.validated_link_count, 4);
}

TEST(BuildGraph, PlantedLagDetectedOnlyAtPlantedLag) {
    // Leader 0 drives follower 1 at lag 1 with small noise; ten further noise assets.
    const int n = 12, planted = 1;
    int clean_seeds = 0, detected = 0;
    const int seeds = 40;
    for (int s = 0; s < seeds; ++s) {
        Matrix r = gaussian(1440 + 2, n, 500 + static_cast<std::uint64_t>(s));
        for (Eigen::Index t = r.rows() - 1; t >= planted; --t) r(t, 1) = -r(t - planted, 0) + 0.1 * r(t, 1);
        const Matrix window = r.bottomRows(1440);
        long false_positives = 0;
        for (int lag : {0, 1, 2}) {
            const auto g = build_graph(window, names(n), {1, lag}, 0, 4, 0.01);
            if (lag == planted) {
                detected += g.directed(0, 1) > 0.0;
                false_positives += g.validated_link_count - (g.directed(0, 1) > 0.0 ? 1 : 0);
            } else {
                false_positives += g.validated_link_count;
            }
        }
        clean_seeds += false_positives == 0;
    }
    EXPECT_EQ(detected, seeds);
    EXPECT_GE(clean_seeds, static_cast<int>(0.95 * seeds));
}

TEST(GraphIo, RoundTripThroughEdgeListAndSidecar) {
    Matrix r = gaussian(600, 4, 21);
    for (Eigen::Index t = 599; t >= 1; --t) r(t, 2) = r(t - 1, 0);
    const auto g = build_graph(r, {"AA", "BB", "CC", "DD"}, {5, 1}, 1'609'545'600'000LL, 4, 0.01);
    ASSERT_GT(g.validated_link_count, 0);
    oracle::TempDir dir("graph");
    const auto path = dir.path() / "d5_T1" / "1609545600000.csv";
    write_graph(g, path);
    const auto back = read_graph(path);
    EXPECT_EQ(back.spec, g.spec);
    EXPECT_EQ(back.window_end, g.window_end);
    EXPECT_EQ(back.assets, g.assets);
    EXPECT_EQ(back.validated_link_count, g.validated_link_count);
    EXPECT_EQ(back.sample_size, g.sample_size);
    EXPECT_EQ(back.threshold, g.threshold);
    EXPECT_TRUE(back.directed == g.directed);
    EXPECT_TRUE(back.weights == g.weights);
    EXPECT_TRUE(back.adjacency == g.adjacency);

    const auto csv = io::read_lines(path);
    EXPECT_EQ(csv.front(), "source,target,weight");
    const auto meta = nlohmann::json::parse(io::read_text(dir.path() / "d5_T1" / "1609545600000.json"));
    for (const char* key : {"spec", "window_end", "n", "validated_link_count"}) EXPECT_TRUE(meta.contains(key)) << key;
}

TEST(LagSpecLabel, Format) {
    EXPECT_EQ((LagSpec{5, 2}.label()), "d5_T2");
}
