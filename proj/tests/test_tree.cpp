#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "sgrushin/tree.hpp"

namespace sgrushin {
namespace {

TEST(BuildTree, Examples) {
    const auto t = build_tree(2, 1.0);
    AdaptedField b = brownian_field(t);
    const auto& leaves = b.level(2);
    EXPECT_DOUBLE_EQ(leaves(0, 0), std::sqrt(2.0));
    EXPECT_DOUBLE_EQ(leaves(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(leaves(0, 2), 0.0);
    EXPECT_DOUBLE_EQ(leaves(0, 3), -std::sqrt(2.0));
    const auto t4 = build_tree(1, 4.0);
    EXPECT_DOUBLE_EQ(t4.increment(0), 2.0);
    EXPECT_DOUBLE_EQ(t4.increment(1), -2.0);
    EXPECT_THROW(build_tree(25, 1.0), capacity_error);
    EXPECT_THROW(build_tree(0, 1.0), parameter_error);
    EXPECT_THROW(build_tree(3, 0.0), parameter_error);
}

TEST(BuildTree, MomentsExact) {
    const auto t = build_tree(10, 2.0);
    for (int k = 0; k <= t.nt; ++k) {
        Eigen::MatrixXd sq(1, t.nodes(k));
        double m = 0.0;
        for (std::int64_t b = 0; b < t.nodes(k); ++b) {
            sq(0, b) = t.brownian(k, b) * t.brownian(k, b);
            m += t.brownian(k, b);
        }
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR(mean_columns(sq)(0), t.time(k), 1e-13);
        EXPECT_EQ(sq.cols(), std::int64_t{1} << k);
    }
}

TEST(Expectation, Examples) {
    const auto t = build_tree(4, 1.0);
    AdaptedField c(t, 3);
    for (int k = 0; k <= 4; ++k) c.level(k).setConstant(2.5);
    for (int k = 0; k <= 4; ++k) EXPECT_EQ(expectation(c, k)(1), 2.5);
    const auto b = brownian_field(t);
    for (int k = 0; k <= 4; ++k) EXPECT_EQ(expectation(b, k)(0), 0.0);
    const auto t2 = build_tree(2, 1.0);
    AdaptedField sq(t2, 1, 2, 2);
    for (int b2 = 0; b2 < 4; ++b2) sq.level(2)(0, b2) = std::pow(t2.brownian(2, b2), 2);
    EXPECT_NEAR(expectation(sq, 2)(0), 1.0, 1e-15);
    EXPECT_THROW(expectation(sq, 1), parameter_error);
}

TEST(ConditionalStep, Examples) {
    const auto t = build_tree(1, 1.0);
    Eigen::MatrixXd next(1, 2);
    next << 3.0, 3.0;
    auto s = conditional_step(t, next, 0);
    EXPECT_EQ(s.mean(0), 3.0);
    EXPECT_EQ(s.mart(0), 0.0);
    next << 1.0, -1.0;
    s = conditional_step(t, next, 0);
    EXPECT_EQ(s.mean(0), 0.0);
    EXPECT_EQ(s.mart(0), 1.0);
    const auto t5 = build_tree(5, 1.0);
    const auto bf = brownian_field(t5);
    for (int k = 0; k < 5; ++k)
        for (std::int64_t b = 0; b < t5.nodes(k); ++b) {
            const auto st = conditional_step(t5, bf.level(k + 1), b);
            EXPECT_NEAR(st.mean(0), t5.brownian(k, b), 1e-15);
            EXPECT_NEAR(st.mart(0), 1.0, 1e-14);
        }
}

TEST(ConditionalStep, ReconstructsDyadicDataBitwise) {
    // dt = 1/4 so sqrt(dt) is a power of two; dyadic values make every step exact
    const auto tr = build_tree(6, 6.0 * 0.25);
    ASSERT_EQ(tr.sqrt_dt, 0.5);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> d(-1000, 1000);
    for (int k = 0; k < 6; ++k) {
        Eigen::MatrixXd next(4, tr.nodes(k + 1));
        for (int r = 0; r < 4; ++r)
            for (Eigen::Index c = 0; c < next.cols(); ++c) next(r, c) = d(rng) / 64.0;
        for (std::int64_t b = 0; b < tr.nodes(k); ++b) {
            const auto st = conditional_step(tr, next, b);
            const Eigen::VectorXd up = st.mean + st.mart * tr.increment(2 * b);
            const Eigen::VectorXd dn = st.mean + st.mart * tr.increment(2 * b + 1);
            for (int r = 0; r < 4; ++r) {
                EXPECT_EQ(up(r), next(r, 2 * b));
                EXPECT_EQ(dn(r), next(r, 2 * b + 1));
            }
        }
    }
}

TEST(ConditionalStep, ReconstructsGeneralDataToRounding) {
    const auto tr = build_tree(7, 1.0);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd next(3, tr.nodes(7));
    for (int r = 0; r < 3; ++r)
        for (Eigen::Index c = 0; c < next.cols(); ++c) next(r, c) = nd(rng);
    for (std::int64_t b = 0; b < tr.nodes(6); ++b) {
        const auto st = conditional_step(tr, next, b);
        for (int r = 0; r < 3; ++r) {
            EXPECT_NEAR(st.mean(r) + st.mart(r) * tr.increment(2 * b), next(r, 2 * b), 4e-16 * 8);
            EXPECT_NEAR(st.mean(r) + st.mart(r) * tr.increment(2 * b + 1), next(r, 2 * b + 1), 4e-16 * 8);
        }
    }
}

TEST(Expectation, TowerPropertyBitwise) {
    const auto tr = build_tree(9, 1.0);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd leaf(5, tr.nodes(9));
    for (int r = 0; r < 5; ++r)
        for (Eigen::Index c = 0; c < leaf.cols(); ++c) leaf(r, c) = nd(rng);
    Eigen::MatrixXd cur = leaf;
    const Eigen::VectorXd full = mean_columns(leaf);
    for (int k = 8; k >= 0; --k) {
        cur = conditional_means(cur);
        const Eigen::VectorXd e = mean_columns(cur);
        for (int r = 0; r < 5; ++r) EXPECT_EQ(e(r), full(r));
    }
}

TEST(Tree, PathsAndLeafDump) {
    const auto tr = build_tree(3, 1.0);
    EXPECT_EQ(tr.path(3, 0), "000");
    EXPECT_EQ(tr.path(3, 5), "101");
    EXPECT_EQ(tr.path(0, 0), "");
    // child 2b is up
    EXPECT_DOUBLE_EQ(tr.brownian(3, 2 * 3), tr.brownian(2, 3) + tr.sqrt_dt);
    const auto bf = brownian_field(tr);
    std::ostringstream os;
    write_leaves_csv(tr, bf, os);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "path,value");
    int n = 0;
    while (std::getline(is, line)) ++n;
    EXPECT_EQ(n, 8);
}

TEST(Tree, LevelStorageCounts) {
    const auto tr = build_tree(6, 1.0);
    AdaptedField f(tr, 4);
    for (int k = 0; k <= 6; ++k) {
        EXPECT_EQ(f.level(k).cols(), std::int64_t{1} << k);
        EXPECT_EQ(f.level(k).rows(), 4);
    }
    EXPECT_FALSE(f.has_level(7));
}

}  // namespace
}  // namespace sgrushin
