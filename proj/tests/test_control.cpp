#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "sgrushin/control.hpp"

namespace sgrushin {
namespace {

constexpr double pi = std::numbers::pi;

struct Bench {
    DiscreteOperator op;
    BrownianTree tree;
    SpdeProblem pb;
    Bench(int n = 8, int nt = 6, double gamma = 1.0, double sigma = 0.1)
        : op(assemble_grushin(build_grid(n, n), gamma, sigma, 1.0 / (n + 1))),
          tree(build_tree(nt, 1.0)),
          pb(make_problem(op, tree, Regions{0.5, 0.2, 0.35})) {}
    const Grid2D& g() const { return op.grid; }
    Eigen::Index leaves() const { return tree.nodes(tree.nt); }
};

Eigen::MatrixXd random_leaves(const Bench& s, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::MatrixXd m(s.g().size(), s.leaves());
    for (Eigen::Index c = 0; c < m.cols(); ++c)
        for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = nd(rng);
    return m;
}

Vec bump(const Grid2D& g) {
    return sample(g, [](double x, double y, double) { return std::sin(pi * x) * std::sin(pi * y); }, 0.0);
}

TEST(Hum, ZeroTerminalGivesZero) {
    Bench s;
    const auto r = hum_apply(Eigen::MatrixXd::Zero(s.g().size(), s.leaves()), s.pb);
    EXPECT_EQ(r.gram.lpNorm<Eigen::Infinity>(), 0.0);
    EXPECT_EQ(r.v0.lpNorm<Eigen::Infinity>(), 0.0);
}

// E<Gram a, a> = sum_k dt E(|v_k 1_omega|^2 + |V_k|^2), computed independently
// from the backward trajectory.
TEST(Hum, QuadraticFormIsControlEnergy) {
    Bench s;
    std::mt19937_64 rng(7);
    const Eigen::MatrixXd a = random_leaves(s, rng);
    const auto r = hum_apply(a, s.pb);
    SpdeProblem bw = s.pb;
    bw.vT = AdaptedField(s.tree, s.g().size(), s.tree.nt, s.tree.nt);
    bw.vT->level(s.tree.nt) = a;
    const auto bt = solve_backward(bw);
    const Vec mask = omega_mask(s.g(), s.pb.regions);
    double e = 0.0;
    for (int k = 0; k < s.tree.nt; ++k) {
        e += s.tree.dt * level_expectation(bt.v, k, [&](const Vec& v) { return l2sq(s.g(), mask.cwiseProduct(v)); });
        e += s.tree.dt * level_expectation(bt.V, k, [&](const Vec& v) { return l2sq(s.g(), v); });
    }
    EXPECT_NEAR(leaf_inner(s.g(), r.gram, a), e, 1e-12 * e);
}

TEST(Hum, GramSymmetric) {
    Bench s;
    std::mt19937_64 rng(11);
    for (int t = 0; t < 5; ++t) {
        const Eigen::MatrixXd a = random_leaves(s, rng), b = random_leaves(s, rng);
        EXPECT_LE(gram_symmetry_defect(s.pb, a, b), 1e-10);
    }
}

TEST(Hum, GramPositiveSemidefinite) {
    Bench s(6, 5);
    std::mt19937_64 rng(13);
    for (int t = 0; t < 100; ++t) {
        const Eigen::MatrixXd a = random_leaves(s, rng);
        EXPECT_GE(leaf_inner(s.g(), hum_apply(a, s.pb).gram, a), 0.0);
    }
}

TEST(Hum, ProjectionIsOrthogonal) {
    Bench s;
    std::mt19937_64 rng(17);
    const Eigen::MatrixXd w = random_leaves(s, rng), z = random_leaves(s, rng);
    const Eigen::MatrixXd pw = project_space(s.tree, w, HumSpace::two_block);
    const Eigen::MatrixXd pz = project_space(s.tree, z, HumSpace::two_block);
    EXPECT_LE((project_space(s.tree, pw, HumSpace::two_block) - pw).norm(), 1e-12 * pw.norm());
    EXPECT_NEAR(leaf_inner(s.g(), pw, z), leaf_inner(s.g(), w, pz), 1e-12 * std::abs(leaf_inner(s.g(), pw, z)));
}

TEST(NullControl, ZeroInitialGivesZeroControl) {
    Bench s;
    const auto r = solve_null_control(s.pb);
    EXPECT_EQ(r.state.iterations, 0);
    EXPECT_EQ(r.final_norm, 0.0);
    EXPECT_EQ(r.energy_g + r.energy_G, 0.0);
    EXPECT_TRUE(r.support_ok);
}

TEST(NullControl, ReachesTargetOnDeskGrid) {
    Bench s;
    s.pb.u0 = bump(s.g());
    const auto r = solve_null_control(s.pb);
    EXPECT_LE(r.relative_final, 1e-3);
    EXPECT_LE(r.state.iterations, 500);
    EXPECT_TRUE(r.support_ok);
    EXPECT_GT(r.energy_g, 0.0);
    ASSERT_FALSE(r.state.log.empty());
    EXPECT_NEAR(r.state.log.back().final_norm, r.relative_final, 1e-6);
}

TEST(NullControl, FullLeafSpaceAgrees) {
    Bench s(6, 4);
    s.pb.u0 = bump(s.g());
    HumOptions o;
    const auto two = solve_null_control(s.pb, o);
    o.space = HumSpace::full;
    const auto full = solve_null_control(s.pb, o);
    EXPECT_LE(full.relative_final, 1e-3);
    // deterministic u0: the optimum carries no B(T) part in either space
    EXPECT_NEAR(full.energy_g + full.energy_G, two.energy_g + two.energy_G,
                1e-4 * (two.energy_g + two.energy_G));
}

TEST(NullControl, NoisyFreeDynamicsUseDiffusionControl) {
    Bench s(6, 4);
    s.pb.u0 = bump(s.g());
    const Vec f = 0.5 * bump(s.g());
    s.pb.F = [f](int) { return f; };
    HumOptions o;
    o.space = HumSpace::full;
    const auto r = solve_null_control(s.pb, o);
    EXPECT_LE(r.relative_final, 1e-3);
    EXPECT_GT(r.energy_G, 0.0);
    EXPECT_TRUE(r.support_ok);
}

TEST(NullControl, PenaltyTradeoff) {
    Bench s;
    s.pb.u0 = bump(s.g());
    double prev_norm = INFINITY, prev_energy = 0.0;
    for (double rho : {1e-4, 1e-6, 1e-8}) {
        HumOptions o;
        o.penalty = rho;
        const auto r = solve_null_control(s.pb, o);
        EXPECT_LT(r.relative_final, prev_norm) << rho;
        EXPECT_GT(r.energy_g + r.energy_G, prev_energy) << rho;
        prev_norm = r.relative_final;
        prev_energy = r.energy_g + r.energy_G;
    }
}

TEST(NullControl, IterationCapReported) {
    Bench s;
    s.pb.u0 = bump(s.g());
    HumOptions o;
    o.max_iter = 2;
    EXPECT_THROW(solve_null_control(s.pb, o), convergence_error);
    o.penalty = 0.0;
    EXPECT_THROW(solve_null_control(s.pb, o), parameter_error);
}

TEST(NullControl, SupportInvariantDetectsLeak) {
    Bench s;
    AdaptedField c(s.tree, s.g().size(), 0, s.tree.nt - 1);
    EXPECT_TRUE(support_invariant(s.g(), s.pb.regions, c));
    c.level(2)(s.g().index(s.g().nx - 1, 0), 1) = 1e-300;
    EXPECT_FALSE(support_invariant(s.g(), s.pb.regions, c));
}

TEST(NullControl, Export) {
    Bench s(4, 2);
    s.pb.u0 = bump(s.g());
    const auto r = solve_null_control(s.pb);
    std::ostringstream a, b;
    write_cg_log_csv(r.state, a);
    write_control_csv(s.tree, r.control.g, b);
    EXPECT_EQ(a.str().rfind("iteration,residual,final_norm\n", 0), 0u);
    EXPECT_EQ(b.str().rfind("level,path,node,value\n", 0), 0u);
}

}  // namespace
}  // namespace sgrushin
