#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "sgrushin/operator.hpp"

namespace sgrushin {
namespace {

constexpr double pi = std::numbers::pi;

TEST(BuildGrid, Examples) {
    const auto g = build_grid(3, 3);
    EXPECT_DOUBLE_EQ(g.hx, 0.25);
    EXPECT_DOUBLE_EQ(g.hy, 0.25);
    EXPECT_EQ(g.size(), 9);
    const auto g2 = build_grid(2, 4);
    EXPECT_DOUBLE_EQ(g2.hx, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(g2.hy, 0.2);
    EXPECT_EQ(g2.size(), 8);
    EXPECT_THROW(build_grid(1, 3), parameter_error);
}

TEST(BuildGrid, IndexIsBijection) {
    const auto g = build_grid(5, 7);
    std::vector<int> seen(g.size(), 0);
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) ++seen[static_cast<std::size_t>(g.index(i, j))];
    for (int c : seen) EXPECT_EQ(c, 1);
    EXPECT_GT(g.x(0), 0.0);
    EXPECT_LT(g.x(g.nx - 1), 1.0);
}

TEST(Assemble, StencilEntries) {
    const auto g = build_grid(3, 3);
    const auto op = assemble_grushin(g, 1.0, 0.0, 0.0);
    // x_1 = 1/2 is the middle column, i = 1
    EXPECT_DOUBLE_EQ(op.degeneracy(1), 0.25);
    const int k = g.index(1, 1);
    EXPECT_DOUBLE_EQ(op.a.coeff(k, g.index(1, 2)), 0.25 * 16.0);
    EXPECT_DOUBLE_EQ(op.a.coeff(k, g.index(2, 1)), 16.0);
    EXPECT_DOUBLE_EQ(op.a.coeff(k, k), -32.0 - 2.0 * 0.25 * 16.0);
    EXPECT_EQ(op.a.nonZeros(), 9 + 2 * 6 + 2 * 6);
}

TEST(Assemble, SingularDiagonal) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.24, 0.01);
    const int k = g.index(0, 3);
    const double cx = 1.0 / (g.hx * g.hx), cy = std::pow(g.hx + 0.01, 2.0) / (g.hy * g.hy);
    EXPECT_DOUBLE_EQ(op.potential(0), 0.24 / ((g.hx + 0.01) * (g.hx + 0.01)));
    EXPECT_DOUBLE_EQ(op.a.coeff(k, k), -2.0 * cx - 2.0 * cy + op.potential(0));
}

TEST(Assemble, SigmaBoundRejected) {
    const auto g = build_grid(4, 4);
    try {
        assemble_grushin(g, 1.0, 0.3, 0.1);
        FAIL();
    } catch (const parameter_error& e) {
        const std::string m = e.what();
        EXPECT_NE(m.find("sigma"), std::string::npos);
        EXPECT_NE(m.find("1/4"), std::string::npos);
    }
    EXPECT_THROW(assemble_grushin(g, 1.0, 0.25, 0.1), parameter_error);
    EXPECT_THROW(assemble_grushin(g, 1.0, -0.01, 0.1), parameter_error);
}

TEST(Assemble, BitwiseSymmetric) {
    for (double sig : {0.0, 0.1, 0.24}) {
        const auto g = build_grid(9, 6);
        const auto op = assemble_grushin(g, 1.5, sig, g.hx);
        const SpMat t = op.a.transpose();
        const SpMat d = op.a - t;
        for (int c = 0; c < d.outerSize(); ++c)
            for (SpMat::InnerIterator it(d, c); it; ++it) EXPECT_EQ(it.value(), 0.0);
    }
}

TEST(Assemble, DumpUsesSeventeenDigits) {
    const auto op = assemble_grushin(build_grid(2, 2), 1.0, 0.1, 0.3);
    std::ostringstream os;
    dump_coordinates(op, os);
    std::istringstream is(os.str());
    int r, c;
    double v;
    int count = 0;
    while (is >> r >> c >> v) {
        EXPECT_EQ(v, op.a.coeff(r, c));
        ++count;
    }
    EXPECT_EQ(count, op.a.nonZeros());
}

TEST(Eigen, LaplacianSmallest) {
    const auto op = assemble_grushin(build_grid(64, 64), 0.0, 0.0, 0.0);
    const auto ev = smallest_eigenvalues(op, 3);
    EXPECT_NEAR(ev[0], 2.0 * pi * pi, 0.01 * 2.0 * pi * pi);
    EXPECT_NEAR(ev[1], 5.0 * pi * pi, 0.01 * 5.0 * pi * pi);
    EXPECT_NEAR(ev[2], 5.0 * pi * pi, 0.01 * 5.0 * pi * pi);
    // exact discrete value
    const double h = 1.0 / 65.0;
    const double lam = 2.0 * 4.0 / (h * h) * std::pow(std::sin(pi * h / 2.0), 2.0);
    EXPECT_NEAR(ev[0], lam, 1e-7 * lam);
}

TEST(Eigen, SecondOrderRefinement) {
    double err[3];
    int n = 8;
    for (double& e : err) {
        const auto op = assemble_grushin(build_grid(n, n), 0.0, 0.0, 0.0);
        e = std::abs(smallest_eigenvalues(op, 1)[0] - 2.0 * pi * pi);
        n = 2 * n + 1;  // h halves exactly
    }
    EXPECT_NEAR(std::log2(err[0] / err[1]), 2.0, 0.1);
    EXPECT_NEAR(std::log2(err[1] / err[2]), 2.0, 0.1);
}

TEST(Eigen, PotentialLowersSpectrumAndStaysPositive) {
    const auto g = build_grid(16, 16);
    const double l0 = smallest_eigenvalues(assemble_grushin(g, 1.0, 0.0, g.hx), 1)[0];
    const double l1 = smallest_eigenvalues(assemble_grushin(g, 1.0, 0.2, g.hx), 1)[0];
    EXPECT_GT(l0, 0.0);
    EXPECT_LT(l1, l0);
    const auto all = smallest_eigenvalues(assemble_grushin(g, 2.0, 0.0, g.hx), 6);
    for (double v : all) EXPECT_GT(v, 0.0);
    EXPECT_THROW(smallest_eigenvalues(assemble_grushin(g, 2.0, 0.0, g.hx), 7), parameter_error);
}

TEST(Hardy, ClosedForms) {
    const auto q = hardy_quotient([](double x) { return x * (1 - x); }, [](double x) { return 1 - 2 * x; });
    EXPECT_NEAR(q.weighted, 1.0 / 3.0, 1e-7);
    EXPECT_NEAR(q.gradient, 1.0 / 3.0, 1e-7);
    // quotient against the sharp constant: (1/3) / (4/3)
    EXPECT_NEAR(q.normalized(), 0.25, 1e-6);
    const auto s = hardy_quotient([](double x) { return std::sin(pi * x); },
                                  [](double x) { return pi * std::cos(pi * x); });
    EXPECT_NEAR(s.gradient, pi * pi / 2.0, 1e-6);
    EXPECT_LT(s.ratio(), 4.0);
    // high-precision quadrature reference
    EXPECT_NEAR(s.weighted, 4.455254573255052, 1e-6);
    const auto z = hardy_quotient([](double) { return 0.0; }, [](double) { return 0.0; });
    EXPECT_EQ(z.ratio(), 0.0);
}

TEST(Hardy, RandomSplinesBounded) {
    const auto rep = hardy_check(1000, 3);
    EXPECT_EQ(rep.ratios.size(), 1000u);
    EXPECT_TRUE(rep.pass()) << rep.max_ratio;
    EXPECT_LE(rep.max_ratio, 4.004);
    EXPECT_GT(rep.max_ratio, 0.0);
}

TEST(Hardy, SplineInterpolates) {
    CubicSpline sp({0.0, 0.3, 0.7, 1.0}, {0.0, 1.0, -2.0, 0.0});
    EXPECT_NEAR(sp.value(0.3), 1.0, 1e-14);
    EXPECT_NEAR(sp.value(0.7), -2.0, 1e-14);
    EXPECT_NEAR(sp.value(1.0), 0.0, 1e-14);
    const double h = 1e-6;
    EXPECT_NEAR(sp.derivative(0.5), (sp.value(0.5 + h) - sp.value(0.5 - h)) / (2 * h), 1e-6);
}

}  // namespace
}  // namespace sgrushin
