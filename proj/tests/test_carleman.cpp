#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "sgrushin/carleman.hpp"

namespace sgrushin {
namespace {

constexpr double pi = std::numbers::pi;

struct Mode {
    double lambda;
    Vec vec;
};

Mode first_mode(const DiscreteOperator& op) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-Eigen::MatrixXd(op.a));
    return {es.eigenvalues()(0), es.eigenvectors().col(0)};
}

/// Random combination of the first sine modes, amplitude ~ 1/(m n).
Vec smooth_random(const Grid2D& g, std::mt19937_64& rng, int modes = 3) {
    std::normal_distribution<double> n01;
    Vec out = Vec::Zero(g.size());
    for (int m = 1; m <= modes; ++m)
        for (int n = 1; n <= modes; ++n) {
            const double c = n01(rng) / (m * n);
            for (int i = 0; i < g.nx; ++i)
                for (int j = 0; j < g.ny; ++j)
                    out(g.index(i, j)) += c * std::sin(m * pi * g.x(i)) * std::sin(n * pi * g.y(j));
        }
    return out;
}

AdaptedField terminal(const BrownianTree& tree, const Vec& g0, const Vec& g1) {
    AdaptedField vT(tree, static_cast<int>(g0.size()), tree.nt, tree.nt);
    for (std::int64_t b = 0; b < tree.nodes(tree.nt); ++b)
        vT.level(tree.nt).col(b) = g0 + tree.brownian(tree.nt, b) * g1;
    return vT;
}

double cv(const std::vector<double>& v) {
    double m = 0, q = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m);
    return std::sqrt(q / static_cast<double>(v.size())) / m;
}

void expect_nonnegative_finite(const InequalityReport& r) {
    EXPECT_TRUE(r.finite()) << r.kind;
    for (const auto& t : r.terms) {
        EXPECT_GE(t.value, 0.0) << t.name;
        EXPECT_FALSE(std::isnan(t.log_value)) << t.name;
    }
}

// ---------------------------------------------------------------------------

TEST(Cutoff, CaseStructureAndJunctions) {
    const double a1 = 0.2, a2 = 0.35;
    const auto chi = make_cutoff(a1, a2);
    const auto g = build_grid(40, 4);
    for (int i = 0; i < g.nx; ++i) {
        const double x = g.x(i), v = chi.value(x);
        if (x <= a1) EXPECT_EQ(v, 0.0);
        else if (x >= a2) EXPECT_EQ(v, 1.0);
        else {
            EXPECT_GT(v, 0.0);
            EXPECT_LT(v, 1.0);
        }
    }
    EXPECT_NEAR(chi.value(0.5 * (a1 + a2)), 0.5, 1e-15);
    for (double x : {a1, a2}) {
        EXPECT_NEAR(chi.dx(x), 0.0, 1e-12);
        EXPECT_NEAR(chi.dxx(x), 0.0, 1e-9);
    }
    // second derivative tends to 0 linearly from inside the transition (C^2)
    for (double h : {1e-4, 1e-5, 1e-6}) {
        EXPECT_NEAR(chi.dxx(a1 + h) / h, 60.0 / std::pow(a2 - a1, 3), 1e-2 * 60.0 / std::pow(a2 - a1, 3));
        EXPECT_NEAR(-chi.dxx(a2 - h) / h, 60.0 / std::pow(a2 - a1, 3), 1e-2 * 60.0 / std::pow(a2 - a1, 3));
    }
    EXPECT_EQ(chi.dxx(a1 - 1e-6), 0.0);
    EXPECT_EQ(chi.dxx(a2 + 1e-6), 0.0);
}

TEST(Cutoff, ZetaOrientation) {
    const double a2 = 0.35, a = 0.5;
    const auto z = make_cutoff(a2, a, CutoffOrientation::zeta);
    EXPECT_EQ(z.value(0.1), 1.0);
    EXPECT_EQ(z.value(a2), 1.0);
    EXPECT_EQ(z.value(a), 0.0);
    EXPECT_EQ(z.value(0.9), 0.0);
    EXPECT_NEAR(z.value(0.5 * (a2 + a)), 0.5, 1e-15);
}

TEST(Cutoff, RejectsBadOrder) {
    EXPECT_THROW(make_cutoff(0.4, 0.3), parameter_error);
    EXPECT_THROW(make_cutoff(0.3, 0.3), parameter_error);
}

TEST(Quadrature, FittedCellMatchesSimpson) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const double la = 40.0 * U(rng) - 20.0, lb = 40.0 * U(rng) - 20.0;
        const double qa = U(rng), qb = U(rng);
        const int n = 20000;
        double s = 0.0;
        for (int k = 0; k <= n; ++k) {
            const double t = static_cast<double>(k) / n;
            const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
            s += w * std::exp(la + (lb - la) * t) * ((1 - t) * qa + t * qb);
        }
        s /= 3.0 * n;
        EXPECT_NEAR(std::exp(detail::fitted_cell(la, lb, qa, qb)) / s, 1.0, 1e-9);
    }
    // flat weight: trapezoid
    EXPECT_NEAR(std::exp(detail::fitted_cell(0.0, 0.0, 2.0, 4.0)), 3.0, 1e-15);
    EXPECT_NEAR(std::exp(detail::fitted_cell(0.0, 1e-6, 2.0, 4.0)), 3.0, 1e-5);
    // vanishing end weight
    EXPECT_EQ(detail::fitted_cell(detail::ninf, detail::ninf, 1.0, 1.0), detail::ninf);
}

TEST(Quadrature, LogAccumulatorMatchesSum) {
    LogAccumulator acc;
    double direct = 0.0;
    for (int k = 0; k < 50; ++k) {
        const double v = std::exp(0.3 * k - 7.0);
        direct += v;
        acc.add(std::log(v));
    }
    acc.add(detail::ninf);
    EXPECT_NEAR(std::exp(acc.log()) / direct, 1.0, 1e-14);
    // far beyond double range
    LogAccumulator big;
    big.add(1e6);
    big.add(1e6);
    EXPECT_NEAR(big.log() - 1e6, std::log(2.0), 1e-9);
}

// ---------------------------------------------------------------------------

TEST(CarlemanBackward, ZeroDataGivesZero) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(6, 1.0);
    auto pb = make_problem(op, tree);
    pb.vT = terminal(tree, Vec::Zero(g.size()), Vec::Zero(g.size()));
    const auto tr = solve_backward(pb);
    WeightParams p = default_params(1.0, 0.1, 1.0, g.hx);
    p.s = 4.0;
    const auto r = carleman_sides_backward(pb, tr, WeightFamily(WeightKind::singular, p));
    for (const auto& t : r.terms) EXPECT_EQ(t.value, 0.0) << t.name;
    EXPECT_EQ(r.ratio, 0.0);
    EXPECT_THROW(carleman_sides_backward(pb, tr, WeightFamily(WeightKind::regular, p)), parameter_error);
}

TEST(CarlemanBackward, EigenmodeRatioNonincreasingInS) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(8, 1.0);
    auto pb = make_problem(op, tree);
    const auto md = first_mode(op);
    pb.vT = terminal(tree, md.vec, Vec::Zero(g.size()));
    const auto tr = solve_backward(pb);
    WeightParams p = default_params(1.0, 0.1, 1.0, g.hx);
    double prev = std::numeric_limits<double>::infinity();
    for (double s : {4.0, 8.0, 16.0, 32.0}) {
        p.s = s;
        const auto r = carleman_sides_backward(pb, tr, WeightFamily(WeightKind::singular, p));
        expect_nonnegative_finite(r);
        EXPECT_GT(r.ratio, 0.0);
        EXPECT_LE(r.ratio, prev * (1.0 + 1e-12));
        prev = r.ratio;
    }
}

TEST(CarlemanBackward, EnsembleStableAtDefaultS) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(8, 1.0);
    auto pb = make_problem(op, tree);
    std::mt19937_64 rng(17);
    const WeightParams p0 = default_params(1.0, 0.1, 1.0, g.hx);
    std::vector<BackwardTrajectory> runs;
    std::vector<SpdeProblem> pbs;
    for (int k = 0; k < 20; ++k) {
        pb.vT = terminal(tree, Vec::Zero(g.size()), smooth_random(g, rng));
        pbs.push_back(pb);
        runs.push_back(solve_backward(pb));
    }
    const auto pol = choose_s(WeightFamily(WeightKind::singular, p0), g, tree, [&](const WeightFamily& w) {
        return carleman_sides_backward(pbs[0], runs[0], w).ratio;
    });
    EXPECT_TRUE(pol.stabilized);
    WeightParams p = p0;
    p.s = pol.s;
    const WeightFamily w(WeightKind::singular, p);
    std::vector<double> ratios;
    for (std::size_t k = 0; k < runs.size(); ++k) {
        const auto r = carleman_sides_backward(pbs[k], runs[k], w);
        expect_nonnegative_finite(r);
        EXPECT_GT(r.value("s^2*xi^2*theta^2*|F1|^2"), 0.0);
        ratios.push_back(r.ratio);
    }
    EXPECT_LT(cv(ratios), 0.5);
}

TEST(CarlemanBackward, ExplicitF1IsUsed) {
    const auto g = build_grid(6, 6);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(4, 1.0);
    auto pb = make_problem(op, tree);
    const auto md = first_mode(op);
    pb.vT = terminal(tree, md.vec, Vec::Zero(g.size()));
    const auto tr = solve_backward(pb);
    WeightParams p = default_params(1.0, 0.1, 1.0, g.hx);
    p.s = 1.0;
    const WeightFamily w(WeightKind::singular, p);
    const auto r0 = carleman_sides_backward(pb, tr, w);
    EXPECT_EQ(r0.value("s^2*xi^2*theta^2*|F1|^2"), 0.0);  // V = 0 for deterministic data
    const auto r1 = carleman_sides_backward(pb, tr, w, [&](int) { return md.vec; });
    EXPECT_GT(r1.value("s^2*xi^2*theta^2*|F1|^2"), 0.0);
    // the other terms do not depend on F1
    for (const std::string n : {"s*xi*theta^2*|v_x|^2", "s^3*xi^3*theta^2*|v|^2", "s^3*xi^3*theta^2*|v|^2 on omega"})
        EXPECT_EQ(r1.log_value(n), r0.log_value(n)) << n;
}

TEST(CarlemanBackward, WorkerCountDoesNotChangeBits) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(6, 1.0);
    auto pb = make_problem(op, tree);
    std::mt19937_64 rng(2);
    pb.vT = terminal(tree, smooth_random(g, rng), smooth_random(g, rng));
    const auto tr = solve_backward(pb);
    WeightParams p = default_params(1.0, 0.1, 1.0, g.hx);
    p.s = 0.5;
    const WeightFamily w(WeightKind::singular, p);
    const auto a = carleman_sides_backward(pb, tr, w, {}, 1);
    const auto b = carleman_sides_backward(pb, tr, w, {}, 4);
    ASSERT_EQ(a.terms.size(), b.terms.size());
    for (std::size_t i = 0; i < a.terms.size(); ++i) {
        EXPECT_EQ(a.terms[i].log_value, b.terms[i].log_value);
        EXPECT_EQ(a.terms[i].value, b.terms[i].value);
    }
    EXPECT_EQ(a.ratio, b.ratio);
}

// ---------------------------------------------------------------------------

struct ForwardSetup {
    Grid2D g = build_grid(8, 8);
    DiscreteOperator op = assemble_grushin(g, 0.5, 0.1, g.hx);
    BrownianTree tree = build_tree(8, 1.5);
    SpdeProblem pb = make_problem(op, tree);
    Field3 F2;

    explicit ForwardSetup(Field3 f) : F2(std::move(f)) { pb.F = at_level_times(g, tree, F2); }
    WeightParams params(double lambda) const {
        WeightParams p = default_params(0.5, 0.1, tree.horizon, g.hx);
        p.lambda = lambda;
        return p;
    }
};

Field3 sine_F2() {
    return [](double x, double y, double) { return std::sin(pi * x) * std::sin(pi * y); };
}

TEST(CarlemanForward, ZeroGivesZero) {
    ForwardSetup fs([](double, double, double) { return 0.0; });
    const auto tr = solve_forward(fs.pb);
    WeightParams p = fs.params(2.5);
    p.s = 1e-3;
    const auto r = carleman_sides_forward(fs.pb, tr, WeightFamily(WeightKind::regular, p), fs.F2, fs.F2);
    for (const auto& t : r.terms) EXPECT_EQ(t.value, 0.0) << t.name;
    EXPECT_EQ(r.ratio, 0.0);
    EXPECT_THROW(carleman_sides_forward(fs.pb, tr, WeightFamily(WeightKind::singular, p), {}, fs.F2), parameter_error);
}

TEST(CarlemanForward, DiffusionTermAcrossLambda) {
    ForwardSetup fs(sine_F2());
    const auto tr = solve_forward(fs.pb);
    const double T = fs.tree.horizon;
    double prev = 0.0;
    for (double lam : {T + 1.0, 2.0 * T, 4.0 * T}) {
        const WeightFamily w0(WeightKind::regular, fs.params(lam));
        const auto pol = choose_s(w0, fs.g, fs.tree, [&](const WeightFamily& w) {
            return carleman_sides_forward(fs.pb, tr, w, {}, fs.F2).ratio;
        });
        WeightParams p = fs.params(lam);
        p.s = pol.s;
        const auto r = carleman_sides_forward(fs.pb, tr, WeightFamily(WeightKind::regular, p), {}, fs.F2);
        expect_nonnegative_finite(r);
        EXPECT_GT(r.value("s*lam*Phi*Theta^2*|F2|^2"), 0.0);
        EXPECT_GT(r.ratio, 0.0);
        EXPECT_GT(r.extra, prev) << "lambda " << lam;
        prev = r.extra;
    }
}

TEST(CarlemanForward, DiffusionTermLinearInLambdaFactor) {
    ForwardSetup fs(sine_F2());
    const auto tr = solve_forward(fs.pb);
    WeightParams p = fs.params(3.0);
    p.s = resolution_cap(WeightFamily(WeightKind::regular, p), fs.g, fs.tree);
    const WeightFamily w(WeightKind::regular, p);
    const auto a = carleman_sides_forward(fs.pb, tr, w, {}, fs.F2, 1, 3.0);
    const auto b = carleman_sides_forward(fs.pb, tr, w, {}, fs.F2, 1, 6.0);
    const auto c = carleman_sides_forward(fs.pb, tr, w, {}, fs.F2);
    const std::string d = "s*lam*Phi*Theta^2*|F2|^2";
    EXPECT_NEAR(b.log_value(d) - a.log_value(d), std::log(2.0), 1e-12);
    EXPECT_NEAR(b.log_value("s*lam^2*Phi*Theta^2*|w_x|^2") - a.log_value("s*lam^2*Phi*Theta^2*|w_x|^2"),
                std::log(4.0), 1e-12);
    EXPECT_EQ(a.log_value(d), c.log_value(d));
    // terms without explicit lambda do not move
    EXPECT_EQ(a.log_value("s*Phi*Theta^2*|grad F2|^2"), b.log_value("s*Phi*Theta^2*|grad F2|^2"));
}

TEST(CarlemanForward, GradientTermDominatesForOscillatoryF2) {
    // small amplitude, growing frequency: the RHS grad F2 term overtakes the LHS diffusion term
    double prev = std::numeric_limits<double>::infinity();
    for (int K : {1, 2, 4}) {
        ForwardSetup fs([K](double x, double y, double) { return 0.05 * std::sin(K * pi * x) * std::sin(K * pi * y); });
        WeightParams p = fs.params(3.0);
        p.s = resolution_cap(WeightFamily(WeightKind::regular, p), fs.g, fs.tree) / 8.0;
        const auto r = carleman_sides_forward(fs.pb, solve_forward(fs.pb), WeightFamily(WeightKind::regular, p), {}, fs.F2);
        EXPECT_LT(r.extra, prev) << "K " << K;
        prev = r.extra;
        if (K == 4) EXPECT_GT(r.value("s*Phi*Theta^2*|grad F2|^2"), 10.0 * r.value("s*lam*Phi*Theta^2*|F2|^2"));
    }
}

TEST(CarlemanForward, EnsembleStableAtDefaultS) {
    ForwardSetup fs(sine_F2());
    const WeightParams p0 = fs.params(default_params(0.5, 0.1, fs.tree.horizon, fs.g.hx).lambda);
    std::mt19937_64 rng(23);
    std::vector<Field3> Fs;
    std::vector<SpdeProblem> pbs;
    std::vector<ForwardTrajectory> trs;
    for (int k = 0; k < 20; ++k) {
        std::normal_distribution<double> n01;
        const double a = n01(rng), b = n01(rng), c = n01(rng);
        Field3 F = [=](double x, double y, double) {
            return std::sin(pi * x) * std::sin(pi * y) * (1.0 + 0.3 * a) + 0.3 * b * std::sin(2 * pi * x) * std::sin(pi * y) +
                   0.3 * c * std::sin(pi * x) * std::sin(2 * pi * y);
        };
        SpdeProblem pb = fs.pb;
        pb.F = at_level_times(fs.g, fs.tree, F);
        Fs.push_back(F);
        trs.push_back(solve_forward(pb));
        pbs.push_back(pb);
    }
    const auto pol = choose_s(WeightFamily(WeightKind::regular, p0), fs.g, fs.tree, [&](const WeightFamily& w) {
        return carleman_sides_forward(pbs[0], trs[0], w, {}, Fs[0]).ratio;
    });
    WeightParams p = p0;
    p.s = pol.s;
    const WeightFamily w(WeightKind::regular, p);
    std::vector<double> ratios;
    for (std::size_t k = 0; k < trs.size(); ++k) {
        const auto r = carleman_sides_forward(pbs[k], trs[k], w, {}, Fs[k]);
        expect_nonnegative_finite(r);
        ratios.push_back(r.ratio);
    }
    EXPECT_LT(cv(ratios), 0.5);
}

TEST(CarlemanForward, QuadratureRefinementOnSmoothField) {
    // manufactured adapted field w = t x sin(pi x) sin(pi y) (1 + B(t)/4), F2, f2 smooth.
    // Terms whose integrands vanish on the boundary; the nodal sum is first order for the others.
    auto report = [](int n, int nt, double s) {
        const auto g = build_grid(n, n);
        const auto op = assemble_grushin(g, 0.5, 0.1, g.hx);
        const auto tree = build_tree(nt, 1.5);
        const auto pb = make_problem(op, tree);
        ForwardTrajectory tr{AdaptedField(tree, g.size())};
        for (int k = 0; k <= nt; ++k)
            for (std::int64_t b = 0; b < tree.nodes(k); ++b)
                for (int i = 0; i < g.nx; ++i)
                    for (int j = 0; j < g.ny; ++j)
                        tr.u.level(k)(g.index(i, j), b) = tree.time(k) * g.x(i) * std::sin(pi * g.x(i)) * std::sin(pi * g.y(j)) *
                                                          (1.0 + 0.25 * tree.brownian(k, b));
        WeightParams p = default_params(0.5, 0.1, 1.5, g.hx);
        p.lambda = 2.5;
        p.epsilon = 0.0;
        p.s = s;
        const Field3 F = [](double x, double y, double t) { return (1 + t) * std::sin(pi * x) * std::sin(pi * y); };
        return carleman_sides_forward(pb, tr, WeightFamily(WeightKind::regular, p), F, F);
    };
    const double s = 1e-16;  // weights vary by O(1) over the cylinder
    const auto a = report(16, 8, s);
    const auto b = report(32, 10, s);
    for (const std::string name : {"s*lam*Phi*Theta^2*|F2|^2", "Theta^2*|f2|^2", "s^3*lam^4*Phi^3*Theta^2*|w|^2",
                                   "s*lam^2*Phi*Theta^2*x^2g*|w_y|^2", "s^2*lam^2*Phi^2(T)*Theta^2(T)*w(T)^2"}) {
        const double va = std::exp(a.log_value(name)), vb = std::exp(b.log_value(name));
        EXPECT_LT(std::abs(vb / va - 1.0), 0.01) << name;
    }
}

// ---------------------------------------------------------------------------

TEST(Cacciopoli, ZeroAndEigenmode) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(8, 1.0);
    auto pb = make_problem(op, tree);
    WeightParams p = default_params(1.0, 0.1, 1.0, g.hx);
    p.s = 0.25;
    const WeightFamily w(WeightKind::singular, p);
    pb.vT = terminal(tree, Vec::Zero(g.size()), Vec::Zero(g.size()));
    const auto z = cacciopoli_sides(pb, solve_backward(pb), w);
    EXPECT_EQ(z.ratio, 0.0);
    for (const auto& t : z.terms) EXPECT_EQ(t.value, 0.0);
    pb.vT = terminal(tree, first_mode(op).vec, Vec::Zero(g.size()));
    const auto r = cacciopoli_sides(pb, solve_backward(pb), w);
    expect_nonnegative_finite(r);
    EXPECT_GT(r.ratio, 0.0);
    EXPECT_GT(r.value("theta^2*s*xi*|v_x|^2 on omega2"), 0.0);
}

TEST(Cacciopoli, SigmaSweepIsRecorded) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(6, 1.0);
    auto pb = make_problem(op, tree);
    pb.vT = terminal(tree, first_mode(op).vec, Vec::Zero(g.size()));
    WeightParams p = default_params(1.0, 0.1, 1.0, g.hx);
    p.s = 0.25;
    const auto sw = cacciopoli_sigma_sweep(pb, p, {0.1, 0.2, 0.24, 0.249});
    ASSERT_EQ(sw.ratio.size(), 4U);
    for (double r : sw.ratio) {
        EXPECT_TRUE(std::isfinite(r));
        EXPECT_GT(r, 0.0);
    }
    EXPECT_NEAR(sw.one_minus_4sigma_inv[3], 250.0, 1e-9);
}

// ---------------------------------------------------------------------------

TEST(Observability, ZeroIsZeroOverZero) {
    const auto g = build_grid(6, 6);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(4, 1.0);
    auto pb = make_problem(op, tree);
    pb.vT = terminal(tree, Vec::Zero(g.size()), Vec::Zero(g.size()));
    const auto r = observability_sides(pb, solve_backward(pb));
    EXPECT_EQ(r.ratio, 0.0);
}

TEST(Observability, EigenmodeClosedForm) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(6, 1.0);
    auto pb = make_problem(op, tree);
    const auto md = first_mode(op);
    pb.vT = terminal(tree, md.vec, Vec::Zero(g.size()));
    const auto r = observability_sides(pb, solve_backward(pb));
    const double mu = 1.0 / (1.0 + tree.dt * md.lambda);
    const Vec mask = omega_mask(g, pb.regions);
    const double om = l2sq(g, mask.cwiseProduct(md.vec));
    double integral = 0.0;  // trapezoid in time of mu^{2(nt-k)} om
    for (int k = 0; k < tree.nt; ++k)
        integral += 0.5 * tree.dt * (std::pow(mu, 2 * (tree.nt - k)) + std::pow(mu, 2 * (tree.nt - k - 1))) * om;
    const double lhs = std::pow(mu, 2 * tree.nt) * l2sq(g, md.vec);
    EXPECT_NEAR(std::exp(r.log_value("E||v(0)||^2")) / lhs, 1.0, 1e-12);
    EXPECT_NEAR(std::exp(r.log_value("E int_omega |v|^2")) / integral, 1.0, 1e-12);
    EXPECT_EQ(r.value("E int |V|^2"), 0.0);
    EXPECT_NEAR(r.ratio, lhs / integral, 1e-12 * lhs / integral);
}

double c_obs(double a, int samples, std::uint64_t seed) {
    const auto g = build_grid(8, 8);
    const auto op = assemble_grushin(g, 1.0, 0.1, g.hx);
    const auto tree = build_tree(6, 1.0);
    auto pb = make_problem(op, tree);
    pb.regions = Regions{a, 0.4 * a, 0.7 * a};
    std::mt19937_64 rng(seed);
    double mx = 0.0;
    for (int k = 0; k < samples; ++k) {
        const Vec g0 = smooth_random(g, rng), g1 = smooth_random(g, rng);
        pb.vT = terminal(tree, g0, g1);
        mx = std::max(mx, observability_sides(pb, solve_backward(pb)).ratio);
    }
    return mx;
}

TEST(Observability, EnsembleFiniteAndMonotoneInOmega) {
    const double c5 = c_obs(0.5, 50, 9), c25 = c_obs(0.25, 50, 9), c125 = c_obs(0.125, 50, 9);
    EXPECT_TRUE(std::isfinite(c5));
    EXPECT_GT(c5, 0.0);
    EXPECT_LE(c5, c25);
    EXPECT_LE(c25, c125);
}

// ---------------------------------------------------------------------------

TEST(Report, Writers) {
    InequalityReport r;
    r.kind = "demo";
    r.terms = {{"a", "lhs", std::log(2.0)}, {"b", "rhs", std::log(4.0)}};
    finalize(r);
    EXPECT_NEAR(r.ratio, 0.5, 1e-15);
    EXPECT_NEAR(r.value("a"), 0.5, 1e-15);
    std::ostringstream csv, js, svg;
    write_report_csv(r, csv);
    EXPECT_NE(csv.str().find("term_name,side,value\na,lhs,0.5"), std::string::npos);
    write_report_json(r, js);
    EXPECT_NE(js.str().find("\"ratio\": 0.5"), std::string::npos);
    EXPECT_NE(js.str().find("\"kind\": \"demo\""), std::string::npos);
    write_svg_chart(svg, "t", "s", "value", {{"a", {1, 2, 4}, {1, 0.5, 0.25}}});
    EXPECT_NE(svg.str().find("<polyline"), std::string::npos);
    EXPECT_NE(svg.str().find("</svg>"), std::string::npos);
}

}  // namespace
}  // namespace sgrushin
