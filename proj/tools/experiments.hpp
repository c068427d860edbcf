#pragma once

// One runner per subcommand. Each reads its settings, computes, records
// metrics and assertions on the Run, and writes its artifacts.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "app.hpp"
#include "sgrushin/carleman.hpp"
#include "sgrushin/control.hpp"
#include "sgrushin/ensembles.hpp"
#include "sgrushin/identity.hpp"
#include "sgrushin/inverse.hpp"
#include "sgrushin/operator.hpp"
#include "sgrushin/spde.hpp"
#include "sgrushin/weights.hpp"

namespace sgrushin::app {

struct Problem {
    double gamma = 1, sigma = 0.1, T = 1, eps = 0;
    int nx = 8, ny = 8, nt = 8;
    Regions regions;
    double alpha = 0, beta = 0;
    std::uint64_t seed = 1;
    Grid2D grid;
    DiscreteOperator op;
    BrownianTree tree;

    SpdeProblem spde() const {
        SpdeProblem pb = make_problem(op, tree, regions);
        const int n = grid.size();
        if (alpha != 0.0) pb.alpha = [n, a = alpha](int) { return Vec(Vec::Constant(n, a)); };
        if (beta != 0.0) pb.beta = [n, b = beta](int) { return Vec(Vec::Constant(n, b)); };
        return pb;
    }
};

/// Reads and cross-validates the problem block; errors name the key.
inline Problem read_problem(Settings& s) {
    Problem p;
    p.gamma = s.num("problem.gamma");
    s.require(p.gamma >= 0.0, "problem.gamma", "must be >= 0");
    p.sigma = s.num("problem.sigma");
    try {
        check_sigma(p.sigma);
    } catch (const parameter_error& e) {
        s.bad("problem.sigma", e.what());
    }
    p.T = s.num("problem.T");
    s.require(p.T > 0.0, "problem.T", "horizon must be > 0");
    p.nx = static_cast<int>(s.integer("problem.nx"));
    s.require(p.nx >= 2 && p.nx <= 256, "problem.nx", "need 2 <= nx <= 256");
    p.ny = s.has("problem.ny") ? static_cast<int>(s.integer("problem.ny")) : p.nx;
    s.require(p.ny >= 2 && p.ny <= 256, "problem.ny", "need 2 <= ny <= 256");
    p.nt = static_cast<int>(s.integer("problem.nt"));
    s.require(p.nt >= 1 && p.nt <= kMaxTreeDepth, "problem.nt",
              "need 1 <= nt <= " + std::to_string(kMaxTreeDepth) + " (2^nt leaves)");
    p.grid = build_grid(p.nx, p.ny);
    const std::string e = s.word("problem.epsilon");
    p.eps = e == "hx" ? p.grid.hx : s.num("problem.epsilon");
    s.require(p.eps >= 0.0 && p.eps < 1.0, "problem.epsilon", "need 0 <= epsilon < 1 or 'hx'");
    s.require(!(p.sigma > 0.0 && p.eps == 0.0), "problem.epsilon", "sigma > 0 needs epsilon > 0");
    p.regions = Regions{s.num("problem.a"), s.num("problem.a1"), s.num("problem.a2")};
    s.require(0.0 < p.regions.a1 && p.regions.a1 < p.regions.a2 && p.regions.a2 < p.regions.a && p.regions.a < 1.0,
              "problem.a", "need 0 < a1 < a2 < a < 1");
    p.alpha = s.num("problem.alpha");
    p.beta = s.num("problem.beta");
    const long long seed = s.integer("problem.seed");
    s.require(seed >= 0, "problem.seed", "must be >= 0");
    p.seed = static_cast<std::uint64_t>(seed);
    p.op = assemble_grushin(p.grid, p.gamma, p.sigma, p.eps);
    p.tree = build_tree(p.nt, p.T);
    return p;
}

inline WeightParams read_weights(Settings& s, const Problem& p) {
    const double d0 = s.num("weights.delta0");
    s.require(d0 > 0.0, "weights.delta0", "must be > 0");
    s.require(p.gamma > 0.0, "problem.gamma", "weights need gamma > 0");
    WeightParams w = default_params(p.gamma, p.sigma, p.T, p.eps, d0);
    w.tau = s.num("weights.tau");
    s.require(w.tau > 2.0 && w.tau < 3.0, "weights.tau", "need 2 < tau < 3");
    if (auto l = s.opt_num("weights.lambda")) {
        s.require(*l > 0.0, "weights.lambda", "must be > 0");
        w.lambda = *l;
    }
    if (auto m = s.opt_num("weights.mu")) {
        w.mu = *m;
        w.big_m = select_big_m(w.gamma, w.mu);
    }
    if (auto v = s.opt_num("weights.s")) {
        s.require(*v > 0.0, "weights.s", "must be > 0");
        w.s = *v;
    }
    return w;
}

inline int positive_int(Settings& s, const std::string& k, long long hi = 1'000'000) {
    const long long v = s.integer(k);
    s.require(v >= 1 && v <= hi, k, "need 1 <= value <= " + std::to_string(hi));
    return static_cast<int>(v);
}

inline double positive_num(Settings& s, const std::string& k) {
    const double v = s.num(k);
    s.require(v > 0.0, k, "must be > 0");
    return v;
}

struct Mode {
    double lambda = 0.0;
    Vec vec;
};

/// Lowest eigenpair of -A by dense decomposition (desk grids only).
inline Mode first_mode(const DiscreteOperator& op) {
    if (op.grid.size() > 2500) throw capacity_error("eigenmode oracle limited to nx*ny <= 2500");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(-Eigen::MatrixXd(op.a));
    return {es.eigenvalues()(0), es.eigenvectors().col(0)};
}

inline bool all_finite(const AdaptedField& f) {
    for (int k = f.first_level(); k <= f.last_level(); ++k)
        if (!f.level(k).allFinite()) return false;
    return true;
}

inline bool report_ok(const InequalityReport& r) {
    if (!std::isfinite(r.ratio)) return false;
    for (const auto& t : r.terms)
        if (!(std::isfinite(t.value) && t.value >= 0.0)) return false;
    return true;
}

inline json report_summary(const InequalityReport& r) {
    return {{"ratio", Run::finite_or_null(r.ratio)}, {"lhs_total", Run::finite_or_null(r.lhs_total)},
            {"rhs_total", Run::finite_or_null(r.rhs_total)}, {"log_scale", Run::finite_or_null(r.log_scale)},
            {"s", r.s}, {"lambda", r.lambda}};
}

inline void mean_square_chart(Run& r, const std::string& name, const std::string& title, const Problem& p,
                              const AdaptedField& f) {
    Series s{"E||.||^2", {}, {}};
    for (int k = f.first_level(); k <= f.last_level(); ++k) {
        s.x.push_back(p.tree.time(k));
        s.y.push_back(level_expectation(f, k, [&](const Vec& v) { return l2sq(p.grid, v); }));
    }
    r.svg(name, [&](std::ostream& os) { write_svg_chart(os, title, "t", "mean square norm", {s}, true); });
}

// ---------------------------------------------------------------------------

inline void run_solve_forward(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const std::string u0 = s.word("run.u0");
    s.require(u0 == "mode" || u0 == "bump" || u0 == "zero", "run.u0", "expected mode, bump or zero");
    const double fa = s.num("run.f_amp"), Fa = s.num("run.F_amp"), tol = positive_num(s, "run.oracle_tol");
    const Mode md = first_mode(p.op);
    const Vec bump = sine_bump(p.grid);
    SpdeProblem pb = p.spde();
    pb.u0 = u0 == "mode" ? md.vec : u0 == "bump" ? bump : Vec::Zero(p.grid.size());
    if (fa != 0.0) pb.f = [v = Vec(fa * bump)](int) { return v; };
    if (Fa != 0.0) pb.F = [v = Vec(Fa * bump)](int) { return v; };
    const auto tr = solve_forward(pb, r.workers());
    const auto e = energy_report(pb, tr);
    r.check("trajectory_finite", all_finite(tr.u), 0, 0);
    r.check("energy_report_finite", std::isfinite(e.lhs) && std::isfinite(e.rhs), e.c_emp, INFINITY);
    r.metrics()["energy"] = {{"sup_mean_square", e.sup_mean_square}, {"gradient", e.gradient},
                             {"dissipation", e.dissipation}, {"lhs", e.lhs}, {"rhs", e.rhs}, {"C_emp", e.c_emp}};

    // eigenmode decay: u(T) = (1 + dt l1)^{-nt} e1 on every leaf
    SpdeProblem ob = make_problem(p.op, p.tree, p.regions);
    ob.u0 = md.vec;
    const auto ot = solve_forward(ob, r.workers());
    const Vec expect = std::pow(1.0 + p.tree.dt * md.lambda, -p.nt) * md.vec;
    double decay = 0.0;
    for (std::int64_t b = 0; b < p.tree.nodes(p.nt); ++b)
        decay = std::max(decay, (ot.u.level(p.nt).col(b) - expect).norm() / expect.norm());
    r.check("eigenmode_decay", decay <= tol, decay, tol);

    // Ito isometry with F = c e1: solver vs closed form vs brute-force path enumeration
    const int nti = std::min(p.nt, 8);
    const auto tree = build_tree(nti, p.T);
    SpdeProblem ib = make_problem(p.op, tree, p.regions);
    const double c = 0.7;
    ib.F = [v = Vec(c * md.vec)](int) { return v; };
    const auto it = solve_forward(ib, r.workers());
    double closed = 0.0;
    for (int k = 0; k < nti; ++k) closed += tree.dt * std::pow(1.0 + tree.dt * md.lambda, -2.0 * (nti - k));
    closed *= c * c;
    const Eigen::MatrixXd Sm =
        (Eigen::MatrixXd::Identity(p.grid.size(), p.grid.size()) - tree.dt * Eigen::MatrixXd(p.op.a)).inverse();
    double brute = 0.0, solver = 0.0;
    for (std::int64_t leaf = 0; leaf < tree.nodes(nti); ++leaf) {
        Vec u = Vec::Zero(p.grid.size());
        for (int m = 0; m < nti; ++m) {
            const bool down = (leaf >> (nti - 1 - m)) & 1;
            u = Sm * (u + (down ? -tree.sqrt_dt : tree.sqrt_dt) * c * md.vec);
        }
        brute += u.squaredNorm();
        solver += it.u.level(nti).col(leaf).squaredNorm();
    }
    brute /= static_cast<double>(tree.nodes(nti));
    solver /= static_cast<double>(tree.nodes(nti));
    const double ito = std::max(std::abs(solver - brute) / brute, std::abs(solver - closed) / closed);
    r.check("ito_isometry_enumeration", ito <= 1e-12, ito, 1e-12, "nt=" + std::to_string(nti));
    r.metrics()["oracles"] = {{"lambda1", md.lambda}, {"decay_rel", decay}, {"ito_rel", ito},
                              {"ito_closed", closed}, {"ito_solver", solver}};

    r.csv("trajectory", [&](std::ostream& os) { write_trajectory_csv(p.tree, tr.u, os); });
    r.json_from("energy", [&](std::ostream& os) { write_energy_json(e, os); });
    mean_square_chart(r, "mean_square", "forward solution", p, tr.u);
}

inline void run_solve_backward(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const double tol = positive_num(s, "run.oracle_tol");
    std::mt19937_64 rng(p.seed);
    const Vec g1 = smooth_random(p.grid, rng);
    SpdeProblem pb = p.spde();
    pb.vT = terminal_data(p.tree, sine_bump(p.grid), g1);
    const auto tr = solve_backward(pb, r.workers());
    const auto e = energy_report(pb, tr);
    r.check("trajectory_finite", all_finite(tr.v) && all_finite(tr.V), 0, 0);
    r.check("energy_report_finite", std::isfinite(e.lhs) && std::isfinite(e.rhs), e.c_emp, INFINITY);
    r.metrics()["energy"] = {{"sup_mean_square", e.sup_mean_square}, {"gradient", e.gradient},
                             {"diffusion", e.diffusion}, {"dissipation", e.dissipation}, {"lhs", e.lhs},
                             {"rhs", e.rhs}, {"C_emp", e.c_emp}};

    // vT = B(T) g, no coefficients: v_k = B(t_k) S^{nt-k} g, V_k = S^{nt-k} g
    SpdeProblem ob = make_problem(p.op, p.tree, p.regions);
    ob.vT = terminal_data(p.tree, Vec::Zero(p.grid.size()), g1);
    const auto ot = solve_backward(ob, r.workers());
    const StepSolver S(p.op, p.tree, {});
    Vec sg = g1;
    double ev_err = 0.0, eV_err = 0.0;
    for (int k = p.nt - 1; k >= 0; --k) {
        sg = S.apply(k, sg);
        for (std::int64_t b = 0; b < p.tree.nodes(k); ++b) {
            const Vec ev = p.tree.brownian(k, b) * sg;
            ev_err = std::max(ev_err, (ot.v.level(k).col(b) - ev).norm() / (std::max(1.0, ev.norm()) * sg.norm()));
            eV_err = std::max(eV_err, (ot.V.level(k).col(b) - sg).norm() / sg.norm());
        }
    }
    r.check("closed_form_v", ev_err <= tol, ev_err, tol);
    r.check("closed_form_V", eV_err <= tol, eV_err, tol);
    r.metrics()["oracles"] = {{"v_rel", ev_err}, {"V_rel", eV_err}};

    r.csv("v", [&](std::ostream& os) { write_trajectory_csv(p.tree, tr.v, os); });
    r.csv("V", [&](std::ostream& os) { write_trajectory_csv(p.tree, tr.V, os); });
    r.json_from("energy", [&](std::ostream& os) { write_energy_json(e, os); });
    mean_square_chart(r, "mean_square", "backward solution v", p, tr.v);
}

// ---------------------------------------------------------------------------

inline void run_identity_check(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const int fields = positive_int(s, "run.fields"), points = positive_int(s, "run.points", 10000);
    const double tol = positive_num(s, "run.residual_tol"), ulp_tol = positive_num(s, "run.ulp_tol");
    struct Trial {
        SmoothField fld;
        WeightParams ps, pr;
        std::vector<SamplePoint> pts;
    };
    // all randomness drawn serially, so the ensemble is independent of the worker count
    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Trial> trials;
    for (int f = 0; f < fields; ++f) {
        Trial t;
        t.fld = SmoothField::random(rng);
        t.ps = default_params(0.3 + 2.0 * u(rng), 0.24 * u(rng), 0.5 + u(rng), 0.01 + 0.2 * u(rng));
        t.ps.tau = 2.0 + u(rng);
        t.ps.lambda = 0.2 + 1.5 * u(rng);
        t.ps.s = 0.1 + 4.0 * u(rng);
        t.pts = random_points(points, t.ps.horizon, rng());
        t.pr = t.ps;
        t.pr.gamma = 0.3 + 0.9 * u(rng);
        t.pr.mu = select_mu(t.pr.gamma, t.pr.delta0);
        t.pr.big_m = select_big_m(t.pr.gamma, t.pr.mu);
        t.pr.lambda = std::sqrt(t.pr.mu * 1.3) + u(rng);
        trials.push_back(std::move(t));
    }
    std::vector<ResidualSummary> bw(trials.size()), fw(trials.size());
    parallel_for(trials.size(), r.workers(), [&](std::size_t i) {
        const Trial& t = trials[i];
        bw[i] = drift_residual_backward(WeightFamily(WeightKind::singular, t.ps), t.fld, t.pts);
        fw[i] = drift_residual_forward(WeightFamily(WeightKind::regular, t.pr), t.fld, t.pts);
    });
    double wb = 0, wf = 0, wl = 0;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        wb = std::max(wb, bw[i].max_rel);
        wf = std::max(wf, fw[i].max_rel);
        wl = std::max({wl, bw[i].max_ledger_rel, fw[i].max_ledger_rel});
    }
    // quadratic-variation bookkeeping on random values
    std::uniform_real_distribution<double> v(-3.0, 3.0);
    double ulps = 0.0;
    for (int k = 0; k < fields; ++k) {
        QvInput q;
        q.theta = 2.0 * u(rng);
        q.f = v(rng); q.fx = v(rng); q.fy = v(rng);
        q.lx = v(rng); q.ly = v(rng); q.lt = v(rng);
        q.a = u(rng); q.v = v(rng);
        ulps = std::max(ulps, quadratic_variation_check(q).max_ulps());
    }
    r.check("backward_drift_residual", wb <= tol, wb, tol);
    r.check("forward_drift_residual", wf <= tol, wf, tol);
    r.check("term_ledger_residual", wl <= tol, wl, tol);
    r.check("quadratic_variation_ulps", ulps <= ulp_tol, ulps, ulp_tol);
    r.metrics() = {{"fields", fields}, {"points_per_field", points}, {"backward_max_rel", wb},
                   {"forward_max_rel", wf}, {"ledger_max_rel", wl}, {"qv_max_ulps", ulps}};
    r.csv("residuals", [&](std::ostream& os) {
        os << "field,backward_rel,forward_rel,backward_ledger_rel,forward_ledger_rel\n";
        for (std::size_t i = 0; i < trials.size(); ++i)
            os << i << ',' << bw[i].max_rel << ',' << fw[i].max_rel << ',' << bw[i].max_ledger_rel << ','
               << fw[i].max_ledger_rel << '\n';
    });
    r.json_file("summary", r.metrics());
    Series sb{"backward", {}, {}}, sf{"forward", {}, {}};
    for (std::size_t i = 0; i < trials.size(); ++i) {
        sb.x.push_back(static_cast<double>(i));
        sb.y.push_back(std::max(bw[i].max_rel, 1e-300));
        sf.x.push_back(static_cast<double>(i));
        sf.y.push_back(std::max(fw[i].max_rel, 1e-300));
    }
    r.svg("residuals", [&](std::ostream& os) {
        write_svg_chart(os, "identity residual per field", "field", "relative residual", {sb, sf}, true);
    });
}

// ---------------------------------------------------------------------------

inline void run_weight_check(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const auto gammas = s.list("run.gammas"), sigmas = s.list("run.sigmas"), mesh = s.list("run.mesh");
    s.require(mesh.size() == 3 && mesh[0] >= 2 && mesh[1] >= 2 && mesh[2] >= 1, "run.mesh", "expected nx, ny, nt");
    for (double g : gammas) s.require(g > 0.0, "run.gammas", "need gamma > 0");
    for (double sg : sigmas) s.require(sg >= 0.0 && sg < 0.25, "run.sigmas", "need 0 <= sigma < 1/4");
    const PropertyMesh pm{static_cast<int>(mesh[0]), static_cast<int>(mesh[1]), static_cast<int>(mesh[2])};
    const WeightParams base = read_weights(s, p);
    struct Row {
        double gamma, sigma, lambda;
        PropertyReport rep;
    };
    std::vector<Row> rows;
    for (double g : gammas)
        for (double sg : sigmas) rows.push_back({g, sg, 0.0, {}});
    parallel_for(rows.size(), r.workers(), [&](std::size_t i) {
        WeightParams w = default_params(rows[i].gamma, rows[i].sigma, p.T, p.eps, base.delta0);
        w.tau = base.tau;
        if (s.user_has("weights.mu")) {
            w.mu = base.mu;
            w.big_m = base.big_m;
        }
        // the regular family needs lambda^2 > mu (1 + eps); the default lambda is raised to that range
        w.lambda = s.user_has("weights.lambda") ? base.lambda
                                                : std::max(base.lambda, std::sqrt(1.3 * w.mu * (1.0 + w.epsilon)));
        rows[i].lambda = w.lambda;
        rows[i].rep = verify_weight_properties(w, pm);
    });
    json combos = json::array();
    for (const auto& row : rows) {
        const auto failed = row.rep.failed();
        std::string names;
        for (const auto& f : failed) names += (names.empty() ? "" : " ") + f;
        std::ostringstream nm;
        nm << "admissible gamma=" << row.gamma << " sigma=" << row.sigma;
        r.check(nm.str(),
                row.rep.admissible(), static_cast<double>(failed.size()), 0, names);
        combos.push_back({{"gamma", row.gamma}, {"sigma", row.sigma}, {"lambda", row.lambda},
                          {"admissible", row.rep.admissible()}, {"failed", failed}});
    }
    // an inadmissible mu must be caught, and by the right property
    WeightParams bad = default_params(1.0, 0.0, p.T, p.eps, base.delta0);
    bad.mu = 1.0;
    bad.big_m = 2.0;
    bad.lambda = 5.0;
    const auto brep = verify_weight_properties(bad, {64, 64, 16});
    const auto* px = brep.find("psi_x_lt_minus_delta0");
    const auto* mc = brep.find("mu_condition");
    r.check("mu_violation_names_psi_x", !brep.admissible() && px && !px->pass && mc && !mc->pass,
            static_cast<double>(brep.failed().size()), 0);
    r.metrics() = {{"mesh", mesh}, {"combinations", combos}, {"mu_violation_failed", brep.failed()}};
    r.csv("properties", [&](std::ostream& os) {
        os << "gamma,sigma,lambda,property_id,pass,worst_x,worst_y,worst_t,margin,constant_C\n";
        auto num = [&](double v) {
            if (!std::isnan(v)) os << v;
        };
        for (const auto& row : rows)
            for (const auto& it : row.rep.items) {
                os << row.gamma << ',' << row.sigma << ',' << row.lambda << ',' << it.id << ','
                   << (it.pass ? "true" : "false") << ',' << it.worst_x << ',' << it.worst_y << ',' << it.worst_t
                   << ',';
                num(it.margin);
                os << ',';
                num(it.constant_c);
                os << '\n';
            }
    });
    r.json_file("summary", r.metrics());
}

// ---------------------------------------------------------------------------

inline Series policy_series(const SPolicy& pol) {
    Series sr{"ratio", {}, {}};
    for (std::size_t i = 0; i < pol.tried.size(); ++i) {
        sr.x.push_back(std::log10(pol.tried[i]));
        sr.y.push_back(pol.ratios[i]);
    }
    return sr;
}

inline void policy_csv(Run& r, const SPolicy& pol) {
    r.csv("s_sweep", [&](std::ostream& os) {
        os << "s,ratio\n";
        for (std::size_t i = 0; i < pol.tried.size(); ++i) os << pol.tried[i] << ',' << pol.ratios[i] << '\n';
    });
}

inline void ensemble_csv(Run& r, const std::vector<InequalityReport>& reps) {
    r.csv("ensemble", [&](std::ostream& os) {
        os << "sample,ratio,lhs_total,rhs_total,log_scale,extra\n";
        for (std::size_t i = 0; i < reps.size(); ++i)
            os << i << ',' << reps[i].ratio << ',' << reps[i].lhs_total << ',' << reps[i].rhs_total << ','
               << reps[i].log_scale << ',' << reps[i].extra << '\n';
    });
}

inline void run_carleman_backward(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const int n = positive_int(s, "run.samples", 10000);
    const double cv_max = positive_num(s, "run.cv_max");
    const WeightParams p0 = read_weights(s, p);
    std::mt19937_64 rng(p.seed);
    std::vector<SpdeProblem> pbs;
    for (int k = 0; k < n; ++k) {
        SpdeProblem pb = p.spde();
        pb.vT = terminal_data(p.tree, Vec::Zero(p.grid.size()), smooth_random(p.grid, rng));
        pbs.push_back(std::move(pb));
    }
    std::vector<BackwardTrajectory> runs(pbs.size());
    parallel_for(pbs.size(), r.workers(), [&](std::size_t i) { runs[i] = solve_backward(pbs[i]); });
    WeightParams wp = p0;
    SPolicy pol;
    if (!s.user_has("weights.s")) {
        pol = choose_s(WeightFamily(WeightKind::singular, p0), p.grid, p.tree, [&](const WeightFamily& w) {
            return carleman_sides_backward(pbs[0], runs[0], w, {}, r.workers()).ratio;
        });
        r.check("s_policy_stabilized", pol.stabilized, pol.s, 0);
        wp.s = pol.s;
    }
    const WeightFamily w(WeightKind::singular, wp);
    std::vector<InequalityReport> reps(pbs.size());
    for (std::size_t i = 0; i < pbs.size(); ++i) reps[i] = carleman_sides_backward(pbs[i], runs[i], w, {}, r.workers());
    std::vector<double> ratios;
    bool ok = true;
    for (const auto& x : reps) {
        ok = ok && report_ok(x) && x.ratio > 0.0;
        ratios.push_back(x.ratio);
    }
    const double cv = coefficient_of_variation(ratios);
    r.check("terms_finite_nonnegative", ok, 0, 0);
    r.check("ensemble_cv", cv < cv_max, cv, cv_max, std::to_string(n) + " samples");
    r.metrics() = {{"s", wp.s}, {"lambda", wp.lambda}, {"mu", wp.mu}, {"cv", cv},
                   {"ratio_min", *std::min_element(ratios.begin(), ratios.end())},
                   {"ratio_max", *std::max_element(ratios.begin(), ratios.end())}, {"sample0", report_summary(reps[0])}};
    ensemble_csv(r, reps);
    r.csv("report", [&](std::ostream& os) { write_report_csv(reps[0], os); });
    r.json_from("report", [&](std::ostream& os) { write_report_json(reps[0], os); });
    if (!pol.tried.empty()) {
        policy_csv(r, pol);
        r.svg("s_sweep", [&](std::ostream& os) {
            write_svg_chart(os, "backward Carleman ratio vs s", "log10 s", "LHS/RHS", {policy_series(pol)}, true);
        });
    }
}

inline void run_carleman_forward(Run& r, const Problem& p) {
    constexpr double pi = std::numbers::pi;
    Settings& s = r.cfg();
    const int n = positive_int(s, "run.samples", 10000);
    const double cv_max = positive_num(s, "run.cv_max");
    const WeightParams p0 = read_weights(s, p);
    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> n01;
    std::vector<Field3> Fs;
    std::vector<SpdeProblem> pbs;
    for (int k = 0; k < n; ++k) {
        const double a = n01(rng), b = n01(rng), c = n01(rng);
        Field3 F = [=](double x, double y, double) {
            return std::sin(pi * x) * std::sin(pi * y) * (1.0 + 0.3 * a) +
                   0.3 * b * std::sin(2 * pi * x) * std::sin(pi * y) + 0.3 * c * std::sin(pi * x) * std::sin(2 * pi * y);
        };
        SpdeProblem pb = p.spde();
        pb.F = at_level_times(p.grid, p.tree, F);
        Fs.push_back(F);
        pbs.push_back(std::move(pb));
    }
    std::vector<ForwardTrajectory> trs(pbs.size());
    parallel_for(pbs.size(), r.workers(), [&](std::size_t i) { trs[i] = solve_forward(pbs[i]); });
    WeightParams wp = p0;
    SPolicy pol;
    if (!s.user_has("weights.s")) {
        pol = choose_s(WeightFamily(WeightKind::regular, p0), p.grid, p.tree, [&](const WeightFamily& w) {
            return carleman_sides_forward(pbs[0], trs[0], w, {}, Fs[0], r.workers()).ratio;
        });
        wp.s = pol.s;
    }
    const WeightFamily w(WeightKind::regular, wp);
    std::vector<InequalityReport> reps(pbs.size());
    for (std::size_t i = 0; i < pbs.size(); ++i)
        reps[i] = carleman_sides_forward(pbs[i], trs[i], w, {}, Fs[i], r.workers());
    std::vector<double> ratios;
    bool ok = true;
    for (const auto& x : reps) {
        ok = ok && report_ok(x) && x.ratio > 0.0;
        ratios.push_back(x.ratio);
    }
    const double cv = coefficient_of_variation(ratios);
    r.check("terms_finite_nonnegative", ok, 0, 0);
    r.check("ensemble_cv", cv < cv_max, cv, cv_max, std::to_string(n) + " samples");

    // lambda sweep at fixed solution; s re-chosen per lambda
    const std::vector<double> lambdas =
        s.has("run.lambdas") ? s.list("run.lambdas") : std::vector<double>{p.T + 1.0, 2.0 * p.T, 4.0 * p.T};
    const Field3 F2 = [](double x, double y, double) { return std::sin(pi * x) * std::sin(pi * y); };
    SpdeProblem lb = p.spde();
    lb.F = at_level_times(p.grid, p.tree, F2);
    const auto ltr = solve_forward(lb, r.workers());
    Series se{"diffusion LHS / grad F2 RHS", {}, {}};
    json sweep = json::array();
    bool mono = true, lok = true;
    double prev = -INFINITY;
    for (double lam : lambdas) {
        WeightParams q = p0;
        q.lambda = lam;
        const auto lp = choose_s(WeightFamily(WeightKind::regular, q), p.grid, p.tree, [&](const WeightFamily& wf) {
            return carleman_sides_forward(lb, ltr, wf, {}, F2, r.workers()).ratio;
        });
        q.s = lp.s;
        const auto rep = carleman_sides_forward(lb, ltr, WeightFamily(WeightKind::regular, q), {}, F2, r.workers());
        lok = lok && report_ok(rep) && rep.value("s*lam*Phi*Theta^2*|F2|^2") > 0.0;
        mono = mono && rep.extra > prev;
        prev = rep.extra;
        se.x.push_back(lam);
        se.y.push_back(rep.extra);
        sweep.push_back({{"lambda", lam}, {"s", q.s}, {"ratio", rep.ratio}, {"extra", rep.extra}});
    }
    r.check("lambda_sweep_finite", lok, 0, 0);
    r.check("diffusion_term_monotone_in_lambda", mono, prev, 0);
    r.metrics() = {{"s", wp.s}, {"lambda", wp.lambda}, {"mu", wp.mu}, {"cv", cv},
                   {"ratio_min", *std::min_element(ratios.begin(), ratios.end())},
                   {"ratio_max", *std::max_element(ratios.begin(), ratios.end())},
                   {"sample0", report_summary(reps[0])}, {"lambda_sweep", sweep}};
    ensemble_csv(r, reps);
    r.csv("report", [&](std::ostream& os) { write_report_csv(reps[0], os); });
    r.json_from("report", [&](std::ostream& os) { write_report_json(reps[0], os); });
    r.csv("lambda_sweep", [&](std::ostream& os) {
        os << "lambda,s,ratio,extra\n";
        for (const auto& x : sweep)
            os << x["lambda"].get<double>() << ',' << x["s"].get<double>() << ',' << x["ratio"].get<double>() << ','
               << x["extra"].get<double>() << '\n';
    });
    r.svg("lambda_sweep", [&](std::ostream& os) {
        write_svg_chart(os, "forward Carleman diffusion term vs lambda", "lambda", "ratio", {se}, true);
    });
    if (!pol.tried.empty()) policy_csv(r, pol);
}

// ---------------------------------------------------------------------------

inline void run_cacciopoli(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const auto sigmas = s.list("run.sigmas");
    for (double sg : sigmas) s.require(sg >= 0.0 && sg < 0.25, "run.sigmas", "need 0 <= sigma < 1/4 (Hardy bound 1/4)");
    const WeightParams wp = read_weights(s, p);
    SpdeProblem pb = p.spde();
    pb.vT = terminal_data(p.tree, first_mode(p.op).vec, Vec::Zero(p.grid.size()));
    const auto sw = cacciopoli_sigma_sweep(pb, wp, sigmas, r.workers());
    bool finite = true, mono = true;
    for (std::size_t i = 0; i < sw.ratio.size(); ++i) {
        finite = finite && std::isfinite(sw.ratio[i]) && sw.ratio[i] > 0.0;
        if (i > 0) mono = mono && sw.ratio[i] > sw.ratio[i - 1];
    }
    const double growth = sw.ratio.size() > 1 ? sw.ratio.back() / sw.ratio.front() : 1.0;
    r.check("ratios_finite_positive", finite, 0, 0);
    r.check("ratio_grows_toward_quarter", mono, growth, 1.0, "ratio(last)/ratio(first)");
    r.metrics() = {{"s", wp.s}, {"lambda", wp.lambda}, {"sigma", sw.sigma}, {"ratio", sw.ratio},
                   {"one_minus_4sigma_inv", sw.one_minus_4sigma_inv}, {"growth", growth}};
    r.csv("sigma_sweep", [&](std::ostream& os) {
        os << "sigma,ratio,one_minus_4sigma_inv\n";
        for (std::size_t i = 0; i < sw.sigma.size(); ++i)
            os << sw.sigma[i] << ',' << sw.ratio[i] << ',' << sw.one_minus_4sigma_inv[i] << '\n';
    });
    r.json_file("summary", r.metrics());
    Series a{"ratio / ratio(first)", sw.sigma, {}}, b{"(1-4 sigma)^-1 / first", sw.sigma, {}};
    for (std::size_t i = 0; i < sw.sigma.size(); ++i) {
        a.y.push_back(sw.ratio[i] / sw.ratio[0]);
        b.y.push_back(sw.one_minus_4sigma_inv[i] / sw.one_minus_4sigma_inv[0]);
    }
    r.svg("sigma_sweep", [&](std::ostream& os) {
        write_svg_chart(os, "Cacciopoli ratio vs sigma", "sigma", "relative growth", {a, b}, true);
    });
}

inline void run_observability(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const int n = positive_int(s, "run.samples", 10000);
    auto omegas = s.list("run.omegas");
    for (double a : omegas) s.require(a > 0.0 && a < 1.0, "run.omegas", "need 0 < a < 1");
    std::sort(omegas.begin(), omegas.end(), std::greater<>());
    std::vector<std::vector<double>> ratios(omegas.size(), std::vector<double>(static_cast<std::size_t>(n)));
    for (std::size_t ia = 0; ia < omegas.size(); ++ia) {
        const double a = omegas[ia];
        std::mt19937_64 rng(p.seed);
        std::vector<SpdeProblem> pbs;
        for (int k = 0; k < n; ++k) {
            SpdeProblem pb = p.spde();
            pb.regions = Regions{a, 0.4 * a, 0.7 * a};
            const Vec g0 = smooth_random(p.grid, rng), g1 = smooth_random(p.grid, rng);
            pb.vT = terminal_data(p.tree, g0, g1);
            pbs.push_back(std::move(pb));
        }
        parallel_for(pbs.size(), r.workers(), [&](std::size_t i) {
            ratios[ia][i] = observability_sides(pbs[i], solve_backward(pbs[i])).ratio;
        });
    }
    std::vector<double> cmax;
    bool finite = true;
    for (const auto& v : ratios) {
        for (double x : v) finite = finite && std::isfinite(x) && x > 0.0;
        cmax.push_back(*std::max_element(v.begin(), v.end()));
    }
    bool mono = true;
    for (std::size_t i = 1; i < cmax.size(); ++i) mono = mono && cmax[i] >= cmax[i - 1];
    r.check("c_obs_finite_positive", finite, cmax.front(), INFINITY);
    r.check("c_obs_grows_as_omega_shrinks", mono, cmax.back(), 0);
    r.metrics() = {{"omegas", omegas}, {"c_obs", cmax}, {"samples", n}};
    r.csv("ratios", [&](std::ostream& os) {
        os << "a,sample,ratio\n";
        for (std::size_t ia = 0; ia < omegas.size(); ++ia)
            for (std::size_t k = 0; k < ratios[ia].size(); ++k) os << omegas[ia] << ',' << k << ',' << ratios[ia][k] << '\n';
    });
    r.json_file("summary", r.metrics());
    r.svg("c_obs", [&](std::ostream& os) {
        write_svg_chart(os, "empirical observability constant", "a", "C_obs", {Series{"max ratio", omegas, cmax}}, true);
    });
}

// ---------------------------------------------------------------------------

inline void run_null_control(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const std::string u0 = s.word("run.u0"), space = s.word("run.space");
    s.require(u0 == "bump" || u0 == "mode" || u0 == "zero", "run.u0", "expected bump, mode or zero");
    s.require(space == "two_block" || space == "full", "run.space", "expected two_block or full");
    HumOptions o;
    o.penalty = positive_num(s, "run.penalty");
    o.tol = positive_num(s, "run.cg_tol");
    o.max_iter = positive_int(s, "run.max_iter");
    o.space = space == "full" ? HumSpace::full : HumSpace::two_block;
    o.workers = r.workers();
    const double target = positive_num(s, "run.target"), sym_tol = positive_num(s, "run.oracle_tol");
    const auto pens = s.list("run.penalties");
    for (double x : pens) s.require(x > 0.0, "run.penalties", "penalties must be > 0");
    const int pairs = positive_int(s, "run.symmetry_pairs", 1000);

    SpdeProblem pb = p.spde();
    pb.u0 = u0 == "bump" ? sine_bump(p.grid) : u0 == "mode" ? first_mode(p.op).vec : Vec::Zero(p.grid.size());
    const auto rep = solve_null_control(pb, o);
    const bool sup = support_invariant(p.grid, pb.regions, rep.control.g);
    r.check("relative_final_norm", rep.relative_final <= target, rep.relative_final, target);
    r.check("cg_iterations", rep.state.iterations <= o.max_iter, rep.state.iterations, o.max_iter);
    r.check("support_invariant", sup, 0, 0);

    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> nd;
    const Eigen::Index leaves = p.tree.nodes(p.nt);
    auto random_leaves = [&] {
        Eigen::MatrixXd m(p.grid.size(), leaves);
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, c) = nd(rng);
        return m;
    };
    double sym = 0.0, qmin = INFINITY;
    for (int k = 0; k < pairs; ++k) {
        const Eigen::MatrixXd a = random_leaves(), b = random_leaves();
        sym = std::max(sym, gram_symmetry_defect(pb, a, b, r.workers()));
        qmin = std::min(qmin, leaf_inner(p.grid, hum_apply(a, pb, r.workers()).gram, a));
    }
    r.check("gram_symmetry", sym <= sym_tol, sym, sym_tol);
    r.check("gram_quadratic_form_nonnegative", qmin >= 0.0, qmin, 0);

    json sweep = json::array();
    bool trade = true;
    double pn = INFINITY, pe = -INFINITY;
    std::vector<double> sorted = pens;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    Series sn{"relative final norm", {}, {}}, sen{"control energy", {}, {}};
    for (double rho : sorted) {
        HumOptions q = o;
        q.penalty = rho;
        const auto x = solve_null_control(pb, q);
        const double en = x.energy_g + x.energy_G;
        if (pb.u0.norm() > 0.0) trade = trade && x.relative_final < pn && en > pe;
        pn = x.relative_final;
        pe = en;
        sweep.push_back({{"penalty", rho}, {"relative_final", x.relative_final}, {"energy", en},
                         {"iterations", x.state.iterations}});
        sn.x.push_back(std::log10(rho));
        sn.y.push_back(x.relative_final);
        sen.x.push_back(std::log10(rho));
        sen.y.push_back(en);
    }
    r.check("penalty_tradeoff", trade, 0, 0, "final norm decreases, energy increases as penalty shrinks");
    r.metrics() = {{"iterations", rep.state.iterations}, {"relative_final", rep.relative_final},
                   {"final_norm", rep.final_norm}, {"u0_norm", rep.u0_norm}, {"energy_g", rep.energy_g},
                   {"energy_G", rep.energy_G}, {"energy_ratio", Run::finite_or_null(rep.energy_ratio)},
                   {"gram_symmetry", sym}, {"penalty_sweep", sweep}};
    r.csv("cg_log", [&](std::ostream& os) { write_cg_log_csv(rep.state, os); });
    r.csv("control_g", [&](std::ostream& os) { write_control_csv(p.tree, rep.control.g, os); });
    r.csv("control_G", [&](std::ostream& os) { write_control_csv(p.tree, rep.control.G, os); });
    r.csv("penalty_sweep", [&](std::ostream& os) {
        os << "penalty,relative_final,energy,iterations\n";
        for (const auto& x : sweep)
            os << x["penalty"].get<double>() << ',' << x["relative_final"].get<double>() << ','
               << x["energy"].get<double>() << ',' << x["iterations"].get<int>() << '\n';
    });
    r.json_file("summary", r.metrics());
    Series res{"CG residual", {}, {}}, fin{"relative final norm", {}, {}};
    for (const auto& row : rep.state.log) {
        res.x.push_back(row.iteration);
        res.y.push_back(row.residual);
        fin.x.push_back(row.iteration);
        fin.y.push_back(row.final_norm);
    }
    r.svg("convergence", [&](std::ostream& os) {
        write_svg_chart(os, "HUM conjugate gradient", "iteration", "value", {res, fin}, true);
    });
    r.svg("penalty_sweep", [&](std::ostream& os) {
        write_svg_chart(os, "penalized HUM tradeoff", "log10 penalty", "value", {sn, sen}, true);
    });
}

// ---------------------------------------------------------------------------

inline ShapeFunctions line_zero_shapes(double x_line) {
    ShapeFunctions sh = unit_shapes();
    sh.r1 = [x_line](const Jet2& x, const Jet2&, const Jet2&) { return x - x_line; };
    return sh;
}

inline void singular_values_csv(Run& r, const std::vector<std::pair<std::string, NullspaceGap>>& gaps) {
    r.csv("singular_values", [&](std::ostream& os) {
        os << "shapes,index,value\n";
        for (const auto& [name, g] : gaps)
            for (Eigen::Index i = 0; i < g.singular_values.size(); ++i)
                os << name << ',' << i << ',' << g.singular_values(i) << '\n';
    });
}

inline void run_inverse_uniqueness(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const double collapse_min = positive_num(s, "run.collapse_min");
    const SpdeProblem base = p.spde();
    const Eigen::MatrixXd m = assemble_observation_matrix(unit_shapes(), base, r.workers());
    const auto ok = nullspace_gap(m);
    const auto sh_ok = check_shapes(unit_shapes(), p.grid, p.tree);
    r.check("compliant_shapes", sh_ok.compliant, sh_ok.min_abs_r1, 1e-12);
    r.check("sigma_min_positive", ok.sigma_min > 1e-12 * ok.sigma_max, ok.sigma_min, 1e-12 * ok.sigma_max);

    const Eigen::Index det = deterministic_rows(p.grid, p.tree), nh = p.nt * p.nx;
    const double hm_leak = m.leftCols(nh).bottomRows(m.rows() - det).lpNorm<Eigen::Infinity>();
    const double Hm_leak = m.rightCols(p.nt).topRows(det).lpNorm<Eigen::Infinity>();
    const double Hm_scale = m.rightCols(p.nt).lpNorm<Eigen::Infinity>();
    r.check("h_invisible_in_martingale_block", hm_leak == 0.0, hm_leak, 0);
    r.check("H_invisible_in_deterministic_block", Hm_leak <= 1e-12 * Hm_scale, Hm_leak, 1e-12 * Hm_scale);

    const ShapeFunctions bad = line_zero_shapes(p.grid.x(1));
    const auto sh_bad = check_shapes(bad, p.grid, p.tree);
    const auto gb = nullspace_gap(assemble_observation_matrix(bad, base, r.workers()));
    const double collapse = gb.ratio > 0.0 ? ok.ratio / gb.ratio : INFINITY;
    r.check("noncompliant_detected", !sh_bad.compliant, sh_bad.min_abs_r1, 1e-12);
    r.check("sigma_min_collapse", collapse >= collapse_min, collapse, collapse_min, "R1 = x - x(1)");
    // exploratory: zero line between grid columns
    const auto gm = nullspace_gap(assemble_observation_matrix(line_zero_shapes(0.5), base, r.workers()));
    r.metrics() = {{"rows", m.rows()}, {"cols", m.cols()},
                   {"compliant", {{"sigma_min", ok.sigma_min}, {"sigma_max", ok.sigma_max}, {"ratio", ok.ratio}}},
                   {"line_on_column", {{"x", p.grid.x(1)}, {"sigma_min", gb.sigma_min}, {"ratio", gb.ratio},
                                       {"collapse", Run::finite_or_null(collapse)}}},
                   {"line_at_half", {{"sigma_min", gm.sigma_min}, {"ratio", gm.ratio}}},
                   {"ratio_y_independent", sh_ok.ratio_y_independent}};
    singular_values_csv(r, {{"unit", ok}, {"line_on_column", gb}, {"line_at_half", gm}});
    r.json_file("summary", r.metrics());
    std::vector<Series> ser;
    for (const auto& [name, g] : {std::pair{std::string("unit"), ok}, std::pair{std::string("line_on_column"), gb},
                                  std::pair{std::string("line_at_half"), gm}}) {
        Series sr{name, {}, {}};
        for (Eigen::Index i = 0; i < g.singular_values.size(); ++i) {
            sr.x.push_back(static_cast<double>(i));
            sr.y.push_back(std::max(g.singular_values(i), 1e-300));
        }
        ser.push_back(sr);
    }
    r.svg("singular_values", [&](std::ostream& os) {
        write_svg_chart(os, "observation matrix singular values", "index", "sigma", ser, true);
    });
}

inline void run_inverse_reconstruct(Run& r, const Problem& p) {
    Settings& s = r.cfg();
    const double rho = s.num("run.tikhonov"), noise = s.num("run.noise"), tol = positive_num(s, "run.roundtrip_tol");
    s.require(rho >= 0.0, "run.tikhonov", "must be >= 0");
    s.require(noise >= 0.0, "run.noise", "must be >= 0");
    const auto rhos = s.list("run.tikhonovs");
    for (double x : rhos) s.require(x > 0.0, "run.tikhonovs", "weights must be > 0");
    const SpdeProblem base = p.spde();
    const ShapeFunctions sh = unit_shapes();
    const Eigen::MatrixXd m = assemble_observation_matrix(sh, base, r.workers());

    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> nd;
    SourcePair truth = SourcePair::zero(p.nt, p.nx);
    for (Eigen::Index k = 0; k < truth.h.size(); ++k) truth.h.data()[k] = nd(rng);
    for (Eigen::Index k = 0; k < truth.H.size(); ++k) truth.H(k) = nd(rng);
    const Vec b = observation_vector(forward_map(truth, sh, base, r.workers()), p.grid, p.tree);
    const auto rec = reconstruct_sources(m, b, p.grid, p.tree, rho, &truth);
    r.check("roundtrip_h", rec.err_h <= tol, rec.err_h, tol);
    r.check("roundtrip_H", rec.err_H <= tol, rec.err_H, tol);
    const auto zero = reconstruct_sources(m, Vec::Zero(m.rows()), p.grid, p.tree, rho);
    const double zmax = zero.estimate.pack().lpNorm<Eigen::Infinity>();
    r.check("zero_observations_give_zero", zmax <= 1e-300, zmax, 0);

    Vec bn = b;
    const double scale = noise * b.norm() / std::sqrt(static_cast<double>(b.size()));
    for (Eigen::Index i = 0; i < bn.size(); ++i) bn(i) += scale * nd(rng);
    std::size_t corner = 0;
    const auto lc = l_curve(m, bn, p.grid, p.tree, rhos, &truth, &corner);
    bool lok = true;
    for (const auto& x : lc) lok = lok && std::isfinite(x.err_h) && std::isfinite(x.err_H);
    r.check("l_curve_finite", lok, 0, 0);
    json lcj = json::array();
    for (const auto& x : lc)
        lcj.push_back({{"rho", x.rho}, {"residual", x.residual}, {"solution", x.solution}, {"err_h", x.err_h},
                       {"err_H", x.err_H}});
    r.metrics() = {{"err_h", rec.err_h}, {"err_H", rec.err_H}, {"residual", rec.residual}, {"noise", noise},
                   {"l_curve", lcj}, {"corner_rho", lc.empty() ? 0.0 : lc[corner].rho}};

    if (auto path = s.opt_word("run.observations")) {
        const std::string text = read_file(*path);
        r.input_hash("observations", git_blob_hash(text));
        std::istringstream is(text);
        Vec bf;
        try {
            bf = read_observations_csv(is, p.grid, p.tree);
        } catch (const parameter_error& e) {
            s.bad("run.observations", e.what());
        }
        const auto fr = reconstruct_sources(m, bf, p.grid, p.tree, rho);
        r.check("file_reconstruction_finite", fr.estimate.pack().allFinite(), fr.residual, INFINITY);
        r.metrics()["file"] = {{"residual", fr.residual}};
        r.csv("file_estimate", [&](std::ostream& os) {
            os << "kind,level,index,value\n";
            for (int k = 0; k < p.nt; ++k)
                for (int i = 0; i < p.nx; ++i) os << "h," << k << ',' << i << ',' << fr.estimate.h(k, i) << '\n';
            for (int k = 0; k < p.nt; ++k) os << "H," << k << ",0," << fr.estimate.H(k) << '\n';
        });
    }

    r.csv("observations", [&](std::ostream& os) { write_observations_csv(b, p.grid, p.tree, os); });
    r.csv("estimate", [&](std::ostream& os) {
        os << "kind,level,index,truth,estimate\n";
        for (int k = 0; k < p.nt; ++k)
            for (int i = 0; i < p.nx; ++i)
                os << "h," << k << ',' << i << ',' << truth.h(k, i) << ',' << rec.estimate.h(k, i) << '\n';
        for (int k = 0; k < p.nt; ++k) os << "H," << k << ",0," << truth.H(k) << ',' << rec.estimate.H(k) << '\n';
    });
    r.csv("l_curve", [&](std::ostream& os) {
        os << "rho,residual,solution,err_h,err_H\n";
        for (const auto& x : lc)
            os << x.rho << ',' << x.residual << ',' << x.solution << ',' << x.err_h << ',' << x.err_H << '\n';
    });
    r.json_file("summary", r.metrics());
    Series s1{"L-curve", {}, {}};
    for (const auto& x : lc) {
        s1.x.push_back(std::log10(x.residual));
        s1.y.push_back(x.solution);
    }
    r.svg("l_curve", [&](std::ostream& os) {
        write_svg_chart(os, "Tikhonov L-curve (noisy data)", "log10 |Mx - b|", "|x|", {s1}, true);
    });
}

// ---------------------------------------------------------------------------

inline void run_hardy(Run& r, const Problem& p) {
    constexpr double pi = std::numbers::pi;
    Settings& s = r.cfg();
    const int n = positive_int(s, "run.samples"), cells = positive_int(s, "run.cells", 1 << 24);
    const double eta = positive_num(s, "run.eta");
    const auto rep = hardy_check(n, p.seed, cells, eta);
    r.check("max_ratio", rep.pass(), rep.max_ratio, rep.bound(), std::to_string(n) + " random splines");
    const auto q = hardy_quotient([](double x) { return x * (1 - x); }, [](double x) { return 1 - 2 * x; }, cells);
    const double cf = std::abs(q.normalized() - 0.25);
    r.check("closed_form_x(1-x)", cf <= 1e-6, q.normalized(), 0.25, "int z^2/x^2 / (4 int z_x^2)");
    const auto qs = hardy_quotient([&](double x) { return std::sin(pi * x); },
                                   [&](double x) { return pi * std::cos(pi * x); }, cells);
    r.metrics() = {{"samples", n}, {"max_ratio", rep.max_ratio}, {"bound", rep.bound()},
                   {"x(1-x)", {{"ratio", q.ratio()}, {"normalized", q.normalized()}}},
                   {"sin(pi x)", {{"ratio", qs.ratio()}, {"weighted", qs.weighted}, {"gradient", qs.gradient}}}};
    r.csv("ratios", [&](std::ostream& os) {
        os << "sample,ratio,normalized\n";
        for (std::size_t i = 0; i < rep.ratios.size(); ++i)
            os << i << ',' << rep.ratios[i] << ',' << rep.ratios[i] / 4.0 << '\n';
    });
    r.json_file("summary", r.metrics());
    std::vector<double> sorted = rep.ratios;
    std::sort(sorted.begin(), sorted.end());
    Series sr{"sorted ratios", {}, sorted}, bd{"bound 4(1+eta)", {0.0, static_cast<double>(sorted.size() - 1)},
                                              {rep.bound(), rep.bound()}};
    for (std::size_t i = 0; i < sorted.size(); ++i) sr.x.push_back(static_cast<double>(i));
    r.svg("ratios", [&](std::ostream& os) {
        write_svg_chart(os, "discrete Hardy ratios", "rank", "int z^2/x^2 / int z_x^2", {sr, bd}, false);
    });
}

// ---------------------------------------------------------------------------

inline void dispatch(const std::string& sub, Run& r, const Problem& p) {
    if (sub == "solve-forward") return run_solve_forward(r, p);
    if (sub == "solve-backward") return run_solve_backward(r, p);
    if (sub == "identity-check") return run_identity_check(r, p);
    if (sub == "weight-check") return run_weight_check(r, p);
    if (sub == "carleman-backward") return run_carleman_backward(r, p);
    if (sub == "carleman-forward") return run_carleman_forward(r, p);
    if (sub == "cacciopoli") return run_cacciopoli(r, p);
    if (sub == "observability") return run_observability(r, p);
    if (sub == "null-control") return run_null_control(r, p);
    if (sub == "inverse-uniqueness") return run_inverse_uniqueness(r, p);
    if (sub == "inverse-reconstruct") return run_inverse_reconstruct(r, p);
    if (sub == "hardy") return run_hardy(r, p);
    throw parameter_error("unknown subcommand '" + sub + "'");
}

/// Full run: config, artifacts, manifest. Returns 0 pass, 2 assertion failure, 1 usage or parameter error.
inline int run(const std::string& sub, const Options& o, std::ostream& out, std::ostream& err) {
    const auto& subs = subcommands();
    if (std::find(subs.begin(), subs.end(), sub) == subs.end()) {
        err << "usage error: unknown subcommand '" << sub << "'; expected one of:";
        for (const auto& x : subs) err << ' ' << x;
        err << '\n';
        return 1;
    }
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<Settings> settings;
    std::optional<Run> run;
    try {
        Config c = o.config_path.empty() ? Config::parse("", "config") : Config::load(o.config_path);
        const std::string hash = git_blob_hash(c.text());
        settings.emplace(std::move(c), sub);
        Settings& s = *settings;
        const std::string dir = o.out_dir.empty() ? s.word("output.dir") : o.out_dir;
        std::vector<std::string> fmts = o.formats;
        if (fmts.empty()) fmts = s.words("output.formats");
        for (const auto& f : fmts)
            if (f != "csv" && f != "json" && f != "svg") {
                if (o.formats.empty()) s.bad("output.formats", "unknown format '" + f + "' (csv, json, svg)");
                throw parameter_error("--format: unknown format '" + f + "' (csv, json, svg)");
            }
        if (o.workers < 1) throw parameter_error("--workers must be >= 1");
        const Problem p = read_problem(s);
        std::filesystem::create_directories(dir);
        run.emplace(sub, s, hash, dir, std::set<std::string>(fmts.begin(), fmts.end()), o.workers);
        run->input_hash("config", hash);
        dispatch(sub, *run, p);
    } catch (const parameter_error& e) {
        err << "parameter error: " << e.what() << '\n';
        return 1;
    } catch (const capacity_error& e) {
        err << "parameter error: " << e.what() << '\n';
        return 1;
    } catch (const sgrushin::domain_error& e) {
        err << "parameter error: " << e.what() << '\n';
        return 1;
    } catch (const numerical_error& e) {
        err << "numerical failure: " << e.what() << '\n';
        if (!run) return 2;
        run->check("completed", false, 0, 0, e.what());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "parameter error: " << e.what() << '\n';
        return 1;
    }
    run->write_manifest();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& a : run->assertions())
        out << (a.pass ? "PASS " : "FAIL ") << a.name << "  value=" << a.value << " bound=" << a.bound
            << (a.detail.empty() ? "" : "  (" + a.detail + ")") << '\n';
    out << sub << ": " << (run->all_pass() ? "pass" : "FAIL") << " in " << std::fixed << std::setprecision(2) << secs
        << " s" << std::defaultfloat << '\n';
    return run->all_pass() ? 0 : 2;
}

}  // namespace sgrushin::app
