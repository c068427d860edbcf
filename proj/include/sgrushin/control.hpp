#pragma once

// Null control by penalized HUM.
//
// Gram: vT -> u(T), where (v,V) solves the backward system from vT and u
// solves the forward system from u0 = 0 with g = v 1_omega, G = V. With the
// shared step matrix S_k the discrete duality is exact,
//   E<u(T), vT> = <u0, v(0)> + sum_k dt E(|v_k 1_omega|^2 + |V_k|^2),
// so Gram is symmetric PSD in E<.,.>. CG solves (P Gram + rho) vT = -P u_free(T)
// over leaf fields; P is the orthogonal projection onto the decision space
// (identity for the full leaf-indexed space).

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "sgrushin/errors.hpp"
#include "sgrushin/spde.hpp"

namespace sgrushin {

/// Decision space for vT.
enum class HumSpace {
    two_block,  ///< g0 + g1 B(T), g0, g1 deterministic grid-functions
    full,       ///< every leaf independent
};

struct ControlPair {
    AdaptedField g;  ///< levels 0..nt-1, zero outside omega
    AdaptedField G;  ///< levels 0..nt-1
};

struct HumOptions {
    double penalty = 1e-8;
    double tol = 1e-10;  ///< relative residual
    int max_iter = 500;
    HumSpace space = HumSpace::two_block;
    unsigned workers = 1;
};

struct CgLogRow {
    int iteration = 0;
    double residual = 0.0;     ///< |r| / |b|
    double final_norm = 0.0;   ///< sqrt(E|u(T)|^2) / |u0|
};

struct HumState {
    Eigen::MatrixXd vT;  ///< leaf columns
    double penalty = 0.0;
    int iterations = 0;
    double residual = 0.0;
    std::vector<CgLogRow> log;
};

struct NullControlReport {
    HumState state;
    ControlPair control;
    double u0_norm = 0.0;
    double final_norm = 0.0;      ///< sqrt(E|u(T)|^2), uncontrolled part included
    double relative_final = 0.0;  ///< final_norm / u0_norm (0 when u0 = 0)
    double energy_g = 0.0;        ///< E int_{omega_T} |g|^2
    double energy_G = 0.0;        ///< E int_{Q_T} |G|^2
    double energy_ratio = 0.0;    ///< (energy_g + energy_G) / |u0|^2
    bool support_ok = false;
    double seconds = 0.0;
};

/// E<a, b> over the leaves of a final-level field, hx hy weighted.
inline double leaf_inner(const Grid2D& g, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    Eigen::MatrixXd prod(1, a.cols());
    for (Eigen::Index c = 0; c < a.cols(); ++c) prod(0, c) = a.col(c).dot(b.col(c));
    return g.hx * g.hy * mean_columns(prod)(0);
}

/// Orthogonal projection of a leaf field onto the decision space.
inline Eigen::MatrixXd project_space(const BrownianTree& tr, const Eigen::MatrixXd& w, HumSpace s) {
    if (s == HumSpace::full) return w;
    const int k = tr.nt;
    Eigen::MatrixXd wb(w.rows(), w.cols());
    for (Eigen::Index c = 0; c < w.cols(); ++c) wb.col(c) = tr.brownian(k, c) * w.col(c);
    const Vec g0 = mean_columns(w);
    const Vec g1 = mean_columns(wb) / tr.horizon;
    Eigen::MatrixXd out(w.rows(), w.cols());
    for (Eigen::Index c = 0; c < w.cols(); ++c) out.col(c) = g0 + tr.brownian(k, c) * g1;
    return out;
}

namespace detail {

inline SpdeProblem control_problem(const SpdeProblem& pb, const BackwardTrajectory& bt) {
    const BrownianTree& tr = pb.tree;
    const int n = pb.op.grid.size();
    SpdeProblem fw = pb;
    fw.f = {};
    fw.F = {};
    fw.vT.reset();
    fw.f1 = {};
    const Vec mask = omega_mask(pb.op.grid, pb.regions);
    AdaptedField g(tr, n, 0, tr.nt - 1);
    for (int k = 0; k < tr.nt; ++k)
        g.level(k) = mask.asDiagonal() * bt.v.level(k);
    fw.g = std::move(g);
    fw.G = bt.V;
    return fw;
}

inline AdaptedField terminal_field(const BrownianTree& tr, const Eigen::MatrixXd& leaves) {
    AdaptedField f(tr, static_cast<int>(leaves.rows()), tr.nt, tr.nt);
    f.level(tr.nt) = leaves;
    return f;
}

}  // namespace detail

struct HumApply {
    Eigen::MatrixXd gram;  ///< u(T) leaves
    Vec v0;
};

/// Gram action and v(0) for terminal leaves vT. Sources in pb are ignored.
inline HumApply hum_apply(const Eigen::MatrixXd& vT, const SpdeProblem& pb, unsigned workers = 1) {
    const BrownianTree& tr = pb.tree;
    const int n = pb.op.grid.size();
    if (vT.rows() != n || vT.cols() != tr.nodes(tr.nt)) throw parameter_error("hum_apply: vT has wrong shape");
    SpdeProblem bw = pb;
    bw.f1 = {};
    bw.vT = detail::terminal_field(tr, vT);
    const BackwardTrajectory bt = solve_backward(bw, workers);
    SpdeProblem fw = detail::control_problem(pb, bt);
    fw.u0 = Vec::Zero(n);
    const ForwardTrajectory ft = solve_forward(fw, workers);
    return {ft.u.level(tr.nt), bt.v.level(0).col(0)};
}

/// Control pair built from terminal adjoint leaves.
inline ControlPair control_from(const Eigen::MatrixXd& vT, const SpdeProblem& pb, unsigned workers = 1) {
    SpdeProblem bw = pb;
    bw.f1 = {};
    bw.vT = detail::terminal_field(pb.tree, vT);
    const BackwardTrajectory bt = solve_backward(bw, workers);
    SpdeProblem fw = detail::control_problem(pb, bt);
    return {std::move(*fw.g), std::move(*fw.G)};
}

/// True iff g is exactly 0 at every node of every level outside omega.
inline bool support_invariant(const Grid2D& g, const Regions& r, const AdaptedField& ctrl) {
    for (int k = ctrl.first_level(); k <= ctrl.last_level(); ++k)
        for (int i = 0; i < g.nx; ++i) {
            if (r.in_omega(g.x(i))) continue;
            for (int j = 0; j < g.ny; ++j)
                if ((ctrl.level(k).row(g.index(i, j)).array() != 0.0).any()) return false;
        }
    return true;
}

/// sum_k dt E |c_k|^2 (hx hy weighted).
inline double control_energy(const Grid2D& g, const BrownianTree& tr, const AdaptedField& c) {
    double e = 0.0;
    for (int k = c.first_level(); k <= c.last_level(); ++k)
        e += tr.dt * level_expectation(c, k, [&](const Vec& x) { return l2sq(g, x); });
    return e;
}

/// Penalized HUM null control from pb.u0 (pb.f, pb.F kept as free dynamics).
inline NullControlReport solve_null_control(const SpdeProblem& pb, const HumOptions& opt = {}) {
    if (!(opt.penalty > 0.0)) throw parameter_error("null control: penalty must be > 0");
    if (!(opt.tol > 0.0) || opt.max_iter < 1) throw parameter_error("null control: need tol > 0, max_iter >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    const Grid2D& g = pb.op.grid;
    const BrownianTree& tr = pb.tree;
    const int n = g.size();
    const auto leaves = tr.nodes(tr.nt);

    SpdeProblem free = pb;
    free.g.reset();
    free.G.reset();
    const Eigen::MatrixXd ufree = solve_forward(free, opt.workers).u.level(tr.nt);

    NullControlReport rep;
    rep.u0_norm = std::sqrt(l2sq(g, pb.u0));
    const auto rel = [&](double v) { return rep.u0_norm > 0.0 ? v / rep.u0_norm : v; };
    HumState& st = rep.state;
    st.penalty = opt.penalty;
    st.vT = Eigen::MatrixXd::Zero(n, leaves);

    const Eigen::MatrixXd b = -project_space(tr, ufree, opt.space);
    const double bnorm = std::sqrt(leaf_inner(g, b, b));
    Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(n, leaves);  // Gram vT, unprojected
    const auto state_norm = [&] {
        const Eigen::MatrixXd u = ufree + gx;
        return std::sqrt(leaf_inner(g, u, u));
    };

    if (bnorm > 0.0) {
        Eigen::MatrixXd r = b, p = b;
        double rr = leaf_inner(g, r, r);
        st.log.push_back({0, 1.0, rel(state_norm())});
        int it = 0;
        while (std::sqrt(rr) > opt.tol * bnorm) {
            if (it == opt.max_iter)
                throw convergence_error("null control: CG reached " + std::to_string(it) +
                                            " iterations, relative residual " + std::to_string(std::sqrt(rr) / bnorm),
                                        it, std::sqrt(rr) / bnorm);
            const Eigen::MatrixXd gp = hum_apply(p, pb, opt.workers).gram;
            const Eigen::MatrixXd ap = project_space(tr, gp, opt.space) + opt.penalty * p;
            const double pap = leaf_inner(g, p, ap);
            if (!(pap > 0.0)) throw numerical_error("null control: CG breakdown (p'Ap <= 0)");
            const double alpha = rr / pap;
            st.vT += alpha * p;
            gx += alpha * gp;
            r -= alpha * ap;
            const double rr_new = leaf_inner(g, r, r);
            p = r + (rr_new / rr) * p;
            rr = rr_new;
            ++it;
            st.log.push_back({it, std::sqrt(rr) / bnorm, rel(state_norm())});
        }
        st.iterations = it;
        st.residual = std::sqrt(rr) / bnorm;
    }

    rep.control = control_from(st.vT, pb, opt.workers);
    SpdeProblem ctl = pb;
    ctl.g = rep.control.g;
    ctl.G = rep.control.G;
    const Eigen::MatrixXd uT = solve_forward(ctl, opt.workers).u.level(tr.nt);
    rep.final_norm = std::sqrt(leaf_inner(g, uT, uT));
    rep.relative_final = rep.u0_norm > 0.0 ? rep.final_norm / rep.u0_norm : 0.0;
    rep.energy_g = control_energy(g, tr, rep.control.g);
    rep.energy_G = control_energy(g, tr, rep.control.G);
    rep.energy_ratio = rep.u0_norm > 0.0 ? (rep.energy_g + rep.energy_G) / (rep.u0_norm * rep.u0_norm) : 0.0;
    rep.support_ok = support_invariant(g, pb.regions, rep.control.g);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

/// Relative symmetry defect |E<Ga,b> - E<a,Gb>| / (|Ga| |b| + |a| |Gb|).
inline double gram_symmetry_defect(const SpdeProblem& pb, const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                   unsigned workers = 1) {
    const Grid2D& g = pb.op.grid;
    const Eigen::MatrixXd ga = hum_apply(a, pb, workers).gram;
    const Eigen::MatrixXd gb = hum_apply(b, pb, workers).gram;
    const auto nrm = [&](const Eigen::MatrixXd& m) { return std::sqrt(leaf_inner(g, m, m)); };
    const double scale = nrm(ga) * nrm(b) + nrm(a) * nrm(gb);
    const double d = std::abs(leaf_inner(g, ga, b) - leaf_inner(g, a, gb));
    return scale > 0.0 ? d / scale : d;
}

// ---------------------------------------------------------------------------
// Export.

inline void write_cg_log_csv(const HumState& st, std::ostream& os) {
    os << "iteration,residual,final_norm\n" << std::setprecision(17);
    for (const auto& r : st.log) os << r.iteration << ',' << r.residual << ',' << r.final_norm << '\n';
}

/// "level,path,node,value" rows for a control field.
inline void write_control_csv(const BrownianTree& tr, const AdaptedField& c, std::ostream& os) {
    os << "level,path,node,value\n" << std::setprecision(17);
    for (int k = c.first_level(); k <= c.last_level(); ++k)
        for (std::int64_t b = 0; b < tr.nodes(k); ++b)
            for (int r = 0; r < c.dim(); ++r)
                os << k << ',' << tr.path(k, b) << ',' << r << ',' << c.level(k)(r, b) << '\n';
}

}  // namespace sgrushin
