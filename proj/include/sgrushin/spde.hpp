#pragma once

// Forward and backward stochastic solvers on the binomial tree.
//
// Forward, step k -> k+1 from node b to child c:
//   S_k^{-1} u_{k+1}(c) = u_k(b) + dt (f_k + g_k(b) 1_omega) + (beta_k u_k(b) + F_k + G_k(b)) dB(c)
// Backward, from the two children of b:
//   V_k(b) = S_k mart(v_{k+1}),  v_k(b) = S_k (mean(v_{k+1}) + dt (beta_k V_k(b) - f1_k))
// with S_k = (Id - dt (A + alpha_k))^{-1} shared by both directions. The
// equation discretized backward is dv + A v dt = (f1 - alpha v - beta V) dt + V dB.

#include <Eigen/SparseCholesky>

#include <cmath>
#include <functional>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sgrushin/errors.hpp"
#include "sgrushin/operator.hpp"
#include "sgrushin/parallel.hpp"
#include "sgrushin/tree.hpp"

namespace sgrushin {

using Field3 = std::function<double(double x, double y, double t)>;
/// Deterministic grid-function for time step k (0 <= k < nt).
using LevelSource = std::function<Vec(int k)>;

/// omega = (0,a) x I_y, omega1 = (0,a1) x I_y, omega2 = (0,a2) x I_y.
struct Regions {
    double a = 0.5;
    double a1 = 0.2;
    double a2 = 0.35;

    void validate() const {
        if (!(0.0 < a1 && a1 < a2 && a2 < a && a < 1.0))
            throw parameter_error("regions: need 0 < a1 < a2 < a < 1");
    }
    bool in_omega(double x) const { return x < a; }
    bool in_omega2(double x) const { return x < a2; }
    bool in_omega1(double x) const { return x < a1; }
};

/// Nodal samples of f(., ., t).
inline Vec sample(const Grid2D& g, const Field3& f, double t) {
    Vec out(g.size());
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) out(g.index(i, j)) = f(g.x(i), g.y(j), t);
    return out;
}

/// Level source evaluating f at t_k.
inline LevelSource at_level_times(const Grid2D& g, const BrownianTree& tree, Field3 f) {
    return [g, tree, f = std::move(f)](int k) { return sample(g, f, tree.time(k)); };
}

/// Indicator of omega on the grid.
inline Vec omega_mask(const Grid2D& g, const Regions& r) {
    Vec m(g.size());
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) m(g.index(i, j)) = r.in_omega(g.x(i)) ? 1.0 : 0.0;
    return m;
}

struct SpdeProblem {
    DiscreteOperator op;
    BrownianTree tree;
    Regions regions;
    LevelSource alpha;  ///< empty = 0
    LevelSource beta;   ///< empty = 0
    // forward data
    Vec u0;
    LevelSource f;      ///< drift source
    LevelSource F;      ///< diffusion source
    std::optional<AdaptedField> g;  ///< adapted control, levels 0..nt-1, applied on omega only
    std::optional<AdaptedField> G;  ///< adapted diffusion control, levels 0..nt-1
    // backward data
    std::optional<AdaptedField> vT;  ///< final level only
    LevelSource f1;
};

inline SpdeProblem make_problem(const DiscreteOperator& op, const BrownianTree& tree, Regions r = {}) {
    r.validate();
    SpdeProblem p{op, tree, r};
    p.u0 = Vec::Zero(op.grid.size());
    return p;
}

/// Factorizations of Id - dt (A + alpha_k), one per level (a single one when alpha is absent).
class StepSolver {
public:
    StepSolver(const DiscreteOperator& op, const BrownianTree& tree, const LevelSource& alpha) : dt_(tree.dt) {
        const int n = op.grid.size();
        SpMat id(n, n);
        id.setIdentity();
        const int count = alpha ? tree.nt : 1;
        for (int k = 0; k < count; ++k) {
            SpMat m = id - dt_ * op.a;
            if (alpha) {
                const Vec a = alpha(k);
                for (int r = 0; r < n; ++r) m.coeffRef(r, r) -= dt_ * a(r);
            }
            auto f = std::make_shared<Eigen::SimplicialLDLT<SpMat>>(m);
            if (f->info() != Eigen::Success)
                throw numerical_error("step matrix factorization failed at level " + std::to_string(k));
            const Vec d = f->vectorD();
            const double dmax = d.cwiseAbs().maxCoeff();
            if (!(d.cwiseAbs().minCoeff() > 1e-14 * dmax))
                throw numerical_error("step matrix singular at level " + std::to_string(k) +
                                      " (dt * alpha too large for the shifted operator)");
            fac_.push_back(std::move(f));
        }
    }

    /// S_k r
    Vec apply(int k, const Vec& r) const { return fac_[fac_.size() == 1 ? 0 : static_cast<std::size_t>(k)]->solve(r); }
    double dt() const { return dt_; }

private:
    double dt_;
    std::vector<std::shared_ptr<Eigen::SimplicialLDLT<SpMat>>> fac_;
};

struct ForwardTrajectory {
    AdaptedField u;  ///< levels 0..nt
};

struct BackwardTrajectory {
    AdaptedField v;  ///< levels 0..nt
    AdaptedField V;  ///< levels 0..nt-1
};

namespace detail {
inline Vec level_or_zero(const LevelSource& s, int k, int n) { return s ? s(k) : Vec::Zero(n); }
}  // namespace detail

inline ForwardTrajectory solve_forward(const SpdeProblem& pb, unsigned workers = 1) {
    const Grid2D& g = pb.op.grid;
    const BrownianTree& tr = pb.tree;
    const int n = g.size();
    if (pb.u0.size() != n) throw parameter_error("solve_forward: u0 has wrong size");
    const StepSolver step(pb.op, tr, pb.alpha);
    const Vec mask = omega_mask(g, pb.regions);
    ForwardTrajectory out{AdaptedField(tr, n)};
    out.u.level(0).col(0) = pb.u0;
    for (int k = 0; k < tr.nt; ++k) {
        const Vec fk = detail::level_or_zero(pb.f, k, n);
        const Vec Fk = detail::level_or_zero(pb.F, k, n);
        const Vec bk = detail::level_or_zero(pb.beta, k, n);
        const Eigen::MatrixXd& cur = out.u.level(k);
        Eigen::MatrixXd& nxt = out.u.level(k + 1);
        parallel_for(static_cast<std::size_t>(tr.nodes(k)), workers, [&](std::size_t bi) {
            const auto b = static_cast<Eigen::Index>(bi);
            Vec drift = cur.col(b) + tr.dt * fk;
            Vec diff = bk.cwiseProduct(cur.col(b)) + Fk;
            if (pb.g) drift += tr.dt * mask.cwiseProduct(Vec(pb.g->level(k).col(b)));
            if (pb.G) diff += pb.G->level(k).col(b);
            nxt.col(2 * b) = step.apply(k, drift + tr.increment(2 * b) * diff);
            nxt.col(2 * b + 1) = step.apply(k, drift + tr.increment(2 * b + 1) * diff);
        });
    }
    return out;
}

inline BackwardTrajectory solve_backward(const SpdeProblem& pb, unsigned workers = 1) {
    const Grid2D& g = pb.op.grid;
    const BrownianTree& tr = pb.tree;
    const int n = g.size();
    if (!pb.vT || pb.vT->dim() != n || !pb.vT->has_level(tr.nt))
        throw parameter_error("solve_backward: terminal data vT missing or of wrong size");
    const StepSolver step(pb.op, tr, pb.alpha);
    BackwardTrajectory out{AdaptedField(tr, n), AdaptedField(tr, n, 0, tr.nt - 1)};
    out.v.level(tr.nt) = pb.vT->level(tr.nt);
    for (int k = tr.nt - 1; k >= 0; --k) {
        const Vec f1k = detail::level_or_zero(pb.f1, k, n);
        const Vec bk = detail::level_or_zero(pb.beta, k, n);
        const Eigen::MatrixXd& nxt = out.v.level(k + 1);
        Eigen::MatrixXd& vk = out.v.level(k);
        Eigen::MatrixXd& Vk = out.V.level(k);
        parallel_for(static_cast<std::size_t>(tr.nodes(k)), workers, [&](std::size_t bi) {
            const auto b = static_cast<Eigen::Index>(bi);
            const ConditionalStep cs = conditional_step(tr, nxt, b);
            const Vec Vb = step.apply(k, cs.mart);
            Vk.col(b) = Vb;
            vk.col(b) = step.apply(k, cs.mean + tr.dt * (bk.cwiseProduct(Vb) - f1k));
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Norms and energy.

/// Grid L2 norm squared, hx hy sum u^2.
inline double l2sq(const Grid2D& g, const Vec& u) { return g.hx * g.hy * u.squaredNorm(); }

/// int |u_x|^2 + (x+eps)^{2 gamma}|u_y|^2 - sigma/(x+eps)^2 u^2 by edge differences with
/// Dirichlet zeros. Equals hx hy <-A u, u> up to rounding.
inline double grad_energy(const DiscreteOperator& op, const Vec& u) {
    const Grid2D& g = op.grid;
    auto at = [&](int i, int j) { return (i < 0 || j < 0 || i >= g.nx || j >= g.ny) ? 0.0 : u(g.index(i, j)); };
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(3 * g.size() + g.nx + g.ny));
    for (int i = -1; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            const double d = (at(i + 1, j) - at(i, j)) / g.hx;
            terms.push_back(d * d);
        }
    for (int i = 0; i < g.nx; ++i) {
        const double w = op.degeneracy(i);
        for (int j = -1; j < g.ny; ++j) {
            const double d = (at(i, j + 1) - at(i, j)) / g.hy;
            terms.push_back(w * d * d);
        }
        for (int j = 0; j < g.ny; ++j) terms.push_back(-op.potential(i) * at(i, j) * at(i, j));
    }
    return g.hx * g.hy * pairwise_sum(terms);
}

/// E of a per-node scalar at level k.
template <class F>
double level_expectation(const AdaptedField& fld, int k, F&& per_node) {
    const Eigen::MatrixXd& m = fld.level(k);
    Eigen::MatrixXd s(1, m.cols());
    for (Eigen::Index b = 0; b < m.cols(); ++b) s(0, b) = per_node(Vec(m.col(b)));
    return mean_columns(s)(0);
}

struct EnergyReport {
    double sup_mean_square = 0.0;  ///< max_k E||u_k||^2
    double gradient = 0.0;         ///< sum_k dt E[grad energy]
    double diffusion = 0.0;        ///< sum_k dt E||V_k||^2 (backward only)
    double dissipation = 0.0;      ///< sum_k E||u_{k+1} - r_k||^2, the implicit step's own loss
    double lhs = 0.0;
    double rhs = 0.0;
    double c_emp = 0.0;            ///< lhs / rhs, 0 when both vanish
};

/// Discrete energy balance of the implicit step. With r_k the right-hand side of the
/// step at a child, ||u_{k+1}||^2 + 2 dt grad(u_{k+1}) + ||u_{k+1} - r_k||^2 = <r_k, r_k>.
/// LHS = max_k (E||u_k||^2 + sum_{j<k} [2 dt E grad(u_{j+1}) + E||u_{j+1} - r_j||^2]),
/// RHS = ||u0||^2 + sum dt E(||f||^2 + ||F||^2 + controls).
inline EnergyReport energy_report(const SpdeProblem& pb, const ForwardTrajectory& tr) {
    const Grid2D& g = pb.op.grid;
    const BrownianTree& t = pb.tree;
    const int n = g.size();
    const Vec mask = omega_mask(g, pb.regions);
    EnergyReport r;
    double acc = 0.0;
    r.lhs = l2sq(g, pb.u0);
    r.sup_mean_square = r.lhs;
    for (int k = 0; k < t.nt; ++k) {
        const Vec fk = detail::level_or_zero(pb.f, k, n);
        const Vec Fk = detail::level_or_zero(pb.F, k, n);
        const Vec bk = detail::level_or_zero(pb.beta, k, n);
        const Eigen::MatrixXd& cur = tr.u.level(k);
        const Eigen::MatrixXd& nxt = tr.u.level(k + 1);
        Eigen::MatrixXd loss(1, nxt.cols());
        for (Eigen::Index c = 0; c < nxt.cols(); ++c) {
            const Eigen::Index b = c / 2;
            Vec drift = cur.col(b) + t.dt * fk;
            Vec diff = bk.cwiseProduct(cur.col(b)) + Fk;
            if (pb.g) drift += t.dt * mask.cwiseProduct(Vec(pb.g->level(k).col(b)));
            if (pb.G) diff += pb.G->level(k).col(b);
            loss(0, c) = l2sq(g, nxt.col(c) - drift - t.increment(c) * diff);
        }
        const double ls = mean_columns(loss)(0);
        const double ms = level_expectation(tr.u, k + 1, [&](const Vec& u) { return l2sq(g, u); });
        const double ge = level_expectation(tr.u, k + 1, [&](const Vec& u) { return grad_energy(pb.op, u); });
        acc += 2.0 * t.dt * ge + ls;
        r.gradient += t.dt * ge;
        r.dissipation += ls;
        r.sup_mean_square = std::max(r.sup_mean_square, ms);
        r.lhs = std::max(r.lhs, ms + acc);
    }
    r.rhs = l2sq(g, pb.u0);
    for (int k = 0; k < t.nt; ++k) {
        r.rhs += t.dt * (l2sq(g, detail::level_or_zero(pb.f, k, n)) + l2sq(g, detail::level_or_zero(pb.F, k, n)));
        if (pb.g)
            r.rhs += t.dt * level_expectation(*pb.g, k, [&](const Vec& v) { return l2sq(g, mask.cwiseProduct(v)); });
        if (pb.G) r.rhs += t.dt * level_expectation(*pb.G, k, [&](const Vec& v) { return l2sq(g, v); });
    }
    r.c_emp = r.rhs > 0.0 ? r.lhs / r.rhs : 0.0;
    return r;
}

/// Backward analogue: LHS = max_k (E||v_k||^2 + sum_{j>=k} [2 dt E grad(v_j) + E||v_j - r_j||^2])
/// + sum dt E||V||^2, with r_j = mean(v_{j+1}) + dt (beta V_j - f1_j); RHS = E||vT||^2 + sum dt ||f1||^2.
inline EnergyReport energy_report(const SpdeProblem& pb, const BackwardTrajectory& tr) {
    const Grid2D& g = pb.op.grid;
    const BrownianTree& t = pb.tree;
    const int n = g.size();
    EnergyReport r;
    double acc = 0.0;
    r.sup_mean_square = level_expectation(tr.v, t.nt, [&](const Vec& v) { return l2sq(g, v); });
    double best = r.sup_mean_square;
    for (int k = t.nt - 1; k >= 0; --k) {
        const Vec f1k = detail::level_or_zero(pb.f1, k, n);
        const Vec bk = detail::level_or_zero(pb.beta, k, n);
        const Eigen::MatrixXd means = conditional_means(tr.v.level(k + 1));
        Eigen::MatrixXd loss(1, means.cols());
        for (Eigen::Index b = 0; b < means.cols(); ++b) {
            const Vec rk = means.col(b) + t.dt * (bk.cwiseProduct(Vec(tr.V.level(k).col(b))) - f1k);
            loss(0, b) = l2sq(g, tr.v.level(k).col(b) - rk);
        }
        const double ls = mean_columns(loss)(0);
        const double ms = level_expectation(tr.v, k, [&](const Vec& v) { return l2sq(g, v); });
        const double ge = level_expectation(tr.v, k, [&](const Vec& v) { return grad_energy(pb.op, v); });
        acc += 2.0 * t.dt * ge + ls;
        r.gradient += t.dt * ge;
        r.dissipation += ls;
        r.diffusion += t.dt * level_expectation(tr.V, k, [&](const Vec& v) { return l2sq(g, v); });
        r.sup_mean_square = std::max(r.sup_mean_square, ms);
        best = std::max(best, ms + acc);
    }
    r.lhs = best + r.diffusion;
    r.rhs = level_expectation(tr.v, t.nt, [&](const Vec& v) { return l2sq(g, v); });
    for (int k = 0; k < t.nt; ++k) r.rhs += t.dt * l2sq(g, detail::level_or_zero(pb.f1, k, n));
    r.c_emp = r.rhs > 0.0 ? r.lhs / r.rhs : 0.0;
    return r;
}

/// max_k E||u_{k+1} - u_k||^2 over parent/child pairs.
inline double max_increment_norm(const Grid2D& g, const AdaptedField& u) {
    double m = 0.0;
    for (int k = u.first_level(); k < u.last_level(); ++k) {
        const Eigen::MatrixXd& cur = u.level(k);
        const Eigen::MatrixXd& nxt = u.level(k + 1);
        Eigen::MatrixXd s(1, nxt.cols());
        for (Eigen::Index c = 0; c < nxt.cols(); ++c) s(0, c) = l2sq(g, nxt.col(c) - cur.col(c / 2));
        m = std::max(m, mean_columns(s)(0));
    }
    return m;
}

/// E<a, b> at level k for two grid-valued fields.
inline double tree_inner(const Grid2D& g, const AdaptedField& a, const AdaptedField& b, int k) {
    const Eigen::MatrixXd& x = a.level(k);
    const Eigen::MatrixXd& y = b.level(k);
    Eigen::MatrixXd s(1, x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) s(0, c) = g.hx * g.hy * x.col(c).dot(y.col(c));
    return mean_columns(s)(0);
}

// ---------------------------------------------------------------------------
// Export.

/// "level,path,node,value" for every stored level.
inline void write_trajectory_csv(const BrownianTree& tree, const AdaptedField& f, std::ostream& os) {
    os << "level,path,node,value\n" << std::setprecision(17);
    for (int k = f.first_level(); k <= f.last_level(); ++k)
        for (std::int64_t b = 0; b < tree.nodes(k); ++b)
            for (int r = 0; r < f.dim(); ++r)
                os << k << ',' << tree.path(k, b) << ',' << r << ',' << f.level(k)(r, b) << '\n';
}

inline void write_energy_json(const EnergyReport& e, std::ostream& os) {
    os << std::setprecision(17) << "{\n  \"sup_mean_square\": " << e.sup_mean_square
       << ",\n  \"gradient\": " << e.gradient << ",\n  \"diffusion\": " << e.diffusion
       << ",\n  \"dissipation\": " << e.dissipation << ",\n  \"lhs\": " << e.lhs
       << ",\n  \"rhs\": " << e.rhs << ",\n  \"C_emp\": " << e.c_emp << "\n}\n";
}

}  // namespace sgrushin
