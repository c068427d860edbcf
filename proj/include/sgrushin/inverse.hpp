#pragma once

// Inverse source bench: u from zero data driven by h(x,t) R1 dt + H(t) R2 dB,
// observed through boundary traces and u(T).
//
// Observation coordinates (one vector, this order):
//   deterministic  E[trace_k], k = 1..nt, then E[u(T)]
//   martingale     E[trace_k dB_j] / dt, k = 1..nt, j = 1..k, then E[u(T) dB_j] / dt, j = 1..nt
// where trace_k = (u_y on x=0, x=1, y=0, y=1 edges; u_x on x=0). Traces use
// the one-sided second-order formula (4 u_1 - u_2) / (2h) with the Dirichlet
// zero; u_y on the x-edges is the tangential derivative of the zero trace and
// is identically 0 (kept so every edge of Sigma is present).
//
// h is stored per step on the x grid (nt x nx), H per step (nt); step k uses
// values k, matching the forward scheme's sources at t_k.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sgrushin/errors.hpp"
#include "sgrushin/jet.hpp"
#include "sgrushin/parallel.hpp"
#include "sgrushin/spde.hpp"

namespace sgrushin {

using JetField = std::function<Jet2(const Jet2& x, const Jet2& y, const Jet2& t)>;

struct ShapeFunctions {
    JetField r1;
    JetField r2;
    JetField ratio;  ///< optional R2/R1 in closed form; empty = r2 / r1

    Jet2 q(double x, double y, double t) const {
        if (ratio) return jet_of(ratio, x, y, t);
        return jet_of(r2, x, y, t) / jet_of(r1, x, y, t);
    }
};

inline ShapeFunctions unit_shapes() {
    const JetField one = [](const Jet2&, const Jet2&, const Jet2&) { return Jet2(1.0); };
    return {one, one, {}};
}

struct SourcePair {
    Eigen::MatrixXd h;  ///< nt x nx
    Vec H;              ///< nt

    static SourcePair zero(int nt, int nx) { return {Eigen::MatrixXd::Zero(nt, nx), Vec::Zero(nt)}; }
    Vec pack() const {
        Vec v(h.size() + H.size());
        for (Eigen::Index k = 0; k < h.rows(); ++k) v.segment(k * h.cols(), h.cols()) = h.row(k).transpose();
        v.tail(H.size()) = H;
        return v;
    }
    static SourcePair unpack(const Vec& v, int nt, int nx) {
        SourcePair s = zero(nt, nx);
        for (int k = 0; k < nt; ++k) s.h.row(k) = v.segment(k * nx, nx).transpose();
        s.H = v.tail(nt);
        return s;
    }
};

struct Observations {
    AdaptedField uy_sigma;  ///< levels 1..nt, rows: x=0 (ny), x=1 (ny), y=0 (nx), y=1 (nx)
    AdaptedField ux_gamma;  ///< levels 1..nt, ny rows
    AdaptedField u_final;   ///< level nt
};

// ---------------------------------------------------------------------------
// Shape checks.

struct ShapeReport {
    double min_abs_r1 = 0.0;
    double min_abs_r2 = 0.0;
    double ratio_constant = 0.0;   ///< max |grad (R2/R1)_y| / |(R2/R1)_y| where (R2/R1)_y != 0
    bool ratio_y_independent = false;
    bool compliant = false;
};

/// |R1|, |R2| on nodes and boundary points, the ratio condition on grid nodes, at every t_k.
inline ShapeReport check_shapes(const ShapeFunctions& s, const Grid2D& g, const BrownianTree& tr) {
    ShapeReport r;
    r.min_abs_r1 = r.min_abs_r2 = std::numeric_limits<double>::infinity();
    r.ratio_y_independent = true;
    for (int k = 0; k <= tr.nt; ++k)
        for (int i = -1; i <= g.nx; ++i)
            for (int j = -1; j <= g.ny; ++j) {
                const double x = (i + 1) * g.hx, y = (j + 1) * g.hy, t = tr.time(k);
                r.min_abs_r1 = std::min(r.min_abs_r1, std::abs(jet_of(s.r1, x, y, t).v));
                r.min_abs_r2 = std::min(r.min_abs_r2, std::abs(jet_of(s.r2, x, y, t).v));
                if (i < 0 || j < 0 || i == g.nx || j == g.ny) continue;
                const Jet2 q = s.q(x, y, t);
                const double qy = q.g[ax_y];
                const double gq = std::hypot(q.hess(ax_x, ax_y), q.hess(ax_y, ax_y));
                if (qy != 0.0) {
                    r.ratio_y_independent = false;
                    r.ratio_constant = std::max(r.ratio_constant, gq / std::abs(qy));
                } else if (gq != 0.0) {
                    r.ratio_y_independent = false;
                    r.ratio_constant = std::numeric_limits<double>::infinity();
                }
            }
    r.compliant = r.min_abs_r1 > 1e-12 && r.min_abs_r2 > 1e-12;
    return r;
}

// ---------------------------------------------------------------------------
// Forward map.

namespace detail {

inline Vec shape_on_grid(const JetField& r, const Grid2D& g, double t) {
    Vec out(g.size());
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) out(g.index(i, j)) = jet_of(r, g.x(i), g.y(j), t).v;
    return out;
}

inline double node_at(const Grid2D& g, const Eigen::Ref<const Vec>& u, int i, int j) {
    return (i < 0 || j < 0 || i >= g.nx || j >= g.ny) ? 0.0 : u(g.index(i, j));
}

/// Trace vector for one node: u_y on x-edges (zero), u_y on y-edges, u_x on x = 0.
inline void traces(const Grid2D& g, const Eigen::Ref<const Vec>& u, Eigen::Ref<Vec> uy, Eigen::Ref<Vec> ux) {
    uy.head(2 * g.ny).setZero();
    for (int i = 0; i < g.nx; ++i) {
        uy(2 * g.ny + i) = (4.0 * node_at(g, u, i, 0) - node_at(g, u, i, 1)) / (2.0 * g.hy);
        uy(2 * g.ny + g.nx + i) = -(4.0 * node_at(g, u, i, g.ny - 1) - node_at(g, u, i, g.ny - 2)) / (2.0 * g.hy);
    }
    for (int j = 0; j < g.ny; ++j) ux(j) = (4.0 * node_at(g, u, 0, j) - node_at(g, u, 1, j)) / (2.0 * g.hx);
}

}  // namespace detail

/// Problem for (1.3)-type sources: alpha = beta = 0, u0 = 0, f = h R1, F = H R2.
inline SpdeProblem source_problem(const SpdeProblem& base, const SourcePair& s, const ShapeFunctions& sh) {
    const Grid2D& g = base.op.grid;
    const BrownianTree& tr = base.tree;
    if (s.h.rows() != tr.nt || s.h.cols() != g.nx || s.H.size() != tr.nt)
        throw parameter_error("source pair: need h of shape nt x nx and H of length nt");
    if (!s.h.allFinite() || !s.H.allFinite()) throw parameter_error("source pair: non-finite values");
    SpdeProblem pb = base;
    pb.alpha = {};
    pb.beta = {};
    pb.g.reset();
    pb.G.reset();
    pb.u0 = Vec::Zero(g.size());
    pb.f = [g, tr, h = s.h, r1 = sh.r1](int k) {
        Vec out = detail::shape_on_grid(r1, g, tr.time(k));
        for (int i = 0; i < g.nx; ++i) out.segment(g.index(i, 0), g.ny) *= h(k, i);
        return out;
    };
    pb.F = [g, tr, H = s.H, r2 = sh.r2](int k) { return Vec(H(k) * detail::shape_on_grid(r2, g, tr.time(k))); };
    return pb;
}

inline Observations observe(const Grid2D& g, const BrownianTree& tr, const AdaptedField& u) {
    const int m = 2 * g.nx + 2 * g.ny;
    Observations o{AdaptedField(tr, m, 1, tr.nt), AdaptedField(tr, g.ny, 1, tr.nt), AdaptedField(tr, g.size(), tr.nt, tr.nt)};
    for (int k = 1; k <= tr.nt; ++k)
        for (std::int64_t b = 0; b < tr.nodes(k); ++b) {
            Vec uy(m), ux(g.ny);
            detail::traces(g, u.level(k).col(b), uy, ux);
            o.uy_sigma.level(k).col(b) = uy;
            o.ux_gamma.level(k).col(b) = ux;
        }
    o.u_final.level(tr.nt) = u.level(tr.nt);
    return o;
}

inline Observations forward_map(const SourcePair& s, const ShapeFunctions& sh, const SpdeProblem& base,
                                unsigned workers = 1) {
    const SpdeProblem pb = source_problem(base, s, sh);
    return observe(pb.op.grid, pb.tree, solve_forward(pb, workers).u);
}

// ---------------------------------------------------------------------------
// Observation coordinates.

struct ObservationLabel {
    std::string block;  ///< deterministic | martingale
    std::string edge;   ///< x0, x1, y0, y1, gamma, final
    int level = 0;
    int step = 0;       ///< martingale: increment index j; deterministic: 0
    int index = 0;
};

namespace detail {

inline void edge_labels(const Grid2D& g, std::vector<std::pair<std::string, int>>& out) {
    for (int j = 0; j < g.ny; ++j) out.emplace_back("x0", j);
    for (int j = 0; j < g.ny; ++j) out.emplace_back("x1", j);
    for (int i = 0; i < g.nx; ++i) out.emplace_back("y0", i);
    for (int i = 0; i < g.nx; ++i) out.emplace_back("y1", i);
    for (int j = 0; j < g.ny; ++j) out.emplace_back("gamma", j);
}

/// E[f_k dB_j] / dt for every row of a level-k field.
inline Vec covariation(const BrownianTree& tr, const Eigen::MatrixXd& lvl, int k, int j) {
    Eigen::MatrixXd w(lvl.rows(), lvl.cols());
    for (Eigen::Index b = 0; b < lvl.cols(); ++b) w.col(b) = tr.increment(b >> (k - j)) * lvl.col(b);
    return mean_columns(w) / tr.dt;
}

inline Vec level_traces(const Observations& o, int k, int which, const BrownianTree& tr, int j) {
    const Eigen::MatrixXd& a = o.uy_sigma.level(k);
    const Eigen::MatrixXd& b = o.ux_gamma.level(k);
    Eigen::MatrixXd both(a.rows() + b.rows(), a.cols());
    both << a, b;
    return which == 0 ? Vec(mean_columns(both)) : covariation(tr, both, k, j);
}

}  // namespace detail

inline std::vector<ObservationLabel> observation_labels(const Grid2D& g, const BrownianTree& tr) {
    std::vector<std::pair<std::string, int>> edges;
    detail::edge_labels(g, edges);
    std::vector<ObservationLabel> out;
    for (int k = 1; k <= tr.nt; ++k)
        for (const auto& [e, i] : edges) out.push_back({"deterministic", e, k, 0, i});
    for (int r = 0; r < g.size(); ++r) out.push_back({"deterministic", "final", tr.nt, 0, r});
    for (int k = 1; k <= tr.nt; ++k)
        for (int j = 1; j <= k; ++j)
            for (const auto& [e, i] : edges) out.push_back({"martingale", e, k, j, i});
    for (int j = 1; j <= tr.nt; ++j)
        for (int r = 0; r < g.size(); ++r) out.push_back({"martingale", "final", tr.nt, j, r});
    return out;
}

inline Vec observation_vector(const Observations& o, const Grid2D& g, const BrownianTree& tr) {
    const int m = 2 * g.nx + 3 * g.ny;
    const int n = g.size();
    const int nt = tr.nt;
    Vec out(nt * m + n + nt * (nt + 1) / 2 * m + nt * n);
    Eigen::Index p = 0;
    for (int k = 1; k <= nt; ++k, p += m) out.segment(p, m) = detail::level_traces(o, k, 0, tr, 0);
    out.segment(p, n) = mean_columns(o.u_final.level(nt));
    p += n;
    for (int k = 1; k <= nt; ++k)
        for (int j = 1; j <= k; ++j, p += m) out.segment(p, m) = detail::level_traces(o, k, 1, tr, j);
    for (int j = 1; j <= nt; ++j, p += n) out.segment(p, n) = detail::covariation(tr, o.u_final.level(nt), nt, j);
    return out;
}

/// Rows of the deterministic block come first; this is its length.
inline Eigen::Index deterministic_rows(const Grid2D& g, const BrownianTree& tr) {
    return tr.nt * (2 * g.nx + 3 * g.ny) + g.size();
}

/// "block,edge,level,index,value"; martingale rows write level as "k:j".
inline void write_observations_csv(const Vec& b, const Grid2D& g, const BrownianTree& tr, std::ostream& os) {
    const auto labels = observation_labels(g, tr);
    if (static_cast<Eigen::Index>(labels.size()) != b.size()) throw parameter_error("observations: wrong length");
    os << "block,edge,level,index,value\n" << std::setprecision(17);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto& l = labels[r];
        os << l.block << ',' << l.edge << ',' << l.level;
        if (l.block == "martingale") os << ':' << l.step;
        os << ',' << l.index << ',' << b(static_cast<Eigen::Index>(r)) << '\n';
    }
}

/// Inverse of write_observations_csv; labels must appear in canonical order.
/// Lines starting with '#' are skipped.
inline Vec read_observations_csv(std::istream& is, const Grid2D& g, const BrownianTree& tr) {
    const auto labels = observation_labels(g, tr);
    Vec b(static_cast<Eigen::Index>(labels.size()));
    std::string line;
    std::size_t r = 0;
    int lineno = 0;
    bool header = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (!header) {
            if (line != "block,edge,level,index,value")
                throw parameter_error("observations line " + std::to_string(lineno) + ": bad header");
            header = true;
            continue;
        }
        if (r >= labels.size()) throw parameter_error("observations: too many rows");
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) f.push_back(c);
        const auto& l = labels[r];
        std::string lev = std::to_string(l.level);
        if (l.block == "martingale") lev += ":" + std::to_string(l.step);
        if (f.size() != 5 || f[0] != l.block || f[1] != l.edge || f[2] != lev || f[3] != std::to_string(l.index))
            throw parameter_error("observations line " + std::to_string(lineno) + ": expected " + l.block + "," +
                                  l.edge + "," + lev + "," + std::to_string(l.index));
        try {
            b(static_cast<Eigen::Index>(r)) = std::stod(f[4]);
        } catch (const std::exception&) {
            throw parameter_error("observations line " + std::to_string(lineno) + ": bad value");
        }
        ++r;
    }
    if (r != labels.size()) throw parameter_error("observations: expected " + std::to_string(labels.size()) + " rows");
    return b;
}

// ---------------------------------------------------------------------------
// Observation matrix, uniqueness, reconstruction.

inline constexpr Eigen::Index kMaxObservationEntries = 50'000'000;

/// Column c = observation_vector(forward_map(e_c)); h unknowns first (k-major), then H.
inline Eigen::MatrixXd assemble_observation_matrix(const ShapeFunctions& sh, const SpdeProblem& base,
                                                   unsigned workers = 1) {
    const Grid2D& g = base.op.grid;
    const BrownianTree& tr = base.tree;
    const int cols = tr.nt * g.nx + tr.nt;
    const Eigen::Index rows = static_cast<Eigen::Index>(observation_labels(g, tr).size());
    if (rows * cols > kMaxObservationEntries || tr.nt > 12)
        throw capacity_error("observation matrix too large (" + std::to_string(rows) + " x " + std::to_string(cols) +
                             ", nt " + std::to_string(tr.nt) + "); use a smaller grid or nt <= 12");
    Eigen::MatrixXd m(rows, cols);
    parallel_for(static_cast<std::size_t>(cols), workers, [&](std::size_t c) {
        Vec e = Vec::Zero(cols);
        e(static_cast<Eigen::Index>(c)) = 1.0;
        const SourcePair s = SourcePair::unpack(e, tr.nt, g.nx);
        m.col(static_cast<Eigen::Index>(c)) = observation_vector(forward_map(s, sh, base), g, tr);
    });
    return m;
}

struct NullspaceGap {
    double sigma_min = 0.0;
    double sigma_max = 0.0;
    double ratio = 0.0;      ///< sigma_min / sigma_max
    double condition = 0.0;  ///< sigma_max / sigma_min (inf if sigma_min = 0)
    Vec singular_values;
};

inline NullspaceGap nullspace_gap(const Eigen::MatrixXd& m) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    NullspaceGap r;
    r.singular_values = svd.singularValues();
    if (r.singular_values.size() == 0) return r;
    r.sigma_max = r.singular_values(0);
    // columns beyond the row count contribute zero singular values
    r.sigma_min = m.cols() > m.rows() ? 0.0 : r.singular_values(r.singular_values.size() - 1);
    r.ratio = r.sigma_max > 0.0 ? r.sigma_min / r.sigma_max : 0.0;
    r.condition = r.sigma_min > 0.0 ? r.sigma_max / r.sigma_min : std::numeric_limits<double>::infinity();
    return r;
}

struct Reconstruction {
    SourcePair estimate;
    double residual = 0.0;  ///< |M x - b| / |b| (0 when b = 0)
    double err_h = std::numeric_limits<double>::quiet_NaN();
    double err_H = std::numeric_limits<double>::quiet_NaN();
};

/// (M'M + rho I) x = M' b.
inline Reconstruction reconstruct_sources(const Eigen::MatrixXd& m, const Vec& b, const Grid2D& g,
                                          const BrownianTree& tr, double rho_tik = 1e-12,
                                          const SourcePair* truth = nullptr) {
    if (b.size() != m.rows()) throw parameter_error("reconstruct: observation vector length mismatch");
    if (!(rho_tik >= 0.0)) throw parameter_error("reconstruct: tikhonov weight must be >= 0");
    Eigen::MatrixXd nm = m.transpose() * m;
    nm.diagonal().array() += rho_tik;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(nm);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw numerical_error("reconstruct: normal matrix factorization failed");
    const Vec x = ldlt.solve(m.transpose() * b);
    if (!x.allFinite()) throw numerical_error("reconstruct: non-finite solution");
    Reconstruction r;
    r.estimate = SourcePair::unpack(x, tr.nt, g.nx);
    const double bn = b.norm();
    r.residual = bn > 0.0 ? (m * x - b).norm() / bn : 0.0;
    if (truth) {
        const auto rel = [](double d, double n) { return n > 0.0 ? d / n : d; };
        r.err_h = rel((r.estimate.h - truth->h).norm(), truth->h.norm());
        r.err_H = rel((r.estimate.H - truth->H).norm(), truth->H.norm());
    }
    return r;
}

struct LCurvePoint {
    double rho = 0.0;
    double residual = 0.0;  ///< |M x - b|
    double solution = 0.0;  ///< |x|
    double err_h = 0.0;
    double err_H = 0.0;
};

/// Tikhonov sweep; picks the corner by maximum curvature of (log residual, log solution).
inline std::vector<LCurvePoint> l_curve(const Eigen::MatrixXd& m, const Vec& b, const Grid2D& g,
                                        const BrownianTree& tr, const std::vector<double>& rhos,
                                        const SourcePair* truth, std::size_t* corner = nullptr) {
    std::vector<LCurvePoint> out;
    for (double rho : rhos) {
        const auto r = reconstruct_sources(m, b, g, tr, rho, truth);
        const Vec x = r.estimate.pack();
        out.push_back({rho, (m * x - b).norm(), x.norm(), r.err_h, r.err_H});
    }
    if (corner) {
        *corner = 0;
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 1; i + 1 < out.size(); ++i) {
            const auto pt = [&](std::size_t k) {
                return std::pair{std::log(out[k].residual), std::log(out[k].solution)};
            };
            const auto [x0, y0] = pt(i - 1);
            const auto [x1, y1] = pt(i);
            const auto [x2, y2] = pt(i + 1);
            // Menger curvature of three consecutive points
            const double a = std::hypot(x1 - x0, y1 - y0), c = std::hypot(x2 - x1, y2 - y1),
                         d = std::hypot(x2 - x0, y2 - y0);
            const double area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
            const double k = a * c * d > 0.0 ? 2.0 * std::abs(area2) / (a * c * d) : 0.0;
            if (k > best) {
                best = k;
                *corner = i;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reduction u = R1 p, w = p_y.

/// Grid-valued source for step k evaluated at node b of level k+1.
using NodeSource = std::function<Vec(int k, std::int64_t b)>;

/// y-derivatives of the sources in the p equation: (f/R1)_y and (F/R1)_y.
/// For f = h R1 with h independent of y the first is 0.
struct ReductionSources {
    NodeSource drift_y;     ///< empty = 0
    LevelSource diffusion_y;  ///< empty = 0
};

/// Sources of (1.3)-type: (f/R1)_y = 0, (F/R1)_y = H (R2/R1)_y.
inline ReductionSources reduction_sources(const SourcePair& s, const ShapeFunctions& sh, const Grid2D& g,
                                          const BrownianTree& tr) {
    ReductionSources r;
    r.diffusion_y = [s, sh, g, tr](int k) {
        Vec out(g.size());
        for (int i = 0; i < g.nx; ++i)
            for (int j = 0; j < g.ny; ++j) out(g.index(i, j)) = s.H(k) * sh.q(g.x(i), g.y(j), tr.time(k)).g[ax_y];
        return out;
    };
    return r;
}

struct ReductionCoefficients {
    Vec cx, cy, c0;        ///< 2R1_x/R1, 2x^{2g}R1_y/R1, -R1_t/R1 + R1_xx/R1 + x^{2g}R1_yy/R1
    Vec cx_y, cy_y, c0_y;  ///< their y-derivatives
};

/// Coefficients at time t. The y-derivatives are central differences of the
/// closed-form coefficients with step hy (exactly 0 when R1 does not depend on y).
inline ReductionCoefficients reduction_coefficients(const ShapeFunctions& sh, const DiscreteOperator& op, double t) {
    const Grid2D& g = op.grid;
    const int n = g.size();
    ReductionCoefficients c{Vec(n), Vec(n), Vec(n), Vec(n), Vec(n), Vec(n)};
    auto eval = [&](double x, double y) {
        const Jet2 r = jet_of(sh.r1, x, y, t);
        if (!(std::abs(r.v) >= 1e-12)) throw domain_error("reduction: |R1| < 1e-12 at x=" + std::to_string(x) +
                                                           ", y=" + std::to_string(y) + ", t=" + std::to_string(t));
        const double xg = std::pow(x + op.epsilon, 2.0 * op.gamma);
        return std::array<double, 3>{2.0 * r.g[ax_x] / r.v, 2.0 * xg * r.g[ax_y] / r.v,
                                     (-r.g[ax_t] + r.hess(ax_x, ax_x) + xg * r.hess(ax_y, ax_y)) / r.v};
    };
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j) {
            const int k = g.index(i, j);
            const double x = g.x(i), y = g.y(j);
            const auto m = eval(x, y), up = eval(x, y + g.hy), dn = eval(x, y - g.hy);
            c.cx(k) = m[0];
            c.cy(k) = m[1];
            c.c0(k) = m[2];
            c.cx_y(k) = (up[0] - dn[0]) / (2.0 * g.hy);
            c.cy_y(k) = (up[1] - dn[1]) / (2.0 * g.hy);
            c.c0_y(k) = (up[2] - dn[2]) / (2.0 * g.hy);
        }
    return c;
}

struct ReductionReport {
    AdaptedField p;
    AdaptedField w;
    std::vector<double> step_norms;  ///< sqrt(E |r_k / dt|^2), k = 0..nt-1
    double residual = 0.0;           ///< max of step_norms
    double diffusion_coef_max = 0.0; ///< max |(R2/R1)_y| over grid and steps (exactly 0 in the y-independent case)
};

namespace detail {

inline Vec d_x(const Grid2D& g, const Eigen::Ref<const Vec>& u) {
    Vec o(g.size());
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j)
            o(g.index(i, j)) = (node_at(g, u, i + 1, j) - node_at(g, u, i - 1, j)) / (2.0 * g.hx);
    return o;
}
inline Vec d_y(const Grid2D& g, const Eigen::Ref<const Vec>& u) {
    Vec o(g.size());
    for (int i = 0; i < g.nx; ++i)
        for (int j = 0; j < g.ny; ++j)
            o(g.index(i, j)) = (node_at(g, u, i, j + 1) - node_at(g, u, i, j - 1)) / (2.0 * g.hy);
    return o;
}

}  // namespace detail

/// p = u/R1, w = D_y p, and the residual of the w equation per step k -> k+1
/// (drift implicit at level k+1, as in the forward scheme):
///   r = w_{k+1} - w_k - dt [A w + cx w_x + cy w_y + c0 w + cx_y p_x + cy_y p_y + c0_y p + (f/R1)_y]_{k+1}
///       - (F/R1)_y(k) dB
inline ReductionReport reduction_transform(const DiscreteOperator& op, const BrownianTree& tr, const AdaptedField& u,
                                           const ShapeFunctions& sh, const ReductionSources& src = {}) {
    const Grid2D& g = op.grid;
    const int n = g.size();
    if (u.dim() != n || u.first_level() != 0 || u.last_level() != tr.nt)
        throw parameter_error("reduction: u must hold levels 0..nt on the grid");
    ReductionReport rep{AdaptedField(tr, n), AdaptedField(tr, n), {}, 0.0, 0.0};
    std::vector<ReductionCoefficients> coef;
    for (int k = 0; k <= tr.nt; ++k) {
        coef.push_back(reduction_coefficients(sh, op, tr.time(k)));
        const Vec r1 = detail::shape_on_grid(sh.r1, g, tr.time(k));
        for (std::int64_t b = 0; b < tr.nodes(k); ++b) {
            const Vec p = u.level(k).col(b).cwiseQuotient(r1);
            rep.p.level(k).col(b) = p;
            rep.w.level(k).col(b) = detail::d_y(g, p);
        }
    }
    for (int k = 0; k < tr.nt; ++k) {
        const ReductionCoefficients& c = coef[static_cast<std::size_t>(k + 1)];
        const Vec dif = src.diffusion_y ? src.diffusion_y(k) : Vec::Zero(n);
        rep.diffusion_coef_max = std::max(rep.diffusion_coef_max, dif.lpNorm<Eigen::Infinity>());
        Eigen::MatrixXd rr(1, tr.nodes(k + 1));
        for (std::int64_t cnode = 0; cnode < tr.nodes(k + 1); ++cnode) {
            const Vec w1 = rep.w.level(k + 1).col(cnode), p1 = rep.p.level(k + 1).col(cnode);
            Vec drift = op.a * w1 + c.cx.cwiseProduct(detail::d_x(g, w1)) + c.cy.cwiseProduct(detail::d_y(g, w1)) +
                        c.c0.cwiseProduct(w1) + c.cx_y.cwiseProduct(detail::d_x(g, p1)) +
                        c.cy_y.cwiseProduct(detail::d_y(g, p1)) + c.c0_y.cwiseProduct(p1);
            if (src.drift_y) drift += src.drift_y(k, cnode);
            const Vec r = (w1 - rep.w.level(k).col(cnode / 2) - tr.dt * drift - tr.increment(cnode) * dif) / tr.dt;
            rr(0, cnode) = l2sq(g, r);
        }
        rep.step_norms.push_back(std::sqrt(mean_columns(rr)(0)));
        rep.residual = std::max(rep.residual, rep.step_norms.back());
    }
    return rep;
}

}  // namespace sgrushin
