#pragma once

// Both sides of the weighted inequalities evaluated on solver output.
//
// Space: nodal sums. Expectation: exact over the tree. Time: on each cell
// [t_k, t_{k+1}] (parent node -> child node) the log-weight is interpolated
// linearly and the squared integrand linearly, and the product integrated in
// closed form. Flat weights give the trapezoid rule; weights that pile up at
// t = T (regular family) keep their end mass. Every term is a log-sum-exp,
// reported as value * e^{-log_scale} with one shift shared by all terms.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "sgrushin/errors.hpp"
#include "sgrushin/parallel.hpp"
#include "sgrushin/spde.hpp"
#include "sgrushin/weights.hpp"

namespace sgrushin {

// ---------------------------------------------------------------------------
// Cut-offs.

enum class CutoffOrientation { chi, zeta };

/// C^2 quintic smoothstep across [lo, hi] in x, constant in y.
///   chi : 0 for x <= a1, 1 for x >= a2
///   zeta: 1 for x <= a2, 0 for x >= a  (lo = a2, hi = a)
class CutoffField {
public:
    CutoffField(double lo, double hi, CutoffOrientation o) : lo_(lo), hi_(hi), o_(o) {}

    double value(double x) const {
        const double s = step(x);
        return o_ == CutoffOrientation::chi ? s : 1.0 - s;
    }
    double dx(double x) const {
        const double d = dstep(x);
        return o_ == CutoffOrientation::chi ? d : -d;
    }
    double dxx(double x) const {
        const double d = ddstep(x);
        return o_ == CutoffOrientation::chi ? d : -d;
    }
    double lo() const { return lo_; }
    double hi() const { return hi_; }

private:
    double u(double x) const { return std::clamp((x - lo_) / (hi_ - lo_), 0.0, 1.0); }
    double step(double x) const {
        const double t = u(x);
        return t * t * t * (10.0 + t * (-15.0 + 6.0 * t));
    }
    double dstep(double x) const {
        const double t = u(x);
        return 30.0 * t * t * (1.0 - t) * (1.0 - t) / (hi_ - lo_);
    }
    double ddstep(double x) const {
        const double t = u(x), w = hi_ - lo_;
        return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (w * w);
    }
    double lo_, hi_;
    CutoffOrientation o_;
};

inline CutoffField make_cutoff(double lo, double hi, CutoffOrientation o = CutoffOrientation::chi) {
    if (!(0.0 < lo && lo < hi && hi < 1.0)) throw parameter_error("make_cutoff: need 0 < a1 < a2 < 1");
    return CutoffField(lo, hi, o);
}

// ---------------------------------------------------------------------------
// Log-space accumulation.

class LogAccumulator {
public:
    void add(double logv) {
        if (logv == -std::numeric_limits<double>::infinity()) return;
        if (std::isnan(logv)) { nan_ = true; return; }
        if (logv > m_) {
            s_ = s_ * std::exp(m_ - logv) + 1.0;
            m_ = logv;
        } else {
            s_ += std::exp(logv - m_);
        }
    }
    /// log of the accumulated sum; -inf when empty
    double log() const {
        if (nan_) return std::numeric_limits<double>::quiet_NaN();
        return s_ > 0.0 ? m_ + std::log(s_) : -std::numeric_limits<double>::infinity();
    }

private:
    double m_ = -std::numeric_limits<double>::infinity();
    double s_ = 0.0;
    bool nan_ = false;
};

inline double log_sq(double v) { return v == 0.0 ? -std::numeric_limits<double>::infinity() : 2.0 * std::log(std::abs(v)); }

inline double log_add(double a, double b) {
    if (a == -std::numeric_limits<double>::infinity()) return b;
    if (b == -std::numeric_limits<double>::infinity()) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// ---------------------------------------------------------------------------
// Report.

struct ReportTerm {
    std::string name;
    std::string side;  ///< "lhs" or "rhs"
    double log_value = -std::numeric_limits<double>::infinity();
    double value = 0.0;  ///< exp(log_value - log_scale)
};

struct InequalityReport {
    std::string kind;
    std::vector<ReportTerm> terms;
    double log_scale = 0.0;
    double lhs_total = 0.0;  ///< scaled
    double rhs_total = 0.0;  ///< scaled
    double ratio = 0.0;      ///< lhs / rhs, 0 when both vanish
    double s = 0, lambda = 0, tau = 0, epsilon = 0, gamma = 0, sigma = 0;
    std::string sample;
    double extra = std::numeric_limits<double>::quiet_NaN();  ///< report-specific scalar

    const ReportTerm* find(const std::string& n) const {
        for (const auto& t : terms)
            if (t.name == n) return &t;
        return nullptr;
    }
    double value(const std::string& n) const {
        const auto* t = find(n);
        return t ? t->value : std::numeric_limits<double>::quiet_NaN();
    }
    double log_value(const std::string& n) const {
        const auto* t = find(n);
        return t ? t->log_value : std::numeric_limits<double>::quiet_NaN();
    }
    bool finite() const {
        for (const auto& t : terms)
            if (!std::isfinite(t.value) || t.value < 0.0) return false;
        return std::isfinite(ratio);
    }
};

/// Scale terms by a shared shift and form totals.
inline void finalize(InequalityReport& r) {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& t : r.terms) m = std::max(m, t.log_value);
    r.log_scale = std::isfinite(m) ? m : 0.0;
    double lhs = -std::numeric_limits<double>::infinity(), rhs = lhs;
    for (auto& t : r.terms) {
        t.value = std::isfinite(t.log_value) ? std::exp(t.log_value - r.log_scale) : 0.0;
        if (t.side == "lhs")
            lhs = log_add(lhs, t.log_value);
        else
            rhs = log_add(rhs, t.log_value);
    }
    r.lhs_total = std::isfinite(lhs) ? std::exp(lhs - r.log_scale) : 0.0;
    r.rhs_total = std::isfinite(rhs) ? std::exp(rhs - r.log_scale) : 0.0;
    if (r.lhs_total == 0.0 && r.rhs_total == 0.0)
        r.ratio = 0.0;
    else if (r.rhs_total > 0.0)
        r.ratio = r.lhs_total / r.rhs_total;
    else
        r.ratio = std::isfinite(lhs) ? std::exp(lhs - rhs) : 0.0;
}

inline void set_params(InequalityReport& r, const WeightParams& p) {
    r.s = p.s;
    r.lambda = p.lambda;
    r.tau = p.tau;
    r.epsilon = p.epsilon;
    r.gamma = p.gamma;
    r.sigma = p.sigma;
}

inline void write_report_csv(const InequalityReport& r, std::ostream& os) {
    os << std::setprecision(17) << "# log_scale=" << r.log_scale << " ratio=" << r.ratio << '\n'
       << "term_name,side,value\n";
    for (const auto& t : r.terms) os << t.name << ',' << t.side << ',' << t.value << '\n';
}

inline void write_report_json(const InequalityReport& r, std::ostream& os) {
    auto num = [&](double v) {
        if (std::isfinite(v)) os << v;
        else os << "null";
    };
    os << std::setprecision(17) << "{\n  \"kind\": \"" << r.kind << "\",\n  \"sample\": \"" << r.sample
       << "\",\n  \"params\": {\"s\": ";
    num(r.s);
    os << ", \"lambda\": ";
    num(r.lambda);
    os << ", \"tau\": ";
    num(r.tau);
    os << ", \"epsilon\": ";
    num(r.epsilon);
    os << ", \"gamma\": ";
    num(r.gamma);
    os << ", \"sigma\": ";
    num(r.sigma);
    os << "},\n  \"log_scale\": ";
    num(r.log_scale);
    os << ",\n  \"lhs_total\": ";
    num(r.lhs_total);
    os << ",\n  \"rhs_total\": ";
    num(r.rhs_total);
    os << ",\n  \"ratio\": ";
    num(r.ratio);
    os << ",\n  \"extra\": ";
    num(r.extra);
    os << ",\n  \"terms\": [\n";
    for (std::size_t i = 0; i < r.terms.size(); ++i) {
        os << "    {\"name\": \"" << r.terms[i].name << "\", \"side\": \"" << r.terms[i].side << "\", \"value\": ";
        num(r.terms[i].value);
        os << ", \"log_value\": ";
        num(r.terms[i].log_value);
        os << '}' << (i + 1 < r.terms.size() ? "," : "") << '\n';
    }
    os << "  ]\n}\n";
}

// ---------------------------------------------------------------------------
// Minimal SVG line chart.

struct Series {
    std::string name;
    std::vector<double> x, y;
};

inline void write_svg_chart(std::ostream& os, const std::string& title, const std::string& xlabel,
                            const std::string& ylabel, const std::vector<Series>& series, bool log_y = true) {
    const double W = 640, H = 420, L = 70, R = 160, T = 40, B = 50;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, ty(s.y[i]));
            y1 = std::max(y1, ty(s.y[i]));
        }
    if (!(x1 > x0)) { x0 -= 1; x1 += 1; }
    if (!(y1 > y0)) { y0 -= 1; y1 += 1; }
    auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    os << std::setprecision(6) << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
       << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
       << xlabel << "</text>\n<text x=\"16\" y=\"" << (T + H - B) / 2
       << "\" font-size=\"12\" transform=\"rotate(-90 16 " << (T + H - B) / 2 << ")\" text-anchor=\"middle\">"
       << (log_y ? "log10 " : "") << ylabel << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        os << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"10\">"
           << xv << "</text>\n<text x=\"" << L - 6 << "\" y=\"" << H - B - (yv - y0) / (y1 - y0) * (H - T - B) + 3
           << "\" text-anchor=\"end\" font-size=\"10\">" << yv << "</text>\n";
    }
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* c = colors[si % 6];
        os << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        os << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            if (std::isfinite(s.y[i]))
                os << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
        os << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (si + 1) << "\" font-size=\"11\" fill=\"" << c
           << "\">" << s.name << "</text>\n";
    }
    os << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Quadrature.

namespace detail {

inline constexpr double ninf = -std::numeric_limits<double>::infinity();

/// log of int_0^1 e^{la + (lb - la) tau} ((1 - tau) qa + tau qb) dtau, qa, qb >= 0.
inline double fitted_cell(double la, double lb, double qa, double qb) {
    if (la == ninf && lb == ninf) return ninf;
    if (la > lb) {
        std::swap(la, lb);
        std::swap(qa, qb);
    }
    const double d = lb - la;  // >= 0, possibly inf
    double c0, c1;             // weights of qa, qb, both times e^{-d}
    if (d == std::numeric_limits<double>::infinity()) {
        c0 = c1 = 0.0;
    } else if (d < 1e-4) {
        const double e = std::exp(-d);
        c0 = e * (0.5 + d / 6.0);
        c1 = e * (0.5 + d / 3.0);
    } else {
        const double e = std::exp(-d);
        c0 = (1.0 - (1.0 + d) * e) / (d * d);
        c1 = (d - 1.0 + e) / (d * d);
    }
    const double v = qa * c0 + qb * c1;
    return v > 0.0 ? lb + std::log(v) : ninf;
}

/// Column index of the observation edge x = 0.
inline constexpr int edge_column = -1;

/// Log-weights 2l at every grid node and every edge point (x = 0, y_j), every level.
///
/// Singular family: 2l = 2s e^{lambda psi} xi(t) - 2s e^{2 lambda |psi|_inf} xi(t). The second piece
/// depends on t only and dwarfs the first, so it is kept as offset + (excess over its
/// minimum) instead of being summed into 2l in double. All stored logs are then shifted so
/// the largest grid-node value is 0 (edge values may exceed it). At t = 0 and t = T the singular weight is 0 (log -inf).
class WeightTable {
public:
    WeightTable(const WeightFamily& w, const Grid2D& g, const BrownianTree& tr) : g_(g) {
        const WeightParams& p = w.params();
        const bool sing = w.kind() == WeightKind::singular;
        const int nt = tr.nt;
        std::vector<double> xis(static_cast<std::size_t>(nt + 1), std::numeric_limits<double>::infinity());
        double xi_min = std::numeric_limits<double>::infinity();
        if (sing) {
            if (nt < 2) throw parameter_error("singular weights need nt >= 2 (interior time nodes)");
            for (int k = 1; k < nt; ++k) {
                xis[static_cast<std::size_t>(k)] = xi_time(tr.time(k), p.horizon).v;
                xi_min = std::min(xi_min, xis[static_cast<std::size_t>(k)]);
            }
        }
        const double log_c = std::log(2.0 * p.s) + 2.0 * p.lambda * w.psi_sup();
        if (sing) offset = -std::exp(log_c + std::log(xi_min));
        double ref = ninf;
        for (int k = 0; k <= nt; ++k) {
            Vec lw(g.size() + g.ny), fac(g.size() + g.ny);
            const bool end = sing && (k == 0 || k == nt);
            const double xk = xis[static_cast<std::size_t>(k)];
            const double cell = (sing && !end && xk > xi_min) ? -std::exp(log_c + std::log(xk - xi_min)) : 0.0;
            auto put = [&](int slot, double x, double y, bool grid) {
                if (end) {
                    lw(slot) = ninf;
                    fac(slot) = std::numeric_limits<double>::infinity();
                    return;
                }
                const WeightPoint q = w.eval(x, y, tr.time(k));
                if (sing) {
                    lw(slot) = 2.0 * p.s * q.expo.v * xk + cell;
                    fac(slot) = xk;
                } else {
                    lw(slot) = 2.0 * q.l.v;
                    fac(slot) = q.expo.v;
                }
                if (grid) ref = std::max(ref, lw(slot));
            };
            for (int i = 0; i < g.nx; ++i)
                for (int j = 0; j < g.ny; ++j) put(g.index(i, j), g.x(i), g.y(j), true);
            for (int j = 0; j < g.ny; ++j) put(g.size() + j, 0.0, g.y(j), false);
            lw_.push_back(std::move(lw));
            fac_.push_back(std::move(fac));
        }
        for (auto& v : lw_) v.array() -= ref;
        offset += ref;
    }

    /// shifted log e^{2l}; i = edge_column for the x = 0 edge
    double log_w2(int level, int i, int j) const { return lw_[static_cast<std::size_t>(level)](slot(i, j)); }
    /// xi (singular) or Phi (regular)
    double factor(int level, int i, int j) const { return fac_[static_cast<std::size_t>(level)](slot(i, j)); }

    double offset = 0.0;

private:
    int slot(int i, int j) const { return i == edge_column ? g_.size() + j : g_.index(i, j); }
    Grid2D g_;
    std::vector<Vec> lw_, fac_;
};

/// One space-time term E int e^{2l} coef q.
struct Integrand {
    /// log of the prefactor (powers of s, lambda, xi or Phi, x) given factor() at the point
    std::function<double(int level, int i, int j, double factor)> log_coef;
    /// squared quantity at (level, node, i, j)
    std::function<double(int level, std::int64_t node, int i, int j)> q;
    /// q of cell k taken at (k, parent) on the whole cell (processes stored on levels < nt)
    bool cell_constant = false;
    /// q independent of the node: one evaluation per cell with unit probability
    bool deterministic = false;
    /// restrict to these x indices; empty = all
    std::function<bool(int i)> mask;
    /// integrate along the x = 0 edge (i = edge_column) instead of over the grid
    bool edge = false;
};

inline double integrate(const Grid2D& g, const BrownianTree& tr, const WeightTable* wt, const Integrand& f) {
    LogAccumulator acc;
    auto ell = [&](int k, int i, int j) {
        if (!wt) return f.log_coef ? f.log_coef(k, i, j, 1.0) : 0.0;
        const double lw = wt->log_w2(k, i, j);
        if (lw == ninf) return ninf;
        return lw + (f.log_coef ? f.log_coef(k, i, j, wt->factor(k, i, j)) : 0.0);
    };
    std::vector<int> cols;
    if (f.edge)
        cols.push_back(edge_column);
    else
        for (int i = 0; i < g.nx; ++i)
            if (!f.mask || f.mask(i)) cols.push_back(i);
    const double area = f.edge ? g.hy : g.hx * g.hy;
    for (int k = 0; k < tr.nt; ++k) {
        const std::int64_t nodes = f.deterministic ? 1 : tr.nodes(k + 1);
        const double lq = std::log(area * tr.dt) - (f.deterministic ? 0.0 : (k + 1) * std::log(2.0));
        for (std::int64_t c = 0; c < nodes; ++c)
            for (int i : cols)
                for (int j = 0; j < g.ny; ++j) {
                    const double qa = f.q(k, c / 2, i, j);
                    const double qb = f.cell_constant ? qa : f.q(k + 1, c, i, j);
                    if (qa == 0.0 && qb == 0.0) continue;
                    acc.add(lq + fitted_cell(ell(k, i, j), ell(k + 1, i, j), qa, qb));
                }
    }
    return acc.log();
}

inline double at(const Grid2D& g, const Eigen::Ref<const Vec>& u, int i, int j) {
    return (i < 0 || j < 0 || i >= g.nx || j >= g.ny) ? 0.0 : u(g.index(i, j));
}
inline double dx_c(const Grid2D& g, const Eigen::Ref<const Vec>& u, int i, int j) {
    return (at(g, u, i + 1, j) - at(g, u, i - 1, j)) / (2.0 * g.hx);
}
inline double dy_c(const Grid2D& g, const Eigen::Ref<const Vec>& u, int i, int j) {
    return (at(g, u, i, j + 1) - at(g, u, i, j - 1)) / (2.0 * g.hy);
}
/// u_x at x = 0 by the one-sided second-order formula with u(0) = 0.
inline double dx_left_edge(const Grid2D& g, const Eigen::Ref<const Vec>& u, int j) {
    return (4.0 * at(g, u, 0, j) - at(g, u, 1, j)) / (2.0 * g.hx);
}
inline double sq(double v) { return v * v; }
inline double safe_log(double v) { return v > 0.0 ? std::log(v) : ninf; }

using TermFn = std::function<double()>;

inline InequalityReport run_terms(const std::string& kind, std::vector<std::pair<ReportTerm, TermFn>> defs,
                                  unsigned workers, double offset = 0.0) {
    InequalityReport r;
    r.kind = kind;
    r.terms.resize(defs.size());
    parallel_for(defs.size(), workers, [&](std::size_t i) {
        r.terms[i] = defs[i].first;
        r.terms[i].log_value = defs[i].second();
    });
    finalize(r);
    r.log_scale += offset;
    for (auto& t : r.terms) t.log_value += offset;
    return r;
}

inline std::vector<Vec> f1_levels(const SpdeProblem& pb) {
    std::vector<Vec> out;
    if (pb.f1)
        for (int k = 0; k < pb.tree.nt; ++k) out.push_back(pb.f1(k));
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backward inequality (singular weights).

/// LHS {s xi theta^2 |v_x|^2, s xi theta^2 (x+eps)^{2g}|v_y|^2, s^3 xi^3 theta^2 |v|^2};
/// RHS {theta^2 |f1|^2, s^2 xi^2 theta^2 |F1|^2, s^3 xi^3 theta^2 |v|^2 on omega}. F1 is the
/// solution's V unless an explicit F1 source is given.
inline InequalityReport carleman_sides_backward(const SpdeProblem& pb, const BackwardTrajectory& tr,
                                                const WeightFamily& w, const LevelSource& F1 = {},
                                                unsigned workers = 1) {
    using namespace detail;
    if (w.kind() != WeightKind::singular) throw parameter_error("carleman_sides_backward: singular weights required");
    const Grid2D& g = pb.op.grid;
    const BrownianTree& t = pb.tree;
    const WeightTable wt(w, g, t);
    const double ls = std::log(w.params().s);
    const auto f1 = f1_levels(pb);
    std::vector<Vec> F1v;
    if (F1)
        for (int k = 0; k < t.nt; ++k) F1v.push_back(F1(k));
    auto v = [&](int k, std::int64_t b) { return tr.v.level(k).col(b); };
    auto coef = [ls](int p) { return [=](int, int, int, double xi) { return p * (ls + std::log(xi)); }; };

    Integrand vx{coef(1), [&](int k, std::int64_t b, int i, int j) { return sq(dx_c(g, v(k, b), i, j)); }};
    Integrand vy{[&](int, int i, int, double xi) { return ls + std::log(xi) + std::log(pb.op.degeneracy(i)); },
                 [&](int k, std::int64_t b, int i, int j) { return sq(dy_c(g, v(k, b), i, j)); }};
    Integrand vv{coef(3), [&](int k, std::int64_t b, int i, int j) { return sq(at(g, v(k, b), i, j)); }};
    Integrand vo = vv;
    vo.mask = [&](int i) { return pb.regions.in_omega(g.x(i)); };
    Integrand ff{{}, [&](int k, std::int64_t, int i, int j) { return sq(f1[static_cast<std::size_t>(k)](g.index(i, j))); }};
    ff.cell_constant = ff.deterministic = true;
    Integrand FF{coef(2), [&](int k, std::int64_t b, int i, int j) {
                     const int n = g.index(i, j);
                     return sq(F1 ? F1v[static_cast<std::size_t>(k)](n) : tr.V.level(k)(n, b));
                 }};
    FF.cell_constant = true;
    FF.deterministic = static_cast<bool>(F1);

    std::vector<std::pair<ReportTerm, TermFn>> defs;
    defs.push_back({{"s*xi*theta^2*|v_x|^2", "lhs"}, [&] { return integrate(g, t, &wt, vx); }});
    defs.push_back({{"s*xi*theta^2*x^2g*|v_y|^2", "lhs"}, [&] { return integrate(g, t, &wt, vy); }});
    defs.push_back({{"s^3*xi^3*theta^2*|v|^2", "lhs"}, [&] { return integrate(g, t, &wt, vv); }});
    defs.push_back({{"theta^2*|f1|^2", "rhs"}, [&] { return f1.empty() ? ninf : integrate(g, t, &wt, ff); }});
    defs.push_back({{"s^2*xi^2*theta^2*|F1|^2", "rhs"}, [&] { return integrate(g, t, &wt, FF); }});
    defs.push_back({{"s^3*xi^3*theta^2*|v|^2 on omega", "rhs"}, [&] { return integrate(g, t, &wt, vo); }});
    auto r = run_terms("carleman-backward", std::move(defs), workers, wt.offset);
    set_params(r, w.params());
    return r;
}

// ---------------------------------------------------------------------------
// Forward inequality (regular weights).

/// LHS {s lam^2 Phi Theta^2 |w_x|^2, s lam^2 Phi Theta^2 (x+eps)^{2g}|w_y|^2, s^3 lam^4 Phi^3 Theta^2 |w|^2,
/// s lam Phi Theta^2 |F2|^2}; RHS {Theta^2|f2|^2, s Phi Theta^2 |grad F2|^2,
/// s^2 lam^2 Phi^2(T) Theta^2(T) w(T)^2, s lam Phi Theta^2 |w_x|^2 on Gamma}.
/// `extra` holds (LHS diffusion term) / (RHS grad F2 term). `lambda_factor` replaces the explicit
/// lambda powers (not the lambda inside Phi) when positive; used for recomputation checks.
inline InequalityReport carleman_sides_forward(const SpdeProblem& pb, const ForwardTrajectory& tr,
                                               const WeightFamily& w, const Field3& f2, const Field3& F2,
                                               unsigned workers = 1, double lambda_factor = 0.0) {
    using namespace detail;
    if (w.kind() != WeightKind::regular) throw parameter_error("carleman_sides_forward: regular weights required");
    const Grid2D& g = pb.op.grid;
    const BrownianTree& t = pb.tree;
    const WeightParams& p = w.params();
    const WeightTable wt(w, g, t);
    const double ls = std::log(p.s), ll = std::log(lambda_factor > 0.0 ? lambda_factor : p.lambda);
    auto u = [&](int k, std::int64_t b) { return tr.u.level(k).col(b); };
    auto coef = [](double c, double phi_pow) {
        return [=](int, int, int, double phi) { return c + phi_pow * std::log(phi); };
    };

    Integrand wx{coef(ls + 2 * ll, 1), [&](int k, std::int64_t b, int i, int j) { return sq(dx_c(g, u(k, b), i, j)); }};
    Integrand wy{[&](int, int i, int, double phi) { return ls + 2 * ll + std::log(phi) + std::log(pb.op.degeneracy(i)); },
                 [&](int k, std::int64_t b, int i, int j) { return sq(dy_c(g, u(k, b), i, j)); }};
    Integrand ww{coef(3 * ls + 4 * ll, 3), [&](int k, std::int64_t b, int i, int j) { return sq(at(g, u(k, b), i, j)); }};
    Integrand dF{coef(ls + ll, 1), [&](int k, std::int64_t, int i, int j) { return sq(F2(g.x(i), g.y(j), t.time(k))); }};
    dF.deterministic = true;
    Integrand df{{}, [&](int k, std::int64_t, int i, int j) { return sq(f2(g.x(i), g.y(j), t.time(k))); }};
    df.deterministic = true;
    Integrand gF{coef(ls, 1), [&](int k, std::int64_t, int i, int j) {
                     const double x = g.x(i), y = g.y(j), s = t.time(k);
                     return sq((F2(x + g.hx, y, s) - F2(x - g.hx, y, s)) / (2.0 * g.hx)) +
                            sq((F2(x, y + g.hy, s) - F2(x, y - g.hy, s)) / (2.0 * g.hy));
                 }};
    gF.deterministic = true;
    Integrand gam{coef(ls + ll, 1), [&](int k, std::int64_t b, int, int j) { return sq(dx_left_edge(g, u(k, b), j)); }};
    gam.edge = true;

    std::vector<std::pair<ReportTerm, TermFn>> defs;
    defs.push_back({{"s*lam^2*Phi*Theta^2*|w_x|^2", "lhs"}, [&] { return integrate(g, t, &wt, wx); }});
    defs.push_back({{"s*lam^2*Phi*Theta^2*x^2g*|w_y|^2", "lhs"}, [&] { return integrate(g, t, &wt, wy); }});
    defs.push_back({{"s^3*lam^4*Phi^3*Theta^2*|w|^2", "lhs"}, [&] { return integrate(g, t, &wt, ww); }});
    defs.push_back({{"s*lam*Phi*Theta^2*|F2|^2", "lhs"}, [&] { return F2 ? integrate(g, t, &wt, dF) : ninf; }});
    defs.push_back({{"Theta^2*|f2|^2", "rhs"}, [&] { return f2 ? integrate(g, t, &wt, df) : ninf; }});
    defs.push_back({{"s*Phi*Theta^2*|grad F2|^2", "rhs"}, [&] { return F2 ? integrate(g, t, &wt, gF) : ninf; }});
    defs.push_back({{"s^2*lam^2*Phi^2(T)*Theta^2(T)*w(T)^2", "rhs"}, [&] {
                        LogAccumulator acc;
                        const double q = std::log(g.hx * g.hy) - t.nt * std::log(2.0);
                        for (std::int64_t c = 0; c < t.nodes(t.nt); ++c)
                            for (int i = 0; i < g.nx; ++i)
                                for (int j = 0; j < g.ny; ++j) {
                                    const double val = u(t.nt, c)(g.index(i, j));
                                    if (val == 0.0) continue;
                                    acc.add(q + wt.log_w2(t.nt, i, j) + 2.0 * (ls + ll) +
                                            2.0 * std::log(wt.factor(t.nt, i, j)) + std::log(sq(val)));
                                }
                        return acc.log();
                    }});
    defs.push_back({{"s*lam*Phi*Theta^2*|w_x|^2 on Gamma", "rhs"}, [&] { return integrate(g, t, &wt, gam); }});
    auto r = run_terms("carleman-forward", std::move(defs), workers, wt.offset);
    set_params(r, p);
    const double d = r.log_value("s*lam*Phi*Theta^2*|F2|^2");
    const double gd = r.log_value("s*Phi*Theta^2*|grad F2|^2");
    r.extra = std::isfinite(d) && std::isfinite(gd) ? std::exp(d - gd) : 0.0;
    return r;
}

// ---------------------------------------------------------------------------
// Cacciopoli.

/// LHS = E int_{omega2_T} theta^2 [s xi |v_x|^2 + s (x+eps)^{2g} xi |v_y|^2],
/// RHS = E int_{omega_T} s^3 xi^3 theta^2 |v|^2 + E int_{Q_T} theta^2 |f1|^2.
inline InequalityReport cacciopoli_sides(const SpdeProblem& pb, const BackwardTrajectory& tr,
                                         const WeightFamily& w, unsigned workers = 1) {
    using namespace detail;
    if (w.kind() != WeightKind::singular) throw parameter_error("cacciopoli_sides: singular weights required");
    const Grid2D& g = pb.op.grid;
    const BrownianTree& t = pb.tree;
    const WeightTable wt(w, g, t);
    const double ls = std::log(w.params().s);
    const auto f1 = f1_levels(pb);
    auto v = [&](int k, std::int64_t b) { return tr.v.level(k).col(b); };
    auto omega2 = [&](int i) { return pb.regions.in_omega2(g.x(i)); };

    Integrand vx{[&](int, int, int, double xi) { return ls + std::log(xi); },
                 [&](int k, std::int64_t b, int i, int j) { return sq(dx_c(g, v(k, b), i, j)); }};
    vx.mask = omega2;
    Integrand vy{[&](int, int i, int, double xi) { return ls + std::log(xi) + std::log(pb.op.degeneracy(i)); },
                 [&](int k, std::int64_t b, int i, int j) { return sq(dy_c(g, v(k, b), i, j)); }};
    vy.mask = omega2;
    Integrand vo{[&](int, int, int, double xi) { return 3.0 * (ls + std::log(xi)); },
                 [&](int k, std::int64_t b, int i, int j) { return sq(at(g, v(k, b), i, j)); }};
    vo.mask = [&](int i) { return pb.regions.in_omega(g.x(i)); };
    Integrand ff{{}, [&](int k, std::int64_t, int i, int j) { return sq(f1[static_cast<std::size_t>(k)](g.index(i, j))); }};
    ff.cell_constant = ff.deterministic = true;

    std::vector<std::pair<ReportTerm, TermFn>> defs;
    defs.push_back({{"theta^2*s*xi*|v_x|^2 on omega2", "lhs"}, [&] { return integrate(g, t, &wt, vx); }});
    defs.push_back({{"theta^2*s*x^2g*xi*|v_y|^2 on omega2", "lhs"}, [&] { return integrate(g, t, &wt, vy); }});
    defs.push_back({{"s^3*xi^3*theta^2*|v|^2 on omega", "rhs"}, [&] { return integrate(g, t, &wt, vo); }});
    defs.push_back({{"theta^2*|f1|^2", "rhs"}, [&] { return f1.empty() ? ninf : integrate(g, t, &wt, ff); }});
    auto r = run_terms("cacciopoli", std::move(defs), workers, wt.offset);
    set_params(r, w.params());
    return r;
}

struct SigmaSensitivity {
    std::vector<double> sigma;
    std::vector<double> ratio;
    std::vector<double> one_minus_4sigma_inv;  ///< (1 - 4 sigma)^{-1} for the trend comparison
};

/// Re-solve and re-evaluate the Cacciopoli ratio at each sigma (operator and weights rebuilt).
inline SigmaSensitivity cacciopoli_sigma_sweep(const SpdeProblem& base, const WeightParams& wp,
                                               const std::vector<double>& sigmas, unsigned workers = 1) {
    SigmaSensitivity out;
    for (double sg : sigmas) {
        SpdeProblem pb = base;
        pb.op = assemble_grushin(base.op.grid, base.op.gamma, sg, base.op.epsilon);
        WeightParams q = wp;
        q.sigma = sg;
        const WeightFamily w(WeightKind::singular, q);
        const auto tr = solve_backward(pb, workers);
        out.sigma.push_back(sg);
        out.ratio.push_back(cacciopoli_sides(pb, tr, w, workers).ratio);
        out.one_minus_4sigma_inv.push_back(1.0 / (1.0 - 4.0 * sg));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Observability.

/// LHS = E||v(0)||^2, RHS = E int_{omega_T} |v|^2 + E int_{Q_T} |V|^2 (no weights, same time rule).
inline InequalityReport observability_sides(const SpdeProblem& pb, const BackwardTrajectory& tr) {
    using namespace detail;
    const Grid2D& g = pb.op.grid;
    const BrownianTree& t = pb.tree;
    Integrand vo{{}, [&](int k, std::int64_t b, int i, int j) { return sq(tr.v.level(k)(g.index(i, j), b)); }};
    vo.mask = [&](int i) { return pb.regions.in_omega(g.x(i)); };
    Integrand VV{{}, [&](int k, std::int64_t b, int i, int j) { return sq(tr.V.level(k)(g.index(i, j), b)); }};
    VV.cell_constant = true;
    InequalityReport r;
    r.kind = "observability";
    r.terms = {{"E||v(0)||^2", "lhs", safe_log(l2sq(g, tr.v.level(0).col(0)))},
               {"E int_omega |v|^2", "rhs", integrate(g, t, nullptr, vo)},
               {"E int |V|^2", "rhs", integrate(g, t, nullptr, VV)}};
    finalize(r);
    return r;
}

// ---------------------------------------------------------------------------
// Default s.

/// Doubling sequence s0, 2 s0, ...; stops at the first s whose ratio is within `rel` of the
/// previous one. Returns the last s tried if the cap is hit.
struct SPolicy {
    double s = 0.0;
    std::vector<double> tried;
    std::vector<double> ratios;
    bool stabilized = false;
};

inline SPolicy stabilize_s(const std::function<double(double)>& ratio_of_s, double s0, int max_doublings = 24,
                           double rel = 0.05) {
    SPolicy out;
    double s = s0, prev = std::numeric_limits<double>::quiet_NaN();
    for (int i = 0; i <= max_doublings; ++i, s *= 2.0) {
        const double r = ratio_of_s(s);
        out.tried.push_back(s);
        out.ratios.push_back(r);
        out.s = s;
        if (std::isfinite(prev) && std::abs(r - prev) <= rel * std::abs(prev)) {
            out.stabilized = true;
            return out;
        }
        prev = r;
    }
    return out;
}

/// s0 such that s0 xi >= 1 (singular) or s0 Phi >= 1 (regular) at every interior node.
inline double s_start(const WeightFamily& w, const Grid2D& g, const BrownianTree& tr) {
    double m = std::numeric_limits<double>::infinity();
    for (int k = 1; k < tr.nt; ++k)
        for (int i = 0; i < g.nx; ++i)
            for (int j = 0; j < g.ny; ++j) {
                const WeightPoint p = w.eval(g.x(i), g.y(j), tr.time(k));
                m = std::min(m, w.kind() == WeightKind::singular ? p.xi.v : p.expo.v);
            }
    return std::isfinite(m) && m > 0.0 ? 1.0 / m : 1.0;
}

/// Largest s with 2 s |Phi(P) - Phi(Q)| <= 1 for all neighbouring mesh points P, Q (grid
/// nodes, the x = 0 edge, consecutive time levels): the weight changes by at most a factor e
/// between neighbours, the range where nodal quadrature resolves it. Regular family only.
inline double resolution_cap(const WeightFamily& w, const Grid2D& g, const BrownianTree& tr) {
    if (w.kind() != WeightKind::regular) throw parameter_error("resolution_cap: regular weights required");
    auto X = [&](int i) { return i < 0 ? 0.0 : g.x(i); };
    double m = 0.0;
    for (int k = 0; k <= tr.nt; ++k)
        for (int i = -1; i < g.nx; ++i)
            for (int j = 0; j < g.ny; ++j) {
                const double a = w.eval_regular(X(i), g.y(j), tr.time(k)).expo.v;
                if (i + 1 < g.nx) m = std::max(m, std::abs(w.eval_regular(X(i + 1), g.y(j), tr.time(k)).expo.v - a));
                if (j + 1 < g.ny) m = std::max(m, std::abs(w.eval_regular(X(i), g.y(j + 1), tr.time(k)).expo.v - a));
                if (k < tr.nt) m = std::max(m, std::abs(w.eval_regular(X(i), g.y(j), tr.time(k + 1)).expo.v - a));
            }
    return m > 0.0 ? 0.5 / m : 1.0;
}

/// Default s for a family: singular, doubling from s_start until the ratio stabilizes;
/// regular, doubling from cap/64 and stopping at the resolution cap at the latest.
inline SPolicy choose_s(const WeightFamily& w, const Grid2D& g, const BrownianTree& tr,
                        const std::function<double(const WeightFamily&)>& ratio, double rel = 0.05) {
    auto at_s = [&](double s) {
        WeightParams p = w.params();
        p.s = s;
        return ratio(WeightFamily(w.kind(), p));
    };
    if (w.kind() == WeightKind::singular) return stabilize_s(at_s, s_start(w, g, tr), 24, rel);
    const double cap = resolution_cap(w, g, tr);
    return stabilize_s(at_s, cap / 64.0, 6, rel);
}

}  // namespace sgrushin
