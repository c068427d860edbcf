#pragma once

// Pointwise check of the two weighted identities (backward weight l = s varphi-hat,
// z = theta-hat v; forward weight L = s Phi-hat, Z = Theta-hat w) on deterministic
// smooth fields, where dz reduces to z_t dt and the Ito corrections vanish.
//
// The weight is rescaled by the constant e^{-l(p)} at each point p. Every term is
// quadratic in z, so the identity is unchanged and theta-hat never under/overflows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sgrushin/jet.hpp"
#include "sgrushin/parallel.hpp"
#include "sgrushin/weights.hpp"

namespace sgrushin {

struct IdentityTerm {
    std::string name;
    double value = 0.0;
    std::string group;
};

struct IdentityEval {
    double x = 0, y = 0, t = 0;
    std::vector<IdentityTerm> terms;
    double lhs = 0.0;
    double rhs = 0.0;
    double residual = 0.0;  ///< lhs - rhs
    double scale = 0.0;     ///< largest single term magnitude
    /// Sum of the four cross products minus (sum X + dY/dt + fluxes).
    double ledger_residual = 0.0;
    double relative() const { return scale > 0.0 ? std::abs(residual) / scale : std::abs(residual); }
};

namespace detail {

constexpr double kUntracked = std::numeric_limits<double>::quiet_NaN();

struct FieldDuals {
    Dual z, zx, zy, zt;
    double zxx, zyy;
};

/// z = e^{l - l(p)} v as duals; jet of l assembled from closed-form weight derivatives.
inline FieldDuals weighted_field(const Derivs& l, const Jet2& v) {
    Jet2 lj(0.0);
    lj.g = {l.x, l.y, l.t};
    lj.h = {l.xx, l.xy, l.xt, l.yy, l.yt, l.tt};
    const Jet2 z = exp(lj) * v;
    FieldDuals f;
    f.z = Dual(z.v, z.g[0], z.g[1], z.g[2]);
    f.zx = Dual(z.g[0], z.hess(0, 0), z.hess(0, 1), z.hess(0, 2));
    f.zy = Dual(z.g[1], z.hess(0, 1), z.hess(1, 1), z.hess(1, 2));
    f.zt = Dual(z.g[2], z.hess(0, 2), z.hess(1, 2), kUntracked);
    f.zxx = z.hess(0, 0);
    f.zyy = z.hess(1, 1);
    return f;
}

struct Coef {
    Dual a, v;  ///< (x+eps)^{2g} and sigma/(x+eps)^2 with x-derivatives
    double ap;  ///< 2g (x+eps)^{2g-1}
};

inline Coef coefficients(const WeightParams& p, double x) {
    const double X = x + p.epsilon;
    const double a = std::pow(X, 2.0 * p.gamma);
    const double ap = 2.0 * p.gamma * std::pow(X, 2.0 * p.gamma - 1.0);
    const double v = p.sigma / (X * X);
    return {Dual(a, ap, 0.0, 0.0), Dual(v, -2.0 * p.sigma / (X * X * X), 0.0, 0.0), ap};
}

inline void finish(IdentityEval& e) {
    e.residual = e.lhs - e.rhs;
    double sc = 0.0;
    for (const auto& t : e.terms)
        if (t.group != "total") sc = std::max(sc, std::abs(t.value));
    e.scale = sc;
}

}  // namespace detail

/// Backward identity at one point. `v` is a template field v(x, y, t).
template <class F>
IdentityEval eval_backward_identity(const WeightFamily& w, F&& v, double x, double y, double t) {
    using detail::kUntracked;
    const WeightParams& p = w.params();
    const Derivs l = w.eval_singular(x, y, t).l;
    const Jet2 vj = jet_of(v, x, y, t);
    const auto f = detail::weighted_field(l, vj);
    const auto c = detail::coefficients(p, x);
    const double tau = p.tau, g = p.gamma, X = x + p.epsilon, sig = p.sigma;
    const double a = c.a.v, a2 = a * a, V = c.v.v;

    const Dual lx(l.x, l.xx, l.xy, l.xt), ly(l.y, l.xy, l.yy, l.yt);
    const Dual lxx(l.xx, l.xxx, l.xxy, kUntracked);
    const Dual lxxx(l.xxx, l.xxxx, kUntracked, kUntracked);
    const Dual lxxy(l.xxy, kUntracked, l.xxyy, kUntracked);
    const Dual &z = f.z, &zx = f.zx, &zy = f.zy, &zt = f.zt;
    const double Z = z.v, Zx = zx.v, Zy = zy.v, Zt = zt.v;

    const double P1 = Zt - 2.0 * l.x * Zx - 2.0 * a * l.y * Zy - tau * l.xx * Z;
    const double P2 = f.zxx + a * f.zyy + l.x * l.x * Z + a * l.y * l.y * Z + V * Z;
    const double P = (tau - 1.0) * l.xx * Z - l.t * Z - a * l.yy * Z;

    const double X1 = ((tau + 1.0) * l.xx - a * l.yy) * Zx * Zx;
    const double X2 = (-c.ap * l.x + (tau - 1.0) * a * l.xx + a2 * l.yy) * Zy * Zy;
    const double X3 = 4.0 * (g * std::pow(X, 2.0 * g - 1.0) * l.y + a * l.xy) * Zx * Zy;
    const double X4 =
        ((3.0 - tau) * l.x * l.x * l.xx + c.ap * l.x * l.y * l.y + 3.0 * a2 * l.y * l.y * l.yy) * Z * Z +
        a * (4.0 * l.x * l.y * l.xy + l.x * l.x * l.yy + (1.0 - tau) * l.xx * l.y * l.y) * Z * Z +
        ((1.0 - tau) * V * l.xx - 2.0 * sig / (X * X * X) * l.x +
         sig / std::pow(X, 2.0 - 2.0 * g) * l.yy) * Z * Z;
    const double X5 = (-l.x * l.xt - a * l.y * l.yt - 0.5 * tau * l.xxxx - 0.5 * tau * a * l.xxyy) * Z * Z;

    const Dual& A = c.a;
    const Dual& Vd = c.v;
    const Dual Y = -0.5 * (zx * zx) - 0.5 * (A * zy * zy) + 0.5 * ((lx * lx + A * ly * ly + Vd) * z * z);
    const Dual F1 = zx * zt + (-(lx * zx * zx) + A * lx * zy * zy - lx * lx * lx * z * z -
                               A * lx * ly * ly * z * z - Vd * lx * z * z - 2.0 * (A * ly * zx * zy) -
                               tau * (lxx * z * zx) + 0.5 * tau * (lxxx * z * z));
    const Dual F2 = A * zy * zt + (-2.0 * (A * lx * zx * zy) + A * ly * zx * zx - A * A * ly * zy * zy -
                                   A * lx * lx * ly * z * z - A * A * ly * ly * ly * z * z -
                                   Vd * A * ly * z * z - tau * (A * lxx * z * zy) +
                                   0.5 * tau * (A * lxxy * z * z));
    const double Yt = Y.d[ax_t], F1x = F1.d[ax_x], F2y = F2.d[ax_y];

    // LHS straight from v: theta-hat (v_t + v_xx + a v_yy + V v), theta-hat = 1 after rescaling.
    const double op = vj.g[ax_t] + vj.hess(0, 0) + a * vj.hess(1, 1) + V * vj.v;

    IdentityEval e{x, y, t};
    e.lhs = P2 * op;
    e.rhs = P2 * P2 + P2 * P + X1 + X2 + X3 + X4 + X5 + Yt + F1x + F2y;
    const double G1 = P2 * Zt, G2 = -2.0 * l.x * Zx * P2, G3 = -2.0 * a * l.y * Zy * P2,
                 G4 = -tau * l.xx * Z * P2;
    e.ledger_residual = (G1 + G2 + G3 + G4) - (X1 + X2 + X3 + X4 + X5 + Yt + F1x + F2y);
    e.terms = {{"P1", P1, "operator"},     {"P2", P2, "operator"},     {"P", P, "operator"},
               {"P2^2", P2 * P2, "square"}, {"P2*P", P2 * P, "square"}, {"X1", X1, "X"},
               {"X2", X2, "X"},             {"X3", X3, "X"},             {"X4", X4, "X"},
               {"X5", X5, "X"},             {"dY/dt", Yt, "flux"},       {"d{.}/dx", F1x, "flux"},
               {"d{..}/dy", F2y, "flux"},   {"P2*dz", G1, "cross"},      {"-2l_x z_x P2", G2, "cross"},
               {"-2a l_y z_y P2", G3, "cross"}, {"-tau l_xx z P2", G4, "cross"},
               {"lhs", e.lhs, "total"},     {"rhs", e.rhs, "total"}};
    detail::finish(e);
    return e;
}

/// Forward identity at one point (regular weights). `w` is a template field.
template <class F>
IdentityEval eval_forward_identity(const WeightFamily& wf, F&& w, double x, double y, double t) {
    using detail::kUntracked;
    const WeightParams& p = wf.params();
    const Derivs L = wf.eval_regular(x, y, t).l;
    const Jet2 wj = jet_of(w, x, y, t);
    const auto f = detail::weighted_field(L, wj);
    const auto c = detail::coefficients(p, x);
    const double tau = p.tau, g = p.gamma, X = x + p.epsilon, sig = p.sigma;
    const double a = c.a.v, a2 = a * a, V = c.v.v;

    const Dual Lx(L.x, L.xx, L.xy, L.xt), Ly(L.y, L.xy, L.yy, L.yt), Lt(L.t, L.xt, L.yt, L.tt);
    const Dual Lxx(L.xx, L.xxx, L.xxy, kUntracked);
    const Dual Lxxx(L.xxx, L.xxxx, kUntracked, kUntracked);
    const Dual Lxxy(L.xxy, kUntracked, L.xxyy, kUntracked);
    const Dual &z = f.z, &zx = f.zx, &zy = f.zy, &zt = f.zt;
    const double Z = z.v, Zx = zx.v, Zy = zy.v, Zt = zt.v;

    const double Q1 = Zt + 2.0 * L.x * Zx + 2.0 * a * L.y * Zy + tau * L.xx * Z;
    const double Q2 = -L.t * Z - f.zxx - a * f.zyy - L.x * L.x * Z - a * L.y * L.y * Z - V * Z;
    const double Q = -(tau - 1.0) * L.xx * Z + a * L.yy * Z;

    const double X1 = ((tau + 1.0) * L.xx - a * L.yy) * Zx * Zx;
    const double X2 = (-c.ap * L.x + (tau - 1.0) * a * L.xx + a2 * L.yy) * Zy * Zy;
    const double X3 = 4.0 * (g * std::pow(X, 2.0 * g - 1.0) * L.y + a * L.xy) * Zx * Zy;
    const double X4 =
        ((3.0 - tau) * L.x * L.x * L.xx + c.ap * L.x * L.y * L.y + 3.0 * a2 * L.y * L.y * L.yy) * Z * Z +
        a * (4.0 * L.x * L.y * L.xy + L.x * L.x * L.yy + (1.0 - tau) * L.xx * L.y * L.y) * Z * Z +
        ((1.0 - tau) * V * L.xx - 2.0 * sig / (X * X * X) * L.x +
         sig / std::pow(X, 2.0 - 2.0 * g) * L.yy) * Z * Z;
    const double X5 = (0.5 * L.tt + (1.0 - tau) * L.xx * L.t + 2.0 * L.x * L.xt + 2.0 * a * L.y * L.yt +
                       a * L.yy * L.t - 0.5 * tau * L.xxxx - 0.5 * tau * a * L.xxyy) * Z * Z;

    const Dual& A = c.a;
    const Dual& Vd = c.v;
    const Dual Y = 0.5 * (zx * zx) + 0.5 * (A * zy * zy) - 0.5 * ((Lt + Lx * Lx + A * Ly * Ly + Vd) * z * z);
    const Dual F1 = -(zx * zt) + (-(Lx * Lt * z * z) - Lx * zx * zx + A * Lx * zy * zy -
                                  Lx * Lx * Lx * z * z - A * Lx * Ly * Ly * z * z - Vd * Lx * z * z -
                                  2.0 * (A * Ly * zx * zy) - tau * (Lxx * z * zx) +
                                  0.5 * tau * (Lxxx * z * z));
    const Dual F2 = -(A * zy * zt) + (-(A * Ly * Lt * z * z) - 2.0 * (A * Lx * zx * zy) + A * Ly * zx * zx -
                                      A * A * Ly * zy * zy - A * Lx * Lx * Ly * z * z -
                                      A * A * Ly * Ly * Ly * z * z - Vd * A * Ly * z * z -
                                      tau * (A * Lxx * z * zy) + 0.5 * tau * (A * Lxxy * z * z));
    const double Yt = Y.d[ax_t], F1x = F1.d[ax_x], F2y = F2.d[ax_y];

    const double op = wj.g[ax_t] - wj.hess(0, 0) - a * wj.hess(1, 1) - V * wj.v;

    IdentityEval e{x, y, t};
    e.lhs = Q2 * op;
    e.rhs = Q2 * Q2 + Q2 * Q + X1 + X2 + X3 + X4 + X5 + Yt + F1x + F2y;
    const double G1 = Q2 * Zt, G2 = 2.0 * L.x * Zx * Q2, G3 = 2.0 * a * L.y * Zy * Q2,
                 G4 = tau * L.xx * Z * Q2;
    e.ledger_residual = (G1 + G2 + G3 + G4) - (X1 + X2 + X3 + X4 + X5 + Yt + F1x + F2y);
    e.terms = {{"Q1", Q1, "operator"},     {"Q2", Q2, "operator"},     {"Q", Q, "operator"},
               {"Q2^2", Q2 * Q2, "square"}, {"Q2*Q", Q2 * Q, "square"}, {"Xbar1", X1, "X"},
               {"Xbar2", X2, "X"},          {"Xbar3", X3, "X"},          {"Xbar4", X4, "X"},
               {"Xbar5", X5, "X"},          {"dYbar/dt", Yt, "flux"},    {"d{.}bar/dx", F1x, "flux"},
               {"d{..}bar/dy", F2y, "flux"}, {"Q2*dZ", G1, "cross"},     {"2L_x Z_x Q2", G2, "cross"},
               {"2a L_y Z_y Q2", G3, "cross"}, {"tau L_xx Z Q2", G4, "cross"},
               {"lhs", e.lhs, "total"},     {"rhs", e.rhs, "total"}};
    detail::finish(e);
    return e;
}

struct SamplePoint {
    double x, y, t;
};

struct ResidualSummary {
    int points = 0;
    double max_abs = 0.0;
    double max_rel = 0.0;           ///< residual / largest term at the same point
    double max_ledger_rel = 0.0;
    SamplePoint worst{0, 0, 0};
};

template <class Eval>
ResidualSummary summarize_residuals(const std::vector<SamplePoint>& pts, unsigned workers, Eval&& ev) {
    std::vector<IdentityEval> out(pts.size());
    parallel_for(pts.size(), workers, [&](std::size_t i) { out[i] = ev(pts[i]); });
    ResidualSummary s;
    s.points = static_cast<int>(pts.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& e = out[i];
        s.max_abs = std::max(s.max_abs, std::abs(e.residual));
        const double lr = e.scale > 0.0 ? std::abs(e.ledger_residual) / e.scale : std::abs(e.ledger_residual);
        s.max_ledger_rel = std::max(s.max_ledger_rel, lr);
        if (e.relative() > s.max_rel || std::isnan(e.relative())) {
            s.max_rel = std::isnan(e.relative()) ? std::numeric_limits<double>::infinity() : e.relative();
            s.worst = pts[i];
        }
    }
    return s;
}

/// Maximum residual of the backward identity. Points must have 0 < t < T.
template <class F>
ResidualSummary drift_residual_backward(const WeightFamily& w, F&& v, const std::vector<SamplePoint>& pts,
                                        unsigned workers = 1) {
    if (w.kind() != WeightKind::singular)
        throw parameter_error("drift_residual_backward: singular weights required");
    for (const auto& q : pts)
        if (!(q.t > 0.0 && q.t < w.params().horizon))
            throw domain_error("drift_residual_backward: sample point touches t = 0 or t = T");
    return summarize_residuals(pts, workers,
                               [&](const SamplePoint& q) { return eval_backward_identity(w, v, q.x, q.y, q.t); });
}

template <class F>
ResidualSummary drift_residual_forward(const WeightFamily& w, F&& v, const std::vector<SamplePoint>& pts,
                                       unsigned workers = 1) {
    if (w.kind() != WeightKind::regular)
        throw parameter_error("drift_residual_forward: regular weights required");
    return summarize_residuals(pts, workers,
                               [&](const SamplePoint& q) { return eval_forward_identity(w, v, q.x, q.y, q.t); });
}

inline std::vector<SamplePoint> random_points(int n, double horizon, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    std::vector<SamplePoint> pts(static_cast<std::size_t>(n));
    for (auto& q : pts) q = {u(rng), u(rng), horizon * u(rng)};
    return pts;
}

/// Random smooth test field: a sum of a travelling wave, a modulated
/// exponential, and a cubic polynomial in (x, y, t).
struct SmoothField {
    double a1 = 1, k1 = 1, k2 = 1, k3 = 1, ph = 0;
    double a2 = 0, m1 = 0, m2 = 0, m3 = 0, n1 = 1;
    double c[6] = {0, 0, 0, 0, 0, 0};

    template <class S>
    S operator()(const S& x, const S& y, const S& t) const {
        using std::cos;
        using std::exp;
        using std::sin;
        return a1 * sin(k1 * x + k2 * y + k3 * t + ph) + a2 * exp(m1 * x + m2 * y + m3 * t) * cos(n1 * (x - y)) +
               c[0] * x * x * y + c[1] * y * y * t + c[2] * x * t * t + c[3] * x * y * t + c[4] * x * x * x +
               c[5];
    }

    static SmoothField random(std::mt19937_64& rng) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        SmoothField f;
        f.a1 = u(rng);
        f.k1 = 3.0 * u(rng); f.k2 = 3.0 * u(rng); f.k3 = 2.0 * u(rng); f.ph = 3.0 * u(rng);
        f.a2 = u(rng);
        f.m1 = u(rng); f.m2 = u(rng); f.m3 = u(rng); f.n1 = 2.0 * u(rng);
        for (double& ci : f.c) ci = u(rng);
        return f;
    }
};

// ---------------------------------------------------------------------------
// Quadratic-variation bookkeeping. With dz = theta-hat F dB (and dz_x, dz_y the
// spatial derivatives of that diffusion), each formula is checked as the
// difference between the factored and the expanded polynomial.

struct QvInput {
    double theta = 1, f = 0, fx = 0, fy = 0;
    double lx = 0, ly = 0, lt = 0;
    double a = 1, v = 0;
};

struct QvRow {
    std::string name;
    double factored = 0.0;
    double expanded = 0.0;
    double scale = 0.0;  ///< largest summand magnitude
    double ulps() const {
        const double e = std::numeric_limits<double>::epsilon();
        return scale > 0.0 ? std::abs(factored - expanded) / (e * scale) : 0.0;
    }
};

struct QvLedger {
    std::vector<QvRow> rows;
    double max_ulps() const {
        double m = 0.0;
        for (const auto& r : rows) m = std::max(m, r.ulps());
        return m;
    }
    double coefficient(const std::string& n) const {
        for (const auto& r : rows)
            if (r.name == n) return r.expanded;
        return std::numeric_limits<double>::quiet_NaN();
    }
};

inline QvLedger quadratic_variation_check(const QvInput& in) {
    const double th2 = in.theta * in.theta;
    const double F = in.f, Fx = in.fx, Fy = in.fy;
    auto mx = [](std::initializer_list<double> xs) {
        double m = 0.0;
        for (double v : xs) m = std::max(m, std::abs(v));
        return m;
    };
    QvLedger led;
    const double dz = in.theta * F;
    const double dzx = in.theta * (in.lx * F + Fx);
    const double dzy = in.theta * (in.ly * F + Fy);
    led.rows.push_back({"(dz)^2", dz * dz, th2 * F * F, th2 * F * F});
    {
        const double t1 = in.lx * in.lx * th2 * F * F, t2 = 2.0 * in.lx * th2 * F * Fx, t3 = th2 * Fx * Fx;
        led.rows.push_back({"(dz_x)^2", dzx * dzx, t1 + t2 + t3, mx({t1, t2, t3, dzx * dzx})});
    }
    {
        const double t1 = in.ly * in.ly * th2 * F * F, t2 = 2.0 * in.ly * th2 * F * Fy, t3 = th2 * Fy * Fy;
        led.rows.push_back({"(dz_y)^2", dzy * dzy, t1 + t2 + t3, mx({t1, t2, t3, dzy * dzy})});
    }
    {
        const double k = in.lx * in.lx + in.a * in.ly * in.ly + in.v;
        const double f1 = 0.5 * dzx * dzx, f2 = 0.5 * in.a * dzy * dzy, f3 = -0.5 * k * dz * dz;
        const double e1 = 0.5 * th2 * Fx * Fx, e2 = 0.5 * in.a * th2 * Fy * Fy, e3 = in.lx * th2 * F * Fx,
                     e4 = in.a * in.ly * th2 * F * Fy, e5 = -0.5 * in.v * th2 * F * F;
        led.rows.push_back({"J", f1 + f2 + f3, e1 + e2 + e3 + e4 + e5, mx({f1, f2, f3, e1, e2, e3, e4, e5})});
    }
    {
        // forward counterpart, with L_t in the bracket
        const double k = in.lt + in.lx * in.lx + in.a * in.ly * in.ly + in.v;
        const double f1 = -0.5 * dzx * dzx, f2 = -0.5 * in.a * dzy * dzy, f3 = 0.5 * k * dz * dz;
        const double e1 = -0.5 * th2 * Fx * Fx, e2 = -0.5 * in.a * th2 * Fy * Fy, e3 = -in.lx * th2 * F * Fx,
                     e4 = -in.a * in.ly * th2 * F * Fy, e5 = 0.5 * (in.lt + in.v) * th2 * F * F;
        led.rows.push_back({"Jbar", f1 + f2 + f3, e1 + e2 + e3 + e4 + e5, mx({f1, f2, f3, e1, e2, e3, e4, e5})});
    }
    return led;
}

inline void write_ledger_csv(const std::vector<IdentityEval>& evals, std::ostream& os) {
    os << "point,term_name,value,group\n";
    os.precision(17);
    for (std::size_t i = 0; i < evals.size(); ++i)
        for (const auto& t : evals[i].terms) os << i << ',' << t.name << ',' << t.value << ',' << t.group << '\n';
}

}  // namespace sgrushin
