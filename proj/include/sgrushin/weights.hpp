#pragma once

// Carleman weight families.
//
//   singular:  psi = X^{2+2g} y(1-y) - mu X + M,      X = x + eps
//              phi = e^{lambda psi}
//              varphi = (e^{lambda psi} - e^{2 lambda |psi|_inf}) xi(t),  xi = 1/(t^4 (T-t)^4)
//              theta = e^{s varphi},  l = s varphi
//   regular:   rho = X^{2+2g} y(1-y) - mu X - (lambda - t)^2 + 2 lambda^2
//              Phi = e^{lambda rho},  Theta = e^{s Phi},  L = s Phi
//
// With eps > 0 these are the shifted ("hatted") weights. |psi|_inf is always
// taken over the unshifted unit square.

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sgrushin/errors.hpp"

namespace sgrushin {

/// Partial derivatives used by the weighted identities: up to order 4 in x,
/// order 2 in y, order 2 in t (only tt for the time-only part).
struct Derivs {
    double v = 0, x = 0, y = 0, t = 0;
    double xx = 0, xy = 0, yy = 0, xt = 0, yt = 0, tt = 0;
    double xxx = 0, xxy = 0, xyy = 0;
    double xxxx = 0, xxyy = 0;
};

inline Derivs scaled(const Derivs& d, double c) {
    Derivs r;
    r.v = c * d.v; r.x = c * d.x; r.y = c * d.y; r.t = c * d.t;
    r.xx = c * d.xx; r.xy = c * d.xy; r.yy = c * d.yy;
    r.xt = c * d.xt; r.yt = c * d.yt; r.tt = c * d.tt;
    r.xxx = c * d.xxx; r.xxy = c * d.xxy; r.xyy = c * d.xyy;
    r.xxxx = c * d.xxxx; r.xxyy = c * d.xxyy;
    return r;
}

/// Derivatives of e^g from those of g (Faa di Bruno on the fixed index set).
/// Terms mixing t with third/fourth order space derivatives are not tracked.
inline Derivs compose_exp(const Derivs& g) {
    const double e = std::exp(g.v);
    Derivs r;
    r.v = e;
    r.x = e * g.x;
    r.y = e * g.y;
    r.t = e * g.t;
    r.xx = e * (g.xx + g.x * g.x);
    r.xy = e * (g.xy + g.x * g.y);
    r.yy = e * (g.yy + g.y * g.y);
    r.xt = e * (g.xt + g.x * g.t);
    r.yt = e * (g.yt + g.y * g.t);
    r.tt = e * (g.tt + g.t * g.t);
    r.xxx = e * (g.xxx + 3.0 * g.x * g.xx + g.x * g.x * g.x);
    const double a = g.xxy + g.xx * g.y + 2.0 * g.x * g.xy + g.x * g.x * g.y;
    r.xxy = e * a;
    r.xyy = e * (g.xyy + 2.0 * g.xy * g.y + g.x * g.yy + g.x * g.y * g.y);
    r.xxxx = e * (g.xxxx + 4.0 * g.x * g.xxx + 3.0 * g.xx * g.xx + 6.0 * g.x * g.x * g.xx +
                  g.x * g.x * g.x * g.x);
    const double ay = g.xxyy + g.xxy * g.y + g.xx * g.yy + 2.0 * g.xy * g.xy +
                      2.0 * g.x * g.xyy + 2.0 * g.x * g.xy * g.y + g.x * g.x * g.yy;
    r.xxyy = e * (ay + g.y * a);
    return r;
}

/// F(x,y) * q(t) where F carries no t dependence and q = (q, q', q'').
inline Derivs times_time(const Derivs& f, double q, double qt, double qtt) {
    Derivs r = scaled(f, q);
    r.t = f.v * qt;
    r.xt = f.x * qt;
    r.yt = f.y * qt;
    r.tt = f.v * qtt;
    return r;
}

struct WeightParams {
    double gamma = 1.0;
    double sigma = 0.0;
    double lambda = 0.0;
    double s = 1.0;
    double mu = 0.0;
    double big_m = 0.0;
    double delta0 = 1.0;
    double tau = 2.5;
    double epsilon = 0.0;
    double horizon = 1.0;
};

/// sup over the closed unit square of (2+2g)(x+1)^{1+2g} y(1-y), attained at (1, 1/2).
inline double mu_supremum(double gamma) {
    return (2.0 + 2.0 * gamma) * std::pow(2.0, 1.0 + 2.0 * gamma) / 4.0;
}

inline double select_mu(double gamma, double delta0) {
    if (!(gamma > 0.0) && gamma != 0.0) throw parameter_error("select_mu: gamma must be > 0");
    if (!(delta0 > 0.0)) throw parameter_error("select_mu: delta0 must be > 0");
    return mu_supremum(gamma) + delta0 + 1.0;
}

inline double select_big_m(double /*gamma*/, double mu) { return mu + 1.0; }

inline double default_lambda(double delta0) { return 2.0 + std::log(1.0 + 1.0 / delta0); }

/// Parameters with mu, M, lambda chosen by the default policy.
inline WeightParams default_params(double gamma, double sigma, double horizon, double epsilon,
                                   double delta0 = 1.0) {
    WeightParams p;
    p.gamma = gamma;
    p.sigma = sigma;
    p.delta0 = delta0;
    p.mu = select_mu(gamma, delta0);
    p.big_m = select_big_m(gamma, p.mu);
    p.lambda = default_lambda(delta0);
    p.s = 1.0;
    p.tau = 2.5;
    p.epsilon = epsilon;
    p.horizon = horizon;
    return p;
}

/// Throws parameter_error naming the first violated invariant.
inline void validate(const WeightParams& p) {
    auto bad = [](const std::string& m) { throw parameter_error("WeightParams: " + m); };
    if (!(p.gamma > 0.0)) bad("gamma must be > 0");
    if (!(p.sigma >= 0.0 && p.sigma < 0.25)) bad("sigma must satisfy 0 <= sigma < 1/4");
    if (!(p.tau > 2.0 && p.tau < 3.0)) bad("tau must satisfy 2 < tau < 3");
    if (!(p.lambda > 0.0)) bad("lambda must be > 0");
    if (!(p.s > 0.0)) bad("s must be > 0");
    if (!(p.delta0 > 0.0)) bad("delta0 must be > 0");
    if (!(p.epsilon >= 0.0 && p.epsilon < 1.0)) bad("epsilon must lie in [0, 1)");
    if (!(p.horizon > 0.0)) bad("horizon T must be > 0");
    if (!(p.mu > mu_supremum(p.gamma) + p.delta0))
        bad("mu must exceed sup (2+2gamma)(x+1)^{1+2gamma}y(1-y) + delta0 = " +
            std::to_string(mu_supremum(p.gamma) + p.delta0));
    if (!(p.big_m - p.mu > 0.0)) bad("M must exceed mu so that psi > 0");
}

/// Spatial phase X^{2+2g} y(1-y) - mu X + offset with X = x + eps.
inline Derivs spatial_phase(const WeightParams& p, double x, double y, double offset) {
    const double X = x + p.epsilon;
    const double q = 2.0 + 2.0 * p.gamma;
    const double Y = y * (1.0 - y), Yp = 1.0 - 2.0 * y;
    auto pw = [X](double e) { return X == 0.0 ? (e == 0.0 ? 1.0 : (e > 0.0 ? 0.0 : std::numeric_limits<double>::infinity())) : std::pow(X, e); };
    const double c1 = q, c2 = q * (q - 1.0), c3 = c2 * (q - 2.0), c4 = c3 * (q - 3.0);
    const double x0 = pw(q), x1 = pw(q - 1.0), x2 = pw(q - 2.0);
    Derivs d;
    d.v = x0 * Y - p.mu * X + offset;
    d.x = c1 * x1 * Y - p.mu;
    d.y = x0 * Yp;
    d.xx = c2 * x2 * Y;
    d.xy = c1 * x1 * Yp;
    d.yy = -2.0 * x0;
    d.xxx = c3 == 0.0 ? 0.0 : c3 * pw(q - 3.0) * Y;
    d.xxy = c2 * x2 * Yp;
    d.xyy = -2.0 * c1 * x1;
    d.xxxx = c4 == 0.0 ? 0.0 : c4 * pw(q - 4.0) * Y;
    d.xxyy = -2.0 * c2 * x2;
    return d;
}

struct XiValue {
    double v = 0, t = 0, tt = 0;
};

inline XiValue xi_time(double t, double horizon) {
    if (!(t > 0.0 && t < horizon))
        throw domain_error("xi(t) requires 0 < t < T (got t = " + std::to_string(t) + ")");
    const double u = t * (horizon - t);
    const double xi = 1.0 / (u * u * u * u);
    const double q1 = -4.0 / t + 4.0 / (horizon - t);
    const double q2 = 4.0 / (t * t) + 4.0 / ((horizon - t) * (horizon - t));
    return {xi, xi * q1, xi * (q2 + q1 * q1)};
}

/// Weight quantities at one point.
struct WeightPoint {
    Derivs phase;   ///< psi (singular) or rho (regular)
    Derivs expo;    ///< phi = e^{lambda psi} or Phi = e^{lambda rho}
    Derivs varphi;  ///< singular only
    XiValue xi;     ///< singular only
    Derivs l;       ///< s varphi (singular) or s Phi (regular)
    Derivs weight;  ///< theta = e^{l} or Theta = e^{L}
};

enum class WeightKind { singular, regular };

/// Value evaluator for one family with fixed parameters. Cheap to copy.
class WeightFamily {
public:
    WeightFamily(WeightKind kind, const WeightParams& p) : kind_(kind), p_(p) {
        // For admissible mu, psi decreases in x, so the max over the square is psi(0,y) = M;
        // sample a grid as well so inadmissible mu still gets a sound constant.
        double mx = -std::numeric_limits<double>::infinity();
        WeightParams unshift = p;
        unshift.epsilon = 0.0;
        for (int i = 0; i <= 200; ++i)
            for (int j = 0; j <= 100; ++j)
                mx = std::max(mx, spatial_phase(unshift, i / 200.0, j / 200.0, p.big_m).v);
        psi_sup_ = std::max(mx, p.big_m);
        if (kind == WeightKind::regular) check_regular_positive();
    }

    WeightKind kind() const { return kind_; }
    const WeightParams& params() const { return p_; }
    double psi_sup() const { return psi_sup_; }

    /// Minimum of rho over the closed cylinder and where it is attained.
    struct RhoMin {
        double value, x, y, t;
    };
    RhoMin regular_minimum() const {
        const double T = p_.horizon, lam = p_.lambda;
        const double tw = std::abs(lam) >= std::abs(lam - T) ? 0.0 : T;
        const double time_part = 2.0 * lam * lam - (lam - tw) * (lam - tw);
        return {-p_.mu * (1.0 + p_.epsilon) + time_part, 1.0, 0.0, tw};
    }

    WeightPoint eval(double x, double y, double t) const {
        return kind_ == WeightKind::singular ? eval_singular(x, y, t) : eval_regular(x, y, t);
    }

    WeightPoint eval_singular(double x, double y, double t) const {
        WeightPoint w;
        w.xi = xi_time(t, p_.horizon);
        w.phase = spatial_phase(p_, x, y, p_.big_m);
        w.expo = compose_exp(scaled(w.phase, p_.lambda));
        Derivs shifted = w.expo;
        shifted.v -= std::exp(2.0 * p_.lambda * psi_sup_);
        w.varphi = times_time(shifted, w.xi.v, w.xi.t, w.xi.tt);
        w.l = scaled(w.varphi, p_.s);
        w.weight = compose_exp(w.l);
        return w;
    }

    WeightPoint eval_regular(double x, double y, double t) const {
        WeightPoint w;
        w.phase = spatial_phase(p_, x, y, 0.0);
        const double lt = p_.lambda - t;
        w.phase.v += -lt * lt + 2.0 * p_.lambda * p_.lambda;
        w.phase.t = 2.0 * lt;
        w.phase.tt = -2.0;
        w.expo = compose_exp(scaled(w.phase, p_.lambda));
        w.l = scaled(w.expo, p_.s);
        w.weight = compose_exp(w.l);
        return w;
    }

private:
    void check_regular_positive() const {
        const auto m = regular_minimum();
        if (!(m.value > 0.0)) {
            std::ostringstream os;
            os << "regular weight: rho <= 0 at (x,y,t) = (" << m.x << ", " << m.y << ", " << m.t
               << "), rho = " << m.value << "; increase lambda";
            throw parameter_error(os.str());
        }
    }

    WeightKind kind_;
    WeightParams p_;
    double psi_sup_ = 0.0;
};

// ---------------------------------------------------------------------------
// Pointwise property verification.

struct PropertyResult {
    std::string id;
    bool pass = true;
    double worst_x = 0, worst_y = 0, worst_t = 0;
    double margin = std::numeric_limits<double>::quiet_NaN();      ///< slack of a sign condition
    double constant_c = std::numeric_limits<double>::quiet_NaN();  ///< smallest admissible C
};

struct PropertyReport {
    std::vector<PropertyResult> items;
    bool admissible() const {
        return std::all_of(items.begin(), items.end(), [](const auto& r) { return r.pass; });
    }
    const PropertyResult* find(const std::string& id) const {
        for (const auto& r : items)
            if (r.id == id) return &r;
        return nullptr;
    }
    std::vector<std::string> failed() const {
        std::vector<std::string> out;
        for (const auto& r : items)
            if (!r.pass) out.push_back(r.id);
        return out;
    }
};

inline void write_csv(const PropertyReport& rep, std::ostream& os) {
    auto num = [&](double v) {
        if (std::isnan(v)) return;
        os << v;
    };
    os << "property_id,pass,worst_x,worst_y,worst_t,margin,constant_C\n";
    os.precision(17);
    for (const auto& r : rep.items) {
        os << r.id << ',' << (r.pass ? "true" : "false") << ',' << r.worst_x << ',' << r.worst_y
           << ',' << r.worst_t << ',';
        num(r.margin);
        os << ',';
        num(r.constant_c);
        os << '\n';
    }
}

struct PropertyMesh {
    int nx = 128;  ///< intervals in x; nodes at i/nx, i = 0..nx
    int ny = 128;
    int nt = 64;   ///< time cells; evaluated at midpoints
};

namespace detail {

/// Tracks a "must be > 0" slack and its argmin.
struct SignTracker {
    double worst = std::numeric_limits<double>::infinity();
    double x = 0, y = 0, t = 0;
    void add(double slack, double px, double py, double pt) {
        if (slack < worst || std::isnan(slack)) {
            worst = std::isnan(slack) ? -std::numeric_limits<double>::infinity() : slack;
            x = px; y = py; t = pt;
        }
    }
    PropertyResult result(const std::string& id, bool strict) const {
        PropertyResult r;
        r.id = id;
        r.margin = worst;
        r.pass = strict ? worst > 0.0 : worst >= 0.0;
        r.worst_x = x; r.worst_y = y; r.worst_t = t;
        return r;
    }
};

/// Tracks sup of |lhs| / rhs for bounds |lhs| <= C rhs.
struct BoundTracker {
    double c = 0.0;
    double x = 0, y = 0, t = 0;
    void add(double lhs, double rhs, double px, double py, double pt) {
        if (lhs == 0.0) return;
        const double q = rhs > 0.0 ? std::abs(lhs) / rhs : std::numeric_limits<double>::infinity();
        if (q > c || std::isnan(q)) {
            c = std::isnan(q) ? std::numeric_limits<double>::infinity() : q;
            x = px; y = py; t = pt;
        }
    }
    PropertyResult result(const std::string& id) const {
        PropertyResult r;
        r.id = id;
        r.constant_c = c;
        r.pass = std::isfinite(c);
        r.worst_x = x; r.worst_y = y; r.worst_t = t;
        return r;
    }
};

}  // namespace detail

/// Evaluates the pointwise properties both weight families rely on, on a
/// closed space mesh and a time-midpoint mesh.
inline PropertyReport verify_weight_properties(const WeightParams& p,
                                               const PropertyMesh& mesh = {}) {
    using detail::BoundTracker;
    using detail::SignTracker;
    PropertyReport rep;
    const double T = p.horizon;
    auto xs = [&](int i) { return static_cast<double>(i) / mesh.nx; };
    auto ys = [&](int j) { return static_cast<double>(j) / mesh.ny; };
    auto ts = [&](int k) { return (k + 0.5) * T / mesh.nt; };

    {  // mu condition itself
        SignTracker s;
        s.add(p.mu - mu_supremum(p.gamma) - p.delta0, 1.0, 0.5, 0.0);
        rep.items.push_back(s.result("mu_condition", true));
    }

    // Spatial phase properties (same for psi-hat and the space part of rho-hat).
    for (const char* fam : {"psi", "rho"}) {
        SignTracker sx, sprod;
        BoundTracker b4, by, bmix;
        const bool reg = std::string(fam) == "rho";
        for (int i = 0; i <= mesh.nx; ++i)
            for (int j = 0; j <= mesh.ny; ++j) {
                const double x = xs(i), y = ys(j);
                const Derivs d = spatial_phase(p, x, y, reg ? 0.0 : p.big_m);
                const double X = x + p.epsilon;
                sx.add(-p.delta0 - d.x, x, y, 0.0);
                sprod.add(-(d.x * d.xxx), x, y, 0.0);
                if (X > 0.0) {
                    b4.add(d.xxxx, 1.0 / (X * X), x, y, 0.0);
                    by.add(std::abs(d.y) + std::abs(d.yy), std::pow(X, 2.0 + 2.0 * p.gamma), x, y, 0.0);
                    double mix = std::abs(d.xy) + std::abs(d.xx) + std::abs(d.xxy) +
                                 std::abs(d.xyy) + std::abs(d.xxyy);
                    if (reg) mix += std::abs(d.yy);
                    bmix.add(mix, std::pow(X, 2.0 * p.gamma), x, y, 0.0);
                }
            }
        const std::string f(fam);
        rep.items.push_back(sx.result(f + "_x_lt_minus_delta0", true));
        rep.items.push_back(sprod.result(f + "_x_times_" + f + "_xxx_le_0", false));
        rep.items.push_back(b4.result(f + "_xxxx_bound"));
        rep.items.push_back(by.result(f + "_y_plus_" + f + "_yy_bound"));
        rep.items.push_back(bmix.result(f + "_mixed_bound"));
    }

    // Regular family: exact time structure and positivity.
    {
        PropertyResult exact{"rho_time_derivatives_exact"};
        SignTracker pos;
        bool regular_ok = true;
        try {
            WeightFamily reg(WeightKind::regular, p);
            for (int k = 0; k <= mesh.nt; ++k) {
                const double t = T * k / mesh.nt;
                for (int i = 0; i <= mesh.nx; i += 4)
                    for (int j = 0; j <= mesh.ny; j += 4) {
                        const auto w = reg.eval_regular(xs(i), ys(j), t);
                        if (w.phase.t != 2.0 * (p.lambda - t) || w.phase.tt != -2.0 ||
                            w.phase.xt != 0.0 || w.phase.yt != 0.0) {
                            exact.pass = false;
                            exact.worst_x = xs(i); exact.worst_y = ys(j); exact.worst_t = t;
                        }
                        pos.add(w.phase.v, xs(i), ys(j), t);
                    }
            }
        } catch (const parameter_error&) {
            regular_ok = false;
        }
        exact.margin = std::numeric_limits<double>::quiet_NaN();
        rep.items.push_back(exact);
        if (regular_ok) {
            rep.items.push_back(pos.result("rho_positive", true));
        } else {
            PropertyResult r{"rho_positive"};
            r.pass = false;
            const double lam = p.lambda;
            const double tw = std::abs(lam) >= std::abs(lam - T) ? 0.0 : T;
            r.worst_x = 1.0; r.worst_y = 0.0; r.worst_t = tw;
            r.margin = -p.mu * (1.0 + p.epsilon) + 2.0 * lam * lam - (lam - tw) * (lam - tw);
            rep.items.push_back(r);
        }
    }

    // Boundary signs of varphi-hat (singular) and Phi-hat (regular).
    {
        const WeightFamily sing(WeightKind::singular, p);
        SignTracker x0, x1, y0, y1, rx0, rx1, ry0, ry1;
        bool have_reg = true;
        WeightFamily reg = sing;
        try {
            reg = WeightFamily(WeightKind::regular, p);
        } catch (const parameter_error&) {
            have_reg = false;
        }
        for (int k = 0; k < mesh.nt; ++k) {
            const double t = ts(k);
            for (int j = 0; j <= mesh.ny; ++j) {
                const double y = ys(j);
                x0.add(-sing.eval_singular(0.0, y, t).varphi.x, 0.0, y, t);
                x1.add(-sing.eval_singular(1.0, y, t).varphi.x, 1.0, y, t);
                if (have_reg) {
                    rx0.add(-reg.eval_regular(0.0, y, t).expo.x, 0.0, y, t);
                    rx1.add(-reg.eval_regular(1.0, y, t).expo.x, 1.0, y, t);
                }
            }
            for (int i = 0; i <= mesh.nx; ++i) {
                const double x = xs(i);
                y0.add(sing.eval_singular(x, 0.0, t).varphi.y, x, 0.0, t);
                y1.add(-sing.eval_singular(x, 1.0, t).varphi.y, x, 1.0, t);
                if (have_reg) {
                    ry0.add(reg.eval_regular(x, 0.0, t).expo.y, x, 0.0, t);
                    ry1.add(-reg.eval_regular(x, 1.0, t).expo.y, x, 1.0, t);
                }
            }
        }
        rep.items.push_back(x0.result("varphi_x_at_x0_le_0", false));
        rep.items.push_back(x1.result("varphi_x_at_x1_le_0", false));
        rep.items.push_back(y0.result("varphi_y_at_y0_ge_0", false));
        rep.items.push_back(y1.result("varphi_y_at_y1_le_0", false));
        if (have_reg) {
            rep.items.push_back(rx0.result("Phi_x_at_x0_le_0", false));
            rep.items.push_back(rx1.result("Phi_x_at_x1_le_0", false));
            rep.items.push_back(ry0.result("Phi_y_at_y0_ge_0", false));
            rep.items.push_back(ry1.result("Phi_y_at_y1_le_0", false));
        }
    }

    // Time factor and the singular weight range.
    {
        SignTracker pos, blow, unit_lo, unit_hi;
        BoundTracker bt;
        double prev = 0.0;
        for (int k = 0; k < mesh.nt; ++k) {
            const double t = ts(k);
            const XiValue xi = xi_time(t, T);
            pos.add(xi.v, 0.0, 0.0, t);
            bt.add(xi.t, std::pow(xi.v, 1.25), 0.0, 0.0, t);
            // strictly decreasing on (0, T/2), increasing on (T/2, T)
            if (k > 0) {
                if (t <= 0.5 * T) blow.add(prev - xi.v, 0.0, 0.0, t);
                else if (t - T / mesh.nt >= 0.5 * T) blow.add(xi.v - prev, 0.0, 0.0, t);
            }
            prev = xi.v;
        }
        const WeightFamily sing(WeightKind::singular, p);
        for (int k = 0; k < mesh.nt; ++k)
            for (int i = 0; i <= mesh.nx; i += 8)
                for (int j = 0; j <= mesh.ny; j += 8) {
                    const double th = sing.eval_singular(xs(i), ys(j), ts(k)).weight.v;
                    unit_lo.add(th, xs(i), ys(j), ts(k));
                    unit_hi.add(1.0 - th, xs(i), ys(j), ts(k));
                }
        rep.items.push_back(pos.result("xi_positive", true));
        rep.items.push_back(blow.result("xi_blows_up_at_endpoints", true));
        rep.items.push_back(bt.result("xi_t_bound"));
        // theta may underflow to 0 for large s near the ends; only the upper bound is strict
        auto lo = unit_lo.result("theta_nonnegative", false);
        rep.items.push_back(lo);
        rep.items.push_back(unit_hi.result("theta_lt_1", true));
    }
    return rep;
}

}  // namespace sgrushin
