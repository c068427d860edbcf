#pragma once

// Forward-mode differentiation in the three variables (x, y, t).
//   Dual  : value + gradient
//   Jet2  : value + gradient + Hessian
// Test fields are written as templates over the scalar type so the same
// expression yields values or jets.

#include <array>
#include <cmath>

namespace sgrushin {

enum Axis : int { ax_x = 0, ax_y = 1, ax_t = 2 };

struct Dual {
    double v = 0.0;
    std::array<double, 3> d{0.0, 0.0, 0.0};

    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT: constants promote implicitly
    Dual(double value, double dx, double dy, double dt) : v(value), d{dx, dy, dt} {}
};

inline Dual operator+(const Dual& a, const Dual& b) {
    return {a.v + b.v, a.d[0] + b.d[0], a.d[1] + b.d[1], a.d[2] + b.d[2]};
}
inline Dual operator-(const Dual& a, const Dual& b) {
    return {a.v - b.v, a.d[0] - b.d[0], a.d[1] - b.d[1], a.d[2] - b.d[2]};
}
inline Dual operator-(const Dual& a) { return {-a.v, -a.d[0], -a.d[1], -a.d[2]}; }
inline Dual operator*(const Dual& a, const Dual& b) {
    return {a.v * b.v, a.d[0] * b.v + a.v * b.d[0], a.d[1] * b.v + a.v * b.d[1],
            a.d[2] * b.v + a.v * b.d[2]};
}
inline Dual operator*(double c, const Dual& a) { return {c * a.v, c * a.d[0], c * a.d[1], c * a.d[2]}; }
inline Dual operator*(const Dual& a, double c) { return c * a; }
inline Dual operator+(const Dual& a, double c) { return {a.v + c, a.d[0], a.d[1], a.d[2]}; }
inline Dual operator+(double c, const Dual& a) { return a + c; }
inline Dual operator-(const Dual& a, double c) { return {a.v - c, a.d[0], a.d[1], a.d[2]}; }
inline Dual operator-(double c, const Dual& a) { return {c - a.v, -a.d[0], -a.d[1], -a.d[2]}; }

/// Symmetric Hessian stored as xx, xy, xt, yy, yt, tt.
struct Jet2 {
    double v = 0.0;
    std::array<double, 3> g{0.0, 0.0, 0.0};
    std::array<double, 6> h{0.0, 0.0, 0.0, 0.0, 0.0, 0.0};

    Jet2() = default;
    Jet2(double value) : v(value) {}  // NOLINT

    static constexpr int hidx(int i, int j) {
        if (i > j) { const int k = i; i = j; j = k; }
        constexpr int base[3] = {0, 3, 5};
        return base[i] + (j - i);
    }
    double hess(int i, int j) const { return h[static_cast<std::size_t>(hidx(i, j))]; }

    static Jet2 variable(double value, Axis a) {
        Jet2 r(value);
        r.g[static_cast<std::size_t>(a)] = 1.0;
        return r;
    }
};

/// f(u) given f(u0), f'(u0), f''(u0).
inline Jet2 chain(const Jet2& u, double f0, double f1, double f2) {
    Jet2 r(f0);
    for (int i = 0; i < 3; ++i) r.g[i] = f1 * u.g[i];
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            const int k = Jet2::hidx(i, j);
            r.h[k] = f1 * u.h[k] + f2 * u.g[i] * u.g[j];
        }
    return r;
}

inline Jet2 operator+(const Jet2& a, const Jet2& b) {
    Jet2 r(a.v + b.v);
    for (int i = 0; i < 3; ++i) r.g[i] = a.g[i] + b.g[i];
    for (int k = 0; k < 6; ++k) r.h[k] = a.h[k] + b.h[k];
    return r;
}
inline Jet2 operator-(const Jet2& a) {
    Jet2 r(-a.v);
    for (int i = 0; i < 3; ++i) r.g[i] = -a.g[i];
    for (int k = 0; k < 6; ++k) r.h[k] = -a.h[k];
    return r;
}
inline Jet2 operator-(const Jet2& a, const Jet2& b) { return a + (-b); }
inline Jet2 operator*(const Jet2& a, const Jet2& b) {
    Jet2 r(a.v * b.v);
    for (int i = 0; i < 3; ++i) r.g[i] = a.g[i] * b.v + a.v * b.g[i];
    for (int i = 0; i < 3; ++i)
        for (int j = i; j < 3; ++j) {
            const int k = Jet2::hidx(i, j);
            r.h[k] = a.h[k] * b.v + a.v * b.h[k] + a.g[i] * b.g[j] + a.g[j] * b.g[i];
        }
    return r;
}
inline Jet2 operator/(const Jet2& a, const Jet2& b) {
    const double iv = 1.0 / b.v;
    return a * chain(b, iv, -iv * iv, 2.0 * iv * iv * iv);
}
inline Jet2 operator+(const Jet2& a, double c) { Jet2 r = a; r.v += c; return r; }
inline Jet2 operator+(double c, const Jet2& a) { return a + c; }
inline Jet2 operator-(const Jet2& a, double c) { return a + (-c); }
inline Jet2 operator-(double c, const Jet2& a) { return (-a) + c; }
inline Jet2 operator*(const Jet2& a, double c) {
    Jet2 r(a.v * c);
    for (int i = 0; i < 3; ++i) r.g[i] = a.g[i] * c;
    for (int k = 0; k < 6; ++k) r.h[k] = a.h[k] * c;
    return r;
}
inline Jet2 operator*(double c, const Jet2& a) { return a * c; }
inline Jet2 operator/(const Jet2& a, double c) { return a * (1.0 / c); }
inline Jet2 operator/(double c, const Jet2& a) { return Jet2(c) / a; }

inline Jet2 exp(const Jet2& u) {
    const double e = std::exp(u.v);
    return chain(u, e, e, e);
}
inline Jet2 log(const Jet2& u) { return chain(u, std::log(u.v), 1.0 / u.v, -1.0 / (u.v * u.v)); }
inline Jet2 sin(const Jet2& u) {
    const double s = std::sin(u.v), c = std::cos(u.v);
    return chain(u, s, c, -s);
}
inline Jet2 cos(const Jet2& u) {
    const double s = std::sin(u.v), c = std::cos(u.v);
    return chain(u, c, -s, -c);
}
inline Jet2 pow(const Jet2& u, double e) {
    const double p = std::pow(u.v, e);
    return chain(u, p, e * std::pow(u.v, e - 1.0), e * (e - 1.0) * std::pow(u.v, e - 2.0));
}
inline Jet2 sqrt(const Jet2& u) { return pow(u, 0.5); }

/// Second-order jets of a template field f(x, y, t) at a point.
template <class F>
Jet2 jet_of(F&& f, double x, double y, double t) {
    return f(Jet2::variable(x, ax_x), Jet2::variable(y, ax_y), Jet2::variable(t, ax_t));
}

}  // namespace sgrushin
