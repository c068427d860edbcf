#pragma once

// Test-only differentiation oracle: truncated univariate Taylor series,
// nested for mixed partials. Independent of the closed-form derivatives and
// of the library's Jet2.

#include <array>
#include <cmath>
#include <cstddef>

namespace oracle {

template <class T, std::size_t N>
struct Taylor {
    std::array<T, N + 1> c{};

    Taylor() { c.fill(T(0.0)); }
    Taylor(double v) {  // NOLINT
        c.fill(T(0.0));
        c[0] = T(v);
    }
    template <class U = T, class = std::enable_if_t<!std::is_same_v<U, double>>>
    Taylor(const T& v) {  // NOLINT
        c.fill(T(0.0));
        c[0] = v;
    }
    static Taylor variable(const T& at) {
        Taylor r;
        r.c[0] = at;
        if (N >= 1) r.c[1] = T(1.0);
        return r;
    }
};

template <class T, std::size_t N>
Taylor<T, N> operator+(const Taylor<T, N>& a, const Taylor<T, N>& b) {
    Taylor<T, N> r;
    for (std::size_t k = 0; k <= N; ++k) r.c[k] = a.c[k] + b.c[k];
    return r;
}
template <class T, std::size_t N>
Taylor<T, N> operator-(const Taylor<T, N>& a) {
    Taylor<T, N> r;
    for (std::size_t k = 0; k <= N; ++k) r.c[k] = T(0.0) - a.c[k];
    return r;
}
template <class T, std::size_t N>
Taylor<T, N> operator-(const Taylor<T, N>& a, const Taylor<T, N>& b) {
    return a + (-b);
}
template <class T, std::size_t N>
Taylor<T, N> operator*(const Taylor<T, N>& a, const Taylor<T, N>& b) {
    Taylor<T, N> r;
    for (std::size_t k = 0; k <= N; ++k) {
        T s(0.0);
        for (std::size_t j = 0; j <= k; ++j) s = s + a.c[j] * b.c[k - j];
        r.c[k] = s;
    }
    return r;
}
template <class T, std::size_t N>
Taylor<T, N> operator*(double s, const Taylor<T, N>& a) {
    Taylor<T, N> r;
    for (std::size_t k = 0; k <= N; ++k) r.c[k] = s * a.c[k];
    return r;
}
template <class T, std::size_t N>
Taylor<T, N> operator*(const Taylor<T, N>& a, double s) {
    return s * a;
}
template <class T, std::size_t N>
Taylor<T, N> operator+(const Taylor<T, N>& a, double s) {
    Taylor<T, N> r = a;
    r.c[0] = r.c[0] + T(s);
    return r;
}
template <class T, std::size_t N>
Taylor<T, N> operator+(double s, const Taylor<T, N>& a) {
    return a + s;
}
template <class T, std::size_t N>
Taylor<T, N> operator-(const Taylor<T, N>& a, double s) {
    return a + (-s);
}
template <class T, std::size_t N>
Taylor<T, N> operator-(double s, const Taylor<T, N>& a) {
    return (-a) + s;
}

template <class T>
T inv_scalar(const T& v) {
    return 1.0 / v;
}

template <class T, std::size_t N>
Taylor<T, N> exp(const Taylor<T, N>& u) {
    using std::exp;
    Taylor<T, N> f;
    f.c[0] = exp(u.c[0]);
    for (std::size_t k = 1; k <= N; ++k) {
        T s(0.0);
        for (std::size_t j = 1; j <= k; ++j) s = s + static_cast<double>(j) * (u.c[j] * f.c[k - j]);
        f.c[k] = (1.0 / static_cast<double>(k)) * s;
    }
    return f;
}

template <class T, std::size_t N>
Taylor<T, N> sin_cos(const Taylor<T, N>& u, bool want_sin) {
    using std::cos;
    using std::sin;
    Taylor<T, N> s, c;
    s.c[0] = sin(u.c[0]);
    c.c[0] = cos(u.c[0]);
    for (std::size_t k = 1; k <= N; ++k) {
        T ss(0.0), cc(0.0);
        for (std::size_t j = 1; j <= k; ++j) {
            ss = ss + static_cast<double>(j) * (u.c[j] * c.c[k - j]);
            cc = cc + static_cast<double>(j) * (u.c[j] * s.c[k - j]);
        }
        s.c[k] = (1.0 / static_cast<double>(k)) * ss;
        c.c[k] = (-1.0 / static_cast<double>(k)) * cc;
    }
    return want_sin ? s : c;
}
template <class T, std::size_t N>
Taylor<T, N> sin(const Taylor<T, N>& u) {
    return sin_cos(u, true);
}
template <class T, std::size_t N>
Taylor<T, N> cos(const Taylor<T, N>& u) {
    return sin_cos(u, false);
}

/// u^e for u(0) > 0.
template <class T, std::size_t N>
Taylor<T, N> pow(const Taylor<T, N>& u, double e) {
    using std::pow;
    Taylor<T, N> f;
    f.c[0] = pow(u.c[0], e);
    const T inv0 = inv_scalar(u.c[0]);
    for (std::size_t k = 1; k <= N; ++k) {
        T s(0.0);
        for (std::size_t j = 1; j <= k; ++j)
            s = s + (e * static_cast<double>(j) - static_cast<double>(k - j)) * (u.c[j] * f.c[k - j]);
        f.c[k] = (1.0 / static_cast<double>(k)) * (inv0 * s);
    }
    return f;
}

template <class T, std::size_t N>
Taylor<T, N> inv_scalar(const Taylor<T, N>& u) {
    return pow(u, -1.0);
}

template <class T, std::size_t N>
Taylor<T, N> operator/(const Taylor<T, N>& a, const Taylor<T, N>& b) {
    return a * pow(b, -1.0);
}
template <class T, std::size_t N>
Taylor<T, N> operator/(double s, const Taylor<T, N>& b) {
    return s * pow(b, -1.0);
}

inline double factorial(std::size_t n) {
    double f = 1.0;
    for (std::size_t k = 2; k <= n; ++k) f *= static_cast<double>(k);
    return f;
}

using Inner = Taylor<double, 2>;
using Outer = Taylor<Inner, 4>;

/// d^a/du^a d^b/dv^b f(u, v) at (u0, v0), a <= 4, b <= 2.
template <class F>
double mixed(F&& f, double u0, double v0, std::size_t a, std::size_t b) {
    const Outer u = Outer::variable(Inner(u0));
    Outer v;
    v.c[0] = Inner::variable(v0);
    const Outer r = f(u, v);
    return r.c[a].c[b] * factorial(a) * factorial(b);
}

}  // namespace oracle
