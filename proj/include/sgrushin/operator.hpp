#pragma once

// Tensor-grid discretization of the shifted Grushin operator
//   A v = v_xx + (x+eps)^{2 gamma} v_yy + sigma/(x+eps)^2 v
// on (0,1)^2 with homogeneous Dirichlet conditions (interior unknowns only).

#include <Eigen/Dense>
#include <Eigen/QR>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "sgrushin/errors.hpp"
#include "sgrushin/parallel.hpp"

namespace sgrushin {

using Vec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;

/// Uniform interior grid. Node (i, j), 0 <= i < nx, 0 <= j < ny, sits at
/// ((i+1) hx, (j+1) hy). Unknowns are ordered x-major: k = i*ny + j.
struct Grid2D {
    int nx = 0;
    int ny = 0;
    double hx = 0.0;
    double hy = 0.0;

    int size() const { return nx * ny; }
    int index(int i, int j) const { return i * ny + j; }
    double x(int i) const { return (i + 1) * hx; }
    double y(int j) const { return (j + 1) * hy; }
};

inline Grid2D build_grid(int nx, int ny) {
    if (nx < 2 || ny < 2)
        throw parameter_error("build_grid: nx and ny must be >= 2 (got " + std::to_string(nx) +
                              ", " + std::to_string(ny) + ")");
    return Grid2D{nx, ny, 1.0 / (nx + 1), 1.0 / (ny + 1)};
}

struct DiscreteOperator {
    Grid2D grid;
    double gamma = 0.0;
    double sigma = 0.0;
    double epsilon = 0.0;
    SpMat a;  ///< the matrix of A_eps (not of -A_eps)

    /// (x_i + eps)^{2 gamma}
    double degeneracy(int i) const { return std::pow(grid.x(i) + epsilon, 2.0 * gamma); }
    double potential(int i) const {
        const double xe = grid.x(i) + epsilon;
        return sigma / (xe * xe);
    }
};

inline void check_sigma(double sigma) {
    if (!(sigma >= 0.0) || !(sigma < 0.25))
        throw parameter_error("sigma = " + std::to_string(sigma) +
                              " violates 0 <= sigma < 1/4 (Hardy constant bound 1/4)");
}

inline DiscreteOperator assemble_grushin(const Grid2D& g, double gamma, double sigma,
                                         double epsilon) {
    check_sigma(sigma);
    if (!(gamma >= 0.0)) throw parameter_error("gamma must be >= 0");
    if (!(epsilon >= 0.0) || !(epsilon < 1.0))
        throw parameter_error("epsilon must lie in [0, 1)");

    DiscreteOperator op{g, gamma, sigma, epsilon, SpMat(g.size(), g.size())};
    const double cx = 1.0 / (g.hx * g.hx);
    const double cy_base = 1.0 / (g.hy * g.hy);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(g.size()) * 5);
    for (int i = 0; i < g.nx; ++i) {
        const double cy = op.degeneracy(i) * cy_base;
        const double diag = -2.0 * cx - 2.0 * cy + op.potential(i);
        for (int j = 0; j < g.ny; ++j) {
            const int k = g.index(i, j);
            if (i > 0) trip.emplace_back(k, g.index(i - 1, j), cx);
            if (j > 0) trip.emplace_back(k, g.index(i, j - 1), cy);
            trip.emplace_back(k, k, diag);
            if (j + 1 < g.ny) trip.emplace_back(k, g.index(i, j + 1), cy);
            if (i + 1 < g.nx) trip.emplace_back(k, g.index(i + 1, j), cx);
        }
    }
    op.a.setFromTriplets(trip.begin(), trip.end());
    op.a.makeCompressed();
    return op;
}

/// Coordinate-format dump: "row col value" per nonzero, 17 significant digits.
inline void dump_coordinates(const DiscreteOperator& op, std::ostream& os) {
    os << std::setprecision(17);
    for (int c = 0; c < op.a.outerSize(); ++c)
        for (SpMat::InnerIterator it(op.a, c); it; ++it)
            os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

/// k smallest eigenvalues of -A_eps, ascending, by shift-free block inverse
/// iteration with Rayleigh-Ritz.
inline std::vector<double> smallest_eigenvalues(const DiscreteOperator& op, int k,
                                                double tol = 1e-8, int max_iter = 2000) {
    const int n = op.grid.size();
    if (k < 1 || k > std::min(6, n)) throw parameter_error("smallest_eigenvalues: need 1 <= k <= min(6, n)");
    const SpMat m = -op.a;
    Eigen::SimplicialLDLT<SpMat> ldlt(m);
    if (ldlt.info() != Eigen::Success) throw numerical_error("smallest_eigenvalues: factorization failed");

    const int b = std::min(n, k + 4);
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd x(n, b);
    for (int c = 0; c < b; ++c)
        for (int r = 0; r < n; ++r) x(r, c) = nd(rng);

    double worst = 0.0;
    std::vector<double> out(k);
    for (int it = 0; it < max_iter; ++it) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, b);
        Eigen::MatrixXd mq = m * q;
        Eigen::MatrixXd h = q.transpose() * mq;
        h = 0.5 * (h + h.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
        Eigen::MatrixXd ritz = q * es.eigenvectors();
        Eigen::MatrixXd mritz = mq * es.eigenvectors();
        worst = 0.0;
        for (int c = 0; c < k; ++c) {
            const double lam = es.eigenvalues()(c);
            const double res = (mritz.col(c) - lam * ritz.col(c)).norm() /
                               (std::abs(lam) * ritz.col(c).norm());
            worst = std::max(worst, res);
            out[c] = lam;
        }
        if (worst <= tol) return out;
        x = ldlt.solve(ritz);
    }
    throw convergence_error("smallest_eigenvalues: no convergence", max_iter, worst);
}

// ---------------------------------------------------------------------------
// Hardy inequality  int z^2/x^2 <= 4 int z_x^2  for z(0) = z(1) = 0.

/// Natural cubic spline through (knots[i], vals[i]).
class CubicSpline {
public:
    CubicSpline(std::vector<double> knots, std::vector<double> vals)
        : x_(std::move(knots)), y_(std::move(vals)), m_(x_.size(), 0.0) {
        const std::size_t n = x_.size();
        if (n < 2 || y_.size() != n) throw parameter_error("CubicSpline: need >= 2 matching knots");
        if (n == 2) return;
        // Tridiagonal system for second derivatives, natural end conditions.
        std::vector<double> a(n, 0.0), b(n, 1.0), c(n, 0.0), d(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const double h0 = x_[i] - x_[i - 1], h1 = x_[i + 1] - x_[i];
            a[i] = h0;
            b[i] = 2.0 * (h0 + h1);
            c[i] = h1;
            d[i] = 6.0 * ((y_[i + 1] - y_[i]) / h1 - (y_[i] - y_[i - 1]) / h0);
        }
        for (std::size_t i = 1; i < n; ++i) {
            const double w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        m_[n - 1] = d[n - 1] / b[n - 1];
        for (std::size_t i = n - 1; i-- > 0;) m_[i] = (d[i] - c[i] * m_[i + 1]) / b[i];
    }

    double value(double t) const { return eval(t, false); }
    double derivative(double t) const { return eval(t, true); }

private:
    double eval(double t, bool deriv) const {
        std::size_t i = static_cast<std::size_t>(
            std::upper_bound(x_.begin(), x_.end(), t) - x_.begin());
        i = std::clamp<std::size_t>(i, 1, x_.size() - 1) - 1;
        const double h = x_[i + 1] - x_[i];
        const double A = (x_[i + 1] - t) / h, B = (t - x_[i]) / h;
        if (!deriv)
            return A * y_[i] + B * y_[i + 1] +
                   ((A * A * A - A) * m_[i] + (B * B * B - B) * m_[i + 1]) * h * h / 6.0;
        return (y_[i + 1] - y_[i]) / h +
               (-(3.0 * A * A - 1.0) * m_[i] + (3.0 * B * B - 1.0) * m_[i + 1]) * h / 6.0;
    }

    std::vector<double> x_, y_, m_;
};

struct HardyQuotient {
    double weighted = 0.0;  ///< int z^2 / x^2
    double gradient = 0.0;  ///< int z_x^2
    /// weighted / gradient; bounded by 4. Zero function gives 0.
    double ratio() const { return gradient > 0.0 ? weighted / gradient : 0.0; }
    /// weighted / (4 gradient); bounded by 1.
    double normalized() const { return ratio() / 4.0; }
};

/// Composite midpoint quadrature on `cells` uniform cells of (0,1).
template <class Z, class DZ>
HardyQuotient hardy_quotient(Z&& z, DZ&& dz, int cells = 4096) {
    std::vector<double> w(cells), gsq(cells);
    const double h = 1.0 / cells;
    for (int c = 0; c < cells; ++c) {
        const double x = (c + 0.5) * h;
        const double v = z(x), d = dz(x);
        w[c] = v * v / (x * x) * h;
        gsq[c] = d * d * h;
    }
    return {pairwise_sum(w), pairwise_sum(gsq)};
}

struct HardyReport {
    int samples = 0;
    double eta = 1e-3;
    double max_ratio = 0.0;
    std::vector<double> ratios;
    double bound() const { return 4.0 * (1.0 + eta); }
    bool pass() const { return max_ratio <= bound(); }
};

/// Random natural cubic splines with z(0) = z(1) = 0 and 2..9 interior knots.
inline HardyReport hardy_check(int samples, std::uint64_t seed = 1, int cells = 4096,
                               double eta = 1e-3) {
    if (samples < 1) throw parameter_error("hardy_check: samples must be >= 1");
    HardyReport rep;
    rep.samples = samples;
    rep.eta = eta;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> nk(2, 9);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> nd;
    for (int s = 0; s < samples; ++s) {
        const int m = nk(rng);
        std::vector<double> knots{0.0}, vals{0.0};
        std::vector<double> interior(m);
        for (auto& t : interior) t = 0.02 + 0.96 * u01(rng);
        std::sort(interior.begin(), interior.end());
        for (double t : interior) {
            if (t - knots.back() < 1e-3) continue;
            knots.push_back(t);
            vals.push_back(nd(rng));
        }
        knots.push_back(1.0);
        vals.push_back(0.0);
        CubicSpline sp(knots, vals);
        const auto q = hardy_quotient([&](double x) { return sp.value(x); },
                                      [&](double x) { return sp.derivative(x); }, cells);
        rep.ratios.push_back(q.ratio());
        rep.max_ratio = std::max(rep.max_ratio, q.ratio());
    }
    return rep;
}

}  // namespace sgrushin
