#pragma once

// Random test data shared by the experiment runners.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "sgrushin/spde.hpp"

namespace sgrushin {

/// Combination of the first sine modes with N(0,1)/(m n) coefficients.
inline Vec smooth_random(const Grid2D& g, std::mt19937_64& rng, int modes = 3) {
    constexpr double pi = std::numbers::pi;
    std::normal_distribution<double> n01;
    Vec out = Vec::Zero(g.size());
    for (int m = 1; m <= modes; ++m)
        for (int n = 1; n <= modes; ++n) {
            const double c = n01(rng) / (m * n);
            for (int i = 0; i < g.nx; ++i)
                for (int j = 0; j < g.ny; ++j)
                    out(g.index(i, j)) += c * std::sin(m * pi * g.x(i)) * std::sin(n * pi * g.y(j));
        }
    return out;
}

/// vT = g0 + B(T) g1 at the leaves.
inline AdaptedField terminal_data(const BrownianTree& tree, const Vec& g0, const Vec& g1) {
    AdaptedField vT(tree, static_cast<int>(g0.size()), tree.nt, tree.nt);
    for (std::int64_t b = 0; b < tree.nodes(tree.nt); ++b)
        vT.level(tree.nt).col(b) = g0 + tree.brownian(tree.nt, b) * g1;
    return vT;
}

/// Population coefficient of variation (0 for an empty or zero-mean sample).
inline double coefficient_of_variation(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double m = 0.0, q = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    for (double x : v) q += (x - m) * (x - m);
    return m != 0.0 ? std::sqrt(q / static_cast<double>(v.size())) / std::abs(m) : 0.0;
}

/// Sampled sin(pi x) sin(pi y).
inline Vec sine_bump(const Grid2D& g) {
    constexpr double pi = std::numbers::pi;
    return sample(g, [](double x, double y, double) { return std::sin(pi * x) * std::sin(pi * y); }, 0.0);
}

}  // namespace sgrushin
