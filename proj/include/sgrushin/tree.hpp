#pragma once

// Full binomial discretization of one Brownian motion. Node b at level k is a
// k-bit path; bit m (most significant first) is 0 for an up step (+sqrt(dt))
// and 1 for a down step. Children of b are 2b (up) and 2b+1 (down).

#include <Eigen/Dense>

#include <bit>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "sgrushin/errors.hpp"

namespace sgrushin {

inline constexpr int kMaxTreeDepth = 24;

struct BrownianTree {
    int nt = 0;
    double horizon = 0.0;
    double dt = 0.0;
    double sqrt_dt = 0.0;

    std::int64_t nodes(int level) const { return std::int64_t{1} << level; }
    double time(int level) const { return level * dt; }
    /// Increment that led into node b at level k >= 1.
    double increment(std::int64_t b) const { return (b & 1) ? -sqrt_dt : sqrt_dt; }
    /// B(t_k) at node b: (#up - #down) sqrt(dt).
    double brownian(int level, std::int64_t b) const {
        const int downs = std::popcount(static_cast<std::uint64_t>(b));
        return (level - 2 * downs) * sqrt_dt;
    }
    std::string path(int level, std::int64_t b) const {
        std::string s(static_cast<std::size_t>(level), '0');
        for (int m = 0; m < level; ++m)
            if ((b >> (level - 1 - m)) & 1) s[static_cast<std::size_t>(m)] = '1';
        return s;
    }
};

inline BrownianTree build_tree(int nt, double horizon) {
    if (nt < 1) throw parameter_error("build_tree: nt must be >= 1");
    if (!(horizon > 0.0)) throw parameter_error("build_tree: horizon T must be > 0");
    if (nt > kMaxTreeDepth)
        throw capacity_error("build_tree: nt = " + std::to_string(nt) + " exceeds capacity " +
                             std::to_string(kMaxTreeDepth) + " (2^nt leaves)");
    const double dt = horizon / nt;
    return BrownianTree{nt, horizon, dt, std::sqrt(dt)};
}

/// Grid-valued (or scalar, n = 1) process on the tree. Level k stores one
/// column per node, 2^k columns. Values are set level by level; there is no
/// way to read a node's value through the increments after it.
class AdaptedField {
public:
    AdaptedField() = default;
    AdaptedField(const BrownianTree& tree, int n, int first_level = 0, int last_level = -1)
        : n_(n), first_(first_level) {
        const int last = last_level < 0 ? tree.nt : last_level;
        for (int k = first_level; k <= last; ++k)
            levels_.emplace_back(Eigen::MatrixXd::Zero(n, tree.nodes(k)));
    }

    int dim() const { return n_; }
    int first_level() const { return first_; }
    int last_level() const { return first_ + static_cast<int>(levels_.size()) - 1; }
    bool has_level(int k) const { return k >= first_ && k <= last_level(); }

    Eigen::MatrixXd& level(int k) { return levels_.at(static_cast<std::size_t>(k - first_)); }
    const Eigen::MatrixXd& level(int k) const {
        return levels_.at(static_cast<std::size_t>(k - first_));
    }
    auto node(int k, std::int64_t b) { return level(k).col(b); }
    auto node(int k, std::int64_t b) const { return level(k).col(b); }

private:
    int n_ = 0;
    int first_ = 0;
    std::vector<Eigen::MatrixXd> levels_;
};

/// Equal-weight average of the 2^k columns, reduced pairwise (up before down).
/// Repeated pairwise halving means E at level k+1 is bitwise the E at level k
/// of the conditional means.
inline Eigen::VectorXd mean_columns(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd cur = m;
    while (cur.cols() > 1) {
        const Eigen::Index h = cur.cols() / 2;
        Eigen::MatrixXd nxt(cur.rows(), h);
        for (Eigen::Index b = 0; b < h; ++b) nxt.col(b) = 0.5 * (cur.col(2 * b) + cur.col(2 * b + 1));
        cur = std::move(nxt);
    }
    return cur.col(0);
}

inline Eigen::VectorXd expectation(const AdaptedField& f, int level) {
    if (!f.has_level(level))
        throw parameter_error("expectation: level " + std::to_string(level) + " not stored");
    return mean_columns(f.level(level));
}

struct ConditionalStep {
    Eigen::VectorXd mean;  ///< (up + down) / 2
    Eigen::VectorXd mart;  ///< (up - down) / (2 sqrt(dt))
};

/// Two-point martingale representation of a level-(k+1) value over node b at level k.
inline ConditionalStep conditional_step(const BrownianTree& tree, const Eigen::MatrixXd& next,
                                        std::int64_t b) {
    const auto up = next.col(2 * b);
    const auto down = next.col(2 * b + 1);
    return {0.5 * (up + down), (up - down) / (2.0 * tree.sqrt_dt)};
}

/// Level -> conditional mean of the next level, for every node of level k.
inline Eigen::MatrixXd conditional_means(const Eigen::MatrixXd& next) {
    const Eigen::Index h = next.cols() / 2;
    Eigen::MatrixXd out(next.rows(), h);
    for (Eigen::Index b = 0; b < h; ++b) out.col(b) = 0.5 * (next.col(2 * b) + next.col(2 * b + 1));
    return out;
}

/// B(t_k) for every node, as a scalar field.
inline AdaptedField brownian_field(const BrownianTree& tree) {
    AdaptedField f(tree, 1);
    for (int k = 0; k <= tree.nt; ++k)
        for (std::int64_t b = 0; b < tree.nodes(k); ++b) f.level(k)(0, b) = tree.brownian(k, b);
    return f;
}

/// Leaf dump: "path,value" for each leaf of a scalar field (or component `row`).
inline void write_leaves_csv(const BrownianTree& tree, const AdaptedField& f, std::ostream& os,
                             int row = 0) {
    os << "path,value\n" << std::setprecision(17);
    const int k = f.last_level();
    for (std::int64_t b = 0; b < tree.nodes(k); ++b)
        os << tree.path(k, b) << ',' << f.level(k)(row, b) << '\n';
}

}  // namespace sgrushin
