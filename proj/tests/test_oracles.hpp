#pragma once

// Independent reference implementations used to check library results. These
// deliberately take different code paths from the library (dense Eigen
// algebra, direct loops) so agreement is evidence, not tautology.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "evacflow/common.hpp"
#include "evacflow/graph.hpp"

namespace oracles {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Mat to_mat(const std::vector<double>& flat, int n) {
    return Eigen::Map<const Mat>(flat.data(), n, n);
}

/// Dense D^{-1/2} A D^{-1/2} with weighted row-sum degrees, built from
/// explicit diagonal matrices.
inline Mat normalize_dense(const Mat& abar) {
    const int n = static_cast<int>(abar.rows());
    Eigen::VectorXd deg = abar.rowwise().sum();
    Eigen::VectorXd inv_sqrt(n);
    for (int i = 0; i < n; ++i) inv_sqrt(i) = 1.0 / std::sqrt(deg(i));
    return inv_sqrt.asDiagonal() * abar * inv_sqrt.asDiagonal();
}

/// Largest-magnitude eigenvalue of a symmetric matrix by power iteration.
inline double spectral_radius(const Mat& m, evacflow::Rng& rng,
                              int max_iters = 2000, double tol = 1e-13) {
    const int n = static_cast<int>(m.rows());
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = rng.uniform(-1.0, 1.0);
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Eigen::VectorXd w = m * v;
        const double norm = w.norm();
        if (norm == 0.0) return 0.0;
        w /= norm;
        const double next = w.dot(m * w);
        if (std::fabs(next - lambda) < tol && it > 10) return std::fabs(next);
        lambda = next;
        v = w;
    }
    return std::fabs(lambda);
}

/// Small random corridor network: one chain through all nodes plus a few
/// extra shortcut edges.
inline evacflow::DetectorNetwork random_network(evacflow::Rng& rng, int n) {
    std::vector<evacflow::DetectorNode> nodes;
    for (int i = 0; i < n; ++i) {
        evacflow::DetectorNode nd;
        nd.id = i + 1;
        nd.corridor = i < n / 2 ? "I-75" : "I-4";
        nd.milepost = 3.0 * i + rng.uniform(0.0, 1.0);
        nd.lanes = 2 + static_cast<int>(rng.below(3));
        nd.lat = 27.0 + 0.05 * i;
        nd.lon = -82.0 - 0.03 * i;
        nodes.push_back(std::move(nd));
    }
    std::vector<evacflow::DetectorEdge> edges;
    std::set<std::pair<int, int>> used;
    for (int i = 0; i + 1 < n; ++i) {
        edges.push_back({i + 1, i + 2, rng.uniform(0.5, 5.0)});
        used.insert({i + 1, i + 2});
    }
    const int extras = n > 3 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(n / 2))) : 0;
    for (int k = 0; k < extras; ++k) {
        int a = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        int b = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        if (a == b) continue;
        auto key = std::minmax(a, b);
        if (used.count(key)) continue;
        used.insert(key);
        edges.push_back({key.first, key.second, rng.uniform(1.0, 8.0)});
    }
    return evacflow::DetectorNetwork(std::move(nodes), std::move(edges));
}

inline std::vector<std::vector<double>> random_speeds(evacflow::Rng& rng, int t,
                                                      int n, double lo = 10.0,
                                                      double hi = 70.0) {
    std::vector<std::vector<double>> s(static_cast<std::size_t>(t));
    for (auto& row : s) {
        row.resize(static_cast<std::size_t>(n));
        for (auto& v : row) v = rng.uniform(lo, hi);
    }
    return s;
}

/// Random symmetric nonnegative matrix with unit-or-larger diagonal, the
/// shape of a self-looped adjacency.
inline std::vector<double> random_abar(evacflow::Rng& rng, int n,
                                       double density = 0.6) {
    std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) {
        m[static_cast<std::size_t>(i) * n + i] = 1.0 + rng.uniform(0.0, 0.5);
        for (int j = i + 1; j < n; ++j) {
            if (rng.uniform() < density) {
                const double w = rng.uniform(0.05, 1.0);
                m[static_cast<std::size_t>(i) * n + j] = w;
                m[static_cast<std::size_t>(j) * n + i] = w;
            }
        }
    }
    return m;
}

inline evacflow::Tensor to_tensor(const Mat& m) {
    std::vector<double> v(m.data(), m.data() + m.size());
    return evacflow::Tensor::from_data(
        {static_cast<int>(m.rows()), static_cast<int>(m.cols())}, std::move(v));
}

/// Random degree-normalized self-looped adjacency as a tensor.
inline evacflow::Tensor random_normalized(evacflow::Rng& rng, int n) {
    return to_tensor(normalize_dense(to_mat(random_abar(rng, n), n)));
}

}  // namespace oracles
