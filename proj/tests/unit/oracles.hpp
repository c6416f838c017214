#pragma once

// Independent reference implementations and random generators used by the
// tests. Nothing here calls into the library's algorithms.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline Matrix random_symmetric(int n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix s(n, n);
    for (int i = 0; i < n; ++i) {
        s(i, i) = 1.0;
        for (int j = i + 1; j < n; ++j)
            s(i, j) = s(j, i) = u(rng);
    }
    return s;
}

inline Matrix random_gaussian(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            m(r, c) = g(rng);
    return m;
}

// Random row-stochastic matrix with at most k non-zeros per row, zero
// diagonal; some rows may be left empty.
inline Matrix random_transition(int n, int k, std::mt19937_64& rng, double empty_row_prob = 0.0) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::bernoulli_distribution empty(empty_row_prob);
    Matrix p = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        if (empty(rng))
            continue;
        std::vector<int> cols;
        for (int j = 0; j < n; ++j)
            if (j != i)
                cols.push_back(j);
        std::shuffle(cols.begin(), cols.end(), rng);
        const int m = std::min<int>(k, static_cast<int>(cols.size()));
        if (m == 0)
            continue;
        double sum = 0.0;
        for (int t = 0; t < m; ++t) {
            p(i, cols[t]) = u(rng);
            sum += p(i, cols[t]);
        }
        p.row(i) /= sum;
    }
    return p;
}

// Cyclic Jacobi eigenvalue iteration for a symmetric matrix; descending.
inline std::vector<double> jacobi_eigenvalues(Matrix a, double tol = 1e-14, int max_sweeps = 100) {
    const int n = static_cast<int>(a.rows());
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q)
                off += a(p, q) * a(p, q);
        if (off < tol * tol)
            break;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300)
                    continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> ev(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        ev[static_cast<std::size_t>(i)] = a(i, i);
    std::sort(ev.rbegin(), ev.rend());
    return ev;
}

// Largest k with cumulative share <= phi, from a list of eigenvalues.
inline int cumulative_ratio_count(const std::vector<double>& desc, double phi, int n_prev) {
    double total = 0.0;
    for (double v : desc)
        total += v;
    if (!(total > 0.0))
        return n_prev;
    int count = 0;
    double acc = 0.0;
    for (std::size_t k = 0; k < desc.size(); ++k) {
        acc += desc[k];
        const double r = k + 1 == desc.size() ? 1.0 : acc / total;
        if (r <= phi + 1e-12)
            count = static_cast<int>(k + 1);
    }
    return std::clamp(count, 1, n_prev);
}

// Group-structure comparison: labels a and b describe the same set partition.
inline bool same_sets(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size())
        return false;
    std::map<int, int> ab, ba;
    for (std::size_t i = 0; i < a.size(); ++i) {
        auto [it1, new1] = ab.emplace(a[i], b[i]);
        auto [it2, new2] = ba.emplace(b[i], a[i]);
        if (it1->second != b[i] || it2->second != a[i])
            return false;
    }
    return true;
}

inline std::vector<int> canonical(const std::vector<int>& raw) {
    std::map<int, int> ids;
    std::vector<int> out;
    for (int r : raw)
        out.push_back(ids.emplace(r, static_cast<int>(ids.size())).first->second);
    return out;
}

// O(N^3)-per-merge AHC: every step recomputes every cluster-pair affinity
// from scratch. Clusters are vectors of sorted members; ties go to the
// lexicographically smallest (min member, min member) pair.
enum class Link { Single, Complete, Average };

inline std::vector<int> naive_ahc(const Matrix& s, Link link, int target, double threshold,
                                  bool use_threshold) {
    const int n = static_cast<int>(s.rows());
    std::vector<std::vector<int>> clusters;
    for (int i = 0; i < n; ++i)
        clusters.push_back({i});
    const auto affinity = [&](const std::vector<int>& a, const std::vector<int>& b) {
        double hi = -std::numeric_limits<double>::infinity();
        double lo = std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (int i : a)
            for (int j : b) {
                hi = std::max(hi, s(i, j));
                lo = std::min(lo, s(i, j));
                sum += s(i, j);
            }
        switch (link) {
        case Link::Single: return hi;
        case Link::Complete: return lo;
        case Link::Average: return sum / double(a.size() * b.size());
        }
        return 0.0;
    };
    while (clusters.size() > 1) {
        if (!use_threshold && static_cast<int>(clusters.size()) <= target)
            break;
        std::sort(clusters.begin(), clusters.end());
        double best = -std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 0;
        for (std::size_t a = 0; a < clusters.size(); ++a)
            for (std::size_t b = a + 1; b < clusters.size(); ++b) {
                const double v = affinity(clusters[a], clusters[b]);
                if (v > best) {
                    best = v;
                    ba = a;
                    bb = b;
                }
            }
        if (use_threshold && best < threshold)
            break;
        clusters[ba].insert(clusters[ba].end(), clusters[bb].begin(), clusters[bb].end());
        std::sort(clusters[ba].begin(), clusters[ba].end());
        clusters.erase(clusters.begin() + static_cast<long>(bb));
    }
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (std::size_t c = 0; c < clusters.size(); ++c)
        for (int i : clusters[c])
            labels[static_cast<std::size_t>(i)] = static_cast<int>(c);
    return canonical(labels);
}

// Sum over all walks of length 0..L that start and end in the selected set,
// enumerated explicitly, weighted by sigma^len * product of P entries, and
// normalised by the squared selection size.
inline double enumerate_walks(const Matrix& p, double sigma, int max_len, const std::vector<bool>& sel) {
    const int n = static_cast<int>(p.rows());
    double total = 0.0;
    double count = 0.0;
    for (int i = 0; i < n; ++i)
        count += sel[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    // depth-first over walks, carrying the walk weight
    std::vector<std::pair<int, double>> stack;
    std::vector<int> depth;
    for (int start = 0; start < n; ++start) {
        if (!sel[static_cast<std::size_t>(start)])
            continue;
        stack.assign(1, {start, 1.0});
        depth.assign(1, 0);
        while (!stack.empty()) {
            const auto [v, w] = stack.back();
            const int d = depth.back();
            stack.pop_back();
            depth.pop_back();
            if (sel[static_cast<std::size_t>(v)])
                total += w;
            if (d == max_len)
                continue;
            for (int u = 0; u < n; ++u)
                if (p(v, u) != 0.0) {
                    stack.emplace_back(u, w * sigma * p(v, u));
                    depth.push_back(d + 1);
                }
        }
    }
    return total / (count * count);
}

// Nearest class mean (given the true means) for every row.
inline std::vector<int> nearest_mean(const Matrix& x, const Matrix& means) {
    std::vector<int> out(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        Eigen::Index best = 0;
        (means.rowwise() - x.row(r)).rowwise().squaredNorm().minCoeff(&best);
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

// Connected components of an undirected edge list over n vertices, by
// repeated flood fill.
inline std::vector<int> components(int n, const std::vector<std::pair<int, int>>& edges) {
    std::vector<std::set<int>> adj(static_cast<std::size_t>(n));
    for (auto [a, b] : edges) {
        adj[static_cast<std::size_t>(a)].insert(b);
        adj[static_cast<std::size_t>(b)].insert(a);
    }
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    int next = 0;
    for (int s = 0; s < n; ++s) {
        if (label[static_cast<std::size_t>(s)] >= 0)
            continue;
        std::vector<int> frontier{s};
        label[static_cast<std::size_t>(s)] = next;
        while (!frontier.empty()) {
            const int v = frontier.back();
            frontier.pop_back();
            for (int u : adj[static_cast<std::size_t>(v)])
                if (label[static_cast<std::size_t>(u)] < 0) {
                    label[static_cast<std::size_t>(u)] = next;
                    frontier.push_back(u);
                }
        }
        ++next;
    }
    return label;
}

} // namespace oracle
