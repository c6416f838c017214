#pragma once

// Path integral clustering: a K-nearest-neighbour digraph over the
// embeddings, cluster path integrals from (I - sigma*P)^-1, and greedy
// merging by incremental path integral.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssc/error.hpp"
#include "ssc/partition.hpp"
#include "ssc/similarity.hpp"

namespace ssc {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct Digraph {
    SparseRowMatrix weights;    // W, at most k entries per row, zero diagonal
    SparseRowMatrix transition; // P, rows of W normalised to sum 1
    int k = 0;                  // after clamping to N-1
    double sigma = 0.1;

    Eigen::Index size() const { return weights.rows(); }
};

inline void check_sigma(double sigma) {
    if (!(sigma > 0.0 && sigma < 1.0))
        throw ConfigError("path integral sigma must lie in (0,1), got " + std::to_string(sigma));
}

// Neighbours of i are the k highest-scoring j != i, lower index first on ties.
inline Digraph build_digraph(const SimilarityMatrix& s, int k, double sigma) {
    check_sigma(sigma);
    const Eigen::Index n = s.size();
    if (n < 2 || s.scores.cols() != n)
        throw ConfigError("build_digraph needs a square matrix with at least 2 rows");
    if (k < 1)
        throw ConfigError("neighbour count K must be >= 1");
    if (!s.scores.allFinite())
        throw NumericError("similarity matrix has non-finite entries");

    Digraph g;
    g.k = static_cast<int>(std::min<Eigen::Index>(k, n - 1));
    g.sigma = sigma;

    std::vector<Eigen::Triplet<double>> w_entries, p_entries;
    w_entries.reserve(static_cast<std::size_t>(n * g.k));
    p_entries.reserve(static_cast<std::size_t>(n * g.k));
    std::vector<int> order;
    for (Eigen::Index i = 0; i < n; ++i) {
        order.clear();
        for (Eigen::Index j = 0; j < n; ++j)
            if (j != i)
                order.push_back(static_cast<int>(j));
        const auto closer = [&](int a, int b) {
            const double sa = s(i, a), sb = s(i, b);
            return sa != sb ? sa > sb : a < b;
        };
        std::partial_sort(order.begin(), order.begin() + g.k, order.end(), closer);
        order.resize(static_cast<std::size_t>(g.k));
        std::sort(order.begin(), order.end());

        double row_sum = 0.0;
        std::vector<double> w(order.size());
        for (std::size_t t = 0; t < order.size(); ++t) {
            w[t] = 1.0 / (1.0 + std::exp(-s(i, order[t])));
            row_sum += w[t];
        }
        for (std::size_t t = 0; t < order.size(); ++t) {
            w_entries.emplace_back(static_cast<int>(i), order[t], w[t]);
            if (row_sum > 0.0)
                p_entries.emplace_back(static_cast<int>(i), order[t], w[t] / row_sum);
        }
    }
    g.weights.resize(n, n);
    g.weights.setFromTriplets(w_entries.begin(), w_entries.end());
    g.transition.resize(n, n);
    g.transition.setFromTriplets(p_entries.begin(), p_entries.end());
    return g;
}

// Links every vertex to its strongest out-neighbour and returns the connected
// components of those links. Vertices without out-edges stay singletons.
inline Partition init_clusters(const Digraph& g) {
    const auto n = static_cast<std::size_t>(g.size());
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    const auto find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        int best = -1;
        double best_w = 0.0;
        for (SparseRowMatrix::InnerIterator it(g.weights, i); it; ++it)
            if (best < 0 || it.value() > best_w) { // ascending column order keeps lower index
                best = static_cast<int>(it.col());
                best_w = it.value();
            }
        if (best < 0)
            continue;
        const int a = find(static_cast<int>(i)), b = find(best);
        if (a != b)
            parent[std::max(a, b)] = std::min(a, b);
    }
    std::vector<int> roots(n);
    for (std::size_t i = 0; i < n; ++i)
        roots[i] = find(static_cast<int>(i));
    return Partition::from_labels(roots);
}

// Rows/columns of P restricted to `nodes`, in the given order.
inline SparseRowMatrix sub_transition(const Digraph& g, std::span<const int> nodes) {
    std::vector<int> local(static_cast<std::size_t>(g.size()), -1);
    for (std::size_t t = 0; t < nodes.size(); ++t)
        local[static_cast<std::size_t>(nodes[t])] = static_cast<int>(t);
    std::vector<Eigen::Triplet<double>> entries;
    for (std::size_t t = 0; t < nodes.size(); ++t)
        for (SparseRowMatrix::InnerIterator it(g.transition, nodes[t]); it; ++it) {
            const int c = local[static_cast<std::size_t>(it.col())];
            if (c >= 0)
                entries.emplace_back(static_cast<int>(t), c, it.value());
        }
    const auto m = static_cast<Eigen::Index>(nodes.size());
    SparseRowMatrix sub(m, m);
    sub.setFromTriplets(entries.begin(), entries.end());
    return sub;
}

namespace detail {

constexpr Eigen::Index kDenseSolveLimit = 200;
constexpr double kAffinityFloor = 1e-14;

// Column c of the result is sel_c' (I - sigma*P)^-1 sel_c for selector c.
inline Vector selector_masses(const SparseRowMatrix& p, double sigma, const Matrix& selectors) {
    const Eigen::Index n = p.rows();
    SparseRowMatrix a(n, n);
    a.setIdentity();
    a -= sigma * p;

    // Strict diagonal dominance holds for sigma < 1 and sub-stochastic P; a
    // violation means P was not built from a valid digraph.
    for (Eigen::Index r = 0; r < n; ++r) {
        double diag = 0.0, off = 0.0;
        for (SparseRowMatrix::InnerIterator it(a, r); it; ++it) {
            if (it.col() == r)
                diag = it.value();
            else
                off += std::abs(it.value());
        }
        if (!(std::abs(diag) > off))
            throw NumericError("I - sigma*P is not strictly diagonally dominant at row " +
                               std::to_string(r));
    }

    Matrix x;
    if (n <= kDenseSolveLimit) {
        x = Eigen::PartialPivLU<Matrix>(Matrix(a)).solve(selectors);
    } else {
        Eigen::SparseMatrix<double> col_major(a);
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.compute(col_major);
        if (lu.info() != Eigen::Success)
            throw NumericError("sparse LU failed on I - sigma*P");
        x = lu.solve(selectors);
    }
    if (!x.allFinite())
        throw NumericError("path integral solve produced non-finite values");
    Vector out(selectors.cols());
    for (Eigen::Index c = 0; c < selectors.cols(); ++c)
        out(c) = selectors.col(c).dot(x.col(c));
    return out;
}

} // namespace detail

// (1/|C|^2) 1'(I - sigma*P_C)^-1 1
inline double path_integral(const SparseRowMatrix& p_sub, double sigma) {
    check_sigma(sigma);
    const Eigen::Index n = p_sub.rows();
    if (n == 0)
        throw Error("path_integral of an empty cluster");
    const double mass = detail::selector_masses(p_sub, sigma, Matrix::Ones(n, 1))(0);
    return mass / (double(n) * double(n));
}

inline double path_integral(const Matrix& p_sub, double sigma) {
    return path_integral(SparseRowMatrix(p_sub.sparseView()), sigma);
}

// (1/|C_a|^2) 1_a'(I - sigma*P_union)^-1 1_a, with `in_a` marking C_a.
inline double conditional_path_integral(const SparseRowMatrix& p_union,
                                        const std::vector<bool>& in_a, double sigma) {
    check_sigma(sigma);
    const Eigen::Index n = p_union.rows();
    if (static_cast<Eigen::Index>(in_a.size()) != n)
        throw Error("selector size does not match sub-matrix");
    Matrix sel = Matrix::Zero(n, 1);
    double count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        if (in_a[static_cast<std::size_t>(i)]) {
            sel(i, 0) = 1.0;
            count += 1.0;
        }
    if (count == 0.0)
        throw Error("conditional_path_integral with an empty conditioning cluster");
    return detail::selector_masses(p_union, sigma, sel)(0) / (count * count);
}

inline double conditional_path_integral(const Matrix& p_union, const std::vector<bool>& in_a,
                                        double sigma) {
    return conditional_path_integral(SparseRowMatrix(p_union.sparseView()), in_a, sigma);
}

// Sum over paths of length <= max_len between selected vertices,
// delta_ij + sum_k sigma^k [P^k]_ij, normalised by the squared selection size.
// Used as an independent check on the closed forms.
inline double truncated_path_integral(const Matrix& p_sub, double sigma, int max_len,
                                      std::optional<std::vector<bool>> selector = std::nullopt) {
    if (max_len < 0)
        throw ConfigError("maximum path length must be >= 0");
    const Eigen::Index n = p_sub.rows();
    Vector sel = Vector::Ones(n);
    if (selector) {
        if (static_cast<Eigen::Index>(selector->size()) != n)
            throw Error("selector size does not match sub-matrix");
        for (Eigen::Index i = 0; i < n; ++i)
            sel(i) = (*selector)[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    }
    const double count = sel.sum();
    if (count == 0.0)
        throw Error("truncated_path_integral with an empty selection");
    double total = count; // delta_ij contributes once per selected vertex
    Vector reach = sel;   // P^k sel
    double weight = 1.0;
    for (int k = 1; k <= max_len; ++k) {
        reach = p_sub * reach;
        weight *= sigma;
        total += weight * sel.dot(reach);
    }
    return total / (count * count);
}

// Clusters, their cached path integrals and the affinities between connected
// cluster pairs. A cluster is keyed by its smallest member.
class PicState {
public:
    PicState(Digraph graph, const Partition& start) : g_(std::move(graph)) {
        const auto n = static_cast<std::size_t>(g_.size());
        if (start.size() != n)
            throw Error("partition size " + std::to_string(start.size()) +
                        " does not match digraph size " + std::to_string(n));
        reverse_ = Eigen::SparseMatrix<double, Eigen::ColMajor>(g_.weights);
        owner_.assign(n, -1);
        members_.assign(n, {});
        cache_.assign(n, 0.0);
        for (auto& group : start.members()) {
            if (group.empty())
                continue;
            const int key = group.front();
            for (int v : group)
                owner_[static_cast<std::size_t>(v)] = key;
            members_[static_cast<std::size_t>(key)] = std::move(group);
            live_.push_back(key);
        }
        std::sort(live_.begin(), live_.end());
        for (int key : live_)
            cache_[static_cast<std::size_t>(key)] = fresh_path_integral(key);
        for (int key : live_)
            for (int other : neighbours(key))
                if (other > key)
                    affinity_[{key, other}] = affinity(key, other);
    }

    const Digraph& digraph() const { return g_; }
    int num_clusters() const { return static_cast<int>(live_.size()); }
    const std::vector<int>& live() const { return live_; }
    bool is_live(int key) const {
        return key >= 0 && static_cast<std::size_t>(key) < members_.size() &&
               !members_[static_cast<std::size_t>(key)].empty();
    }
    const std::vector<int>& members(int key) const { return members_.at(checked(key)); }
    double cached_path_integral(int key) const { return cache_.at(checked(key)); }

    double fresh_path_integral(int key) const {
        return path_integral(sub_transition(g_, members(key)), g_.sigma);
    }

    // Incremental path integral of merging clusters a and b; exactly zero
    // when no edge joins them in either direction.
    double affinity(int a, int b) const {
        checked(a);
        checked(b);
        if (a == b)
            throw Error("affinity of a cluster with itself");
        const auto& ma = members_[static_cast<std::size_t>(a)];
        const auto& mb = members_[static_cast<std::size_t>(b)];
        if (!connected(a, b))
            return 0.0;
        std::vector<int> nodes(ma);
        nodes.insert(nodes.end(), mb.begin(), mb.end());
        const auto p = sub_transition(g_, nodes);
        const auto na = static_cast<Eigen::Index>(ma.size());
        const auto nb = static_cast<Eigen::Index>(mb.size());
        Matrix sel = Matrix::Zero(na + nb, 2);
        sel.col(0).head(na).setOnes();
        sel.col(1).tail(nb).setOnes();
        const Vector mass = detail::selector_masses(p, g_.sigma, sel);
        const double v = (mass(0) / double(na * na) - cache_[static_cast<std::size_t>(a)]) +
                         (mass(1) / double(nb * nb) - cache_[static_cast<std::size_t>(b)]);
        // Pairs joined only by one-way edges have a true affinity of zero;
        // snap the rounding residue so they tie with unlinked pairs.
        return v < detail::kAffinityFloor ? 0.0 : v;
    }

    // Highest-affinity pair; ties resolve to the smallest (a, b) key pair.
    std::pair<int, int> best_pair() const {
        if (live_.size() < 2)
            throw Error("best_pair needs at least two clusters");
        double best = -std::numeric_limits<double>::infinity();
        std::pair<int, int> choice{-1, -1};
        for (const auto& [key, v] : affinity_)
            if (v > best) {
                best = v;
                choice = key;
            }
        // Pairs absent from the table have affinity exactly zero.
        if (best <= 0.0) {
            const auto implicit = first_unlinked_pair();
            if (implicit && (best < 0.0 || choice.first < 0 || *implicit < choice))
                choice = *implicit;
        }
        return choice;
    }

    // Returns the key of the merged cluster.
    int merge(int a, int b) {
        checked(a);
        checked(b);
        if (a == b)
            throw Error("cannot merge a cluster with itself");
        if (a > b)
            std::swap(a, b);
        auto& ma = members_[static_cast<std::size_t>(a)];
        auto& mb = members_[static_cast<std::size_t>(b)];
        for (int v : mb)
            owner_[static_cast<std::size_t>(v)] = a;
        ma.insert(ma.end(), mb.begin(), mb.end());
        std::sort(ma.begin(), ma.end());
        mb.clear();
        live_.erase(std::find(live_.begin(), live_.end(), b));
        for (auto it = affinity_.begin(); it != affinity_.end();) {
            const auto [x, y] = it->first;
            it = (x == a || x == b || y == a || y == b) ? affinity_.erase(it) : std::next(it);
        }
        cache_[static_cast<std::size_t>(a)] = fresh_path_integral(a);
        for (int other : neighbours(a))
            affinity_[std::minmax(a, other)] = affinity(a, other);
        return a;
    }

    Partition partition() const {
        std::vector<int> raw(owner_.begin(), owner_.end());
        return Partition::from_labels(raw);
    }

    // Keys of clusters that share at least one edge with `key`.
    std::vector<int> neighbours(int key) const {
        std::vector<int> out;
        for (int v : members_[checked(key)]) {
            for (SparseRowMatrix::InnerIterator it(g_.weights, v); it; ++it)
                out.push_back(owner_[static_cast<std::size_t>(it.col())]);
            for (decltype(reverse_)::InnerIterator it(reverse_, v); it; ++it)
                out.push_back(owner_[static_cast<std::size_t>(it.row())]);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        out.erase(std::remove(out.begin(), out.end(), key), out.end());
        return out;
    }

private:
    std::size_t checked(int key) const {
        if (!is_live(key))
            throw Error("cluster " + std::to_string(key) + " is not live");
        return static_cast<std::size_t>(key);
    }

    bool connected(int a, int b) const {
        for (int v : members_[static_cast<std::size_t>(a)]) {
            for (SparseRowMatrix::InnerIterator it(g_.weights, v); it; ++it)
                if (owner_[static_cast<std::size_t>(it.col())] == b)
                    return true;
            for (decltype(reverse_)::InnerIterator it(reverse_, v); it; ++it)
                if (owner_[static_cast<std::size_t>(it.row())] == b)
                    return true;
        }
        return false;
    }

    std::optional<std::pair<int, int>> first_unlinked_pair() const {
        for (std::size_t x = 0; x < live_.size(); ++x)
            for (std::size_t y = x + 1; y < live_.size(); ++y)
                if (!affinity_.contains({live_[x], live_[y]}))
                    return std::pair{live_[x], live_[y]};
        return std::nullopt;
    }

    Digraph g_;
    Eigen::SparseMatrix<double, Eigen::ColMajor> reverse_; // column access to W
    std::vector<int> owner_;
    std::vector<std::vector<int>> members_;
    std::vector<double> cache_;
    std::vector<int> live_; // sorted keys
    std::map<std::pair<int, int>, double> affinity_;
};

// Merges greedily from the nearest-neighbour initialisation down to `target`
// clusters. Starts from singletons when the initialisation already has fewer
// than `target` clusters.
inline Partition pic_cluster(const Digraph& g, int target) {
    if (target < 1 || target > g.size())
        throw ConfigError("PIC target " + std::to_string(target) + " outside [1, " +
                          std::to_string(g.size()) + "]");
    Partition start = init_clusters(g);
    if (start.num_clusters < target)
        start = Partition::singletons(static_cast<std::size_t>(g.size()));
    PicState state(g, start);
    while (state.num_clusters() > target) {
        const auto [a, b] = state.best_pair();
        state.merge(a, b);
    }
    return state.partition();
}

inline Partition pic_cluster(const SimilarityMatrix& s, int k, double sigma, int target) {
    return pic_cluster(build_digraph(s, k, sigma), target);
}

} // namespace ssc
