#pragma once

// Agglomerative hierarchical clustering over a similarity matrix.

#include <algorithm>
#include <limits>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "ssc/error.hpp"
#include "ssc/partition.hpp"
#include "ssc/similarity.hpp"

namespace ssc {

enum class Linkage { Single, Complete, Average };

inline std::string to_string(Linkage l) {
    switch (l) {
    case Linkage::Single: return "single";
    case Linkage::Complete: return "complete";
    case Linkage::Average: return "average";
    }
    return "?";
}

inline Linkage parse_linkage(const std::string& name) {
    if (name == "single") return Linkage::Single;
    if (name == "complete") return Linkage::Complete;
    if (name == "average") return Linkage::Average;
    throw ConfigError("unknown linkage '" + name + "'");
}

inline double linkage_affinity(const SimilarityMatrix& s, std::span<const int> a,
                               std::span<const int> b, Linkage linkage) {
    if (a.empty() || b.empty())
        throw Error("linkage_affinity: empty cluster");
    for (int i : a)
        if (std::find(b.begin(), b.end(), i) != b.end())
            throw Error("linkage_affinity: clusters overlap at " + std::to_string(i));
    double best_hi = -std::numeric_limits<double>::infinity();
    double best_lo = std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (int i : a)
        for (int j : b) {
            const double v = s(i, j);
            best_hi = std::max(best_hi, v);
            best_lo = std::min(best_lo, v);
            sum += v;
        }
    switch (linkage) {
    case Linkage::Single: return best_hi;
    case Linkage::Complete: return best_lo;
    case Linkage::Average: return sum / static_cast<double>(a.size() * b.size());
    }
    return 0.0;
}

struct StopAtThreshold {
    double threshold = 0.0;
};
struct StopAtCount {
    int clusters = 1;
};
using AhcStop = std::variant<StopAtThreshold, StopAtCount>;

// Merges the most affine pair until the stop rule fires. Clusters are keyed by
// their smallest member, and ties go to the lexicographically smallest key pair.
inline Partition ahc_cluster(const SimilarityMatrix& s, Linkage linkage, AhcStop stop) {
    const Eigen::Index n = s.size();
    if (s.scores.cols() != n)
        throw ConfigError("ahc_cluster needs a square similarity matrix");
    if (const auto* c = std::get_if<StopAtCount>(&stop); c && (c->clusters < 1 || c->clusters > n))
        throw ConfigError("target cluster count " + std::to_string(c->clusters) +
                          " outside [1, " + std::to_string(n) + "]");

    // Slot i holds the cluster whose smallest member is i. `pair` keeps the
    // max/min score for single/complete and the score sum for average.
    Matrix pair = s.scores;
    std::vector<int> sizes(static_cast<std::size_t>(n), 1);
    std::vector<int> owner(static_cast<std::size_t>(n));
    std::vector<int> live(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i)
        owner[i] = live[i] = static_cast<int>(i);

    const auto affinity = [&](int a, int b) {
        return linkage == Linkage::Average ? pair(a, b) / (double(sizes[a]) * double(sizes[b]))
                                           : pair(a, b);
    };

    while (live.size() > 1) {
        if (const auto* c = std::get_if<StopAtCount>(&stop);
            c && static_cast<int>(live.size()) <= c->clusters)
            break;
        double best = -std::numeric_limits<double>::infinity();
        int ba = -1, bb = -1;
        for (std::size_t x = 0; x < live.size(); ++x)
            for (std::size_t y = x + 1; y < live.size(); ++y) {
                const double v = affinity(live[x], live[y]);
                if (v > best) {
                    best = v;
                    ba = live[x];
                    bb = live[y];
                }
            }
        if (const auto* t = std::get_if<StopAtThreshold>(&stop); t && best < t->threshold)
            break;

        // live is sorted, so ba < bb and ba stays the key of the union.
        for (int c : live) {
            if (c == ba || c == bb)
                continue;
            double merged = 0.0;
            switch (linkage) {
            case Linkage::Single: merged = std::max(pair(ba, c), pair(bb, c)); break;
            case Linkage::Complete: merged = std::min(pair(ba, c), pair(bb, c)); break;
            case Linkage::Average: merged = pair(ba, c) + pair(bb, c); break;
            }
            pair(ba, c) = pair(c, ba) = merged;
        }
        sizes[ba] += sizes[bb];
        for (auto& o : owner)
            if (o == bb)
                o = ba;
        live.erase(std::find(live.begin(), live.end(), bb));
    }
    return Partition::from_labels(owner);
}

} // namespace ssc
