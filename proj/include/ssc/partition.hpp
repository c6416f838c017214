#pragma once

#include <algorithm>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssc/error.hpp"

namespace ssc {

// Cluster labels per segment, 0-based and contiguous.
struct Partition {
    std::vector<int> labels;
    int num_clusters = 0;

    std::size_t size() const { return labels.size(); }

    // Renumbers arbitrary integer labels in order of first appearance.
    static Partition from_labels(const std::vector<int>& raw) {
        Partition p;
        p.labels.resize(raw.size());
        std::unordered_map<int, int> remap;
        for (std::size_t i = 0; i < raw.size(); ++i) {
            auto [it, inserted] = remap.try_emplace(raw[i], static_cast<int>(remap.size()));
            p.labels[i] = it->second;
        }
        p.num_clusters = static_cast<int>(remap.size());
        return p;
    }

    static Partition singletons(std::size_t n) {
        Partition p;
        p.labels.resize(n);
        for (std::size_t i = 0; i < n; ++i)
            p.labels[i] = static_cast<int>(i);
        p.num_clusters = static_cast<int>(n);
        return p;
    }

    // Member lists indexed by label, each sorted ascending.
    std::vector<std::vector<int>> members() const {
        std::vector<std::vector<int>> out(static_cast<std::size_t>(num_clusters));
        for (std::size_t i = 0; i < labels.size(); ++i)
            out[static_cast<std::size_t>(labels[i])].push_back(static_cast<int>(i));
        return out;
    }

    std::vector<int> cluster_sizes() const {
        std::vector<int> out(static_cast<std::size_t>(num_clusters), 0);
        for (int l : labels)
            ++out[static_cast<std::size_t>(l)];
        return out;
    }

    void validate() const {
        std::vector<bool> seen(static_cast<std::size_t>(std::max(num_clusters, 0)), false);
        for (int l : labels) {
            if (l < 0 || l >= num_clusters)
                throw Error("partition label " + std::to_string(l) + " out of range");
            seen[static_cast<std::size_t>(l)] = true;
        }
        if (std::find(seen.begin(), seen.end(), false) != seen.end())
            throw Error("partition has an empty cluster");
    }

    friend bool operator==(const Partition&, const Partition&) = default;
};

// Same grouping up to label renaming.
inline bool same_grouping(const std::vector<int>& a, const std::vector<int>& b) {
    return a.size() == b.size() && Partition::from_labels(a) == Partition::from_labels(b);
}

} // namespace ssc
