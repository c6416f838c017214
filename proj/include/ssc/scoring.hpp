#pragma once

// Diarization error rate, window/timeline conversion and the F-ratio
// separability diagnostic.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ssc/data_model.hpp"
#include "ssc/error.hpp"
#include "ssc/partition.hpp"
#include "ssc/similarity.hpp"

namespace ssc {

inline std::string hypothesis_speaker_name(int k) { return "spk" + std::to_string(k); }

inline Annotation partition_to_annotation(const Recording& rec, const Partition& p) {
    return labels_to_annotation(rec.windows, p.labels, hypothesis_speaker_name);
}

// Speaker index (order of first appearance in the annotation) of the turn
// covering each window midpoint, or -1 where no turn covers it.
inline std::vector<int> annotation_to_window_labels(const std::vector<SegmentWindow>& windows,
                                                    const Annotation& ann) {
    const auto names = ann.speakers();
    std::vector<int> labels(windows.size(), -1);
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const double mid = windows[w].midpoint();
        for (const auto& t : ann.turns)
            if (t.onset <= mid && mid < t.offset()) {
                labels[w] = static_cast<int>(std::find(names.begin(), names.end(), t.speaker) -
                                             names.begin());
                break;
            }
    }
    return labels;
}

// Minimum-cost perfect assignment on a square matrix (Kuhn-Munkres with
// potentials). Returns the column assigned to each row.
inline std::vector<int> solve_assignment(const Matrix& cost) {
    const auto n = static_cast<int>(cost.rows());
    if (cost.cols() != n)
        throw Error("solve_assignment needs a square matrix");
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; column 0 is a sentinel.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> match(n + 1, 0), way(n + 1, 0);
    for (int row = 1; row <= n; ++row) {
        match[0] = row;
        int col0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<bool> used(n + 1, false);
        do {
            used[col0] = true;
            const int r0 = match[col0];
            double delta = inf;
            int col1 = 0;
            for (int c = 1; c <= n; ++c) {
                if (used[c])
                    continue;
                const double cur = cost(r0 - 1, c - 1) - u[r0] - v[c];
                if (cur < minv[c]) {
                    minv[c] = cur;
                    way[c] = col0;
                }
                if (minv[c] < delta) {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for (int c = 0; c <= n; ++c) {
                if (used[c]) {
                    u[match[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
        } while (match[col0] != 0);
        do {
            const int col1 = way[col0];
            match[col0] = match[col1];
            col0 = col1;
        } while (col0 != 0);
    }
    std::vector<int> assignment(static_cast<std::size_t>(n), -1);
    for (int c = 1; c <= n; ++c)
        if (match[c] > 0)
            assignment[static_cast<std::size_t>(match[c] - 1)] = c - 1;
    return assignment;
}

struct DerBreakdown {
    double missed = 0.0;
    double false_alarm = 0.0;
    double confusion = 0.0;
    double scored = 0.0;
    double der = 0.0;
    // reference speaker -> hypothesis speaker (unmatched speakers omitted)
    std::map<std::string, std::string> mapping;
};

struct DerOptions {
    double collar = 0.25;
    bool ignore_overlap = true;
};

// Standard DER: the timeline is cut at every turn and collar edge, regions
// within `collar` of a reference boundary (and, optionally, regions with two
// or more reference speakers) are dropped, and reference speakers are mapped
// one-to-one onto hypothesis speakers to maximise matched scored time.
inline DerBreakdown der(const Annotation& reference, const Annotation& hypothesis,
                        DerOptions opts = {}) {
    if (reference.empty())
        throw Error("nothing to score: empty reference");
    if (opts.collar < 0.0)
        throw ConfigError("collar must be non-negative");
    reference.validate();
    hypothesis.validate();

    const auto ref_names = reference.speakers();
    const auto hyp_names = hypothesis.speakers();
    const auto index_of = [](const std::vector<std::string>& names, const std::string& s) {
        return static_cast<int>(std::find(names.begin(), names.end(), s) - names.begin());
    };

    std::vector<double> ref_bounds;
    std::vector<double> cuts;
    for (const auto& t : reference.turns) {
        ref_bounds.push_back(t.onset);
        ref_bounds.push_back(t.offset());
    }
    for (double b : ref_bounds) {
        cuts.push_back(b);
        if (opts.collar > 0.0) {
            cuts.push_back(b - opts.collar);
            cuts.push_back(b + opts.collar);
        }
    }
    for (const auto& t : hypothesis.turns) {
        cuts.push_back(t.onset);
        cuts.push_back(t.offset());
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    struct Piece {
        double duration;
        std::vector<int> ref, hyp;
    };
    std::vector<Piece> pieces;
    Matrix overlap = Matrix::Zero(static_cast<Eigen::Index>(ref_names.size()),
                                  static_cast<Eigen::Index>(hyp_names.size()));
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
        const double t0 = cuts[k], t1 = cuts[k + 1];
        const double mid = 0.5 * (t0 + t1);
        if (std::any_of(ref_bounds.begin(), ref_bounds.end(),
                        [&](double b) { return std::abs(mid - b) < opts.collar; }))
            continue;
        Piece piece{t1 - t0, {}, {}};
        for (const auto& t : reference.turns)
            if (t.onset <= mid && mid < t.offset())
                piece.ref.push_back(index_of(ref_names, t.speaker));
        if (opts.ignore_overlap && piece.ref.size() >= 2)
            continue;
        for (const auto& t : hypothesis.turns)
            if (t.onset <= mid && mid < t.offset())
                piece.hyp.push_back(index_of(hyp_names, t.speaker));
        if (piece.ref.empty() && piece.hyp.empty())
            continue;
        for (int r : piece.ref)
            for (int h : piece.hyp)
                overlap(r, h) += piece.duration;
        pieces.push_back(std::move(piece));
    }

    const auto n = std::max<Eigen::Index>(overlap.rows(), overlap.cols());
    Matrix cost = Matrix::Zero(n, n);
    cost.topLeftCorner(overlap.rows(), overlap.cols()) = -overlap;
    const auto assignment = solve_assignment(cost);
    std::vector<int> ref_to_hyp(ref_names.size(), -1);
    DerBreakdown out;
    for (std::size_t r = 0; r < ref_names.size(); ++r) {
        const int h = assignment[r];
        if (h >= 0 && h < static_cast<int>(hyp_names.size())) {
            ref_to_hyp[r] = h;
            out.mapping[ref_names[r]] = hyp_names[static_cast<std::size_t>(h)];
        }
    }

    for (const auto& p : pieces) {
        const auto n_ref = static_cast<double>(p.ref.size());
        const auto n_hyp = static_cast<double>(p.hyp.size());
        double correct = 0.0;
        for (int r : p.ref)
            if (const int h = ref_to_hyp[static_cast<std::size_t>(r)];
                h >= 0 && std::find(p.hyp.begin(), p.hyp.end(), h) != p.hyp.end())
                correct += 1.0;
        out.scored += p.duration * n_ref;
        out.missed += p.duration * std::max(0.0, n_ref - n_hyp);
        out.false_alarm += p.duration * std::max(0.0, n_hyp - n_ref);
        out.confusion += p.duration * (std::min(n_ref, n_hyp) - correct);
    }
    if (!(out.scored > 0.0))
        throw Error("nothing to score: no reference speech outside collars");
    out.der = (out.missed + out.false_alarm + out.confusion) / out.scored;
    return out;
}

inline std::string format_breakdown(const DerBreakdown& b) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "missed: %.4f\nfalse_alarm: %.4f\nconfusion: %.4f\nscored: %.4f\nder: %.4f\n",
                  b.missed, b.false_alarm, b.confusion, b.scored, b.der);
    return buf;
}

// Ratio of between-group to within-group variance of the pairwise scores,
// where the groups are speaker pairs {a, b} (a == b for same-speaker pairs)
// and both variances are population variances over all i < j scores.
// Returns +infinity when the within-group variance vanishes but the groups
// differ.
inline double f_ratio(const SimilarityMatrix& s, const std::vector<int>& labels) {
    const auto n = static_cast<Eigen::Index>(labels.size());
    if (s.size() != n)
        throw Error("f_ratio: label count does not match similarity matrix");
    const Partition p = Partition::from_labels(labels);
    if (p.num_clusters < 2)
        throw Error("f_ratio needs at least two speakers");

    std::map<std::pair<int, int>, std::pair<double, double>> groups; // sum, count
    double total_sum = 0.0, total_count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const auto key = std::minmax(p.labels[i], p.labels[j]);
            auto& g = groups[{key.first, key.second}];
            g.first += s(i, j);
            g.second += 1.0;
            total_sum += s(i, j);
            total_count += 1.0;
        }
    const double grand = total_sum / total_count;
    std::map<std::pair<int, int>, double> means;
    double between = 0.0;
    for (const auto& [key, g] : groups) {
        const double m = g.first / g.second;
        means[key] = m;
        between += g.second * (m - grand) * (m - grand);
    }
    double within = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const auto key = std::minmax(p.labels[i], p.labels[j]);
            const double d = s(i, j) - means[{key.first, key.second}];
            within += d * d;
        }
    between /= total_count;
    within /= total_count;
    if (within <= 0.0)
        return between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return between / within;
}

} // namespace ssc
