#pragma once

// Self-supervised clustering: alternate triplet training of the
// representation network with graph-structural clustering of its outputs,
// estimating the number of clusters from the cluster affinity spectrum when
// the speaker count is unknown.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssc/ahc.hpp"
#include "ssc/data_model.hpp"
#include "ssc/error.hpp"
#include "ssc/partition.hpp"
#include "ssc/pic.hpp"
#include "ssc/repnet.hpp"
#include "ssc/similarity.hpp"

namespace ssc {

enum class Clusterer { Pic, Ahc };

// How the first pseudo-labels are produced from the initial embeddings.
enum class InitRoute {
    PicPhi,      // PIC down to N* (known) or to the spectral estimate (unknown)
    AhcThreshold // average-linkage AHC stopped at a similarity threshold
};

struct SscConfig {
    int knn = 30;
    double sigma = 0.1;
    TrainConfig train;
    bool temporal = false;
    double beta = 0.95;
    int n_b = 2;
    double phi = 0.7;
    std::vector<double> phi_schedule; // per-iteration override, index q-1
    std::optional<int> num_speakers;  // N*; unknown when empty
    int q_max = 10;
    Clusterer clusterer = Clusterer::Pic;
    InitRoute init = InitRoute::PicPhi;
    Linkage linkage = Linkage::Average;
    double ahc_threshold = 0.0;
    int pca_dim = 10; // clamped to the input width
    double eig_floor = 1e-8;
    // Whitening estimated elsewhere (e.g. on held-out recordings); fit on the
    // recording itself when empty.
    std::optional<WhiteningTransform> whitening;
    std::uint64_t seed = 0;

    double phi_at(int q) const {
        return q >= 1 && static_cast<std::size_t>(q) <= phi_schedule.size()
                   ? phi_schedule[static_cast<std::size_t>(q - 1)]
                   : phi;
    }

    void validate() const {
        if (knn < 1)
            throw ConfigError("K must be >= 1");
        check_sigma(sigma);
        train.validate();
        if (temporal && !(beta > 0.0 && beta < 1.0))
            throw ConfigError("beta must lie in (0,1)");
        if (n_b < 0)
            throw ConfigError("n_b must be >= 0");
        if (!(phi > 0.0 && phi <= 1.0))
            throw ConfigError("phi must lie in (0,1], got " + std::to_string(phi));
        for (double p : phi_schedule)
            if (!(p > 0.0 && p <= 1.0))
                throw ConfigError("phi schedule entries must lie in (0,1]");
        if (num_speakers && *num_speakers < 1)
            throw ConfigError("number of speakers must be >= 1");
        if (q_max < 1)
            throw ConfigError("Q-max must be >= 1");
        if (pca_dim < 1)
            throw ConfigError("PCA dimension must be >= 1");
    }
};

struct SscIteration {
    std::string stage; // "init", "iteration" or "termination"
    int q = 0;
    int n_clusters = 0;   // N^q after the step
    int n_estimated = 0;  // spectral / threshold estimate before the N* floor
    int merges = 0;
    std::vector<double> objective;
    std::string train_stop;
    std::vector<int> labels;
};

struct SscTrace {
    std::vector<SscIteration> records;
    // The termination round continues training from the last iteration's
    // parameters rather than re-initialising.
    std::string termination_model = "continued";
};

struct SscResult {
    Partition partition;
    SscTrace trace;
    RepNet net;
    Matrix embeddings; // final network outputs
    int num_speakers = 0;
};

// A_ij is the incremental path integral of clusters i and j (label order);
// the diagonal holds the largest off-diagonal value.
inline Matrix cluster_affinity_matrix(const PicState& state) {
    const auto& keys = state.live();
    const auto n = static_cast<Eigen::Index>(keys.size());
    Matrix a = Matrix::Zero(n, n);
    if (n == 1)
        return a;
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = state.affinity(keys[static_cast<std::size_t>(i)],
                                            keys[static_cast<std::size_t>(j)]);
            a(i, j) = a(j, i) = v;
            top = std::max(top, v);
        }
    a.diagonal().setConstant(top);
    return a;
}

inline Matrix cluster_affinity_matrix(const Digraph& g, const Partition& p) {
    if (static_cast<Eigen::Index>(p.size()) != g.size())
        throw Error("partition does not match digraph size");
    return cluster_affinity_matrix(PicState(g, p));
}

// Number of leading eigenvalues whose cumulative share of the total stays
// within phi (at least 1, at most n_prev). A matrix with no positive energy
// gives no evidence for merging and returns n_prev.
inline int estimate_num_clusters(const Matrix& a, double phi, int n_prev) {
    if (a.rows() != a.cols() || a.rows() != n_prev)
        throw Error("affinity matrix must be square of size N_prev = " + std::to_string(n_prev));
    if (!(phi > 0.0 && phi <= 1.0))
        throw ConfigError("phi must lie in (0,1]");
    if (!a.allFinite())
        throw NumericError("affinity matrix has non-finite entries");
    if (n_prev == 1)
        return 1;
    const Matrix sym = 0.5 * (a + a.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success)
        throw NumericError("affinity eigendecomposition failed");
    const Vector values = eig.eigenvalues().reverse();
    if (!values.allFinite())
        throw NumericError("non-finite affinity eigenvalues");
    const double total = values.sum();
    if (!(total > 0.0))
        return n_prev;
    constexpr double tol = 1e-12;
    int count = 0;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < values.size(); ++k) {
        acc += values(k);
        const double ratio = k + 1 == values.size() ? 1.0 : acc / total;
        if (ratio <= phi + tol)
            count = static_cast<int>(k + 1);
    }
    return std::clamp(count, 1, n_prev);
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

// Whitening followed by unit-length normalisation and PCA, packed as the
// network's initial parameters.
inline RepNet initial_network(const Matrix& x, int pca_dim, double eig_floor = 1e-8,
                              const WhiteningTransform* external = nullptr) {
    const WhiteningTransform w = external ? *external : fit_whitening(x, eig_floor);
    const Matrix normalized = unit_normalize(w.apply(x));
    const int d = std::min<int>(pca_dim, static_cast<int>(x.cols()));
    const PcaTransform pca = fit_pca(normalized, PcaTarget::dimension(d));
    return init_repnet(w, pca);
}

inline SimilarityMatrix ssc_similarity(const Matrix& y, const SscConfig& cfg) {
    SimilarityMatrix s = cosine_matrix(y);
    return cfg.temporal ? temporal_weight(s, cfg.beta, cfg.n_b) : s;
}

inline Partition cluster_to(const SimilarityMatrix& s, const SscConfig& cfg, int target) {
    if (cfg.clusterer == Clusterer::Ahc)
        return ahc_cluster(s, cfg.linkage, StopAtCount{target});
    return pic_cluster(build_digraph(s, cfg.knn, cfg.sigma), target);
}

// Cluster count suggested by the current embeddings for partition `z`.
inline int estimate_for(const SimilarityMatrix& s, const Partition& z, const SscConfig& cfg,
                        double phi) {
    if (cfg.clusterer == Clusterer::Ahc) {
        const int n = ahc_cluster(s, cfg.linkage, StopAtThreshold{cfg.ahc_threshold}).num_clusters;
        return std::min(n, z.num_clusters);
    }
    const Digraph g = build_digraph(s, cfg.knn, cfg.sigma);
    return estimate_num_clusters(cluster_affinity_matrix(g, z), phi, z.num_clusters);
}

inline Partition initial_partition(const SimilarityMatrix& s, const SscConfig& cfg, int n_star,
                                   bool known, int& estimate) {
    if (cfg.init == InitRoute::AhcThreshold) {
        Partition z = ahc_cluster(s, Linkage::Average, StopAtThreshold{cfg.ahc_threshold});
        if (z.num_clusters < n_star)
            z = ahc_cluster(s, Linkage::Average, StopAtCount{n_star});
        estimate = z.num_clusters;
        return z;
    }
    if (known) {
        estimate = n_star;
        return cluster_to(s, cfg, n_star);
    }
    const Digraph g = build_digraph(s, cfg.knn, cfg.sigma);
    const Partition nn = init_clusters(g);
    estimate = estimate_num_clusters(cluster_affinity_matrix(g, nn), cfg.phi_at(0), nn.num_clusters);
    return cluster_to(s, cfg, std::max(estimate, n_star));
}

inline SscResult run_ssc(const Recording& rec, const SscConfig& cfg) {
    rec.validate();
    cfg.validate();
    const Matrix& x = rec.embeddings;
    const int n_rows = static_cast<int>(rec.size());
    const bool known = cfg.num_speakers.has_value();
    int n_star = known ? *cfg.num_speakers : 1;
    if (n_star > n_rows)
        throw ConfigError("N* = " + std::to_string(n_star) + " exceeds the " +
                          std::to_string(n_rows) + " segments of recording '" + rec.id + "'");

    SscResult result;
    RepNet net = initial_network(x, cfg.pca_dim, cfg.eig_floor,
                                 cfg.whitening ? &*cfg.whitening : nullptr);
    Matrix y = forward(net, x);
    SimilarityMatrix s = ssc_similarity(y, cfg);

    int estimate = 0;
    Partition z = initial_partition(s, cfg, n_star, known, estimate);
    result.trace.records.push_back(
        {"init", 0, z.num_clusters, estimate, n_rows - z.num_clusters, {}, "", z.labels});

    TrainConfig tc = cfg.train;
    const auto train_round = [&](int q, SscIteration& rec_out) {
        const auto sizes = z.cluster_sizes();
        if (std::none_of(sizes.begin(), sizes.end(), [](int c) { return c >= 2; })) {
            rec_out.train_stop = "no-positive-pairs";
            return;
        }
        tc.seed = detail::mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(q) + 1);
        const auto triplets =
            sample_triplets(z, tc.sampling, &s, detail::mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(q)));
        TrainReport report;
        net = train(net, x, triplets, tc, &report);
        rec_out.objective = report.objective;
        rec_out.train_stop = report.stop_reason;
        y = forward(net, x);
        s = ssc_similarity(y, cfg);
    };

    if (z.num_clusters >= 2) {
        int n_prev = z.num_clusters;
        for (int q = 1;; ++q) {
            SscIteration it;
            it.stage = "iteration";
            it.q = q;
            train_round(q, it);
            it.n_estimated = estimate_for(s, z, cfg, cfg.phi_at(q));
            const int n_q = std::min(std::max(n_star, it.n_estimated), n_prev);
            it.n_clusters = n_q;
            // A stable estimate means the merge process has converged.
            const bool done = n_q == n_star || q == cfg.q_max || n_q == n_prev;
            if (done) {
                n_star = n_q;
                it.labels = z.labels;
                result.trace.records.push_back(std::move(it));
                break;
            }
            z = cluster_to(s, cfg, n_q);
            it.merges = n_prev - z.num_clusters;
            it.labels = z.labels;
            n_prev = z.num_clusters;
            result.trace.records.push_back(std::move(it));
        }

        SscIteration fin;
        fin.stage = "termination";
        fin.q = static_cast<int>(result.trace.records.size());
        if (z.num_clusters >= 2)
            train_round(fin.q, fin);
        const int before = z.num_clusters;
        z = cluster_to(s, cfg, n_star);
        fin.n_clusters = z.num_clusters;
        fin.n_estimated = n_star;
        fin.merges = before - z.num_clusters;
        fin.labels = z.labels;
        result.trace.records.push_back(std::move(fin));
    } else {
        n_star = 1;
    }

    result.partition = z;
    result.net = std::move(net);
    result.embeddings = std::move(y);
    result.num_speakers = z.num_clusters;
    return result;
}

} // namespace ssc
