#pragma once

// The four diarization systems exposed by the command-line tool. All of them
// start from the same post-processed embeddings (whitening, length
// normalisation, PCA); the ssc-* systems then refine them.

#include <optional>
#include <string>

#include "ssc/ahc.hpp"
#include "ssc/engine.hpp"
#include "ssc/error.hpp"
#include "ssc/pic.hpp"

namespace ssc {

enum class System { Ahc, Pic, SscPic, SscAhc };

inline std::string to_string(System s) {
    switch (s) {
    case System::Ahc: return "ahc";
    case System::Pic: return "pic";
    case System::SscPic: return "ssc-pic";
    case System::SscAhc: return "ssc-ahc";
    }
    return "?";
}

inline System parse_system(const std::string& name) {
    if (name == "ahc") return System::Ahc;
    if (name == "pic") return System::Pic;
    if (name == "ssc-pic") return System::SscPic;
    if (name == "ssc-ahc") return System::SscAhc;
    throw ConfigError("unknown system '" + name + "' (expected ahc, pic, ssc-pic or ssc-ahc)");
}

struct SystemResult {
    Partition partition;
    int num_speakers = 0;
    Matrix initial_embeddings; // post-processed inputs to clustering
    Matrix final_embeddings;   // equal to the initial ones for ahc/pic
    std::optional<SscTrace> trace;
    std::optional<RepNet> net; // trained network (ssc systems)
};

inline SystemResult run_system(const Recording& rec, System system, SscConfig cfg) {
    rec.validate();
    cfg.validate();
    if (cfg.num_speakers && *cfg.num_speakers > static_cast<int>(rec.size()))
        throw ConfigError("N* = " + std::to_string(*cfg.num_speakers) + " exceeds the " +
                          std::to_string(rec.size()) + " segments of recording '" + rec.id + "'");

    SystemResult out;
    const RepNet net0 = initial_network(rec.embeddings, cfg.pca_dim, cfg.eig_floor,
                                        cfg.whitening ? &*cfg.whitening : nullptr);
    out.initial_embeddings = forward(net0, rec.embeddings);

    switch (system) {
    case System::Ahc: {
        const SimilarityMatrix s = ssc_similarity(out.initial_embeddings, cfg);
        out.partition = cfg.num_speakers
                            ? ahc_cluster(s, cfg.linkage, StopAtCount{*cfg.num_speakers})
                            : ahc_cluster(s, cfg.linkage, StopAtThreshold{cfg.ahc_threshold});
        out.final_embeddings = out.initial_embeddings;
        break;
    }
    case System::Pic: {
        const SimilarityMatrix s = ssc_similarity(out.initial_embeddings, cfg);
        const Digraph g = build_digraph(s, cfg.knn, cfg.sigma);
        int target = 0;
        if (cfg.num_speakers) {
            target = *cfg.num_speakers;
        } else {
            const Partition nn = init_clusters(g);
            target = estimate_num_clusters(cluster_affinity_matrix(g, nn), cfg.phi_at(0),
                                           nn.num_clusters);
        }
        out.partition = pic_cluster(g, target);
        out.final_embeddings = out.initial_embeddings;
        break;
    }
    case System::SscPic:
    case System::SscAhc: {
        if (system == System::SscAhc) {
            cfg.clusterer = Clusterer::Ahc;
            cfg.init = InitRoute::AhcThreshold;
        } else {
            cfg.clusterer = Clusterer::Pic;
        }
        SscResult r = run_ssc(rec, cfg);
        out.partition = std::move(r.partition);
        out.final_embeddings = std::move(r.embeddings);
        out.trace = std::move(r.trace);
        out.net = std::move(r.net);
        break;
    }
    }
    out.num_speakers = out.partition.num_clusters;
    return out;
}

} // namespace ssc
