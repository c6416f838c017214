#pragma once

// JSON-lines export of the SSC trace: one object per iteration record.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "ssc/engine.hpp"
#include "ssc/error.hpp"

namespace ssc {

inline nlohmann::json to_json(const SscIteration& it) {
    return {{"stage", it.stage},         {"q", it.q},
            {"n_clusters", it.n_clusters}, {"n_estimated", it.n_estimated},
            {"merges", it.merges},       {"objective", it.objective},
            {"train_stop", it.train_stop}, {"labels", it.labels}};
}

inline std::string trace_jsonl(const SscTrace& trace) {
    std::string out;
    nlohmann::json head = {{"stage", "meta"}, {"termination_model", trace.termination_model}};
    out += head.dump() + "\n";
    for (const auto& it : trace.records)
        out += to_json(it).dump() + "\n";
    return out;
}

inline void write_trace(const SscTrace& trace, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw Error("cannot write trace file " + path.string());
    os << trace_jsonl(trace);
}

} // namespace ssc
