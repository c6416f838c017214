#pragma once

// Recordings, speaker annotations, on-disk formats and the synthetic
// recording generator.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ssc/error.hpp"

namespace ssc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

constexpr double kDefaultWindowLength = 1.5;
constexpr double kDefaultWindowHop = 0.75;

struct SegmentWindow {
    double onset = 0.0;
    double duration = kDefaultWindowLength;

    double offset() const { return onset + duration; }
    double midpoint() const { return onset + 0.5 * duration; }
};

// Evenly strided windows starting at `start`.
inline std::vector<SegmentWindow> make_window_grid(std::size_t count,
                                                   double length = kDefaultWindowLength,
                                                   double hop = kDefaultWindowHop,
                                                   double start = 0.0) {
    std::vector<SegmentWindow> windows(count);
    for (std::size_t i = 0; i < count; ++i)
        windows[i] = {start + static_cast<double>(i) * hop, length};
    return windows;
}

struct Recording {
    std::string id;
    std::vector<SegmentWindow> windows;
    Matrix embeddings; // one row per window

    std::size_t size() const { return windows.size(); }
    Eigen::Index dim() const { return embeddings.cols(); }

    // Throws NumericError/FormatError when an invariant is broken.
    void validate() const {
        if (static_cast<std::size_t>(embeddings.rows()) != windows.size())
            throw FormatError("recording '" + id + "': " + std::to_string(embeddings.rows()) +
                              " embedding rows for " + std::to_string(windows.size()) +
                              " windows");
        if (windows.size() < 2)
            throw FormatError("recording '" + id + "': need at least 2 windows");
        if (embeddings.cols() < 2)
            throw FormatError("recording '" + id + "': embedding dimension must be >= 2");
        for (std::size_t i = 0; i < windows.size(); ++i) {
            const auto& w = windows[i];
            if (!(w.duration > 0.0) || w.onset < 0.0)
                throw FormatError("recording '" + id + "': invalid window " + std::to_string(i));
            if (i > 0 && w.onset < windows[i - 1].onset)
                throw FormatError("recording '" + id + "': windows not sorted at " +
                                  std::to_string(i));
        }
        if (!embeddings.allFinite())
            throw NumericError("recording '" + id + "': non-finite embedding values");
        for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
            if (embeddings.row(r).squaredNorm() == 0.0)
                throw NumericError("recording '" + id + "': embedding row " + std::to_string(r) +
                                   " is all zeros");
    }
};

struct SpeakerTurn {
    std::string speaker;
    double onset = 0.0;
    double duration = 0.0;

    double offset() const { return onset + duration; }
};

struct Annotation {
    std::vector<SpeakerTurn> turns;

    bool empty() const { return turns.empty(); }

    std::vector<std::string> speakers() const {
        std::vector<std::string> out;
        for (const auto& t : turns)
            if (std::find(out.begin(), out.end(), t.speaker) == out.end())
                out.push_back(t.speaker);
        return out;
    }

    void validate() const {
        for (std::size_t i = 0; i < turns.size(); ++i)
            if (!(turns[i].duration > 0.0))
                throw FormatError("turn " + std::to_string(i) + " has non-positive duration");
        for (const auto& spk : speakers()) {
            std::vector<std::pair<double, double>> spans;
            for (const auto& t : turns)
                if (t.speaker == spk)
                    spans.emplace_back(t.onset, t.offset());
            std::sort(spans.begin(), spans.end());
            for (std::size_t i = 1; i < spans.size(); ++i)
                if (spans[i].first < spans[i - 1].second - 1e-9)
                    throw FormatError("speaker '" + spk + "' has self-overlapping turns");
        }
    }
};

// Equal speakers and matching times within `tol` seconds, in order.
inline bool same_turns(const Annotation& a, const Annotation& b, double tol = 1e-3) {
    if (a.turns.size() != b.turns.size())
        return false;
    for (std::size_t i = 0; i < a.turns.size(); ++i) {
        const auto& x = a.turns[i];
        const auto& y = b.turns[i];
        if (x.speaker != y.speaker || std::abs(x.onset - y.onset) > tol ||
            std::abs(x.duration - y.duration) > tol)
            return false;
    }
    return true;
}

// Merges runs of equal labels into turns. Boundaries between adjacent windows
// with different labels sit halfway between the later onset and the earlier
// offset, i.e. the middle of their overlap.
template <typename NameFn>
Annotation labels_to_annotation(const std::vector<SegmentWindow>& windows,
                                const std::vector<int>& labels, NameFn&& name_of) {
    if (windows.size() != labels.size())
        throw FormatError("label count " + std::to_string(labels.size()) +
                          " does not match window count " + std::to_string(windows.size()));
    Annotation ann;
    std::size_t start = 0;
    double turn_onset = windows.empty() ? 0.0 : windows.front().onset;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        const bool last = i + 1 == windows.size();
        if (!last && labels[i + 1] == labels[i])
            continue;
        const double turn_offset =
            last ? windows[i].offset() : 0.5 * (windows[i + 1].onset + windows[i].offset());
        ann.turns.push_back({name_of(labels[start]), turn_onset, turn_offset - turn_onset});
        start = i + 1;
        turn_onset = turn_offset;
    }
    return ann;
}

// ---------------------------------------------------------------------------
// Embedding files

enum class EmbeddingFormat { Csv, Binary };

inline constexpr std::array<char, 4> kEmbeddingMagic = {'E', 'M', 'B', '1'};

inline EmbeddingFormat guess_embedding_format(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    return (ext == ".bin" || ext == ".emb") ? EmbeddingFormat::Binary : EmbeddingFormat::Csv;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto not_space = [](char c) { return c != ' ' && c != '\t' && c != '\r' && c != '\n'; };
    while (!s.empty() && !not_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && !not_space(s.back()))
        s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty())
        return false;
    if (s.front() == '+')
        s.remove_prefix(1);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(const unsigned char* b) {
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Little-endian IEEE-754 single precision, independent of host byte order.
inline void write_f32(std::ostream& os, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_u32(os, bits);
}

inline float read_f32(const unsigned char* b) {
    const std::uint32_t bits = read_u32(b);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

inline std::string format_fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

} // namespace detail

inline Matrix load_embeddings_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open embeddings file " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty())
            continue;
        std::vector<double> row;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            double v;
            if (!detail::parse_double(rest.substr(0, comma), v))
                throw FormatError(path.string() + ": bad number in row " +
                                  std::to_string(rows.size() + 1) + " (line " +
                                  std::to_string(line_no) + ")");
            row.push_back(v);
            if (comma == std::string_view::npos)
                break;
            rest.remove_prefix(comma + 1);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw FormatError(path.string() + ": row " + std::to_string(rows.size() + 1) +
                              " has width " + std::to_string(row.size()) + ", expected " +
                              std::to_string(rows.front().size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty())
        throw FormatError(path.string() + ": empty embeddings file");
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return m;
}

inline Matrix load_embeddings_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError("cannot open embeddings file " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.empty())
        throw FormatError(path.string() + ": empty embeddings file");
    if (bytes.size() < 16 || !std::equal(kEmbeddingMagic.begin(), kEmbeddingMagic.end(),
                                         reinterpret_cast<const char*>(bytes.data())))
        throw FormatError(path.string() + ": missing EMB1 header");
    const std::uint32_t rows = detail::read_u32(bytes.data() + 4);
    const std::uint32_t cols = detail::read_u32(bytes.data() + 8);
    const std::size_t expected = 16 + std::size_t{4} * rows * cols;
    if (rows == 0 || cols == 0)
        throw FormatError(path.string() + ": header declares an empty matrix");
    if (bytes.size() != expected)
        throw FormatError(path.string() + ": expected " + std::to_string(expected) +
                          " bytes for " + std::to_string(rows) + "x" + std::to_string(cols) +
                          ", found " + std::to_string(bytes.size()));
    Matrix m(rows, cols);
    const unsigned char* p = bytes.data() + 16;
    for (std::uint32_t r = 0; r < rows; ++r)
        for (std::uint32_t c = 0; c < cols; ++c, p += 4)
            m(r, c) = detail::read_f32(p);
    return m;
}

inline Matrix load_embeddings(const std::filesystem::path& path, EmbeddingFormat format) {
    return format == EmbeddingFormat::Csv ? load_embeddings_csv(path)
                                          : load_embeddings_binary(path);
}

inline Matrix load_embeddings(const std::filesystem::path& path) {
    return load_embeddings(path, guess_embedding_format(path));
}

inline void write_embeddings_csv(const Matrix& m, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw FormatError("cannot write " + path.string());
    char buf[64];
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(r, c));
            if (c > 0)
                out << ',';
            out << buf;
        }
        out << '\n';
    }
}

inline void write_embeddings_binary(const Matrix& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw FormatError("cannot write " + path.string());
    out.write(kEmbeddingMagic.data(), 4);
    detail::write_u32(out, static_cast<std::uint32_t>(m.rows()));
    detail::write_u32(out, static_cast<std::uint32_t>(m.cols()));
    detail::write_u32(out, 0);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            detail::write_f32(out, static_cast<float>(m(r, c)));
}

// ---------------------------------------------------------------------------
// Segments: "<segment-id> <recording-id> <start> <end>" per line.

struct SegmentList {
    std::string recording_id;
    std::vector<SegmentWindow> windows;
};

inline SegmentList load_segments(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open segments file " + path.string());
    SegmentList out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty())
            continue;
        std::istringstream fields(line);
        std::string seg_id, rec_id, start_s, end_s;
        double start = 0.0, end = 0.0;
        if (!(fields >> seg_id >> rec_id >> start_s >> end_s) ||
            !detail::parse_double(start_s, start) || !detail::parse_double(end_s, end) ||
            !(end > start) || start < 0.0)
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": malformed segment line");
        if (out.windows.empty())
            out.recording_id = rec_id;
        else if (rec_id != out.recording_id)
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": segments span more than one recording");
        out.windows.push_back({start, end - start});
    }
    if (out.windows.empty())
        throw FormatError(path.string() + ": no segments");
    return out;
}

inline void write_segments(const std::string& recording_id,
                           const std::vector<SegmentWindow>& windows,
                           const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw FormatError("cannot write " + path.string());
    char buf[32];
    for (std::size_t i = 0; i < windows.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%06zu", i);
        out << recording_id << '-' << buf << ' ' << recording_id << ' '
            << detail::format_fixed3(windows[i].onset) << ' '
            << detail::format_fixed3(windows[i].offset()) << '\n';
    }
}

// ---------------------------------------------------------------------------
// RTTM

inline std::string rttm_line(const std::string& recording_id, const SpeakerTurn& turn) {
    return "SPEAKER " + recording_id + " 1 " + detail::format_fixed3(turn.onset) + " " +
           detail::format_fixed3(turn.duration) + " <NA> <NA> " + turn.speaker + " <NA> <NA>\n";
}

inline void write_rttm(const Annotation& annotation, const std::string& recording_id,
                       const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw FormatError("cannot write " + path.string());
    for (const auto& t : annotation.turns)
        out << rttm_line(recording_id, t);
}

// Lines not starting with SPEAKER are skipped; a note is appended to
// `warnings` when given.
inline Annotation load_rttm(const std::filesystem::path& path,
                            std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in)
        throw FormatError("cannot open RTTM file " + path.string());
    Annotation ann;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty())
            continue;
        std::istringstream is(line);
        std::vector<std::string> fields;
        for (std::string f; is >> f;)
            fields.push_back(f);
        if (fields.empty() || fields[0] != "SPEAKER") {
            if (warnings)
                warnings->push_back(path.string() + ":" + std::to_string(line_no) +
                                    ": skipping non-SPEAKER line");
            continue;
        }
        if (fields.size() < 9)
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": expected at least 9 fields");
        SpeakerTurn turn;
        turn.speaker = fields[7];
        if (!detail::parse_double(fields[3], turn.onset) ||
            !detail::parse_double(fields[4], turn.duration))
            throw FormatError(path.string() + ":" + std::to_string(line_no) +
                              ": malformed onset/duration");
        ann.turns.push_back(std::move(turn));
    }
    return ann;
}

// ---------------------------------------------------------------------------
// Synthetic recordings

struct SynthConfig {
    int num_speakers = 3;
    int dim = 16;
    double mean_separation = 10.0;
    double within_std = 1.0;
    double expected_turn_windows = 8.0;
    int total_windows = 300;
    std::uint64_t seed = 0;
    double window_length = kDefaultWindowLength;
    double window_hop = kDefaultWindowHop;
    std::string recording_id = "synth";

    void validate() const {
        if (num_speakers < 1)
            throw ConfigError("num-speakers must be >= 1");
        if (dim < 2)
            throw ConfigError("dim must be >= 2");
        if (!(mean_separation > 0.0))
            throw ConfigError("mean-separation must be positive");
        if (!(within_std > 0.0))
            throw ConfigError("within-std must be positive");
        if (!(expected_turn_windows >= 1.0))
            throw ConfigError("expected-turn-windows must be >= 1");
        if (total_windows < num_speakers || total_windows < 2)
            throw ConfigError("total-windows must be >= num-speakers and >= 2");
        if (!(window_length > 0.0) || !(window_hop > 0.0))
            throw ConfigError("window length and hop must be positive");
    }
};

struct SynthRecording {
    Recording recording;
    Annotation reference;
    std::vector<int> labels; // true speaker per window
    Matrix means;            // one row per speaker
};

inline std::string reference_speaker_name(int k) { return "S" + std::to_string(k); }

inline SynthRecording synth_recording(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    SynthRecording out;
    Matrix& means = out.means;
    means.resize(cfg.num_speakers, cfg.dim);
    for (int s = 0; s < cfg.num_speakers; ++s) {
        Vector v(cfg.dim);
        do {
            for (int c = 0; c < cfg.dim; ++c)
                v(c) = gauss(rng);
        } while (v.norm() < 1e-12);
        means.row(s) = (cfg.mean_separation / v.norm()) * v.transpose();
    }
    if (cfg.num_speakers > 1) {
        double min_dist = std::numeric_limits<double>::infinity();
        for (int a = 0; a < cfg.num_speakers; ++a)
            for (int b = a + 1; b < cfg.num_speakers; ++b)
                min_dist = std::min(min_dist, (means.row(a) - means.row(b)).norm());
        means *= cfg.mean_separation / min_dist;
    }

    // Geometric turn lengths (support >= 1, mean expected_turn_windows) with
    // the next speaker uniform among the others.
    const double p_end = 1.0 / cfg.expected_turn_windows;
    std::geometric_distribution<int> extra_windows(p_end);
    std::uniform_int_distribution<int> first_speaker(0, cfg.num_speakers - 1);
    std::uniform_int_distribution<int> other_speaker(0, std::max(cfg.num_speakers - 2, 0));

    auto& labels = out.labels;
    labels.reserve(cfg.total_windows);
    int speaker = first_speaker(rng);
    while (static_cast<int>(labels.size()) < cfg.total_windows) {
        const int len = 1 + extra_windows(rng);
        for (int i = 0; i < len && static_cast<int>(labels.size()) < cfg.total_windows; ++i)
            labels.push_back(speaker);
        if (cfg.num_speakers > 1) {
            const int next = other_speaker(rng);
            speaker = next >= speaker ? next + 1 : next;
        }
    }

    Recording& rec = out.recording;
    rec.id = cfg.recording_id;
    rec.windows = make_window_grid(cfg.total_windows, cfg.window_length, cfg.window_hop);
    rec.embeddings.resize(cfg.total_windows, cfg.dim);
    for (int i = 0; i < cfg.total_windows; ++i)
        for (int c = 0; c < cfg.dim; ++c)
            rec.embeddings(i, c) = means(labels[i], c) + cfg.within_std * gauss(rng);

    out.reference = labels_to_annotation(rec.windows, labels, reference_speaker_name);
    return out;
}

// Embeddings from many speakers drawn like `cfg` but from an independent
// stream, for fitting whitening outside the recording being clustered.
inline Matrix synth_heldout(const SynthConfig& cfg, int num_speakers = 50, int total_windows = 3000) {
    SynthConfig h = cfg;
    h.num_speakers = num_speakers;
    h.total_windows = total_windows;
    h.seed = cfg.seed ^ 0xa5a5a5a5a5a5a5a5ULL;
    h.recording_id = cfg.recording_id + "-heldout";
    return synth_recording(h).recording.embeddings;
}

} // namespace ssc
