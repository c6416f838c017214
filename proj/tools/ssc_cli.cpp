// ssc: synthesize embeddings, cluster them, run self-supervised clustering,
// score hypotheses and compare systems over seeds.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ssc/data_model.hpp"
#include "ssc/engine.hpp"
#include "ssc/error.hpp"
#include "ssc/repnet.hpp"
#include "ssc/scoring.hpp"
#include "ssc/systems.hpp"
#include "ssc/trace_io.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::shared_ptr<spdlog::logger> make_logger() {
    auto log = spdlog::stderr_color_mt("ssc");
    log->set_pattern("[%l] %v");
    log->set_level(spdlog::level::warn);
    if (const char* env = std::getenv("SSC_LOG"); env && *env)
        log->set_level(spdlog::level::from_str(env));
    return log;
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Options shared by every command that runs a clustering system.
struct ModelOptions {
    ssc::SscConfig cfg;
    int num_speakers = 0; // 0: unknown
    std::string linkage = "average";
    std::string sampling = "random";
    std::string batch_mode = "auto";
    std::string whitening_data;

    void add_to(CLI::App* app) {
        app->add_option("--knn", cfg.knn, "Neighbours per vertex in the PIC digraph")
            ->capture_default_str();
        app->add_option("--sigma", cfg.sigma, "Path integral decay")->capture_default_str();
        app->add_option("--alpha", cfg.train.alpha, "Negative weight in the triplet objective")
            ->capture_default_str();
        app->add_option("--lr", cfg.train.learning_rate, "Adam learning rate")->capture_default_str();
        app->add_option("--eta", cfg.train.eta, "Stop training once the loss falls to eta x initial")
            ->capture_default_str();
        app->add_option("--max-epochs", cfg.train.max_epochs)->capture_default_str();
        app->add_option("--sampling", sampling, "Negative sampling: hard, random or easy")
            ->capture_default_str();
        app->add_option("--batch-mode", batch_mode, "auto, full or minibatch")->capture_default_str();
        app->add_option("--beta", cfg.beta, "Temporal decay")->capture_default_str();
        app->add_option("--nb", cfg.n_b, "Temporal neighbourhood")->capture_default_str();
        app->add_flag("--temporal", cfg.temporal, "Weight similarities by temporal distance");
        app->add_option("--phi", cfg.phi, "Explained-variance threshold for the cluster count")
            ->capture_default_str();
        app->add_option("--phi-schedule", cfg.phi_schedule, "Per-iteration phi override")
            ->delimiter(',');
        auto* known = app->add_option("--num-speakers", num_speakers, "Known number of speakers")
                          ->check(CLI::PositiveNumber);
        app->add_flag("--unknown-speakers", "Estimate the number of speakers (default)")
            ->excludes(known);
        app->add_option("--q-max", cfg.q_max, "Maximum SSC iterations")->capture_default_str();
        app->add_option("--linkage", linkage, "AHC linkage: single, complete or average")
            ->capture_default_str();
        app->add_option("--threshold", cfg.ahc_threshold, "AHC stopping similarity")
            ->capture_default_str();
        app->add_option("--pca-dim", cfg.pca_dim, "Output dimension of the initial PCA")
            ->capture_default_str();
        app->add_option("--whitening-data", whitening_data,
                        "Embeddings used to fit the whitening transform (default: the input)")
            ->check(CLI::ExistingFile);
        app->add_option("--seed", cfg.seed)->capture_default_str();
    }

    ssc::SscConfig resolve() const {
        ssc::SscConfig out = cfg;
        out.train.sampling = ssc::parse_sampling(sampling);
        out.linkage = ssc::parse_linkage(linkage);
        if (batch_mode == "auto") out.train.batch_mode = ssc::BatchMode::Auto;
        else if (batch_mode == "full") out.train.batch_mode = ssc::BatchMode::Full;
        else if (batch_mode == "minibatch") out.train.batch_mode = ssc::BatchMode::Minibatch;
        else throw ssc::ConfigError("unknown batch mode '" + batch_mode + "'");
        if (num_speakers > 0)
            out.num_speakers = num_speakers;
        if (!whitening_data.empty())
            out.whitening = ssc::fit_whitening(ssc::load_embeddings(whitening_data), out.eig_floor);
        out.validate();
        return out;
    }
};

ssc::Recording load_recording(const std::string& embeddings, const std::string& segments) {
    ssc::SegmentList seg = ssc::load_segments(segments);
    ssc::Recording rec;
    rec.id = seg.recording_id;
    rec.windows = std::move(seg.windows);
    rec.embeddings = ssc::load_embeddings(embeddings);
    rec.validate();
    return rec;
}

// --------------------------------------------------------------------------

struct SynthOptions {
    ssc::SynthConfig cfg;
    std::string out_dir;
    std::string format = "csv";
    int heldout_speakers = 50;
    int heldout_windows = 3000;

    void add_to(CLI::App* app, bool with_output) {
        if (with_output) {
            app->add_option("--out", out_dir, "Output directory")->required();
            app->add_option("--format", format, "Embedding file format: csv or bin")
                ->check(CLI::IsMember({"csv", "bin"}))
                ->capture_default_str();
            app->add_option("--recording-id", cfg.recording_id)->capture_default_str();
            app->add_option("--seed", cfg.seed)->capture_default_str();
        }
        app->add_option("--speakers", cfg.num_speakers)->capture_default_str();
        app->add_option("--dim", cfg.dim)->capture_default_str();
        app->add_option("--separation", cfg.mean_separation, "Minimum distance between speaker means")
            ->capture_default_str();
        app->add_option("--within-std", cfg.within_std)->capture_default_str();
        app->add_option("--turn-windows", cfg.expected_turn_windows, "Expected turn length in windows")
            ->capture_default_str();
        app->add_option("--windows", cfg.total_windows)->capture_default_str();
        app->add_option("--heldout-speakers", heldout_speakers,
                        "Speakers in the held-out whitening set (0 disables it)")
            ->capture_default_str();
        app->add_option("--heldout-windows", heldout_windows)->capture_default_str();
    }
};

int cmd_synth(const SynthOptions& o) {
    const auto syn = ssc::synth_recording(o.cfg);
    const fs::path dir(o.out_dir);
    fs::create_directories(dir);
    const fs::path emb = dir / (o.format == "bin" ? "embeddings.bin" : "embeddings.csv");
    if (o.format == "bin")
        ssc::write_embeddings_binary(syn.recording.embeddings, emb);
    else
        ssc::write_embeddings_csv(syn.recording.embeddings, emb);
    ssc::write_segments(syn.recording.id, syn.recording.windows, dir / "segments.txt");
    ssc::write_rttm(syn.reference, syn.recording.id, dir / "reference.rttm");
    std::cout << "embeddings: " << emb.string() << "\n"
              << "segments: " << (dir / "segments.txt").string() << "\n"
              << "reference: " << (dir / "reference.rttm").string() << "\n";
    if (o.heldout_speakers > 0) {
        const fs::path held = dir / "heldout.csv";
        ssc::write_embeddings_csv(ssc::synth_heldout(o.cfg, o.heldout_speakers, o.heldout_windows),
                                  held);
        std::cout << "heldout: " << held.string() << "\n";
    }
    return 0;
}

// --------------------------------------------------------------------------

struct RunOptions {
    ModelOptions model;
    std::string embeddings, segments, reference, out, system, trace, checkpoint;
    double collar = 0.25;
    bool ignore_overlap = true;
};

void add_io_options(CLI::App* app, RunOptions& o) {
    app->add_option("--embeddings", o.embeddings, "Embedding matrix (CSV or .bin)")
        ->required()
        ->check(CLI::ExistingFile);
    app->add_option("--segments", o.segments, "Segment list with window times")
        ->required()
        ->check(CLI::ExistingFile);
    app->add_option("--out", o.out, "Hypothesis RTTM to write")->required();
    app->add_option("--reference", o.reference, "Reference RTTM; prints the DER when given")
        ->check(CLI::ExistingFile);
    app->add_option("--collar", o.collar)->capture_default_str();
    app->add_flag("--ignore-overlap,!--no-ignore-overlap", o.ignore_overlap,
                  "Skip regions with overlapping reference speakers");
    o.model.add_to(app);
}

void report_der(const RunOptions& o, const ssc::Recording& rec, const ssc::Partition& p) {
    if (o.reference.empty())
        return;
    const auto ref = ssc::load_rttm(o.reference);
    const auto b = ssc::der(ref, ssc::partition_to_annotation(rec, p), {o.collar, o.ignore_overlap});
    std::cout << ssc::format_breakdown(b);
}

int cmd_run(const RunOptions& o, bool ssc_only, spdlog::logger& log) {
    const ssc::System system = ssc::parse_system(o.system);
    if (ssc_only && system != ssc::System::SscPic && system != ssc::System::SscAhc)
        throw ssc::ConfigError("the ssc command runs ssc-pic or ssc-ahc, not " + o.system);
    const ssc::SscConfig cfg = o.model.resolve();
    const ssc::Recording rec = load_recording(o.embeddings, o.segments);
    log.info("recording '{}': {} windows, dimension {}", rec.id, rec.size(), rec.dim());

    Stopwatch clock;
    const ssc::SystemResult r = ssc::run_system(rec, system, cfg);
    const double elapsed = clock.seconds();

    const fs::path out(o.out);
    if (out.has_parent_path())
        fs::create_directories(out.parent_path());
    ssc::write_rttm(ssc::partition_to_annotation(rec, r.partition), rec.id, out);

    std::cout << "system: " << o.system << "\n"
              << "speakers: " << r.num_speakers << (cfg.num_speakers ? "" : " (estimated)") << "\n";
    if (r.trace) {
        for (const auto& it : r.trace->records)
            log.info("{} q={} clusters={} estimate={} merges={} stop={}", it.stage, it.q,
                     it.n_clusters, it.n_estimated, it.merges, it.train_stop);
        const fs::path trace = o.trace.empty() ? fs::path(o.out + ".trace.jsonl") : fs::path(o.trace);
        if (ssc_only || !o.trace.empty()) {
            ssc::write_trace(*r.trace, trace);
            std::cout << "trace: " << trace.string() << "\n";
        }
    }
    if (!o.checkpoint.empty() && r.net) {
        ssc::save_checkpoint(*r.net, o.checkpoint);
        std::cout << "checkpoint: " << o.checkpoint << "\n";
    }
    report_der(o, rec, r.partition);
    std::fprintf(stderr, "elapsed: %.3f s\n", elapsed);
    return 0;
}

// --------------------------------------------------------------------------

int cmd_score(const std::string& reference, const std::string& hypothesis, double collar,
              bool ignore_overlap, spdlog::logger& log) {
    std::vector<std::string> warnings;
    const auto ref = ssc::load_rttm(reference, &warnings);
    const auto hyp = ssc::load_rttm(hypothesis, &warnings);
    for (const auto& w : warnings)
        log.warn("{}", w);
    const auto b = ssc::der(ref, hyp, {collar, ignore_overlap});
    std::cout << ssc::format_breakdown(b);
    for (const auto& [r, h] : b.mapping)
        std::cout << "map: " << r << " -> " << h << "\n";
    return 0;
}

// --------------------------------------------------------------------------

struct CompareOptions {
    SynthOptions synth;
    ModelOptions model;
    std::vector<std::string> systems{"pic", "ssc-pic"};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::string csv;
    std::string whitening = "heldout";
    unsigned threads = 0;
};

struct Cell {
    std::string system;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double der = 0.0;
    int speakers = 0;
    double f_init = 0.0;
    double f_final = 0.0;
};

std::string fmt_number(double v) {
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void run_cell(Cell& cell, const CompareOptions& o, const ssc::SscConfig& base) {
    ssc::SynthConfig sc = o.synth.cfg;
    sc.seed = cell.seed;
    const auto syn = ssc::synth_recording(sc);
    ssc::SscConfig cfg = base;
    cfg.seed = cell.seed;
    if (o.whitening == "heldout")
        cfg.whitening = ssc::fit_whitening(
            ssc::synth_heldout(sc, o.synth.heldout_speakers, o.synth.heldout_windows), cfg.eig_floor);
    const auto r = ssc::run_system(syn.recording, ssc::parse_system(cell.system), cfg);
    cell.der = ssc::der(syn.reference, ssc::partition_to_annotation(syn.recording, r.partition)).der;
    cell.speakers = r.num_speakers;
    cell.f_init = ssc::f_ratio(ssc::cosine_matrix(r.initial_embeddings), syn.labels);
    cell.f_final = ssc::f_ratio(ssc::cosine_matrix(r.final_embeddings), syn.labels);
    cell.ok = true;
}

int cmd_compare(const CompareOptions& o, spdlog::logger& log) {
    if (o.systems.empty() || o.seeds.empty())
        throw ssc::ConfigError("compare needs at least one system and one seed");
    for (const auto& s : o.systems)
        ssc::parse_system(s);
    if (o.whitening == "heldout" && o.synth.heldout_speakers < 2)
        throw ssc::ConfigError("held-out whitening needs --heldout-speakers >= 2");
    const ssc::SscConfig base = o.model.resolve();
    o.synth.cfg.validate();

    std::vector<Cell> cells;
    for (const auto& s : o.systems)
        for (auto seed : o.seeds)
            cells.push_back({s, seed});

    Stopwatch clock;
    unsigned n_threads = o.threads ? o.threads : std::max(1u, std::thread::hardware_concurrency());
    n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(cells.size()));
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    std::vector<std::thread> workers;
    for (unsigned t = 0; t < n_threads; ++t)
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < cells.size(); i = next++) {
                try {
                    run_cell(cells[i], o, base);
                } catch (const std::exception& e) {
                    cells[i].error = e.what();
                    std::lock_guard lock(log_mutex);
                    log.error("{} seed {}: {}", cells[i].system, cells[i].seed, e.what());
                }
            }
        });
    for (auto& w : workers)
        w.join();

    std::ostringstream csv;
    csv << "system,seed,status,der,speakers,f_ratio_init,f_ratio_final\n";
    for (const auto& c : cells) {
        csv << c.system << "," << c.seed << ",";
        if (c.ok)
            csv << "ok," << fmt_number(c.der) << "," << c.speakers << "," << fmt_number(c.f_init)
                << "," << fmt_number(c.f_final) << "\n";
        else
            csv << "ERR,,,,\n";
    }
    if (!o.csv.empty()) {
        const fs::path p(o.csv);
        if (p.has_parent_path())
            fs::create_directories(p.parent_path());
        std::ofstream os(p, std::ios::binary);
        if (!os)
            throw ssc::Error("cannot write " + o.csv);
        os << csv.str();
    }

    bool failed = false;
    std::printf("%-10s %6s %10s %10s %8s\n", "system", "runs", "der_mean", "der_std", "errors");
    for (const auto& s : o.systems) {
        std::vector<double> ders;
        int errors = 0;
        for (const auto& c : cells)
            if (c.system == s) {
                if (c.ok)
                    ders.push_back(c.der);
                else
                    ++errors;
            }
        failed = failed || errors > 0;
        if (ders.empty()) {
            std::printf("%-10s %6d %10s %10s %8d\n", s.c_str(), 0, "ERR", "ERR", errors);
            continue;
        }
        double mean = 0.0;
        for (double d : ders)
            mean += d;
        mean /= double(ders.size());
        double var = 0.0;
        for (double d : ders)
            var += (d - mean) * (d - mean);
        const double sd = ders.size() > 1 ? std::sqrt(var / double(ders.size() - 1)) : 0.0;
        std::printf("%-10s %6zu %10.4f %10.4f %8d\n", s.c_str(), ders.size(), mean, sd, errors);
    }
    std::fprintf(stderr, "elapsed: %.3f s\n", clock.seconds());
    return failed ? kExitRuntime : 0;
}

// Flat "key = value" config: every key not already given on the command line
// is appended as --key=value, so explicit flags win. Blank lines and lines
// starting with '#' are ignored.
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
            break;
        }
    }
    if (path.empty())
        return args;
    std::ifstream is(path);
    if (!is)
        throw ssc::ConfigError("cannot read config file " + path);
    const auto given = [&](const std::string& key) {
        return std::any_of(args.begin() + 1, args.end(), [&](const std::string& a) {
            return a == "--" + key || a.rfind("--" + key + "=", 0) == 0 || a == "--no-" + key;
        });
    };
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto text = ssc::detail::trim(line);
        if (text.empty() || text.front() == '#')
            continue;
        const auto eq = text.find('=');
        if (eq == std::string_view::npos)
            throw ssc::ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
        std::string key(ssc::detail::trim(text.substr(0, eq)));
        const std::string value(ssc::detail::trim(text.substr(eq + 1)));
        if (key.rfind("--", 0) == 0)
            key.erase(0, 2);
        if (key.empty())
            throw ssc::ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
        if (!given(key))
            args.push_back("--" + key + "=" + value);
    }
    return args;
}

} // namespace

int main(int argc, char** argv) {
    auto log = make_logger();
    CLI::App app{"Speaker clustering with self-supervised representation learning"};
    app.require_subcommand(1);

    SynthOptions synth;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic recording");
    synth_cmd->add_option("--config", "Flat key = value file; flags on the command line win");
    synth.add_to(synth_cmd, true);

    RunOptions cluster;
    cluster.system = "pic";
    auto* cluster_cmd = app.add_subcommand("cluster", "Cluster a recording with one system");
    cluster_cmd->add_option("--config", "Flat key = value file; flags on the command line win");
    add_io_options(cluster_cmd, cluster);
    cluster_cmd->add_option("--system", cluster.system, "ahc, pic, ssc-pic or ssc-ahc")
        ->capture_default_str();
    cluster_cmd->add_option("--trace", cluster.trace, "Write the SSC trace here (ssc systems)");

    RunOptions run;
    run.system = "ssc-pic";
    auto* ssc_cmd = app.add_subcommand("ssc", "Self-supervised clustering with trace output");
    ssc_cmd->add_option("--config", "Flat key = value file; flags on the command line win");
    add_io_options(ssc_cmd, run);
    ssc_cmd->add_option("--system", run.system, "ssc-pic or ssc-ahc")->capture_default_str();
    ssc_cmd->add_option("--trace", run.trace, "Trace path (default: <out>.trace.jsonl)");
    ssc_cmd->add_option("--checkpoint", run.checkpoint, "Save the trained network here");

    std::string reference, hypothesis;
    double collar = 0.25;
    bool ignore_overlap = true;
    auto* score_cmd = app.add_subcommand("score", "Diarization error rate of a hypothesis RTTM");
    score_cmd->add_option("--config", "Flat key = value file; flags on the command line win");
    score_cmd->add_option("--reference", reference)->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--hypothesis", hypothesis)->required()->check(CLI::ExistingFile);
    score_cmd->add_option("--collar", collar)->capture_default_str();
    score_cmd->add_flag("--ignore-overlap,!--no-ignore-overlap", ignore_overlap);

    CompareOptions compare;
    auto* compare_cmd = app.add_subcommand("compare", "DER of several systems over synthetic seeds");
    compare_cmd->add_option("--config", "Flat key = value file; flags on the command line win");
    compare.synth.add_to(compare_cmd, false);
    compare.model.add_to(compare_cmd);
    compare_cmd->add_option("--systems", compare.systems)->delimiter(',')->capture_default_str();
    compare_cmd->add_option("--seeds", compare.seeds)->delimiter(',')->capture_default_str();
    compare_cmd->add_option("--csv", compare.csv, "Per-run results as CSV");
    compare_cmd->add_option("--whitening", compare.whitening,
                            "Fit whitening on held-out speakers or on each recording")
        ->check(CLI::IsMember({"heldout", "recording"}))
        ->capture_default_str();
    compare_cmd->add_option("--threads", compare.threads, "Worker threads (default: all cores)");

    std::vector<std::string> args;
    try {
        args = expand_config(argc, argv);
    } catch (const ssc::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    std::vector<const char*> cargs;
    for (const auto& a : args)
        cargs.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (synth_cmd->parsed())
            return cmd_synth(synth);
        if (cluster_cmd->parsed())
            return cmd_run(cluster, false, *log);
        if (ssc_cmd->parsed())
            return cmd_run(run, true, *log);
        if (score_cmd->parsed())
            return cmd_score(reference, hypothesis, collar, ignore_overlap, *log);
        if (compare_cmd->parsed())
            return cmd_compare(compare, *log);
    } catch (const ssc::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
