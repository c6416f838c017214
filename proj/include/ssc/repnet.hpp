#pragma once

// Two-layer representation network trained on cluster pseudo-labels with a
// triplet similarity objective.
//
//   h = W1 x + b1          (D -> D, initialised to the whitening transform)
//   a = h / |h|            (unit-length non-linearity)
//   y = W2 a               (D -> d, initialised to the PCA basis)
//
// The objective over triplets (anchor i, positive j, negative l) is
//   sum  cos(y_i, y_j) - alpha * (cos(y_i, y_l) + cos(y_j, y_l))
// and is maximised with Adam.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ssc/error.hpp"
#include "ssc/partition.hpp"
#include "ssc/similarity.hpp"

namespace ssc {

struct RepNet {
    Matrix w1; // D x D
    Vector b1; // D
    Matrix w2; // d x D

    Eigen::Index in_dim() const { return w1.cols(); }
    Eigen::Index out_dim() const { return w2.rows(); }
};

inline RepNet init_repnet(const WhiteningTransform& whitening, const PcaTransform& pca) {
    if (whitening.projection.rows() != whitening.dim() || pca.in_dim() != whitening.dim())
        throw ConfigError("PCA input width " + std::to_string(pca.in_dim()) +
                          " does not match whitening width " + std::to_string(whitening.dim()));
    RepNet net;
    net.w1 = whitening.projection;
    net.b1 = -(whitening.projection * whitening.mean);
    net.w2 = pca.basis;
    return net;
}

struct ForwardPass {
    Matrix pre;   // h, N x D
    Vector norms; // |h| per row
    Matrix act;   // a, N x D
    Matrix out;   // y, N x d
};

inline ForwardPass forward_pass(const RepNet& net, const Matrix& x) {
    if (x.cols() != net.in_dim())
        throw ConfigError("network expects input width " + std::to_string(net.in_dim()) +
                          ", got " + std::to_string(x.cols()));
    ForwardPass f;
    f.pre = (x * net.w1.transpose()).rowwise() + net.b1.transpose();
    f.norms = f.pre.rowwise().norm();
    for (Eigen::Index r = 0; r < f.norms.size(); ++r)
        if (!(f.norms(r) > 0.0) || !std::isfinite(f.norms(r)))
            throw NumericError("degenerate pre-activation at row " + std::to_string(r));
    f.act = f.norms.cwiseInverse().asDiagonal() * f.pre;
    f.out = f.act * net.w2.transpose();
    return f;
}

inline Matrix forward(const RepNet& net, const Matrix& x) { return forward_pass(net, x).out; }

// ---------------------------------------------------------------------------
// Triplets

struct Triplet {
    int anchor = 0;
    int positive = 0;
    int negative = 0;

    friend bool operator==(const Triplet&, const Triplet&) = default;
};

enum class Sampling { Hard, Random, Easy };

inline std::string to_string(Sampling s) {
    switch (s) {
    case Sampling::Hard: return "hard";
    case Sampling::Random: return "random";
    case Sampling::Easy: return "easy";
    }
    return "?";
}

inline Sampling parse_sampling(const std::string& name) {
    if (name == "hard") return Sampling::Hard;
    if (name == "random") return Sampling::Random;
    if (name == "easy") return Sampling::Easy;
    throw ConfigError("unknown sampling strategy '" + name + "'");
}

// Every cluster with at least two members contributes as many triplets as the
// largest cluster has members; its anchor/positive pairs are drawn without
// replacement and recycled once exhausted. Hard and easy negatives are the
// closest and farthest other-cluster points to the anchor under `s`.
inline std::vector<Triplet> sample_triplets(const Partition& labels, Sampling strategy,
                                            const SimilarityMatrix* s, std::uint64_t seed) {
    if (labels.num_clusters < 2)
        throw Error("triplet sampling needs at least two clusters");
    if (strategy != Sampling::Random) {
        if (s == nullptr)
            throw ConfigError(to_string(strategy) + " sampling needs a similarity matrix");
        if (s->size() != static_cast<Eigen::Index>(labels.size()))
            throw ConfigError("similarity matrix size does not match the partition");
    }
    const auto clusters = labels.members();
    std::size_t largest = 0;
    bool any_pairs = false;
    for (const auto& c : clusters) {
        largest = std::max(largest, c.size());
        any_pairs = any_pairs || c.size() >= 2;
    }
    if (!any_pairs)
        throw Error("no positive pairs available");

    std::mt19937_64 rng(seed);
    std::vector<Triplet> out;
    const auto n_clusters = static_cast<int>(clusters.size());

    const auto pick_negative = [&](int cluster, int anchor) {
        if (strategy == Sampling::Random) {
            std::uniform_int_distribution<int> other(0, n_clusters - 2);
            int c = other(rng);
            if (c >= cluster)
                ++c;
            const auto& m = clusters[static_cast<std::size_t>(c)];
            std::uniform_int_distribution<std::size_t> member(0, m.size() - 1);
            return m[member(rng)];
        }
        int best = -1;
        double best_v = 0.0;
        for (std::size_t l = 0; l < labels.size(); ++l) {
            if (labels.labels[l] == cluster)
                continue;
            const double v = (*s)(anchor, static_cast<Eigen::Index>(l));
            const bool better = strategy == Sampling::Hard ? v > best_v : v < best_v;
            if (best < 0 || better) {
                best = static_cast<int>(l);
                best_v = v;
            }
        }
        return best;
    };

    for (int c = 0; c < n_clusters; ++c) {
        const auto& m = clusters[static_cast<std::size_t>(c)];
        if (m.size() < 2)
            continue;
        const std::size_t n_pairs = m.size() * (m.size() - 1) / 2;
        const auto pair_at = [&](std::size_t idx) {
            // Row-major enumeration of i < j.
            std::size_t i = 0, row = m.size() - 1;
            while (idx >= row) {
                idx -= row;
                ++i;
                --row;
            }
            return std::pair{m[i], m[i + 1 + idx]};
        };

        std::vector<std::size_t> order;
        if (n_pairs > 4 * largest) {
            // Sparse draw without replacement; largest <= n_pairs here.
            std::unordered_set<std::size_t> seen;
            std::uniform_int_distribution<std::size_t> any(0, n_pairs - 1);
            while (order.size() < largest) {
                const std::size_t idx = any(rng);
                if (seen.insert(idx).second)
                    order.push_back(idx);
            }
        } else {
            std::vector<std::size_t> all(n_pairs);
            std::iota(all.begin(), all.end(), std::size_t{0});
            while (order.size() < largest) {
                std::shuffle(all.begin(), all.end(), rng);
                const std::size_t take = std::min(all.size(), largest - order.size());
                order.insert(order.end(), all.begin(), all.begin() + static_cast<long>(take));
            }
        }

        std::bernoulli_distribution flip(0.5);
        for (std::size_t idx : order) {
            auto [i, j] = pair_at(idx);
            if (flip(rng))
                std::swap(i, j);
            out.push_back({i, j, pick_negative(c, i)});
        }
    }
    return out;
}

inline double triplet_contribution(const Matrix& unit_rows, const Triplet& t, double alpha) {
    const double s_ij = unit_rows.row(t.anchor).dot(unit_rows.row(t.positive));
    const double s_il = unit_rows.row(t.anchor).dot(unit_rows.row(t.negative));
    const double s_jl = unit_rows.row(t.positive).dot(unit_rows.row(t.negative));
    return s_ij - alpha * (s_il + s_jl);
}

inline double triplet_objective(const Matrix& y, std::span<const Triplet> triplets, double alpha) {
    const Matrix u = unit_normalize(y);
    double total = 0.0;
    for (const auto& t : triplets)
        total += triplet_contribution(u, t, alpha);
    return total;
}

struct RepNetGradient {
    Matrix w1;
    Vector b1;
    Matrix w2;
};

// Objective value, plus its gradient with respect to every parameter when
// `grad` is non-null.
inline double objective_and_gradient(const RepNet& net, const Matrix& x,
                                     std::span<const Triplet> triplets, double alpha,
                                     RepNetGradient* grad) {
    const ForwardPass f = forward_pass(net, x);
    const Vector y_norm = f.out.rowwise().norm();
    for (Eigen::Index r = 0; r < y_norm.size(); ++r)
        if (!(y_norm(r) > 0.0))
            throw NumericError("zero output embedding at row " + std::to_string(r));
    const Matrix u = y_norm.cwiseInverse().asDiagonal() * f.out;

    double total = 0.0;
    Matrix g_u = Matrix::Zero(u.rows(), u.cols()); // d objective / d unit rows
    for (const auto& t : triplets) {
        total += triplet_contribution(u, t, alpha);
        if (!grad)
            continue;
        g_u.row(t.anchor) += u.row(t.positive) - alpha * u.row(t.negative);
        g_u.row(t.positive) += u.row(t.anchor) - alpha * u.row(t.negative);
        g_u.row(t.negative) -= alpha * (u.row(t.anchor) + u.row(t.positive));
    }
    if (!grad)
        return total;

    // Through y -> y/|y|: (g - u (u.g)) / |y|
    const Vector proj_y = (g_u.cwiseProduct(u)).rowwise().sum();
    const Matrix g_y =
        y_norm.cwiseInverse().asDiagonal() * (g_u - proj_y.asDiagonal() * u);

    grad->w2 = g_y.transpose() * f.act;
    const Matrix g_a = g_y * net.w2;
    const Vector proj_a = (g_a.cwiseProduct(f.act)).rowwise().sum();
    const Matrix g_h =
        f.norms.cwiseInverse().asDiagonal() * (g_a - proj_a.asDiagonal() * f.act);
    grad->w1 = g_h.transpose() * x;
    grad->b1 = g_h.colwise().sum().transpose();
    return total;
}

// ---------------------------------------------------------------------------
// Training

enum class BatchMode { Auto, Full, Minibatch };

struct TrainConfig {
    double alpha = 0.6;
    double learning_rate = 1e-3;
    double eta = 0.5;
    int max_epochs = 15;
    BatchMode batch_mode = BatchMode::Auto;
    int batch_size = 256;
    double validation_fraction = 0.1;
    std::size_t auto_minibatch_above = 800; // rows of X
    Sampling sampling = Sampling::Random;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(alpha > 0.0 && alpha <= 1.0))
            throw ConfigError("alpha must lie in (0,1], got " + std::to_string(alpha));
        if (!(learning_rate > 0.0))
            throw ConfigError("learning rate must be positive");
        if (!(eta > 0.0 && eta < 1.0))
            throw ConfigError("eta must lie in (0,1)");
        if (max_epochs < 1)
            throw ConfigError("max-epochs must be >= 1");
        if (batch_size < 1)
            throw ConfigError("batch size must be >= 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
            throw ConfigError("validation fraction must lie in (0,1)");
    }
};

struct TrainReport {
    std::vector<double> objective;  // training objective, index 0 before any update
    std::vector<double> validation; // minibatch mode only
    int epochs = 0;
    bool minibatch = false;
    std::string stop_reason;
};

namespace detail {

struct Adam {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    RepNetGradient m, v;
    long step = 0;

    explicit Adam(const RepNet& net) {
        m = {Matrix::Zero(net.w1.rows(), net.w1.cols()), Vector::Zero(net.b1.size()),
             Matrix::Zero(net.w2.rows(), net.w2.cols())};
        v = m;
    }

    template <typename P, typename G, typename S>
    static void update(P& param, const G& g, S& m1, S& m2, double lr, double c1, double c2) {
        m1 = beta1 * m1 + (1.0 - beta1) * g;
        m2 = beta2 * m2 + (1.0 - beta2) * g.cwiseProduct(g);
        // Ascent: move along the gradient.
        param.array() += lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }

    void ascend(RepNet& net, const RepNetGradient& g, double lr) {
        ++step;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        update(net.w1, g.w1, m.w1, v.w1, lr, c1, c2);
        update(net.b1, g.b1, m.b1, v.b1, lr, c1, c2);
        update(net.w2, g.w2, m.w2, v.w2, lr, c1, c2);
    }
};

inline void check_finite(double value, int epoch, const char* what) {
    if (!std::isfinite(value))
        throw NumericError(std::string("non-finite ") + what + " objective (" +
                           std::to_string(value) + ") at epoch " + std::to_string(epoch));
}

// The loss is the negated objective; training stops once the loss has
// dropped to eta times its epoch-0 value. For a non-negative epoch-0
// objective the same relative improvement, (1 - eta) * |obj0|, is required.
inline bool reached_eta(double obj0, double obj, double eta) {
    return obj - obj0 >= (1.0 - eta) * std::abs(obj0);
}

} // namespace detail

inline RepNet train(RepNet net, const Matrix& x, std::span<const Triplet> triplets,
                    const TrainConfig& cfg, TrainReport* report = nullptr) {
    cfg.validate();
    if (triplets.empty())
        throw Error("train called without triplets");
    TrainReport local;
    TrainReport& rep = report ? *report : local;
    rep = TrainReport{};

    const bool minibatch =
        cfg.batch_mode == BatchMode::Minibatch ||
        (cfg.batch_mode == BatchMode::Auto && static_cast<std::size_t>(x.rows()) > cfg.auto_minibatch_above);
    rep.minibatch = minibatch;

    detail::Adam adam(net);
    RepNetGradient g;

    if (!minibatch) {
        double obj = objective_and_gradient(net, x, triplets, cfg.alpha, &g);
        detail::check_finite(obj, 0, "training");
        const double obj0 = obj;
        rep.objective.push_back(obj);
        rep.stop_reason = "max-epochs";
        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            adam.ascend(net, g, cfg.learning_rate);
            obj = objective_and_gradient(net, x, triplets, cfg.alpha, &g);
            detail::check_finite(obj, epoch, "training");
            rep.objective.push_back(obj);
            rep.epochs = epoch;
            if (detail::reached_eta(obj0, obj, cfg.eta)) {
                rep.stop_reason = "eta";
                break;
            }
        }
        return net;
    }

    std::vector<Triplet> shuffled(triplets.begin(), triplets.end());
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * double(shuffled.size())));
    if (shuffled.size() >= 2)
        n_val = std::clamp<std::size_t>(n_val, 1, shuffled.size() - 1);
    else
        n_val = 0;
    const std::span<const Triplet> val(shuffled.data(), n_val);
    std::vector<Triplet> fit(shuffled.begin() + static_cast<long>(n_val), shuffled.end());

    const auto validation_objective = [&](const RepNet& n) {
        return val.empty() ? 0.0 : objective_and_gradient(n, x, val, cfg.alpha, nullptr);
    };

    const double obj0 = objective_and_gradient(net, x, fit, cfg.alpha, nullptr);
    detail::check_finite(obj0, 0, "training");
    rep.objective.push_back(obj0);
    double best_val = validation_objective(net);
    rep.validation.push_back(best_val);
    double lr = cfg.learning_rate;
    bool annealed = false;
    int stalls = 0;
    rep.stop_reason = "max-epochs";
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::shuffle(fit.begin(), fit.end(), rng);
        for (std::size_t start = 0; start < fit.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t len = std::min<std::size_t>(cfg.batch_size, fit.size() - start);
            objective_and_gradient(net, x, std::span<const Triplet>(fit.data() + start, len),
                                   cfg.alpha, &g);
            adam.ascend(net, g, lr);
        }
        const double obj = objective_and_gradient(net, x, fit, cfg.alpha, nullptr);
        detail::check_finite(obj, epoch, "training");
        const double val_obj = validation_objective(net);
        detail::check_finite(val_obj, epoch, "validation");
        rep.objective.push_back(obj);
        rep.validation.push_back(val_obj);
        rep.epochs = epoch;
        if (detail::reached_eta(obj0, obj, cfg.eta)) {
            rep.stop_reason = "eta";
            break;
        }
        if (val_obj > best_val) {
            best_val = val_obj;
            stalls = 0;
            continue;
        }
        if (++stalls >= 2) {
            rep.stop_reason = "validation";
            break;
        }
        if (!annealed) {
            lr *= 0.5;
            annealed = true;
        }
    }
    return net;
}

// ---------------------------------------------------------------------------
// Checkpoints: "RNET", u32 version, u32 D, u32 d, then W1 (row-major), b1 and
// W2 (row-major) as little-endian float64.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw FormatError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i)
        v = (v << 8) | b[i];
    return v;
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
    const std::uint64_t bits = get_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError("truncated checkpoint");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace detail

inline void save_checkpoint(const RepNet& net, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw FormatError("cannot write checkpoint " + path.string());
    os.write("RNET", 4);
    detail::put_u32(os, kCheckpointVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(net.in_dim()));
    detail::put_u32(os, static_cast<std::uint32_t>(net.out_dim()));
    for (Eigen::Index r = 0; r < net.w1.rows(); ++r)
        for (Eigen::Index c = 0; c < net.w1.cols(); ++c)
            detail::put_f64(os, net.w1(r, c));
    for (Eigen::Index r = 0; r < net.b1.size(); ++r)
        detail::put_f64(os, net.b1(r));
    for (Eigen::Index r = 0; r < net.w2.rows(); ++r)
        for (Eigen::Index c = 0; c < net.w2.cols(); ++c)
            detail::put_f64(os, net.w2(r, c));
}

inline RepNet load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw FormatError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "RNET", 4) != 0)
        throw FormatError(path.string() + ": not a RepNet checkpoint");
    if (const auto version = detail::get_u32(is); version != kCheckpointVersion)
        throw FormatError(path.string() + ": unsupported checkpoint version " +
                          std::to_string(version));
    const auto in = static_cast<Eigen::Index>(detail::get_u32(is));
    const auto out = static_cast<Eigen::Index>(detail::get_u32(is));
    RepNet net{Matrix(in, in), Vector(in), Matrix(out, in)};
    for (Eigen::Index r = 0; r < in; ++r)
        for (Eigen::Index c = 0; c < in; ++c)
            net.w1(r, c) = detail::get_f64(is);
    for (Eigen::Index r = 0; r < in; ++r)
        net.b1(r) = detail::get_f64(is);
    for (Eigen::Index r = 0; r < out; ++r)
        for (Eigen::Index c = 0; c < in; ++c)
            net.w2(r, c) = detail::get_f64(is);
    return net;
}

} // namespace ssc
