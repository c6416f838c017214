#pragma once

// Pairwise scoring and embedding pre-transforms.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ssc/data_model.hpp"
#include "ssc/error.hpp"

namespace ssc {

struct SimilarityMatrix {
    Matrix scores;
    bool temporal_weighted = false;

    Eigen::Index size() const { return scores.rows(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return scores(i, j); }
};

inline Matrix unit_normalize(const Matrix& y) {
    Matrix out(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double n = y.row(r).norm();
        if (!(n > 0.0) || !std::isfinite(n))
            throw NumericError("cannot unit-normalize row " + std::to_string(r) +
                               " (norm " + std::to_string(n) + ")");
        out.row(r) = y.row(r) / n;
    }
    return out;
}

inline SimilarityMatrix cosine_matrix(const Matrix& y) {
    const Matrix u = unit_normalize(y);
    SimilarityMatrix s;
    s.scores = u * u.transpose();
    // Exact symmetry and unit diagonal; the GEMM may differ in the last ulp.
    for (Eigen::Index i = 0; i < s.scores.rows(); ++i) {
        s.scores(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < s.scores.cols(); ++j) {
            const double v = std::clamp(s.scores(i, j), -1.0, 1.0);
            s.scores(i, j) = v;
            s.scores(j, i) = v;
        }
    }
    return s;
}

// s'(i,j) = s(i,j) * beta^min(n_b, |i-j|)
inline SimilarityMatrix temporal_weight(const SimilarityMatrix& s, double beta, int n_b) {
    if (!(beta > 0.0 && beta < 1.0))
        throw ConfigError("temporal decay beta must lie in (0,1), got " + std::to_string(beta));
    if (n_b < 0)
        throw ConfigError("temporal floor n_b must be non-negative");
    if (s.scores.rows() != s.scores.cols())
        throw ConfigError("temporal_weight needs a square matrix");
    std::vector<double> decay(static_cast<std::size_t>(n_b) + 1, 1.0);
    for (int k = 1; k <= n_b; ++k)
        decay[k] = decay[k - 1] * beta;
    SimilarityMatrix out{s.scores, true};
    const Eigen::Index n = s.scores.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const auto gap = static_cast<int>(std::min<Eigen::Index>(std::abs(i - j), n_b));
            out.scores(i, j) *= decay[gap];
        }
    return out;
}

namespace detail {

struct CovarianceEigen {
    Vector mean;
    Vector values;  // descending
    Matrix vectors; // columns match `values`
};

inline CovarianceEigen covariance_eigen(const Matrix& x) {
    if (x.rows() < 2)
        throw NumericError("need at least 2 rows to estimate a covariance");
    if (!x.allFinite())
        throw NumericError("non-finite input to covariance estimate");
    CovarianceEigen ce;
    ce.mean = x.colwise().mean().transpose();
    const Matrix centered = x.rowwise() - ce.mean.transpose();
    const Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success)
        throw NumericError("covariance eigendecomposition failed");
    ce.values = eig.eigenvalues().reverse();
    ce.vectors = eig.eigenvectors().rowwise().reverse();
    return ce;
}

} // namespace detail

struct WhiteningTransform {
    Vector mean;
    Matrix projection;   // D x D, rows scaled eigenvectors
    Vector eigenvalues;  // descending, before clamping
    double floor = 0.0;  // absolute clamp applied to eigenvalues

    Eigen::Index dim() const { return mean.size(); }

    // Rows of x are samples.
    Matrix apply(const Matrix& x) const {
        if (x.cols() != dim())
            throw ConfigError("whitening expects width " + std::to_string(dim()) + ", got " +
                              std::to_string(x.cols()));
        return (x.rowwise() - mean.transpose()) * projection.transpose();
    }

    // Output dimensions whose eigenvalue was not clamped.
    Eigen::Index retained() const { return (eigenvalues.array() >= floor).count(); }
};

// `eig_floor` is relative to the largest covariance eigenvalue.
inline WhiteningTransform fit_whitening(const Matrix& x, double eig_floor = 1e-8) {
    const auto ce = detail::covariance_eigen(x);
    WhiteningTransform w;
    w.mean = ce.mean;
    w.eigenvalues = ce.values;
    const double top = std::max(ce.values(0), 0.0);
    w.floor = std::max(eig_floor * top, std::numeric_limits<double>::min());
    const Vector scale = ce.values.array().max(w.floor).rsqrt();
    w.projection = scale.asDiagonal() * ce.vectors.transpose();
    return w;
}

struct PcaTarget {
    enum class Kind { Dim, Energy } kind = Kind::Dim;
    int dim = 0;
    double energy = 1.0;

    static PcaTarget dimension(int d) { return {Kind::Dim, d, 1.0}; }
    static PcaTarget energy_fraction(double f) { return {Kind::Energy, 0, f}; }
};

struct PcaTransform {
    Matrix basis;       // d x D, orthonormal rows
    Vector eigenvalues; // all D, descending

    Eigen::Index out_dim() const { return basis.rows(); }
    Eigen::Index in_dim() const { return basis.cols(); }

    // Projection without re-centering; the model's second layer has no bias.
    Matrix apply(const Matrix& x) const { return x * basis.transpose(); }
};

// Smallest k whose cumulative eigenvalue share reaches `fraction`.
inline int energy_dimension(const Vector& descending, double fraction) {
    const Vector clipped = descending.cwiseMax(0.0);
    const double total = clipped.sum();
    if (!(total > 0.0))
        return 1;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < clipped.size(); ++k) {
        acc += clipped(k);
        if (acc / total >= fraction)
            return static_cast<int>(k + 1);
    }
    return static_cast<int>(clipped.size());
}

inline PcaTransform fit_pca(const Matrix& x, PcaTarget target) {
    const Eigen::Index big_d = x.cols();
    int d = 0;
    if (target.kind == PcaTarget::Kind::Dim) {
        if (target.dim < 1 || target.dim > big_d)
            throw ConfigError("PCA dimension " + std::to_string(target.dim) +
                              " outside [1, " + std::to_string(big_d) + "]");
        d = target.dim;
    } else if (!(target.energy > 0.0 && target.energy <= 1.0)) {
        throw ConfigError("PCA energy fraction must lie in (0,1]");
    }
    const auto ce = detail::covariance_eigen(x);
    if (target.kind == PcaTarget::Kind::Energy)
        d = energy_dimension(ce.values, target.energy);
    PcaTransform p;
    p.eigenvalues = ce.values;
    p.basis = ce.vectors.leftCols(d).transpose();
    return p;
}

} // namespace ssc
